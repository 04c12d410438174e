//! Simulation harnesses: accuracy of ψ̂ against simulated truth, and coverage
//! of dwp and ψ intervals under a full detection process.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::ballistics::{
    run_scenario, simulate_detection_process, BallisticsScenario, DetectionParams, ScenarioResult,
    SearchPlot,
};
use crate::coverage::{derive_seed, est_dwp, est_psi, quantile, DrawMatrix, PsiDraws, TOTAL};
use crate::distribution::DistanceDistribution;
use crate::error::{DwpError, Result};
use crate::filter::{filter_models, fit_battery, Thresholds};
use crate::forms::ModelForm;
use crate::geometry::{
    add_carcasses, build_rings_simple, CarcassRecord, RingProfile, SimpleGeometryRow,
};
use crate::glm::{fit_rows, rows_from_rings, FittedGLM};

/// Single-turbine ring profile for a simulation plot.
pub fn plot_profile(plot: &SearchPlot) -> Result<RingProfile> {
    build_rings_simple(&SimpleGeometryRow {
        turbine: "t1".into(),
        radius: plot.radius(),
        shape: plot.shape(),
    })
}

/// Tally carcass distances into a copy of a single-turbine profile.
pub fn with_distances(profile: &RingProfile, distances: &[f64]) -> Result<RingProfile> {
    let t = profile.turbines[0].turbine.clone();
    let recs: Vec<CarcassRecord> = distances
        .iter()
        .map(|&d| CarcassRecord::at_distance(&t, d))
        .collect();
    add_carcasses(profile, &recs, None)
}

/// `n` gamma(shape, rate) carcasses around one turbine with a fully searched
/// circle of radius `srad`; those within it are tallied.
pub fn gamma_circle_replicate<R: Rng + ?Sized>(
    n: usize,
    shape: f64,
    rate: f64,
    srad: f64,
    rng: &mut R,
) -> Result<RingProfile> {
    let g =
        Gamma::new(shape, 1.0 / rate).map_err(|e| DwpError::InvalidParameters(e.to_string()))?;
    let d: Vec<f64> = (0..n)
        .map(|_| g.sample(rng))
        .filter(|&d| d <= srad)
        .collect();
    with_distances(&plot_profile(&SearchPlot::Cleared { radius: srad })?, &d)
}

fn mle_psi(fit: &FittedGLM, profile: &RingProfile) -> Option<f64> {
    let d = DistanceDistribution::new(fit.form, fit.dist_beta()).ok()?;
    Some(crate::coverage::psi_rings(&d, &profile.turbines[0].pinc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiAccuracyRow {
    pub replicate: usize,
    pub form: ModelForm,
    /// None when the fit failed or is not extensible.
    pub psi_hat: Option<f64>,
    pub delta_aicc: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiAccuracy {
    pub true_psi: f64,
    pub rows: Vec<PsiAccuracyRow>,
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormSummary {
    /// Form name, or "selected" for the filter's choice.
    pub label: String,
    pub n: usize,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

impl PsiAccuracy {
    pub fn summary(&self) -> Vec<FormSummary> {
        let mut labels: Vec<ModelForm> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.form) {
                labels.push(r.form);
            }
        }
        let make = |label: String, v: Vec<f64>| FormSummary {
            label,
            n: v.len(),
            q05: quantile(&v, 0.05),
            median: quantile(&v, 0.5),
            q95: quantile(&v, 0.95),
        };
        let mut out: Vec<FormSummary> = labels
            .iter()
            .map(|f| {
                let v = self
                    .rows
                    .iter()
                    .filter(|r| r.form == *f)
                    .filter_map(|r| r.psi_hat)
                    .collect();
                make(f.name().to_string(), v)
            })
            .collect();
        let sel = self
            .rows
            .iter()
            .filter(|r| r.selected)
            .filter_map(|r| r.psi_hat)
            .collect();
        out.push(make("selected".into(), sel));
        out
    }
}

/// ψ̂ per model and replicate for a ballistics scenario, with the filter's
/// selection marked. Replicates with too few found carcasses are skipped.
pub fn psi_accuracy(
    scn: &BallisticsScenario,
    forms: &[ModelForm],
    th: &Thresholds,
    seed: u64,
) -> Result<PsiAccuracy> {
    psi_accuracy_from(scn, &run_scenario(scn, seed)?, forms, th)
}

/// As [`psi_accuracy`] for an already simulated scenario.
pub fn psi_accuracy_from(
    scn: &BallisticsScenario,
    sim: &ScenarioResult,
    forms: &[ModelForm],
    th: &Thresholds,
) -> Result<PsiAccuracy> {
    let base = plot_profile(&scn.plot)?;
    let per_rep: Vec<Result<Vec<PsiAccuracyRow>>> = sim
        .replicates
        .par_iter()
        .filter(|r| !r.skipped)
        .map(|rep| {
            let prof = with_distances(&base, &rep.found_distances())?;
            let rows = rows_from_rings(&prof.turbines[0].rows);
            let fits: Vec<FittedGLM> = fit_battery(&rows, forms, false)
                .into_iter()
                .filter_map(|(_, f)| f.ok())
                .collect();
            let table = match filter_models(&fits, &rows, false, prof.srad as f64, th) {
                Ok(t) => t,
                Err(_) => return Ok(Vec::new()),
            };
            Ok(fits
                .iter()
                .filter(|f| f.converged)
                .map(|f| PsiAccuracyRow {
                    replicate: rep.index,
                    form: f.form,
                    psi_hat: mle_psi(f, &prof),
                    delta_aicc: table.get(f.form).map_or(f64::NAN, |s| s.delta_aicc),
                    selected: f.form == table.selected,
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    Ok(PsiAccuracy {
        true_psi: sim.true_psi,
        rows,
        skipped: sim
            .replicates
            .iter()
            .filter(|r| r.skipped)
            .map(|r| r.index)
            .collect(),
    })
}

/// A site of identical turbines with gamma-distributed carcass distances,
/// a road-and-pad search, and a persistence and searcher-efficiency process.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStudy {
    pub replicates: usize,
    pub turbines: usize,
    /// Collisions per turbine.
    pub collisions: usize,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub plot: SearchPlot,
    pub detection: DetectionParams,
    pub form: ModelForm,
    pub nsim: usize,
    /// Central interval level.
    pub level: f64,
}

impl Default for CoverageStudy {
    fn default() -> Self {
        Self {
            replicates: 300,
            turbines: 100,
            collisions: 50,
            gamma_shape: 1.7744,
            gamma_rate: 0.0355,
            plot: SearchPlot::road_pad(150.0),
            detection: DetectionParams::default(),
            form: ModelForm::Xep01,
            nsim: 300,
            level: 0.90,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    /// Share of turbine intervals from the dwp draws covering the realised dwp.
    pub dwp_coverage: f64,
    /// Same for intervals from the ψ draws.
    pub psi_coverage: f64,
    pub intervals: usize,
    pub replicates_used: usize,
    /// Replicates whose fit failed or was not extensible.
    pub replicates_failed: usize,
    pub mean_psi_hat: f64,
}

struct ReplicateOutcome {
    dwp_hits: usize,
    psi_hits: usize,
    intervals: usize,
    psi_hat: f64,
}

impl CoverageStudy {
    fn replicate(&self, base: &RingProfile, seed: u64) -> Result<Option<ReplicateOutcome>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Gamma::new(self.gamma_shape, 1.0 / self.gamma_rate)
            .map_err(|e| DwpError::InvalidParameters(e.to_string()))?;
        let mut m_in = vec![0u32; self.turbines];
        let mut found = Vec::new();
        for slot in m_in.iter_mut() {
            let mut inside = Vec::new();
            for _ in 0..self.collisions {
                let r = g.sample(&mut rng);
                let t = rng.random::<f64>() * std::f64::consts::TAU;
                if self.plot.contains(r * t.cos(), r * t.sin()) {
                    inside.push(r);
                }
            }
            *slot = inside.len() as u32;
            let seen = simulate_detection_process(inside.len(), &self.detection, &mut rng)?;
            found.extend(inside.iter().zip(seen).filter(|(_, s)| *s).map(|(r, _)| *r));
        }
        let prof = with_distances(base, &found)?;
        let fit = match fit_rows(&rows_from_rings(&prof.turbines[0].rows), self.form, false) {
            Ok(f) if f.converged && f.extensible() => f,
            _ => return Ok(None),
        };
        let single = match est_psi(&prof, &fit, self.nsim, rng.random()) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let col = single.draws.column_at(0);
        let nt = self.turbines;
        let mut columns: Vec<String> = (1..=nt).map(|i| format!("t{i}")).collect();
        columns.push(TOTAL.into());
        let psi = PsiDraws {
            draws: DrawMatrix {
                columns,
                values: DMatrix::from_fn(col.len(), nt + 1, |i, _| col[i]),
            },
            form: single.form,
            seed: single.seed,
        };
        let total: u32 = m_in.iter().sum();
        let dwp = est_dwp(&psi, &m_in, total, rng.random())?;
        let a = (1.0 - self.level) / 2.0;
        let (plo, phi) = (quantile(&col, a), quantile(&col, 1.0 - a));
        let mut out = ReplicateOutcome {
            dwp_hits: 0,
            psi_hits: 0,
            intervals: nt,
            psi_hat: col[0],
        };
        for (j, &m) in m_in.iter().enumerate() {
            let realised = m as f64 / self.collisions as f64;
            let d = dwp.draws.column_at(j);
            if quantile(&d, a) <= realised && realised <= quantile(&d, 1.0 - a) {
                out.dwp_hits += 1;
            }
            if plo <= realised && realised <= phi {
                out.psi_hits += 1;
            }
        }
        Ok(Some(out))
    }

    pub fn run(&self, seed: u64) -> Result<CoverageResult> {
        if self.replicates == 0 || self.turbines == 0 || self.collisions == 0 || self.nsim == 0 {
            return Err(DwpError::InvalidArgument(
                "replicates, turbines, collisions and nsim must be positive".into(),
            ));
        }
        let base = plot_profile(&self.plot)?;
        let outcomes = (0..self.replicates)
            .into_par_iter()
            .map(|i| self.replicate(&base, derive_seed(seed, 3, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let used: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
        if used.is_empty() {
            return Err(DwpError::EstimationFailed(
                "every replicate fit failed".into(),
            ));
        }
        let intervals: usize = used.iter().map(|o| o.intervals).sum();
        Ok(CoverageResult {
            dwp_coverage: used.iter().map(|o| o.dwp_hits).sum::<usize>() as f64 / intervals as f64,
            psi_coverage: used.iter().map(|o| o.psi_hits).sum::<usize>() as f64 / intervals as f64,
            intervals,
            replicates_used: used.len(),
            replicates_failed: outcomes.len() - used.len(),
            mean_psi_hat: used.iter().map(|o| o.psi_hat).sum::<f64>() / used.len() as f64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_coverage_study_runs() {
        let s = CoverageStudy {
            replicates: 4,
            turbines: 10,
            nsim: 50,
            ..Default::default()
        };
        let r = s.run(9).unwrap();
        assert_eq!(r.replicates_used + r.replicates_failed, 4);
        assert!(r.mean_psi_hat > 0.0 && r.mean_psi_hat < 0.6);
        assert!((0.0..=1.0).contains(&r.dwp_coverage));
    }
}
