//! Plausibility filters and ranking for a battery of fitted models.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::distribution::DistanceDistribution;
use crate::error::{DwpError, Result};
use crate::forms::ModelForm;
use crate::glm::{fit_rows, FittedGLM, ObsRow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Maximum P(X > 200 m).
    pub rtail_200: f64,
    /// Maximum P(X > 150 m).
    pub rtail_150: f64,
    /// Maximum P(X < 20 m).
    pub ltail_20: f64,
    /// Maximum P(X < 50 m).
    pub ltail_50: f64,
    pub aicc_max_delta: f64,
    /// Largest tolerated change in p_win from deleting one observation.
    pub hin_delta_pwin: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rtail_200: 0.01,
            rtail_150: 0.05,
            ltail_20: 0.50,
            ltail_50: 0.90,
            aicc_max_delta: 10.0,
            hin_delta_pwin: 0.10,
        }
    }
}

impl Thresholds {
    /// Thresholds that every extensible model passes.
    pub fn permissive() -> Self {
        Self {
            rtail_200: 1.0,
            rtail_150: 1.0,
            ltail_20: 1.0,
            ltail_50: 1.0,
            aicc_max_delta: f64::INFINITY,
            hin_delta_pwin: f64::INFINITY,
        }
    }
}

pub fn rtail_pass(dist: &DistanceDistribution, th: &Thresholds) -> bool {
    dist.sdd(200.0) <= th.rtail_200 && dist.sdd(150.0) <= th.rtail_150
}

pub fn ltail_pass(dist: &DistanceDistribution, th: &Thresholds) -> bool {
    dist.pdd(20.0) <= th.ltail_20 && dist.pdd(50.0) <= th.ltail_50
}

#[derive(Debug, Clone, PartialEq)]
pub struct HinResult {
    pub pass: bool,
    /// Source-row indices whose deletion broke the model.
    pub offending: Vec<usize>,
}

fn p_win(fit: &FittedGLM, srad: f64) -> Option<f64> {
    DistanceDistribution::new(fit.form, fit.dist_beta())
        .ok()
        .map(|d| d.pdd(srad))
}

/// Leave-one-out refits over rows that hold carcasses.
pub fn high_influence_test(
    fit: &FittedGLM,
    rows: &[ObsRow],
    use_classes: bool,
    srad: f64,
    th: &Thresholds,
) -> HinResult {
    let base_ext = fit.extensible();
    let base = if base_ext { p_win(fit, srad) } else { None };
    let candidates: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.ncarc > 0 && r.exposure > 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut offending: Vec<usize> = candidates
        .par_iter()
        .filter(|&&i| {
            let mut sub = rows.to_vec();
            sub.remove(i);
            let refit = match fit_rows(&sub, fit.form, use_classes) {
                Ok(f) if f.converged => f,
                _ => return true,
            };
            let ext = refit.extensible();
            if ext != base_ext {
                return true;
            }
            match (base, ext.then(|| p_win(&refit, srad)).flatten()) {
                (Some(a), Some(b)) => (a - b).abs() > th.hin_delta_pwin,
                (None, None) => false,
                _ => true,
            }
        })
        .copied()
        .collect();
    offending.sort_unstable();
    HinResult {
        pass: offending.is_empty(),
        offending,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub form: ModelForm,
    pub extensible: bool,
    pub rtail: bool,
    pub ltail: bool,
    pub aicc: bool,
    pub hin: bool,
    pub aicc_value: f64,
    pub delta_aicc: f64,
    pub hin_rows: Vec<usize>,
}

impl ModelScore {
    pub fn flags(&self) -> [bool; 5] {
        [self.extensible, self.rtail, self.ltail, self.aicc, self.hin]
    }

    pub fn passes_all(&self) -> bool {
        self.flags().iter().all(|&f| f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    /// Ranked best first.
    pub scores: Vec<ModelScore>,
    pub selected: ModelForm,
    /// False when the selection had to fall back to a partially passing model.
    pub selected_passes_all: bool,
    pub not_converged: Vec<ModelForm>,
}

impl ScoreTable {
    pub fn get(&self, form: ModelForm) -> Option<&ModelScore> {
        self.scores.iter().find(|s| s.form == form)
    }
}

/// Lexicographic on the pass flags (priority order), then ΔAICc, then name.
pub fn rank_order(a: &ModelScore, b: &ModelScore) -> Ordering {
    b.flags()
        .cmp(&a.flags())
        .then(a.delta_aicc.total_cmp(&b.delta_aicc))
        .then(a.form.name().cmp(b.form.name()))
}

pub fn filter_models(
    fits: &[FittedGLM],
    rows: &[ObsRow],
    use_classes: bool,
    srad: f64,
    th: &Thresholds,
) -> Result<ScoreTable> {
    let (ok, bad): (Vec<&FittedGLM>, Vec<&FittedGLM>) = fits.iter().partition(|f| f.converged);
    if ok.is_empty() {
        return Err(DwpError::NoViableModel("no model converged".into()));
    }
    let best = ok.iter().map(|f| f.aicc).fold(f64::INFINITY, f64::min);
    let mut scores: Vec<ModelScore> = ok
        .par_iter()
        .map(|f| {
            let dist = DistanceDistribution::new(f.form, f.dist_beta()).ok();
            let extensible = dist.is_some();
            let delta = if best.is_finite() {
                f.aicc - best
            } else {
                f64::INFINITY
            };
            let hin = high_influence_test(f, rows, use_classes, srad, th);
            ModelScore {
                form: f.form,
                extensible,
                rtail: dist.as_ref().is_some_and(|d| rtail_pass(d, th)),
                ltail: dist.as_ref().is_none_or(|d| ltail_pass(d, th)),
                aicc: delta <= th.aicc_max_delta,
                hin: hin.pass,
                aicc_value: f.aicc,
                delta_aicc: delta,
                hin_rows: hin.offending,
            }
        })
        .collect();
    scores.sort_by(rank_order);
    let pick = scores.iter().find(|s| s.passes_all()).unwrap_or(&scores[0]);
    Ok(ScoreTable {
        selected: pick.form,
        selected_passes_all: pick.passes_all(),
        scores,
        not_converged: bad.iter().map(|f| f.form).collect(),
    })
}

/// Fit every form, skipping those whose design or fit fails outright.
pub fn fit_battery(
    rows: &[ObsRow],
    forms: &[ModelForm],
    use_classes: bool,
) -> Vec<(ModelForm, Result<FittedGLM>)> {
    forms
        .par_iter()
        .map(|&m| (m, fit_rows(rows, m, use_classes)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(form: ModelForm, flags: [bool; 5], delta: f64) -> ModelScore {
        ModelScore {
            form,
            extensible: flags[0],
            rtail: flags[1],
            ltail: flags[2],
            aicc: flags[3],
            hin: flags[4],
            aicc_value: delta,
            delta_aicc: delta,
            hin_rows: vec![],
        }
    }

    #[test]
    fn ranking_matches_printed_score_table_order() {
        use ModelForm::*;
        let mut s = vec![
            score(Constant, [false, false, true, false, false], 54.27),
            score(Xep123, [false, false, true, true, false], 0.15),
            score(MaxwellBoltzmann, [true, true, false, true, false], 6.15),
            score(TNormal, [true, true, true, true, false], 6.64),
            score(Xep2, [true, true, true, true, false], 0.0),
            score(Xep0123, [false, false, true, true, false], 2.08),
        ];
        s.sort_by(rank_order);
        let order: Vec<_> = s.iter().map(|x| x.form).collect();
        assert_eq!(
            order,
            [Xep2, TNormal, MaxwellBoltzmann, Xep123, Xep0123, Constant]
        );
    }
}
