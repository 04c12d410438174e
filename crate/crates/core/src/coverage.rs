//! ψ (probability a carcass lands in searched ground) and dwp (the realised
//! fraction) with simulation-based uncertainty.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distribution::DistanceDistribution;
use crate::error::{DwpError, Result};
use crate::forms::ModelForm;
use crate::geometry::{GridProfile, RingProfile};
use crate::glm::{simulate_coefficients, FittedGLM};

pub const TOTAL: &str = "total";

/// SplitMix64 mix of a base seed with stream indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Type-7 quantile of the finite values; NaN when there are none.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// A draws × (turbines + total) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    /// Column labels; the last is [`TOTAL`].
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl DrawMatrix {
    pub fn nsim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_turbines(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.values.column(j).iter().copied().collect())
    }

    pub fn column_at(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// (label, q05, median, q95) per column.
    pub fn summary(&self) -> Vec<(String, f64, f64, f64)> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let col = self.column_at(j);
                (
                    c.clone(),
                    quantile(&col, 0.05),
                    quantile(&col, 0.5),
                    quantile(&col, 0.95),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiDraws {
    pub draws: DrawMatrix,
    pub form: ModelForm,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwpDraws {
    pub draws: DrawMatrix,
    /// Counts per column, the last being the site total.
    pub ncarc: Vec<u32>,
}

impl DwpDraws {
    /// Turbines whose dwp fell back to ψ because no carcass was counted.
    pub fn zero_count_turbines(&self) -> Vec<String> {
        self.draws
            .columns
            .iter()
            .zip(&self.ncarc)
            .filter(|(c, n)| **n == 0 && c.as_str() != TOTAL)
            .map(|(c, _)| c.clone())
            .collect()
    }
}

/// ψ for searched proportions `pinc[r − 1]` on 1 m rings.
pub fn psi_rings(dist: &DistanceDistribution, pinc: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut psi = 0.0;
    for (i, p) in pinc.iter().enumerate() {
        let f = dist.pdd(i as f64 + 1.0);
        psi += (f - prev) * p;
        prev = f;
    }
    psi.clamp(0.0, 1.0)
}

/// ψ for grid cells of area `area` at distances `r`, converting the distance
/// density to an areal density with the 2πr Jacobian.
pub fn psi_cells<'a, I: IntoIterator<Item = &'a f64>>(
    dist: &DistanceDistribution,
    distances: I,
    area: f64,
) -> f64 {
    let psi: f64 = distances
        .into_iter()
        .map(|&r| {
            if r > 0.0 {
                dist.ddd(r) / (2.0 * PI * r) * area
            } else {
                dist.pdd((area / PI).sqrt())
            }
        })
        .sum();
    psi.clamp(0.0, 1.0)
}

fn coefficient_draws(fit: &FittedGLM, nsim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if nsim == 0 {
        return Err(DwpError::InvalidArgument("nsim must be at least 1".into()));
    }
    if !fit.extensible() {
        return Err(DwpError::NotExtensible(format!(
            "{} is not extensible at its MLE",
            fit.form
        )));
    }
    let m = simulate_coefficients(fit, nsim, seed)?;
    let off = fit.dist_offset();
    let mut rows: Vec<Vec<f64>> = (0..nsim)
        .map(|i| (off..fit.k_params).map(|j| m[(i, j)]).collect())
        .collect();
    rows[0] = fit.dist_beta().to_vec();
    Ok(rows)
}

fn assemble(
    columns: Vec<String>,
    rows: Vec<Option<Vec<f64>>>,
    form: ModelForm,
    seed: u64,
) -> Result<PsiDraws> {
    let nc = columns.len();
    if rows.iter().all(Option::is_none) {
        return Err(DwpError::EstimationFailed(
            "no simulated coefficient vector is extensible".into(),
        ));
    }
    let values = DMatrix::from_fn(rows.len(), nc, |i, j| {
        rows[i].as_ref().map_or(f64::NAN, |r| r[j])
    });
    Ok(PsiDraws {
        draws: DrawMatrix { columns, values },
        form,
        seed,
    })
}

/// ψ draws for every turbine plus the pooled site. Draw 1 is the MLE.
pub fn est_psi(profile: &RingProfile, fit: &FittedGLM, nsim: usize, seed: u64) -> Result<PsiDraws> {
    let coefs = coefficient_draws(fit, nsim, seed)?;
    let rows: Vec<Option<Vec<f64>>> = coefs
        .par_iter()
        .map(|b| {
            let d = DistanceDistribution::new(fit.form, b).ok()?;
            let mut out: Vec<f64> = profile
                .turbines
                .iter()
                .map(|t| psi_rings(&d, &t.pinc))
                .collect();
            out.push(psi_rings(&d, &profile.site_pinc));
            Some(out)
        })
        .collect();
    let mut columns = profile.turbine_ids();
    columns.push(TOTAL.into());
    assemble(columns, rows, fit.form, seed)
}

/// ψ draws for grid layouts; the total column weights turbines equally.
pub fn est_psi_grid(
    grid: &GridProfile,
    fit: &FittedGLM,
    nsim: usize,
    seed: u64,
) -> Result<PsiDraws> {
    let coefs = coefficient_draws(fit, nsim, seed)?;
    let area = grid.exposure();
    let by_turbine: Vec<Vec<f64>> = grid
        .turbines
        .iter()
        .map(|t| {
            grid.cells
                .iter()
                .filter(|c| &c.turbine == t)
                .map(|c| c.r)
                .collect()
        })
        .collect();
    let rows: Vec<Option<Vec<f64>>> = coefs
        .par_iter()
        .map(|b| {
            let d = DistanceDistribution::new(fit.form, b).ok()?;
            let mut out: Vec<f64> = by_turbine.iter().map(|r| psi_cells(&d, r, area)).collect();
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            out.push(mean);
            Some(out)
        })
        .collect();
    let mut columns = grid.turbines.clone();
    columns.push(TOTAL.into());
    assemble(columns, rows, fit.form, seed)
}

/// Posterior of total carcasses M given `m_in` in the searched area, under the
/// integrated reference prior √(M+1) − √M.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorM {
    pub m_in: u64,
    /// P(M = m_in + i).
    pub pmf: Vec<f64>,
}

const TAIL_TOL: f64 = 1e-12;

fn ln_prior(m: f64) -> f64 {
    -((m + 1.0).sqrt() + m.sqrt()).ln()
}

pub fn posterior_m(m_in: u64, psi: f64) -> Result<PosteriorM> {
    if !(psi > 0.0 && psi <= 1.0) {
        return Err(DwpError::InvalidArgument(format!(
            "psi must lie in (0, 1], got {psi}"
        )));
    }
    if psi == 1.0 {
        return Ok(PosteriorM {
            m_in,
            pmf: vec![1.0],
        });
    }
    let ln_q = (-psi).ln_1p();
    let cap = (m_in as f64 / psi * 20.0 + 1000.0).ceil() as u64;
    // Log terms relative to M = m_in, built by the ratio recurrence.
    let mut logs = vec![ln_prior(m_in as f64)];
    // Running maximum and sum of exp(log − top) for the tail test.
    let mut top = logs[0];
    let mut head = 1.0;
    let mut m = m_in;
    loop {
        let mf = m as f64;
        let next = logs[logs.len() - 1] + (mf + 1.0).ln() - (mf + 1.0 - m_in as f64).ln()
            + ln_q
            + ln_prior(mf + 1.0)
            - ln_prior(mf);
        logs.push(next);
        if next > top {
            head = head * (top - next).exp() + 1.0;
            top = next;
        } else {
            head += (next - top).exp();
        }
        m += 1;
        if m >= cap {
            break;
        }
        // Every later ratio is below (m + 1)/(m + 1 − m_in)·(1 − ψ).
        let bound = (m as f64 + 1.0) / (m as f64 + 1.0 - m_in as f64) * (1.0 - psi);
        if bound < 1.0 {
            let tail = next - top + (bound / (1.0 - bound)).ln();
            if tail.exp() < TAIL_TOL * head {
                break;
            }
        }
    }
    let mut pmf: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= s);
    Ok(PosteriorM { m_in, pmf })
}

impl PosteriorM {
    pub fn support(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.pmf
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.m_in + i as u64, p))
    }

    pub fn max_m(&self) -> u64 {
        self.m_in + self.pmf.len() as u64 - 1
    }

    pub fn mode(&self) -> u64 {
        let mut best = (self.m_in, f64::NEG_INFINITY);
        for (m, p) in self.support() {
            if p > best.1 {
                best = (m, p);
            }
        }
        best.0
    }

    pub fn mean(&self) -> f64 {
        self.support().map(|(m, p)| m as f64 * p).sum()
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Draw M by inverting the CDF at `u` in [0, 1).
    pub fn quantile_at(cdf: &[f64], m_in: u64, u: f64) -> u64 {
        let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        m_in + i as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        Self::quantile_at(&self.cdf(), self.m_in, u)
    }

    /// Credible interval [lo, hi] for M holding at least `level` mass and
    /// spanning the narrowest range of m_in / M; with m_in = 0 the narrowest
    /// range of M.
    pub fn credible_interval(&self, level: f64) -> (u64, u64) {
        let cdf = self.cdf();
        let n = self.pmf.len();
        let mut best: Option<(f64, usize, usize)> = None;
        let mut j = 0;
        for i in 0..n {
            let before = if i == 0 { 0.0 } else { cdf[i - 1] };
            if j < i {
                j = i;
            }
            while j < n && cdf[j] - before < level - 1e-12 {
                j += 1;
            }
            if j == n {
                break;
            }
            let (lo, hi) = (self.m_in + i as u64, self.m_in + j as u64);
            let width = if self.m_in > 0 {
                self.m_in as f64 / lo as f64 - self.m_in as f64 / hi as f64
            } else {
                (hi - lo) as f64
            };
            if best.is_none_or(|b| width < b.0 - 1e-15) {
                best = Some((width, i, j));
            }
        }
        let (_, i, j) = best.unwrap_or((0.0, 0, n - 1));
        (self.m_in + i as u64, self.m_in + j as u64)
    }
}

/// dwp draws: per ψ draw and turbine, M from its posterior and dwp = n / M.
/// Turbines with no carcasses take the ψ draw itself.
pub fn est_dwp(psi: &PsiDraws, ncarc: &[u32], site_ncarc: u32, seed: u64) -> Result<DwpDraws> {
    est_dwp_from(&psi.draws, ncarc, site_ncarc, seed)
}

/// [`est_dwp`] on a bare ψ draw matrix.
pub fn est_dwp_from(
    psi: &DrawMatrix,
    ncarc: &[u32],
    site_ncarc: u32,
    seed: u64,
) -> Result<DwpDraws> {
    let nt = psi.n_turbines();
    if ncarc.len() != nt {
        return Err(DwpError::InvalidArgument(format!(
            "{} carcass counts for {nt} turbines",
            ncarc.len()
        )));
    }
    let mut counts = ncarc.to_vec();
    counts.push(site_ncarc);
    let nsim = psi.nsim();
    let nc = nt + 1;
    let rows: Vec<Vec<f64>> = (0..nsim)
        .into_par_iter()
        .map(|i| {
            let mut cache: HashMap<(u32, u64), (u64, Vec<f64>)> = HashMap::new();
            (0..nc)
                .map(|j| {
                    let p = psi.values[(i, j)];
                    let n = counts[j];
                    if !p.is_finite() || n == 0 {
                        return p;
                    }
                    if p <= 0.0 {
                        return f64::NAN;
                    }
                    let (m_in, cdf) = cache.entry((n, p.to_bits())).or_insert_with(|| {
                        let post = posterior_m(n as u64, p).expect("psi in (0, 1]");
                        (post.m_in, post.cdf())
                    });
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, j as u64));
                    let u: f64 = rng.random();
                    let m = PosteriorM::quantile_at(cdf, *m_in, u);
                    n as f64 / m as f64
                })
                .collect()
        })
        .collect();
    let values = DMatrix::from_fn(nsim, nc, |i, j| rows[i][j]);
    Ok(DwpDraws {
        draws: DrawMatrix {
            columns: psi.columns.clone(),
            values,
        },
        ncarc: counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenestMode {
    /// One row per turbine holding the median draw.
    Point,
    /// One row per turbine and draw.
    Simulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenestTable {
    /// Value column names after `turbine`.
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    pub digits: usize,
}

impl GenestTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("turbine");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (t, vals) in &self.rows {
            s.push_str(t);
            for v in vals {
                if v.is_finite() {
                    let _ = write!(s, ",{:.*}", self.digits, v);
                } else {
                    s.push_str(",NA");
                }
            }
            s.push('\n');
        }
        s
    }
}

fn genest_rows(draws: &DrawMatrix, mode: GenestMode) -> Vec<(String, Vec<f64>)> {
    let nt = draws.n_turbines();
    match mode {
        GenestMode::Point => (0..nt)
            .map(|j| {
                (
                    draws.columns[j].clone(),
                    vec![quantile(&draws.column_at(j), 0.5)],
                )
            })
            .collect(),
        GenestMode::Simulated => (0..nt)
            .flat_map(|j| {
                (0..draws.nsim())
                    .map(move |i| (draws.columns[j].clone(), vec![draws.values[(i, j)]]))
            })
            .collect(),
    }
}

pub fn format_genest(dwp: &DwpDraws, mode: GenestMode, digits: usize) -> GenestTable {
    GenestTable {
        columns: vec!["dwp".into()],
        rows: genest_rows(&dwp.draws, mode),
        digits,
    }
}

/// One dwp column per carcass class; classes must share turbines and nsim.
pub fn format_genest_classes(
    by_class: &BTreeMap<String, DwpDraws>,
    mode: GenestMode,
    digits: usize,
) -> Result<GenestTable> {
    let mut it = by_class.iter();
    let (_, first) = it
        .next()
        .ok_or_else(|| DwpError::InvalidArgument("no carcass classes".into()))?;
    let base = genest_rows(&first.draws, mode);
    let mut rows: Vec<(String, Vec<f64>)> = base;
    for (c, d) in it {
        if d.draws.columns != first.draws.columns || d.draws.nsim() != first.draws.nsim() {
            return Err(DwpError::InvalidArgument(format!(
                "class {c} has different turbines or draw count"
            )));
        }
        for (row, (_, v)) in rows.iter_mut().zip(genest_rows(&d.draws, mode)) {
            row.1.extend(v);
        }
    }
    Ok(GenestTable {
        columns: by_class.keys().cloned().collect(),
        rows,
        digits,
    })
}

pub fn export_genest(table: &GenestTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_csv())?;
    Ok(())
}
