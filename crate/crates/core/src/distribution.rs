//! Normalised distance distributions built from fitted GLM coefficients.
//!
//! Integration happens in `u = log x`, where every kernel is smooth and the
//! heavy-tailed cases (lognormal, near-boundary gamma shapes) stay bounded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::{erf::erfc, gamma::ln_gamma};

use crate::error::{DwpError, Result};
use crate::forms::{ModelForm, Term};
use crate::quad::{adaptive_panels, gk15, golden_max, Panel};

/// Log-density drop that defines the numerical support.
const SUPPORT_DROP: f64 = 60.0;
const SCAN_LO: f64 = -100.0;
const SCAN_HI: f64 = 120.0;
const SCAN_STEP: f64 = 0.2;
const U_LIMIT: f64 = 700.0;

#[derive(Debug, Clone)]
struct CdfTable {
    lmax: f64,
    lo: f64,
    hi: f64,
    panels: Vec<Panel>,
    /// Mass before each panel.
    cum: Vec<f64>,
    total: f64,
}

#[derive(Debug, Clone)]
pub struct DistanceDistribution {
    form: ModelForm,
    beta: Vec<f64>,
    log_norm_const: f64,
    numeric_log_norm_const: f64,
    table: Option<CdfTable>,
}

/// Summary statistics printed by the fit report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistStats {
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub q95: f64,
    pub mode: f64,
    pub p_win: f64,
}

impl DistanceDistribution {
    /// Normalise `form` with distance coefficients `beta`.
    pub fn new(form: ModelForm, beta: &[f64]) -> Result<Self> {
        if !form.extensible(beta)? {
            return Err(DwpError::NotExtensible(format!(
                "{form} with coefficients {beta:?}"
            )));
        }
        let beta = beta.to_vec();
        if form == ModelForm::Xep0 {
            let lc = closed_log_norm_const(form, &beta).expect("pareto closed form");
            return Ok(Self {
                form,
                beta,
                log_norm_const: lc,
                numeric_log_norm_const: lc,
                table: None,
            });
        }
        let table = build_table(form, &beta)?;
        let numeric = table.lmax + table.total.ln();
        let log_norm_const = closed_log_norm_const(form, &beta)
            .filter(|v| v.is_finite())
            .unwrap_or(numeric);
        Ok(Self {
            form,
            beta,
            log_norm_const,
            numeric_log_norm_const: numeric,
            table: Some(table),
        })
    }

    pub fn form(&self) -> ModelForm {
        self.form
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_norm_const
    }

    /// Normalising constant obtained by quadrature alone, independent of any
    /// closed form. `exp(numeric - log_norm_const)` is `∫ ddd`.
    pub fn numeric_log_norm_const(&self) -> f64 {
        self.numeric_log_norm_const
    }

    pub fn support_min(&self) -> f64 {
        self.form.support_min()
    }

    pub fn ddd(&self, x: f64) -> f64 {
        if x < self.support_min() {
            return 0.0;
        }
        (self.form.log_kernel(&self.beta, x) - self.log_norm_const).exp()
    }

    pub fn pdd(&self, x: f64) -> f64 {
        if x <= self.support_min() {
            return 0.0;
        }
        if x.is_infinite() {
            return 1.0;
        }
        let Some(t) = &self.table else {
            return 1.0 - x.powf(self.beta[0] + 2.0);
        };
        let u = x.ln();
        if u <= t.lo {
            return 0.0;
        }
        if u >= t.hi {
            return 1.0;
        }
        let i = t.panels.partition_point(|p| p.a <= u) - 1;
        let p = &t.panels[i];
        let part = if u >= p.b {
            p.mass
        } else {
            gk15(&|v| self.scaled_u(t, v), p.a, u).0
        };
        ((t.cum[i] + part) / t.total).clamp(0.0, 1.0)
    }

    /// Upper-tail probability P(X > x).
    pub fn sdd(&self, x: f64) -> f64 {
        1.0 - self.pdd(x)
    }

    pub fn qdd(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(DwpError::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        if p == 0.0 {
            return Ok(self.support_min());
        }
        if p == 1.0 {
            return Ok(f64::INFINITY);
        }
        let Some(t) = &self.table else {
            return Ok((1.0 - p).powf(1.0 / (self.beta[0] + 2.0)));
        };
        let target = p * t.total;
        let i = (t.cum.partition_point(|&c| c <= target).max(1) - 1).min(t.panels.len() - 1);
        let panel = &t.panels[i];
        let need = (target - t.cum[i]).clamp(0.0, panel.mass);
        let f = |v: f64| self.scaled_u(t, v);
        let (mut a, mut b) = (panel.a, panel.b);
        let mut u = a + (b - a) * (need / panel.mass.max(f64::MIN_POSITIVE));
        let tol = 1e-13 * t.total;
        for _ in 0..100 {
            let g = gk15(&f, panel.a, u).0 - need;
            if g.abs() <= tol {
                break;
            }
            if g > 0.0 {
                b = u;
            } else {
                a = u;
            }
            let d = f(u);
            let newton = u - g / d;
            u = if d > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-15 * (1.0 + u.abs()) {
                break;
            }
        }
        Ok(u.exp())
    }

    /// `n` inverse-CDF samples from a seeded ChaCha stream.
    pub fn rdd(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.rdd_with(n, &mut rng)
    }

    pub fn rdd_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let p: f64 = rng.random();
                self.qdd(p).expect("p in [0, 1)")
            })
            .collect()
    }

    /// Argmax of the density on `[support_min, q0.999]`.
    pub fn mode(&self) -> f64 {
        let lo = self.support_min();
        let hi = self.qdd(0.999).unwrap_or(lo + 1.0);
        let n = 2000;
        let step = (hi - lo) / n as f64;
        let mut best = (lo, self.ddd(lo));
        for i in 1..=n {
            let x = lo + step * i as f64;
            let d = self.ddd(x);
            if d > best.1 {
                best = (x, d);
            }
        }
        if best.0 == lo {
            return lo;
        }
        let a = (best.0 - step).max(lo);
        let b = (best.0 + step).min(hi);
        golden_max(&|x| self.ddd(x), a, b, 1e-7)
    }

    pub fn stats(&self, srad: f64) -> DistStats {
        let q = |p| self.qdd(p).expect("valid probability");
        DistStats {
            median: q(0.5),
            q75: q(0.75),
            q90: q(0.9),
            q95: q(0.95),
            mode: self.mode(),
            p_win: self.pdd(srad),
        }
    }

    fn scaled_u(&self, t: &CdfTable, u: f64) -> f64 {
        let v = self.form.log_kernel_u(&self.beta, u) + u - t.lmax;
        if v.is_nan() {
            0.0
        } else {
            v.exp()
        }
    }
}

/// `dist_stats` as a free function.
pub fn dist_stats(dist: &DistanceDistribution, srad: f64) -> DistStats {
    dist.stats(srad)
}

/// Normalise each row of coefficient draws; rows that are not extensible (or
/// cannot be integrated) become `None`.
pub fn normalize_draws<'a, I>(form: ModelForm, rows: I) -> Vec<Option<DistanceDistribution>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    rows.par_iter()
        .map(|b| DistanceDistribution::new(form, b).ok())
        .collect()
}

fn log_density_u(form: ModelForm, beta: &[f64], u: f64) -> f64 {
    let v = form.log_kernel_u(beta, u) + u;
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn build_table(form: ModelForm, beta: &[f64]) -> Result<CdfTable> {
    let l = |u: f64| log_density_u(form, beta, u);
    let n = ((SCAN_HI - SCAN_LO) / SCAN_STEP).round() as usize;
    let grid: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let u = SCAN_LO + SCAN_STEP * i as f64;
            (u, l(u))
        })
        .collect();
    let (imax, _) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty grid");
    if !grid[imax].1.is_finite() {
        return Err(DwpError::DegenerateInput(
            "density kernel has no finite maximum".into(),
        ));
    }
    let umax = if imax == 0 || imax == n {
        grid[imax].0
    } else {
        golden_max(&l, grid[imax - 1].0, grid[imax + 1].0, 1e-10)
    };
    let lmax = l(umax).max(grid[imax].1);
    let cut = lmax - SUPPORT_DROP;

    let first = grid
        .iter()
        .position(|g| g.1 >= cut)
        .expect("max is above cut");
    let last = grid
        .iter()
        .rposition(|g| g.1 >= cut)
        .expect("max is above cut");
    let lo = extend(&l, grid[first].0 - SCAN_STEP, -SCAN_STEP, cut)?;
    let hi = extend(&l, grid[last].0 + SCAN_STEP, SCAN_STEP, cut)?;

    let f = |u: f64| (l(u) - lmax).exp();
    // Seed partition keeps narrow peaks from being stepped over.
    let pieces = (((hi - lo) / 0.5).ceil() as usize).clamp(1, 4000);
    let width = (hi - lo) / pieces as f64;
    let rough: f64 = (0..pieces)
        .map(|i| gk15(&f, lo + width * i as f64, lo + width * (i + 1) as f64).0)
        .sum();
    let tol = 1e-14 * rough.max(f64::MIN_POSITIVE);
    let mut panels = Vec::new();
    for i in 0..pieces {
        let a = lo + width * i as f64;
        let b = if i + 1 == pieces { hi } else { a + width };
        panels.extend(adaptive_panels(&f, a, b, tol * (b - a) / (hi - lo)));
    }
    let mut cum = Vec::with_capacity(panels.len());
    let mut acc = 0.0;
    for p in &panels {
        cum.push(acc);
        acc += p.mass;
    }
    if !(acc.is_finite() && acc > 0.0) {
        return Err(DwpError::DegenerateInput(
            "density has no finite mass".into(),
        ));
    }
    Ok(CdfTable {
        lmax,
        lo,
        hi,
        panels,
        cum,
        total: acc,
    })
}

/// Walk outward from `start` in doubling steps until the log-density drops
/// below `cut`.
fn extend<L: Fn(f64) -> f64>(l: &L, start: f64, step0: f64, cut: f64) -> Result<f64> {
    let mut u = start;
    let mut step = step0;
    while l(u) >= cut {
        u += step;
        step *= 2.0;
        if u.abs() > U_LIMIT {
            return Err(DwpError::DegenerateInput(
                "distribution tail too heavy to integrate".into(),
            ));
        }
    }
    Ok(u)
}

fn ln_norm_cdf(z: f64) -> Option<f64> {
    let v = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    (v > 0.0).then(|| v.ln())
}

/// Closed-form log normalising constant where the kernel is a named family.
pub(crate) fn closed_log_norm_const(form: ModelForm, beta: &[f64]) -> Option<f64> {
    use ModelForm::*;
    let c = |t: Term| {
        let i = form.terms().iter().position(|&x| x == t)?;
        Some(beta[i])
    };
    let gamma = |s: f64, rate: f64| ln_gamma(s) - s * rate.ln();
    // ∫ x^a exp(-k x²) dx = Γ((a+1)/2) / (2 k^((a+1)/2))
    let half_gauss = |a: f64, k: f64| {
        let h = 0.5 * (a + 1.0);
        ln_gamma(h) - std::f64::consts::LN_2 - h * k.ln()
    };
    match form {
        Xep1 => Some(gamma(2.0, -c(Term::Lin)?)),
        Xep01 => Some(gamma(c(Term::Log)? + 2.0, -c(Term::Lin)?)),
        ChiSquared => Some(gamma(c(Term::Log)? + 2.0, 0.5)),
        Exponential => Some(gamma(1.0, -c(Term::Lin)?)),
        Xep2 => Some(half_gauss(1.0, -c(Term::Sq)?)),
        Xep02 => Some(half_gauss(c(Term::Log)? + 1.0, -c(Term::Sq)?)),
        MaxwellBoltzmann => Some(half_gauss(2.0, -c(Term::Sq)?)),
        Lognormal => {
            let k = -c(Term::LogSq)?;
            let b0 = c(Term::Log)? + 2.0;
            Some(0.5 * (std::f64::consts::PI / k).ln() + b0 * b0 / (4.0 * k))
        }
        TNormal => {
            let k = -c(Term::Sq)?;
            let mu = c(Term::Lin)? / (2.0 * k);
            let sigma = (0.5 / k).sqrt();
            Some(k * mu * mu + 0.5 * (std::f64::consts::PI / k).ln() + ln_norm_cdf(mu / sigma)?)
        }
        Xep0 => Some((-1.0 / (c(Term::Log)? + 2.0)).ln()),
        Xepi0 => {
            let alpha = -c(Term::Log)? - 2.0;
            Some(gamma(alpha, -c(Term::Inv)?))
        }
        InverseGaussian => {
            let a = -c(Term::Lin)?;
            let b = -c(Term::Inv)?;
            Some(0.5 * (std::f64::consts::PI / b).ln() - 2.0 * (a * b).sqrt())
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Gamma};

    #[test]
    fn gamma_equivalence_for_xep01() {
        let d = DistanceDistribution::new(ModelForm::Xep01, &[2.0698, -0.09449]).unwrap();
        let g = Gamma::new(4.0698, 0.09449).unwrap();
        for x in [1.0, 10.0, 39.6, 80.0, 200.0] {
            assert!((d.pdd(x) - g.cdf(x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn numeric_and_closed_constants_agree() {
        let d = DistanceDistribution::new(ModelForm::TNormal, &[0.2, -0.004]).unwrap();
        assert!((d.numeric_log_norm_const() - d.log_norm_const()).abs() < 1e-10);
    }

    #[test]
    fn pareto_uses_closed_forms() {
        let d = DistanceDistribution::new(ModelForm::Xep0, &[-3.5]).unwrap();
        assert_eq!(d.pdd(1.0), 0.0);
        assert!((d.pdd(4.0) - (1.0 - 4f64.powf(-1.5))).abs() < 1e-14);
        let q = d.qdd(0.3).unwrap();
        assert!((d.pdd(q) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn non_extensible_is_rejected() {
        assert!(matches!(
            DistanceDistribution::new(ModelForm::Xep1, &[0.01]),
            Err(DwpError::NotExtensible(_))
        ));
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        let d = DistanceDistribution::new(ModelForm::Xep1, &[-0.1]).unwrap();
        assert!(d.qdd(1.5).is_err());
        assert_eq!(d.qdd(0.0).unwrap(), 0.0);
    }

    #[test]
    fn bimodal_xep0123_integrates() {
        // Cubic with two interior maxima of p(x) + log x.
        let b = [1.0, -0.3, 0.006, -3e-5];
        let d = DistanceDistribution::new(ModelForm::Xep0123, &b).unwrap();
        let total = crate::quad::integrate(&|x| d.ddd(x), 0.0, 400.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }
}
