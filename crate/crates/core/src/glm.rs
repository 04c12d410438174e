//! Poisson log-link regression of ring or cell counts on distance terms.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{DwpError, Result};
use crate::forms::ModelForm;
use crate::geometry::{GridProfile, RingRow};

const MAX_ITER: usize = 100;
const DEV_TOL: f64 = 1e-10;

/// One observation: a ring (or grid cell) in one search class.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsRow {
    /// Distance regressor.
    pub x: f64,
    pub class: Option<String>,
    pub exposure: f64,
    pub ncarc: u32,
}

/// Ring rows with the regressor at the ring midpoint.
pub fn rows_from_rings(rows: &[RingRow]) -> Vec<ObsRow> {
    rows.iter()
        .map(|r| ObsRow {
            x: r.r as f64 - 0.5,
            class: r.class.clone(),
            exposure: r.exposure,
            ncarc: r.ncarc,
        })
        .collect()
}

/// Grid cells pooled over turbines with exact centre distances.
pub fn rows_from_grid(grid: &GridProfile) -> Vec<ObsRow> {
    let e = grid.exposure();
    grid.cells
        .iter()
        .map(|c| ObsRow {
            x: c.r,
            class: None,
            exposure: e,
            ncarc: c.ncarc,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Design {
    pub form: ModelForm,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub offset: DVector<f64>,
    pub colnames: Vec<String>,
    pub class_levels: Vec<String>,
    /// Indices into the source rows that were kept.
    pub kept: Vec<usize>,
    /// Rows dropped because the form is undefined at their distance.
    pub dropped_support: usize,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

/// Build the model matrix: intercept, treatment-coded class shifts, then the
/// form's distance terms. Offset is log(exposure) plus the form's adjustment.
pub fn build_design(rows: &[ObsRow], form: ModelForm, use_classes: bool) -> Result<Design> {
    let levels: Vec<String> = if use_classes {
        let set: BTreeSet<String> = rows
            .iter()
            .filter(|r| r.exposure > 0.0)
            .filter_map(|r| r.class.clone())
            .collect();
        set.into_iter().collect()
    } else {
        Vec::new()
    };
    let xmin = form.support_min();
    let positive = form.needs_positive_x();
    let mut kept = Vec::new();
    let mut dropped_support = 0;
    for (i, r) in rows.iter().enumerate() {
        if !(r.exposure > 0.0) {
            continue;
        }
        if (positive && r.x <= 0.0) || r.x < xmin {
            dropped_support += 1;
            continue;
        }
        kept.push(i);
    }
    if kept.is_empty() {
        return Err(DwpError::DegenerateInput(
            "no observations with positive exposure".into(),
        ));
    }
    let n_class = levels.len().saturating_sub(1);
    let terms = form.terms();
    let k = 1 + n_class + terms.len();
    let adj = form.offset_adjust();
    let mut x = DMatrix::zeros(kept.len(), k);
    let mut y = DVector::zeros(kept.len());
    let mut offset = DVector::zeros(kept.len());
    for (row, &i) in kept.iter().enumerate() {
        let r = &rows[i];
        x[(row, 0)] = 1.0;
        if n_class > 0 {
            let c = r.class.as_deref().unwrap_or("");
            if let Some(pos) = levels.iter().position(|l| l == c) {
                if pos > 0 {
                    x[(row, pos)] = 1.0;
                }
            }
        }
        for (j, t) in terms.iter().enumerate() {
            x[(row, 1 + n_class + j)] = t.eval(r.x);
        }
        y[row] = r.ncarc as f64;
        offset[row] = r.exposure.ln() + adj.eval(r.x);
    }
    let mut colnames = vec!["intercept".to_string()];
    colnames.extend(levels.iter().skip(1).map(|l| format!("class_{l}")));
    colnames.extend(terms.iter().map(|t| t.label().to_string()));
    Ok(Design {
        form,
        x,
        y,
        offset,
        colnames,
        class_levels: levels,
        kept,
        dropped_support,
    })
}

#[derive(Debug, Clone)]
pub struct FittedGLM {
    pub form: ModelForm,
    pub beta: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub colnames: Vec<String>,
    pub class_levels: Vec<String>,
    pub loglik: f64,
    pub deviance: f64,
    pub aicc: f64,
    pub n_obs: usize,
    pub k_params: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl FittedGLM {
    /// Coefficients of the distance terms, in form order.
    pub fn dist_beta(&self) -> &[f64] {
        &self.beta[self.k_params - self.form.n_terms()..]
    }

    pub fn dist_offset(&self) -> usize {
        self.k_params - self.form.n_terms()
    }

    pub fn extensible(&self) -> bool {
        self.form.extensible(self.dist_beta()).unwrap_or(false)
    }
}

/// AICc with n observations and k parameters; infinite when n ≤ k + 1.
pub fn aicc(loglik: f64, k: usize, n: usize) -> f64 {
    if n <= k + 1 {
        return f64::INFINITY;
    }
    let (k, n) = (k as f64, n as f64);
    -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1.0) / (n - k - 1.0)
}

fn linear_predictor(d: &Design, beta: &DVector<f64>) -> DVector<f64> {
    &d.x * beta + &d.offset
}

fn deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for (yi, mi) in y.iter().zip(mu.iter()) {
        if *yi > 0.0 {
            dev += yi * (yi / mi).ln();
        }
        dev -= yi - mi;
    }
    2.0 * dev
}

/// Poisson log-likelihood including the −log y! constants.
pub fn loglik(d: &Design, beta: &[f64]) -> f64 {
    let eta = linear_predictor(d, &DVector::from_column_slice(beta));
    d.y.iter()
        .zip(eta.iter())
        .map(|(y, e)| y * e - e.exp() - ln_gamma(y + 1.0))
        .sum()
}

/// Score vector X'(y − μ).
pub fn score(d: &Design, beta: &[f64]) -> Vec<f64> {
    let eta = linear_predictor(d, &DVector::from_column_slice(beta));
    let resid = DVector::from_iterator(
        d.y.len(),
        d.y.iter().zip(eta.iter()).map(|(y, e)| y - e.exp()),
    );
    (d.x.transpose() * resid).iter().copied().collect()
}

pub fn fit_poisson(d: &Design) -> Result<FittedGLM> {
    let n = d.n_obs();
    let k = d.k();
    if n < k {
        return Err(DwpError::DegenerateInput(format!(
            "{} needs at least {k} observations, have {n}",
            d.form
        )));
    }
    let total: f64 = d.y.sum();
    if total < 1.0 {
        return Err(DwpError::DegenerateInput("all counts are zero".into()));
    }

    let scale: Vec<f64> = (0..k)
        .map(|j| {
            let m = d.x.column(j).amax();
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let mut xs = d.x.clone();
    for (j, s) in scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let scaled = Design { x: xs, ..d.clone() };

    let exp_sum: f64 = d.offset.iter().map(|o| o.exp()).sum();
    let mut beta = DVector::zeros(k);
    beta[0] = (total / exp_sum).ln();
    let mut mu = linear_predictor(&scaled, &beta).map(f64::exp);
    let mut dev = deviance(&d.y, &mu);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=MAX_ITER {
        iterations = it;
        let eta = linear_predictor(&scaled, &beta);
        let sw = mu.map(f64::sqrt);
        let mut a = scaled.x.clone();
        for (i, w) in sw.iter().enumerate() {
            a.row_mut(i).scale_mut(*w);
        }
        let z = DVector::from_iterator(
            n,
            (0..n).map(|i| sw[i] * (eta[i] - d.offset[i] + (d.y[i] - mu[i]) / mu[i])),
        );
        let proposal = solve_ls(a, &z)?;
        let mut step = proposal - &beta;
        let mut next = &beta + &step;
        let mut mu_next = linear_predictor(&scaled, &next).map(f64::exp);
        let mut dev_next = deviance(&d.y, &mu_next);
        let mut halvings = 0;
        while !(dev_next.is_finite() && dev_next <= dev + 1e-9 * dev.abs().max(1.0)) {
            halvings += 1;
            if halvings > 30 {
                break;
            }
            step /= 2.0;
            next = &beta + &step;
            mu_next = linear_predictor(&scaled, &next).map(f64::exp);
            dev_next = deviance(&d.y, &mu_next);
        }
        if !dev_next.is_finite() {
            break;
        }
        let change = (dev_next - dev).abs() / (dev_next.abs() + 0.1);
        beta = next;
        mu = mu_next;
        dev = dev_next;
        if change < DEV_TOL {
            converged = true;
            break;
        }
    }

    let mut a = scaled.x.clone();
    for (i, m) in mu.iter().enumerate() {
        a.row_mut(i).scale_mut(m.sqrt());
    }
    let r = a.qr().r();
    check_rank(&r)?;
    let rinv = r
        .try_inverse()
        .ok_or_else(|| DwpError::SingularFit("information matrix is singular".into()))?;
    let cov_s = &rinv * rinv.transpose();
    let mut cov = cov_s;
    for i in 0..k {
        for j in 0..k {
            cov[(i, j)] /= scale[i] * scale[j];
        }
    }
    let beta: Vec<f64> = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
    if beta.iter().any(|b| !b.is_finite()) {
        converged = false;
    }
    let ll = loglik(d, &beta);
    Ok(FittedGLM {
        form: d.form,
        beta,
        cov,
        colnames: d.colnames.clone(),
        class_levels: d.class_levels.clone(),
        loglik: ll,
        deviance: dev,
        aicc: aicc(ll, k, n),
        n_obs: n,
        k_params: k,
        converged,
        iterations,
    })
}

fn check_rank(r: &DMatrix<f64>) -> Result<()> {
    let diag: Vec<f64> = (0..r.ncols().min(r.nrows()))
        .map(|i| r[(i, i)].abs())
        .collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || diag.iter().any(|v| !v.is_finite() || *v <= 1e-10 * max) {
        return Err(DwpError::SingularFit(
            "design matrix is rank deficient".into(),
        ));
    }
    Ok(())
}

fn solve_ls(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = a.qr();
    let r = qr.r();
    check_rank(&r)?;
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| DwpError::SingularFit("triangular solve failed".into()))
}

/// Build the design for `form` and fit it.
pub fn fit_rows(rows: &[ObsRow], form: ModelForm, use_classes: bool) -> Result<FittedGLM> {
    fit_poisson(&build_design(rows, form, use_classes)?)
}

/// `nsim` draws (rows) from MVN(β̂, cov), deterministic in `seed`.
pub fn simulate_coefficients(fit: &FittedGLM, nsim: usize, seed: u64) -> Result<DMatrix<f64>> {
    let k = fit.k_params;
    let l = mvn_factor(&fit.cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(nsim, k);
    let mut z = DVector::zeros(k);
    for i in 0..nsim {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let dz = &l * &z;
        for j in 0..k {
            out[(i, j)] = fit.beta[j] + dz[j];
        }
    }
    Ok(out)
}

/// A factor L with L·Lᵀ = cov: Cholesky, or a clipped eigendecomposition for
/// semi-definite matrices.
fn mvn_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&v| v < -1e-8 * top.max(1e-300)) {
        return Err(DwpError::SingularFit(
            "coefficient covariance is not positive semi-definite".into(),
        ));
    }
    let root = eig
        .eigenvalues
        .map(|v| if v > floor { v.sqrt() } else { 0.0 });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_rings_circular;

    fn ring_rows(counts: &[u32]) -> Vec<ObsRow> {
        let p = build_rings_circular(counts.len() as f64).unwrap();
        let mut rows = rows_from_rings(&p.turbines[0].rows);
        for (r, c) in rows.iter_mut().zip(counts) {
            r.ncarc = *c;
        }
        rows
    }

    #[test]
    fn constant_model_recovers_total_over_area() {
        let rows = ring_rows(&[1, 2, 6, 7, 8, 10, 13, 14]);
        let fit = fit_rows(&rows, ModelForm::Constant, false).unwrap();
        let area: f64 = rows.iter().map(|r| r.exposure).sum();
        assert!((fit.beta[0].exp() - 61.0 / area).abs() < 1e-8 * (61.0 / area));
        assert!(fit.converged);
    }

    #[test]
    fn aicc_formula_and_guard() {
        assert!((aicc(-50.0, 2, 100) - (104.0 + 12.0 / 97.0)).abs() < 1e-12);
        assert_eq!(aicc(-50.0, 2, 3), f64::INFINITY);
    }

    #[test]
    fn all_zero_counts_error() {
        let rows = ring_rows(&[0, 0, 0, 0]);
        assert!(matches!(
            fit_rows(&rows, ModelForm::Xep1, false),
            Err(DwpError::DegenerateInput(_))
        ));
    }

    #[test]
    fn class_indicator_is_treatment_coded() {
        let mut rows = ring_rows(&[3, 4, 2, 1]);
        for (i, r) in rows.iter_mut().enumerate() {
            r.class = Some(if i % 2 == 0 { "Mod" } else { "Easy" }.into());
        }
        let d = build_design(&rows, ModelForm::Xep01, true).unwrap();
        assert_eq!(d.colnames, ["intercept", "class_Mod", "log_x", "x"]);
        assert_eq!(d.x[(0, 1)], 1.0);
        assert_eq!(d.x[(1, 1)], 0.0);
    }

    #[test]
    fn truncated_normal_offset_subtracts_log_x() {
        let rows = ring_rows(&[1, 1, 1]);
        let d = build_design(&rows, ModelForm::TNormal, false).unwrap();
        let want = (std::f64::consts::PI * 3.0).ln() - 1.5f64.ln();
        assert!((d.offset[1] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_covariance_gives_constant_draws() {
        let rows = ring_rows(&[5, 9, 7, 4, 2, 1]);
        let mut fit = fit_rows(&rows, ModelForm::Xep1, false).unwrap();
        fit.cov = DMatrix::zeros(2, 2);
        let draws = simulate_coefficients(&fit, 5, 1).unwrap();
        for i in 0..5 {
            assert_eq!(draws[(i, 1)], fit.beta[1]);
        }
    }
}
