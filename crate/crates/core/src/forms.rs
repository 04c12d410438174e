//! Model forms: GLM distance terms, offset adjustments and extensibility rules.

use std::fmt;
use std::str::FromStr;

use crate::error::{DwpError, Result};

/// A distance regressor in the log-linear carcass density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    /// 1/x
    Inv,
    /// log x
    Log,
    /// x
    Lin,
    /// x²
    Sq,
    /// x³
    Cub,
    /// (log x)²
    LogSq,
}

impl Term {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Term::Inv => 1.0 / x,
            Term::Log => x.ln(),
            Term::Lin => x,
            Term::Sq => x * x,
            Term::Cub => x * x * x,
            Term::LogSq => {
                let l = x.ln();
                l * l
            }
        }
    }

    /// Value at `x = exp(u)`, computed without forming `x` where that matters.
    pub fn eval_log(self, u: f64) -> f64 {
        match self {
            Term::Inv => (-u).exp(),
            Term::Log => u,
            Term::Lin => u.exp(),
            Term::Sq => (2.0 * u).exp(),
            Term::Cub => (3.0 * u).exp(),
            Term::LogSq => u * u,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Term::Inv => "inv_x",
            Term::Log => "log_x",
            Term::Lin => "x",
            Term::Sq => "x2",
            Term::Cub => "x3",
            Term::LogSq => "log_x2",
        }
    }

    /// Whether the term is undefined at x = 0.
    pub fn needs_positive(self) -> bool {
        matches!(self, Term::Inv | Term::Log | Term::LogSq)
    }
}

/// Additive modifier of the log offset: `log_coef * log x + lin_coef * x`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffsetAdjust {
    pub log_coef: f64,
    pub lin_coef: f64,
}

impl OffsetAdjust {
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = 0.0;
        if self.log_coef != 0.0 {
            v += self.log_coef * x.ln();
        }
        if self.lin_coef != 0.0 {
            v += self.lin_coef * x;
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelForm {
    Constant,
    Xep1,
    Xep01,
    Xep2,
    Xep02,
    Xep12,
    Xep012,
    Xep123,
    Xep0123,
    Lognormal,
    TNormal,
    MaxwellBoltzmann,
    Xep0,
    Xepi0,
    ChiSquared,
    Exponential,
    InverseGaussian,
}

use ModelForm::*;
use Term::*;

/// The default model battery.
pub const STANDARD_FORMS: [ModelForm; 12] = [
    Xep1,
    Xep01,
    Xep2,
    Xep02,
    Xep12,
    Xep012,
    Xep123,
    Xep0123,
    TNormal,
    MaxwellBoltzmann,
    Lognormal,
    Constant,
];

pub const SUPPLEMENTARY_FORMS: [ModelForm; 5] =
    [Xep0, Xepi0, ChiSquared, Exponential, InverseGaussian];

impl ModelForm {
    pub fn all() -> impl Iterator<Item = ModelForm> {
        STANDARD_FORMS.into_iter().chain(SUPPLEMENTARY_FORMS)
    }

    pub fn name(self) -> &'static str {
        match self {
            Constant => "constant",
            Xep1 => "xep1",
            Xep01 => "xep01",
            Xep2 => "xep2",
            Xep02 => "xep02",
            Xep12 => "xep12",
            Xep012 => "xep012",
            Xep123 => "xep123",
            Xep0123 => "xep0123",
            Lognormal => "lognormal",
            TNormal => "tnormal",
            MaxwellBoltzmann => "MaxwellBoltzmann",
            Xep0 => "xep0",
            Xepi0 => "xepi0",
            ChiSquared => "chisquared",
            Exponential => "exponential",
            InverseGaussian => "inverseGaussian",
        }
    }

    /// Distance regressors in coefficient order.
    pub fn terms(self) -> &'static [Term] {
        match self {
            Constant => &[],
            Xep1 => &[Lin],
            Xep01 => &[Log, Lin],
            Xep2 => &[Sq],
            Xep02 => &[Log, Sq],
            Xep12 => &[Lin, Sq],
            Xep012 => &[Log, Lin, Sq],
            Xep123 => &[Lin, Sq, Cub],
            Xep0123 => &[Log, Lin, Sq, Cub],
            Lognormal => &[Log, LogSq],
            TNormal => &[Lin, Sq],
            MaxwellBoltzmann => &[Sq],
            Xep0 => &[Log],
            Xepi0 => &[Inv, Log],
            ChiSquared => &[Log],
            Exponential => &[Lin],
            InverseGaussian => &[Inv, Lin],
        }
    }

    pub fn offset_adjust(self) -> OffsetAdjust {
        let (log_coef, lin_coef) = match self {
            TNormal | Exponential => (-1.0, 0.0),
            MaxwellBoltzmann => (1.0, 0.0),
            ChiSquared => (0.0, -0.5),
            InverseGaussian => (-2.5, 0.0),
            _ => (0.0, 0.0),
        };
        OffsetAdjust { log_coef, lin_coef }
    }

    pub fn n_terms(self) -> usize {
        self.terms().len()
    }

    /// Smallest distance at which the density is defined.
    pub fn support_min(self) -> f64 {
        if self == Xep0 {
            1.0
        } else {
            0.0
        }
    }

    /// Whether observations at x = 0 must be dropped when fitting.
    pub fn needs_positive_x(self) -> bool {
        self.terms().iter().any(|t| t.needs_positive()) || self.offset_adjust().log_coef != 0.0
    }

    fn coef(self, beta: &[f64], term: Term) -> f64 {
        let i = self
            .terms()
            .iter()
            .position(|&t| t == term)
            .expect("term belongs to form");
        beta[i]
    }

    /// Table conditions for a finite integral of the fitted density on its
    /// support. `beta` holds the distance-term coefficients only.
    pub fn extensible(self, beta: &[f64]) -> Result<bool> {
        if beta.len() != self.n_terms() {
            return Err(DwpError::InvalidParameters(format!(
                "{} takes {} distance coefficients, got {}",
                self.name(),
                self.n_terms(),
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Ok(false);
        }
        let c = |t| self.coef(beta, t);
        Ok(match self {
            Constant => false,
            Xep1 | Exponential => c(Lin) < 0.0,
            Xep01 => c(Log) > -2.0 && c(Lin) < 0.0,
            Xep2 | Xep12 | TNormal | MaxwellBoltzmann => c(Sq) < 0.0,
            Xep02 | Xep012 => c(Log) > -2.0 && c(Sq) < 0.0,
            Xep123 => c(Cub) < 0.0,
            Xep0123 => c(Log) > -2.0 && c(Cub) < 0.0,
            Lognormal => c(LogSq) < 0.0,
            Xep0 => c(Log) < -2.0,
            Xepi0 => c(Log) < -2.0 && c(Inv) < 0.0,
            ChiSquared => c(Log) > -2.0,
            InverseGaussian => c(Inv) < 0.0 && c(Lin) < 0.0,
        })
    }

    /// Log of the unnormalised distance density `x · exp(p(x) + adj(x))`.
    pub fn log_kernel(self, beta: &[f64], x: f64) -> f64 {
        if x < self.support_min() {
            return f64::NEG_INFINITY;
        }
        let adj = self.offset_adjust();
        if x == 0.0 {
            return self.log_kernel_at_zero(beta);
        }
        let mut v = (1.0 + adj.log_coef) * x.ln() + adj.lin_coef * x;
        for (t, b) in self.terms().iter().zip(beta) {
            v += b * t.eval(x);
        }
        v
    }

    /// Same as `log_kernel` at `x = exp(u)`.
    pub fn log_kernel_u(self, beta: &[f64], u: f64) -> f64 {
        let adj = self.offset_adjust();
        let mut v = (1.0 + adj.log_coef) * u;
        if adj.lin_coef != 0.0 {
            v += adj.lin_coef * u.exp();
        }
        for (t, b) in self.terms().iter().zip(beta) {
            let tv = t.eval_log(u);
            // 0 * inf would poison the sum; a zero coefficient contributes nothing.
            if *b != 0.0 {
                v += b * tv;
            }
        }
        v
    }

    fn log_kernel_at_zero(self, beta: &[f64]) -> f64 {
        let mut power = 1.0 + self.offset_adjust().log_coef;
        for (t, b) in self.terms().iter().zip(beta) {
            match t {
                Log => power += b,
                Inv => {
                    if *b < 0.0 {
                        return f64::NEG_INFINITY;
                    } else if *b > 0.0 {
                        return f64::INFINITY;
                    }
                }
                LogSq => {
                    if *b < 0.0 {
                        return f64::NEG_INFINITY;
                    } else if *b > 0.0 {
                        return f64::INFINITY;
                    }
                }
                _ => {}
            }
        }
        if power > 0.0 {
            f64::NEG_INFINITY
        } else if power < 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

impl fmt::Display for ModelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelForm {
    type Err = DwpError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        ModelForm::all()
            .find(|m| m.name().eq_ignore_ascii_case(t))
            .or_else(|| match t.to_ascii_lowercase().as_str() {
                "gamma" => Some(Xep01),
                "rayleigh" => Some(Xep2),
                "truncnorm" | "truncated_normal" => Some(TNormal),
                "mb" | "maxwell-boltzmann" => Some(MaxwellBoltzmann),
                "pareto" => Some(Xep0),
                "inversegamma" => Some(Xepi0),
                _ => None,
            })
            .ok_or_else(|| DwpError::InvalidArgument(format!("unknown model form '{t}'")))
    }
}

/// Parse a comma-separated model list; `"standard"` and `"all"` expand.
pub fn parse_model_list(s: &str) -> Result<Vec<ModelForm>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "standard" => out.extend(STANDARD_FORMS),
            "all" => out.extend(ModelForm::all()),
            p => out.push(p.parse()?),
        }
    }
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in ModelForm::all() {
            assert_eq!(m.name().parse::<ModelForm>().unwrap(), m);
        }
        assert_eq!(ModelForm::all().count(), 17);
    }

    #[test]
    fn table_conditions() {
        assert!(Xep1.extensible(&[-0.1]).unwrap());
        assert!(!Xep01.extensible(&[-2.5, -0.1]).unwrap());
        assert!(!Constant.extensible(&[]).unwrap());
        assert!(Xep0.extensible(&[-2.5]).unwrap());
        assert!(!Xepi0.extensible(&[0.3, -3.0]).unwrap());
        assert!(Lognormal.extensible(&[4.0, -0.2]).unwrap());
        assert!(Xep1.extensible(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn kernel_forms_agree_between_x_and_log_x() {
        let beta = [0.7, -0.03, 1e-4, -2e-6];
        for &x in &[0.3, 1.0, 17.0, 140.0] {
            let a = Xep0123.log_kernel(&beta, x);
            let b = Xep0123.log_kernel_u(&beta, x.ln());
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn truncated_normal_kernel_has_no_x_factor() {
        let beta = [0.1, -0.01];
        let x: f64 = 12.0;
        let want = 0.1 * x - 0.01 * x * x;
        assert!((TNormal.log_kernel(&beta, x) - want).abs() < 1e-12);
        assert_eq!(TNormal.log_kernel(&beta, 0.0), 0.0);
    }

    #[test]
    fn model_list_expands_keywords() {
        assert_eq!(parse_model_list("standard").unwrap().len(), 12);
        assert_eq!(parse_model_list("xep1, gamma").unwrap(), vec![Xep1, Xep01]);
    }
}
