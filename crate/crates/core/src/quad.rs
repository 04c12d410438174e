//! Gauss–Kronrod quadrature and a golden-section maximiser.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod rule on `[a, b]`, returning the estimate and the
/// difference to the embedded 7-point Gauss rule.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// A panel of an adaptive partition with its integral.
#[derive(Debug, Clone, Copy)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub mass: f64,
}

const MAX_DEPTH: usize = 30;
/// Past this many evaluated panels every remaining panel is accepted.
const MAX_PANELS: usize = 1 << 15;

/// Adaptive bisection until every panel's error is below `abs_tol` scaled by
/// its share of the interval. Panels come back sorted by `a`.
pub fn adaptive_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> Vec<Panel> {
    adaptive_panels_from(f, a, b, abs_tol, 0)
}

/// As [`adaptive_panels`], but always splits down to `min_depth` first.
pub fn adaptive_panels_from<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    min_depth: usize,
) -> Vec<Panel> {
    let mut out = Vec::new();
    let width = b - a;
    let mut stack = vec![(a, b, 0usize)];
    let mut evaluated = 0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = gk15(f, lo, hi);
        evaluated += 1;
        // GK15 cannot resolve errors much below 50 ulp of the panel mass.
        let budget = (abs_tol * (hi - lo) / width)
            .max(50.0 * f64::EPSILON * v.abs())
            .max(f64::MIN_POSITIVE);
        let accept = depth >= min_depth && e <= budget;
        if accept || depth >= MAX_DEPTH || evaluated >= MAX_PANELS {
            out.push(Panel {
                a: lo,
                b: hi,
                mass: v,
            });
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    out.sort_by(|p, q| p.a.total_cmp(&q.a));
    out
}

/// Integral over `[a, b]` by adaptive Gauss–Kronrod.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> f64 {
    adaptive_panels_from(f, a, b, abs_tol, 4)
        .iter()
        .map(|p| p.mass)
        .sum()
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        // >= keeps the left point on ties, biasing toward smaller x.
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk15_is_exact_for_low_degree_polynomials() {
        let (v, _) = gk15(&|x: f64| x.powi(6) - 3.0 * x * x + 1.0, 0.0, 2.0);
        let exact = 2f64.powi(7) / 7.0 - 8.0 + 2.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_a_peaked_integrand() {
        let f = |x: f64| (-(x - 0.3).powi(2) / 2e-3).exp();
        let v = integrate(&f, -1.0, 1.0, 1e-13);
        let exact = (2.0 * std::f64::consts::PI * 1e-3).sqrt();
        assert!((v - exact).abs() < 1e-12, "{v} vs {exact}");
    }

    #[test]
    fn golden_finds_parabola_vertex() {
        let x = golden_max(&|x: f64| -(x - 1.25).powi(2), -4.0, 7.0, 1e-9);
        assert!((x - 1.25).abs() < 1e-8);
    }
}
