//! Adaptive Gauss-Kronrod (7/15) quadrature.

use crate::{Error, Result};

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
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (estimate, error estimate).
pub fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        resk += WGK[j] * s;
        if j % 2 == 1 {
            resg += WG[j / 2] * s;
        }
    }
    (resk * h, ((resk - resg) * h).abs())
}

/// Integrate `f` over `[a, b]` to the requested absolute or relative tolerance.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    integrate_panels(&f, &[a, b], abs_tol, rel_tol)
}

/// Integrate over consecutive panels given by breakpoints, refining adaptively.
pub fn integrate_panels(
    f: &impl Fn(f64) -> f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut stack: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(breaks.len() * 2);
    let mut total = 0.0;
    let mut err = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (v, e) = gk15(f, w[0], w[1]);
            total += v;
            err += e;
            stack.push((w[0], w[1], v, e));
        }
    }
    let max_iter = 200_000;
    let mut iter = 0;
    while err > abs_tol.max(rel_tol * total.abs()) {
        iter += 1;
        if iter > max_iter {
            return Err(Error::numerical(format!(
                "quadrature did not converge: estimate {total:e}, error {err:e}"
            )));
        }
        // Bisect the panel with the largest error.
        let (idx, _) = stack
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .expect("non-empty");
        let (a, b, v, e) = stack.swap_remove(idx);
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Err(Error::numerical(format!(
                "quadrature panel collapsed near {a:e}; estimate {total:e}, error {err:e}"
            )));
        }
        let (v1, e1) = gk15(f, a, m);
        let (v2, e2) = gk15(f, m, b);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        stack.push((a, m, v1, e1));
        stack.push((m, b, v2, e2));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn peaked_integrand() {
        let v = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-10).unwrap();
        let exact = 2.0 / 1e-2 * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() < 1e-8 * exact);
    }
}
