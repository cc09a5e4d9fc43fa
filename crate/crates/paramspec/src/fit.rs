//! Small dense Levenberg-Marquardt solver with box constraints, shared by the
//! decay, envelope and spectral-peak fits.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative change in the sum of squares that counts as converged.
    pub ftol: f64,
    /// Relative step size that counts as converged.
    pub xtol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            ftol: 1e-14,
            xtol: 1e-12,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Parameter covariance `s^2 (J^T J)^-1`, `s^2 = ssr / (n - p)`.
    pub covariance: DMatrix<f64>,
    pub ssr: f64,
    pub iterations: usize,
}

impl LmResult {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

fn clamp(p: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        for (x, l) in p.iter_mut().zip(lo) {
            *x = x.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (x, h) in p.iter_mut().zip(hi) {
            *x = x.min(*h);
        }
    }
}

fn jacobian(
    f: &impl Fn(&[f64], &mut [f64]),
    p: &[f64],
    m: usize,
    opts: &LmOptions,
) -> DMatrix<f64> {
    let n = p.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..n {
        let h = 1e-6 * p[j].abs().max(1e-8);
        let (mut up, mut dn) = (p[j] + h, p[j] - h);
        if let Some(hi) = &opts.upper {
            up = up.min(hi[j]);
        }
        if let Some(lo) = &opts.lower {
            dn = dn.max(lo[j]);
        }
        if up <= dn {
            continue;
        }
        q[j] = up;
        f(&q, &mut rp);
        q[j] = dn;
        f(&q, &mut rm);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (up - dn);
        }
    }
    jac
}

/// Minimise `sum r_i(p)^2` where `f(p, r)` fills the `m` residuals.
pub fn levenberg_marquardt(
    f: impl Fn(&[f64], &mut [f64]),
    p0: &[f64],
    m: usize,
    opts: &LmOptions,
) -> Result<LmResult> {
    let n = p0.len();
    if m < n {
        return Err(Error::arg(format!("{m} residuals cannot fix {n} parameters")));
    }
    let mut p = p0.to_vec();
    clamp(&mut p, opts);
    let mut r = vec![0.0; m];
    f(&p, &mut r);
    let mut ssr: f64 = r.iter().map(|x| x * x).sum();
    if !ssr.is_finite() {
        return Err(Error::numerical("non-finite residuals at the starting point"));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut trial = vec![0.0; m];
    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&f, &p, m, opts);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut q: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            clamp(&mut q, opts);
            f(&q, &mut trial);
            let s2: f64 = trial.iter().map(|x| x * x).sum();
            if s2.is_finite() && s2 <= ssr {
                let rel_step = p
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
                    .fold(0.0, f64::max);
                let rel_drop = (ssr - s2) / ssr.max(1e-300);
                small_step = rel_step < opts.xtol || rel_drop < opts.ftol;
                p = q;
                std::mem::swap(&mut r, &mut trial);
                ssr = s2;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || small_step || ssr == 0.0 {
            break;
        }
    }
    let jac = jacobian(&f, &p, m, opts);
    let jtj = jac.transpose() * &jac;
    let dof = (m - n).max(1) as f64;
    let covariance = jtj
        .clone()
        .try_inverse()
        .or_else(|| jtj.pseudo_inverse(1e-300).ok())
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN))
        * (ssr / dof);
    Ok(LmResult {
        params: p,
        covariance,
        ssr,
        iterations,
    })
}

/// Coefficient of determination of residuals against observations.
pub fn r_squared(obs: &[f64], residuals: &[f64]) -> f64 {
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let sst: f64 = obs.iter().map(|y| (y - mean).powi(2)).sum();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    if sst == 0.0 {
        if ssr == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-1.3 * t).exp()).collect();
        let res = levenberg_marquardt(
            |p, r| {
                for ((ri, t), y) in r.iter_mut().zip(&ts).zip(&ys) {
                    *ri = p[0] * (-p[1] * t).exp() - y;
                }
            },
            &[1.0, 0.5],
            ts.len(),
            &LmOptions::default(),
        )
        .unwrap();
        assert!((res.params[0] - 2.0).abs() < 1e-8);
        assert!((res.params[1] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let res = levenberg_marquardt(
            |p, r| {
                r[0] = p[0] + 1.0;
                r[1] = 0.5 * (p[0] + 1.0);
            },
            &[2.0],
            2,
            &LmOptions {
                lower: Some(vec![0.0]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(res.params[0], 0.0);
    }
}
