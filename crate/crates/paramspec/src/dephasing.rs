//! Two-level dephasing under parametric modulation: filter functions, the
//! analytic decoherence function, Monte Carlo phase accumulation and the
//! exponential-times-Gaussian decay fit.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device::{curvature_b0, FluxDrive, TransmonParams};
use crate::fit::{levenberg_marquardt, r_squared, LmOptions};
use crate::noisegen::{add_trace, analytic_psd, NoiseSpec};
use crate::par::{derive_seed, map_indexed, Execution};
use crate::quad::integrate_panels;
use crate::{Error, Result};

/// Rotation axis of a refocusing pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Equidistant train of pi pulses, `t_k = (k + 1/2) T / n` over a duration `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DDSequence {
    pub n_pulses: usize,
    pub axes: Vec<Axis>,
    pub idealized: bool,
}

const XY8_AXES: [Axis; 8] = [
    Axis::X,
    Axis::Y,
    Axis::X,
    Axis::Y,
    Axis::Y,
    Axis::X,
    Axis::Y,
    Axis::X,
];

impl DDSequence {
    /// Bare modulation, no pulses.
    pub fn free() -> Self {
        DDSequence {
            n_pulses: 0,
            axes: vec![],
            idealized: true,
        }
    }

    pub fn hahn() -> Self {
        DDSequence {
            n_pulses: 1,
            axes: vec![Axis::X],
            idealized: true,
        }
    }

    pub fn xy8() -> Self {
        Self::xy(8)
    }

    /// `n` pulses cycling through the XY8 axis pattern.
    pub fn xy(n: usize) -> Self {
        DDSequence {
            n_pulses: n,
            axes: (0..n).map(|k| XY8_AXES[k % 8]).collect(),
            idealized: true,
        }
    }

    pub fn pulse_times(&self, duration: f64) -> Vec<f64> {
        let n = self.n_pulses as f64;
        (0..self.n_pulses)
            .map(|k| (k as f64 + 0.5) * duration / n)
            .collect()
    }

    /// Sign segments `(start, end, sign)` of the toggling frame over `[0, duration]`.
    pub fn segments(&self, duration: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.n_pulses + 1);
        let mut start = 0.0;
        let mut sign = 1.0;
        for t in self.pulse_times(duration) {
            out.push((start, t, sign));
            start = t;
            sign = -sign;
        }
        out.push((start, duration, sign));
        out
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Toggling-frame transform `G(x) = int_0^t s(t') e^{i x t'} dt'`.
pub fn toggling_transform(dd: &DDSequence, x: f64, t: f64) -> Complex64 {
    dd.segments(t)
        .iter()
        .map(|&(a, b, s)| {
            let len = b - a;
            Complex64::from_polar(s * len * sinc(0.5 * x * len), 0.5 * x * (a + b))
        })
        .sum()
}

/// Squared modulus `|G(x)|^2` of the toggling transform.
pub fn dd_kernel(dd: &DDSequence, x: f64, t: f64) -> f64 {
    toggling_transform(dd, x, t).norm_sqr()
}

/// Closed-form one-sided term `|G(x)|^2 / 4` of the filter.
fn filter_term(n: usize, x: f64, t: f64) -> f64 {
    if n == 0 {
        let half = 0.5 * t;
        return half * half * sinc(half * x).powi(2);
    }
    let tau = t / n as f64;
    let c = (0.5 * x * tau).cos();
    let trig = if n % 2 == 0 {
        (0.5 * x * t).sin()
    } else {
        (0.5 * x * t).cos()
    };
    if c.abs() < 1e-7 || (x * tau).abs() < 1e-4 {
        // Removable singularities: fall back on the direct segment sum.
        return 0.25 * dd_kernel(&DDSequence::xy(n), x, t);
    }
    // 4 sin^4(x tau/4) / cos^2(x tau/2) = (sec(x tau/2) - 1)^2, the analogue of
    // tan^2 for half-spaced end segments; both peak where cos(x tau/2) = 0.
    let s = (0.25 * x * tau).sin();
    4.0 * s.powi(4) * trig * trig / (x * x * c * c)
}

/// Spectral weight of the additive-noise filter at `omega` for a sequence of
/// duration `t` under modulation at `omega_m`: the sum of the two shifted
/// windows (cross terms between them dropped). Peaks sit near
/// `+-omega_m +- pi * n_pulses / t`; with no pulses this is the pair of
/// `sin^2(x t/2) / x^2` windows.
pub fn filter_function(dd: &DDSequence, omega: f64, omega_m: f64, t: f64) -> f64 {
    filter_term(dd.n_pulses, omega + omega_m, t) + filter_term(dd.n_pulses, omega - omega_m, t)
}

/// The same closed form for `m` equal segments (`m - 1` pulses at `k t / m`):
/// `sum_pm tan^2(x t / 2m) trig^2(x t / 2) / x^2` with `trig = sin` for even
/// `m` and `cos` for odd `m`.
pub fn uniform_segment_filter(m: usize, omega: f64, omega_m: f64, t: f64) -> f64 {
    let term = |x: f64| {
        if m == 1 {
            return filter_term(0, x, t);
        }
        let half = 0.5 * x * t / m as f64;
        let trig = if m % 2 == 0 {
            (0.5 * x * t).sin()
        } else {
            (0.5 * x * t).cos()
        };
        if half.cos().abs() < 1e-7 || x.abs() * t < 1e-6 {
            let segs: Vec<(f64, f64, f64)> = (0..m)
                .map(|k| {
                    let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                    (k as f64 * t / m as f64, (k + 1) as f64 * t / m as f64, s)
                })
                .collect();
            let g: Complex64 = segs
                .iter()
                .map(|&(a, b, s)| {
                    Complex64::from_polar(s * (b - a) * sinc(0.5 * x * (b - a)), 0.5 * x * (a + b))
                })
                .sum();
            return 0.25 * g.norm_sqr();
        }
        half.tan().powi(2) * trig * trig / (x * x)
    };
    term(omega + omega_m) + term(omega - omega_m)
}

/// Direct evaluation of `int int s(t1) s(t2) e^{i w (t1-t2)} sin(wm t1) sin(wm t2)`
/// by the midpoint rule on an `n_grid`-cell grid, for a sign function given
/// by its segments.
pub fn brute_force_filter(
    segments: &[(f64, f64, f64)],
    omega: f64,
    omega_m: f64,
    t: f64,
    n_grid: usize,
) -> f64 {
    let h = t / n_grid as f64;
    let sign_at = |tt: f64| {
        segments
            .iter()
            .find(|&&(a, b, _)| tt >= a && tt < b)
            .map(|s| s.2)
            .unwrap_or(segments.last().map(|s| s.2).unwrap_or(1.0))
    };
    let pts: Vec<(f64, f64)> = (0..n_grid)
        .map(|j| {
            let tt = (j as f64 + 0.5) * h;
            (tt, sign_at(tt) * (omega_m * tt).sin())
        })
        .collect();
    let mut acc = 0.0;
    for &(t1, f1) in &pts {
        for &(t2, f2) in &pts {
            acc += f1 * f2 * (omega * (t1 - t2)).cos();
        }
    }
    acc * h * h
}

/// Kernel with the fast oscillations replaced by their mean far from the
/// window centre, so that wide quadrature panels stay accurate.
fn smoothed_filter(dd: &DDSequence, omega: f64, center: f64, t: f64, reach: f64) -> f64 {
    let term = |x: f64| {
        if x.abs() <= reach {
            filter_term(dd.n_pulses, x, t)
        } else {
            0.25 * (4.0 * dd.n_pulses as f64 + 2.0) / (x * x)
        }
    };
    term(omega + center) + term(omega - center)
}

/// `int_0^inf S(w) F_c(w) dw` for the filter windows centred at `+-center`.
fn filtered_power(
    spec: &NoiseSpec,
    dd: &DDSequence,
    center: f64,
    t: f64,
) -> Result<f64> {
    if spec.is_zero() {
        return Ok(0.0);
    }
    let n = dd.n_pulses;
    let unit = PI / t;
    let k_max = 40 * (n + 2);
    let reach = k_max as f64 * unit;
    let mut breaks = vec![0.0];
    for k in -(k_max as i64)..=(k_max as i64) {
        breaks.push(center + k as f64 * unit);
    }
    let mut feats = spec.features();
    feats.push(center);
    let mut hi: f64 = center + reach;
    for &f in &feats {
        hi = hi.max(f * 1.01);
    }
    if let NoiseSpec::Composite { components } = spec {
        for c in components {
            if let NoiseSpec::Ar1 { t_corr, center, .. } = c {
                for j in 0..12 {
                    let w = 0.25 * 2f64.powi(j) / t_corr;
                    breaks.push(center + w);
                    breaks.push(center - w);
                }
                hi = hi.max(center + 4096.0 / t_corr);
            }
        }
    }
    if let NoiseSpec::Ar1 { t_corr, center, .. } = spec {
        for j in 0..12 {
            let w = 0.25 * 2f64.powi(j) / t_corr;
            breaks.push(center + w);
            breaks.push(center - w);
        }
        hi = hi.max(center + 4096.0 / t_corr);
    }
    breaks.extend(feats.iter().copied());
    // Logarithmic ladders resolve 1/w spectra near their infrared cutoff and
    // the algebraic tails beyond the dense region.
    for &f in &feats {
        let mut w = f.max(1e-3 * unit);
        while w < unit {
            breaks.push(w);
            w *= 2.0;
        }
    }
    let mut w = center + reach;
    while w < hi {
        w *= 1.5;
        breaks.push(w);
    }
    let mut w = (center - reach).max(0.0);
    while w > 1e-3 * unit {
        breaks.push(w);
        w /= 1.5;
    }
    breaks.push(hi);
    breaks.retain(|&b| b >= 0.0 && b <= hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let f = |w: f64| {
        let s = analytic_psd(spec, w).unwrap_or(0.0);
        if s == 0.0 {
            0.0
        } else {
            s * smoothed_filter(dd, w, center, t, reach)
        }
    };
    integrate_panels(&f, &breaks, 0.0, 1e-7)
}

/// Analytic `-ln W(t)` for Gaussian additive and multiplicative noise.
///
/// Without pulses this is
/// `b0^2 phi_ac^2 t [S_dc(wm) + S_ac(2 wm)/4] + (b0^2 phi_ac^2 t^2 / 2) int dw/2pi sinc^2(w t/2) S_ac(w)`;
/// with pulses the additive spectrum is weighed by [`filter_function`] and
/// the multiplicative one by the same filter centred at zero and at `2 wm`.
pub fn analytic_decoherence(
    p: &TransmonParams,
    drive: &FluxDrive,
    dd: &DDSequence,
    s_dc: &NoiseSpec,
    s_ac: &NoiseSpec,
    t: f64,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::arg("t must be positive"));
    }
    if drive.phi_dc != 0.0 {
        return Err(Error::arg("analytic decoherence assumes sweet-spot bias"));
    }
    let b0 = curvature_b0(p);
    let k = b0 * b0 * drive.phi_ac * drive.phi_ac;
    let wm = drive.omega_m;
    if dd.n_pulses == 0 {
        let sdc = if s_dc.is_zero() { 0.0 } else { analytic_psd(s_dc, wm)? };
        let sac2 = if s_ac.is_zero() { 0.0 } else { analytic_psd(s_ac, 2.0 * wm)? };
        // filter_term(0, w) = (t/2)^2 sinc^2(w t/2), centred at zero it is
        // counted twice by the window pair.
        let window = filtered_power(s_ac, dd, 0.0, t)?;
        let sinc_int = window / (0.5 * t * t) / PI;
        return Ok(k * t * (sdc + 0.25 * sac2) + 0.5 * k * t * t * sinc_int);
    }
    let dc = filtered_power(s_dc, dd, wm, t)?;
    let ac0 = filtered_power(s_ac, dd, 0.0, t)?;
    let ac2 = filtered_power(s_ac, dd, 2.0 * wm, t)?;
    // gamma = 2 k int dw/2pi S_dc F(w; wm) + (k/2) int dw/2pi S_ac [2 F(w; 0) + F(w; 2wm)],
    // and each two-sided integral is twice the one-sided one.
    Ok(2.0 * k * dc / PI + 0.5 * k * (2.0 * ac0 + ac2) / PI)
}

/// Rate predicted by the leading term alone, `b0^2 phi_ac^2 S_dc(wm)`.
pub fn leading_rate(p: &TransmonParams, drive: &FluxDrive, s_dc: &NoiseSpec) -> Result<f64> {
    let b0 = curvature_b0(p);
    Ok(b0 * b0 * drive.phi_ac * drive.phi_ac * analytic_psd(s_dc, drive.omega_m)?)
}

/// Settings of a Monte Carlo coherence run.
#[derive(Clone, Debug)]
pub struct CoherenceSim {
    pub n_trials: usize,
    /// Integration step; defaults to a 64th of the modulation period.
    pub dt: Option<f64>,
    /// Number of equally spaced output times up to the drive duration.
    pub n_times: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for CoherenceSim {
    fn default() -> Self {
        CoherenceSim {
            n_trials: 1 << 11,
            dt: None,
            n_times: 48,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

/// Monte Carlo decoherence function `W(t) = |<exp(-i phi(t))>|`.
///
/// Each trial draws independent additive and multiplicative noise traces,
/// integrates the gap shift by the midpoint rule and, for every output time,
/// applies the pulse sequence rescaled to that time.
pub fn simulate_coherence(
    p: &TransmonParams,
    drive: &FluxDrive,
    dd: &DDSequence,
    s_dc: &NoiseSpec,
    s_ac: &NoiseSpec,
    sim: &CoherenceSim,
) -> Result<Vec<(f64, f64)>> {
    s_dc.validate()?;
    s_ac.validate()?;
    if sim.n_trials == 0 || sim.n_times == 0 {
        return Err(Error::arg("need at least one trial and one output time"));
    }
    let horizon = drive.duration;
    let period = drive.period();
    let dt_req = sim.dt.unwrap_or(period / 64.0);
    if dt_req > period / 20.0 {
        return Err(Error::arg(format!(
            "dt = {dt_req:e} s gives fewer than 20 samples per modulation period"
        )));
    }
    let n_steps = (horizon / dt_req).ceil() as usize;
    let dt = horizon / n_steps as f64;
    if dd.n_pulses > 0 && horizon / (dd.n_pulses as f64) < 4.0 * dt {
        return Err(Error::arg("dt does not resolve the pulse spacing"));
    }
    let b0 = curvature_b0(p);
    let wm = drive.omega_m;
    let mut c_dc = Vec::with_capacity(n_steps);
    let mut c_ac = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = (k as f64 + 0.5) * dt;
        c_dc.push(-2.0 * b0 * drive.phi_ac * (wm * t).sin() * dt);
        c_ac.push(-b0 * drive.phi_ac * (1.0 - (2.0 * wm * t).cos()) * dt);
    }
    let times: Vec<f64> = (1..=sim.n_times)
        .map(|j| horizon * j as f64 / sim.n_times as f64)
        .collect();
    let seg_sets: Vec<Vec<(f64, f64, f64)>> = times.iter().map(|&t| dd.segments(t)).collect();
    let dc_zero = s_dc.is_zero();
    let ac_zero = s_ac.is_zero();
    let per_trial = map_indexed(sim.exec, sim.n_trials, |i| {
        let seed = derive_seed(sim.seed, i as u64);
        let mut dc = vec![0.0; n_steps];
        let mut ac = vec![0.0; n_steps];
        if !dc_zero {
            add_trace(s_dc, dt, derive_seed(seed, 0), &mut dc);
        }
        if !ac_zero {
            add_trace(s_ac, dt, derive_seed(seed, 1), &mut ac);
        }
        let mut prefix = Vec::with_capacity(n_steps + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for k in 0..n_steps {
            acc += c_dc[k] * dc[k] + c_ac[k] * ac[k];
            prefix.push(acc);
        }
        let at = |t: f64| {
            let x = t / dt;
            let i = (x.floor() as usize).min(n_steps - 1);
            let f = x - i as f64;
            prefix[i] + f * (prefix[i + 1] - prefix[i])
        };
        seg_sets
            .iter()
            .map(|segs| {
                let phase: f64 = segs.iter().map(|&(a, b, s)| s * (at(b) - at(a))).sum();
                Complex64::from_polar(1.0, -phase)
            })
            .collect::<Vec<_>>()
    });
    let mut sums = vec![Complex64::new(0.0, 0.0); times.len()];
    for trial in &per_trial {
        for (s, z) in sums.iter_mut().zip(trial) {
            *s += z;
        }
    }
    let n = sim.n_trials as f64;
    Ok(times
        .into_iter()
        .zip(sums)
        .map(|(t, s)| (t, s.norm() / n))
        .collect())
}

/// Fitted decay `W = exp(-gamma t - (alpha t)^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub gamma: f64,
    pub alpha: f64,
    pub gamma_err: f64,
    pub alpha_err: f64,
    pub r2: f64,
    pub t_phi: f64,
    /// Set when an unconstrained rate would have gone negative.
    pub clipped: bool,
}

/// Solve `gamma t + (alpha t)^2 = 1`.
pub fn coherence_time(gamma: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0 / gamma;
    }
    let a2 = alpha * alpha;
    // Stable root of a2 t^2 + gamma t - 1 = 0.
    2.0 / (gamma + (gamma * gamma + 4.0 * a2).sqrt())
}

/// Least-squares fit of `W = exp(-gamma t - (alpha t)^2)` with both rates
/// constrained non-negative. Samples after the first `W < 0.05` are dropped.
pub fn fit_decay(samples: &[(f64, f64)]) -> Result<DecayEstimate> {
    if samples.len() < 8 {
        return Err(Error::arg("need at least 8 samples"));
    }
    let last = samples.last().expect("non-empty").1;
    if last > 0.9 {
        return Err(Error::FitDegenerate(format!(
            "no decay within the window (final W = {last:.4})"
        )));
    }
    let cut = samples
        .iter()
        .position(|&(_, w)| w < 0.05)
        .unwrap_or(samples.len());
    let data = &samples[..cut];
    if data.len() < 4 {
        return Err(Error::FitDegenerate(format!(
            "only {} samples before the 0.05 floor; refine the time grid",
            data.len()
        )));
    }
    let ts = data.last().expect("non-empty").0;
    let x: Vec<f64> = data.iter().map(|d| d.0 / ts).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1).collect();
    // Linearised start: -ln W = g u + a2 u^2.
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&u, &w) in x.iter().zip(&y) {
        let l = -w.max(1e-12).ln();
        s11 += u * u;
        s12 += u * u * u;
        s22 += u * u * u * u;
        b1 += u * l;
        b2 += u * u * l;
    }
    let det = s11 * s22 - s12 * s12;
    let (mut g0, mut a20) = ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det);
    let mut clipped = false;
    if !(a20 >= 0.0) {
        a20 = 0.0;
        g0 = b1 / s11;
        clipped = true;
    }
    if !(g0 >= 0.0) {
        g0 = 0.0;
        a20 = b2 / s22;
        clipped = true;
    }
    let model = |p: &[f64], u: f64| (-p[0] * u - (p[1] * u).powi(2)).exp();
    let resid = |p: &[f64], r: &mut [f64]| {
        for ((ri, &u), &w) in r.iter_mut().zip(&x).zip(&y) {
            *ri = model(p, u) - w;
        }
    };
    let opts = LmOptions {
        lower: Some(vec![0.0, 0.0]),
        ..Default::default()
    };
    let start = [g0.max(1e-6), a20.max(0.0).sqrt().max(1e-6)];
    let res = levenberg_marquardt(resid, &start, x.len(), &opts)?;
    let errs = res.std_errors();
    let mut r = vec![0.0; x.len()];
    resid(&res.params, &mut r);
    // A Gaussian rate still at its start value is treated as absent.
    let a_scaled = if res.params[1] <= 1e-6 { 0.0 } else { res.params[1] };
    let gamma = res.params[0] / ts;
    let alpha = a_scaled / ts;
    clipped |= res.params[0] == 0.0 || a_scaled == 0.0;
    if !(gamma > 0.0 || alpha > 0.0) {
        return Err(Error::FitDegenerate("both fitted rates vanish".into()));
    }
    Ok(DecayEstimate {
        gamma,
        alpha,
        gamma_err: errs[0] / ts,
        alpha_err: errs[1] / ts,
        r2: r_squared(&y, &r),
        t_phi: coherence_time(gamma, alpha),
        clipped,
    })
}
