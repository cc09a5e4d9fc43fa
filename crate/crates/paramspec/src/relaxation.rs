//! Finite-T1 study: a two-level master equation with amplitude damping under
//! noisy parametric modulation, and decay rates read off the peaks of the
//! averaged `|+>` projection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dephasing::DDSequence;
use crate::device::{energy_gap, gap_slope, FluxDrive, TransmonParams};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::noisegen::{add_trace, NoiseSpec};
use crate::par::{derive_seed, map_indexed, Execution};
use crate::spectroscopy::{choose_horizon, HorizonPolicy};

/// Qubit density matrix, `rho00`, `rho11` and the coherence `rho01`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix {
    pub p0: f64,
    pub p1: f64,
    pub coh: Complex64,
}

impl DensityMatrix {
    pub fn plus() -> Self {
        DensityMatrix {
            p0: 0.5,
            p1: 0.5,
            coh: Complex64::new(0.5, 0.0),
        }
    }

    pub fn excited() -> Self {
        DensityMatrix {
            p0: 0.0,
            p1: 1.0,
            coh: Complex64::new(0.0, 0.0),
        }
    }

    pub fn trace(&self) -> f64 {
        self.p0 + self.p1
    }

    /// Projection on `(|0> + |1>)/sqrt 2`.
    pub fn p_plus(&self) -> f64 {
        0.5 * self.trace() + self.coh.re
    }

    /// Positivity of a Hermitian 2x2 matrix up to `tol`.
    pub fn is_positive(&self, tol: f64) -> bool {
        self.p0 >= -tol && self.p1 >= -tol && self.coh.norm_sqr() <= self.p0 * self.p1 + tol
    }

    /// One splitting step over `dt`: half of the rotation by the integrated gap
    /// `phase`, amplitude damping, then the other half. The gap Hamiltonian is
    /// diagonal at all times, so the rotation over an interval only needs the
    /// integrated phase.
    pub fn step(&mut self, phase: f64, dt: f64, t1: f64) {
        let half = Complex64::from_polar(1.0, 0.5 * phase);
        self.coh *= half;
        if t1.is_finite() {
            let keep = (-dt / t1).exp();
            let moved = self.p1 * (1.0 - keep);
            self.p1 -= moved;
            self.p0 += moved;
            self.coh *= (-0.5 * dt / t1).exp();
        }
        self.coh *= half;
    }
}

/// A master-equation run averaged over noise traces.
#[derive(Clone, Debug)]
pub struct LindbladRun {
    /// Relaxation time, `f64::INFINITY` for none.
    pub t1: f64,
    /// Modulation; its duration is the simulated horizon.
    pub drive: FluxDrive,
    /// Additive flux noise.
    pub noise: NoiseSpec,
    pub n_traces: usize,
    /// Largest step; defaults to a 40th of the sweet-spot gap period.
    pub dt: Option<f64>,
    /// Number of recording windows, each one modulation period long, spread
    /// evenly over the horizon.
    pub windows: usize,
    /// Condition the average on trajectories without a relaxation jump.
    pub post_select: bool,
    pub exec: Execution,
}

impl LindbladRun {
    pub fn new(t1: f64, drive: FluxDrive, noise: NoiseSpec) -> Self {
        LindbladRun {
            t1,
            drive,
            noise,
            n_traces: 1 << 8,
            dt: None,
            windows: 64,
            post_select: false,
            exec: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) {
            return Err(Error::arg("t1 must be positive or infinite"));
        }
        if self.n_traces == 0 || self.windows == 0 {
            return Err(Error::arg("need at least one trace and one window"));
        }
        self.drive.validate()?;
        self.noise.validate()
    }
}

/// Averaged `|+>` projection with its standard error at each recorded time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlusSeries {
    pub times: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub std_err: Vec<f64>,
}

/// Noise is drawn on a grid of `NOISE_CELLS` points per modulation period and
/// interpolated linearly onto the fine step.
const NOISE_CELLS: usize = 64;

struct Grid {
    dt: f64,
    per_period: usize,
    n_steps: usize,
    gap: Vec<f64>,
    slope: Vec<f64>,
    records: Vec<usize>,
}

fn grid(p: &TransmonParams, run: &LindbladRun) -> Result<Grid> {
    let period = run.drive.period();
    let w_top = energy_gap(p, 0.0).max(run.drive.omega_m);
    let dt_max = 2.0 * std::f64::consts::PI / (40.0 * w_top);
    let dt_req = run.dt.unwrap_or(dt_max);
    if dt_req > dt_max * (1.0 + 1e-12) {
        return Err(Error::arg(format!(
            "dt = {dt_req:e} s gives fewer than 40 steps per gap period"
        )));
    }
    let sub = ((period / dt_req) / NOISE_CELLS as f64).ceil().max(1.0) as usize;
    let per_period = sub * NOISE_CELLS;
    let dt = period / per_period as f64;
    let n_periods = (run.drive.duration / period).round().max(1.0) as usize;
    let n_steps = n_periods * per_period;
    let mut gap = Vec::with_capacity(per_period);
    let mut slope = Vec::with_capacity(per_period);
    for k in 0..per_period {
        let t = (k as f64 + 0.5) * dt;
        let phi = run.drive.phi_dc + run.drive.phi_ac * (run.drive.omega_m * t).sin();
        gap.push(energy_gap(p, phi));
        slope.push(gap_slope(p, phi));
    }
    let windows = run.windows.min(n_periods);
    let mut records = Vec::new();
    for w in 0..windows {
        let first = if windows == 1 {
            n_periods - 1
        } else {
            w * (n_periods - 1) / (windows - 1)
        };
        let start = first * per_period;
        records.extend((start..start + per_period).map(|k| k + 1));
    }
    records.dedup();
    Ok(Grid {
        dt,
        per_period,
        n_steps,
        gap,
        slope,
        records,
    })
}

/// Evolve one master equation per trace for each relaxation time in `t1s`,
/// sharing the noise realisations across them.
pub fn evolve_master_t1s(
    p: &TransmonParams,
    run: &LindbladRun,
    t1s: &[f64],
    seed: u64,
) -> Result<Vec<PlusSeries>> {
    run.validate()?;
    if t1s.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::arg("t1 must be positive or infinite"));
    }
    let g = grid(p, run)?;
    let cell_dt = g.dt * (g.per_period / NOISE_CELLS) as f64;
    let n_cells = g.n_steps / (g.per_period / NOISE_CELLS) + 1;
    let sub = g.per_period / NOISE_CELLS;
    let n_rec = g.records.len();
    let chunks = 16.min(run.n_traces);
    let post = run.post_select;
    let per_chunk = map_indexed(run.exec, chunks, |c| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let lo = c * run.n_traces / chunks;
        let hi = (c + 1) * run.n_traces / chunks;
        let mut acc = vec![(vec![0.0; n_rec], vec![0.0; n_rec]); t1s.len()];
        let mut noise = vec![0.0; n_cells];
        for trace in lo..hi {
            noise.iter_mut().for_each(|x| *x = 0.0);
            add_trace(&run.noise, cell_dt, derive_seed(seed, trace as u64), &mut noise);
            let mut states = vec![DensityMatrix::plus(); t1s.len()];
            let mut phase = 0.0;
            let mut last_step = 0usize;
            let mut next = 0usize;
            for k in 0..g.n_steps {
                let j = k % g.per_period;
                let cell = k / sub;
                let f = ((k % sub) as f64 + 0.5) / sub as f64;
                let n = noise[cell] + f * (noise[cell + 1] - noise[cell]);
                phase += (g.gap[j] + g.slope[j] * n) * g.dt;
                if next == n_rec || g.records[next] != k + 1 {
                    continue;
                }
                let span = (k + 1 - last_step) as f64 * g.dt;
                for (i, s) in states.iter_mut().enumerate() {
                    s.step(phase, span, t1s[i]);
                    if !s.is_positive(1e-8) || (s.trace() - 1.0).abs() > 1e-8 {
                        return Err(Error::numerical("density matrix left the physical set"));
                    }
                    let v = if post {
                        // No-jump trajectories keep the excited weight, so the
                        // surviving fraction is 1/2 + rho11 for a |+> start.
                        0.5 + s.coh.re / (0.5 + s.p1)
                    } else {
                        s.p_plus()
                    };
                    acc[i].0[next] += v;
                    acc[i].1[next] += v * v;
                }
                last_step = k + 1;
                phase = 0.0;
                next += 1;
            }
        }
        Ok(acc)
    });
    let mut total = vec![(vec![0.0; n_rec], vec![0.0; n_rec]); t1s.len()];
    for chunk in per_chunk {
        for (t, a) in total.iter_mut().zip(chunk?) {
            for r in 0..n_rec {
                t.0[r] += a.0[r];
                t.1[r] += a.1[r];
            }
        }
    }
    let n = run.n_traces as f64;
    let times: Vec<f64> = g.records.iter().map(|&k| k as f64 * g.dt).collect();
    Ok(total
        .into_iter()
        .map(|(sum, sq)| {
            let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let std_err = sq
                .iter()
                .zip(&mean)
                .map(|(q, m)| {
                    if run.n_traces < 2 {
                        0.0
                    } else {
                        ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
                    }
                })
                .collect();
            PlusSeries {
                times: times.clone(),
                p_plus: mean,
                std_err,
            }
        })
        .collect())
}

/// Single relaxation time version of [`evolve_master_t1s`].
pub fn evolve_master(p: &TransmonParams, run: &LindbladRun, seed: u64) -> Result<PlusSeries> {
    Ok(evolve_master_t1s(p, run, &[run.t1], seed)?.remove(0))
}

/// Exponential fit to the peak envelope of an oscillating series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub rate: f64,
    pub rate_err: f64,
    pub amplitude: f64,
    pub n_peaks: usize,
}

/// Local maxima of `values` refined by a parabola through the neighbours.
/// Only maxima whose neighbours are evenly spaced in time count, so gaps
/// between recording windows never produce spurious peaks.
pub fn find_peaks(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        let (h0, h1) = (times[i] - times[i - 1], times[i + 1] - times[i]);
        if (h0 - h1).abs() > 1e-6 * h0.abs().max(h1.abs()) {
            continue;
        }
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        if !(b > a && b >= c) {
            continue;
        }
        let curv = a - 2.0 * b + c;
        let (shift, top) = if curv < 0.0 {
            let x = 0.5 * (a - c) / curv;
            (x, b - 0.25 * (a - c) * x)
        } else {
            (0.0, b)
        };
        out.push((times[i] + shift * h0, top));
    }
    out
}

/// Fit `peak - baseline = a exp(-rate t)` over all detected peaks.
pub fn extract_envelope_rate(times: &[f64], values: &[f64], baseline: f64) -> Result<EnvelopeFit> {
    if times.len() != values.len() {
        return Err(Error::arg("times and values differ in length"));
    }
    let peaks = find_peaks(times, values);
    if peaks.len() < 5 {
        return Err(Error::FitDegenerate(format!(
            "{} oscillation peaks found, need at least 5",
            peaks.len()
        )));
    }
    // Work in microseconds so both parameters are of order one.
    let pts: Vec<(f64, f64)> = peaks.iter().map(|&(t, v)| (t * 1e6, v - baseline)).collect();
    let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        if y > 0.0 {
            let ly = y.ln();
            sx += t;
            sy += ly;
            sxx += t * t;
            sxy += t * ly;
            m += 1.0;
        }
    }
    let (a0, g0) = if m >= 2.0 && (m * sxx - sx * sx) > 0.0 {
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        (((sy - slope * sx) / m).exp(), -slope)
    } else {
        (pts[0].1.abs().max(1e-12), 0.0)
    };
    let fit = levenberg_marquardt(
        |q, r| {
            for (ri, &(t, y)) in r.iter_mut().zip(&pts) {
                *ri = q[0] * (-q[1] * t).exp() - y;
            }
        },
        &[a0, g0],
        pts.len(),
        &LmOptions::default(),
    )?;
    let err = fit.std_errors();
    Ok(EnvelopeFit {
        rate: fit.params[1] * 1e6,
        rate_err: err[1] * 1e6,
        amplitude: fit.params[0],
        n_peaks: peaks.len(),
    })
}

/// Relaxation-time sweep over modulation frequencies at one amplitude.
#[derive(Clone, Debug)]
pub struct RelaxScan {
    /// Modulation frequencies, rad/s.
    pub frequencies: Vec<f64>,
    /// Amplitude as a fraction of `PHI_MAX`.
    pub amplitude: f64,
    pub noise: NoiseSpec,
    pub t1s: Vec<f64>,
    pub n_traces: usize,
    pub windows: usize,
    /// Horizon chosen from the analytic pure-dephasing decay.
    pub horizon: HorizonPolicy,
    pub post_select: bool,
    pub seed: u64,
    pub exec: Execution,
}

impl RelaxScan {
    pub fn new(frequencies: Vec<f64>, amplitude: f64, noise: NoiseSpec, t1s: Vec<f64>) -> Self {
        RelaxScan {
            frequencies,
            amplitude,
            noise,
            t1s,
            n_traces: 1 << 8,
            windows: 64,
            horizon: HorizonPolicy {
                decay: 2.0,
                min: 0.05e-6,
                max: 20e-6,
            },
            post_select: false,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxRow {
    pub omega_m: f64,
    pub t1: f64,
    pub rate: f64,
    pub rate_err: f64,
}

/// Run every frequency with common noise across the relaxation times, one row
/// per (frequency, T1) pair in frequency-major order.
pub fn run_relax_scan(
    p: &TransmonParams,
    scan: &RelaxScan,
    mut progress: impl FnMut(usize, usize),
) -> Result<Vec<RelaxRow>> {
    if scan.t1s.is_empty() {
        return Err(Error::arg("no relaxation times given"));
    }
    let mut rows = Vec::new();
    for (i, &wm) in scan.frequencies.iter().enumerate() {
        let probe = FluxDrive::at_sweet_spot(scan.amplitude, wm, 1e-6)?;
        let zero = NoiseSpec::zero();
        let horizon = choose_horizon(p, &probe, &DDSequence::free(), &scan.noise, &zero, &scan.horizon)?;
        let drive = FluxDrive { duration: horizon, ..probe };
        let mut run = LindbladRun::new(f64::INFINITY, drive, scan.noise.clone());
        run.n_traces = scan.n_traces;
        run.windows = scan.windows;
        run.post_select = scan.post_select;
        run.exec = scan.exec;
        let series = evolve_master_t1s(p, &run, &scan.t1s, derive_seed(scan.seed, i as u64))?;
        for (s, &t1) in series.iter().zip(&scan.t1s) {
            let fit = extract_envelope_rate(&s.times, &s.p_plus, 0.5)?;
            rows.push(RelaxRow {
                omega_m: wm,
                t1,
                rate: fit.rate,
                rate_err: fit.rate_err,
            });
        }
        progress(i + 1, scan.frequencies.len());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_decay_of_excited_state() {
        let mut s = DensityMatrix::excited();
        let t1 = 1e-5;
        for _ in 0..1000 {
            s.step(0.3, 1e-8, t1);
        }
        assert!((s.p1 - (-1e-5f64 / t1).exp()).abs() < 1e-12);
        assert!((s.trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn peaks_skip_window_gaps() {
        let t = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let v = [0.0, 1.0, 0.0, 0.5, 0.0, 0.2];
        let p = find_peaks(&t, &v);
        assert_eq!(p.len(), 1);
        assert!((p[0].0 - 1.0).abs() < 1e-12);
    }
}
