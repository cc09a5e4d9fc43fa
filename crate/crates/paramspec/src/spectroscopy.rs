//! Spectrum reconstruction: scan modulation frequencies and amplitudes, turn
//! fitted exponential rates into PSD estimates, and locate spectral peaks by
//! repeated constrained fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dephasing::{
    analytic_decoherence, fit_decay, simulate_coherence, CoherenceSim, DDSequence,
};
use crate::device::{curvature_b0, FluxDrive, TransmonParams};
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, r_squared, LmOptions};
use crate::noisegen::{relative_ac_noise, NoiseSpec};
use crate::par::{derive_seed, map_indexed, Execution};
use crate::{hz_to_rad, PHI_MAX};

/// How long each scan point is simulated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonPolicy {
    /// Target analytic `-ln W` at the end of the window.
    pub decay: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        HorizonPolicy {
            decay: 3.5,
            min: 0.2e-6,
            max: 40e-6,
        }
    }
}

/// A grid of modulation settings together with the noise to probe.
#[derive(Clone, Debug)]
pub struct ScanPlan {
    /// Modulation frequencies, rad/s, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Modulation amplitudes as fractions of `PHI_MAX`.
    pub amplitudes: Vec<f64>,
    pub n_trials: usize,
    pub dd: DDSequence,
    /// Additive flux noise, the spectroscopy target.
    pub noise: NoiseSpec,
    /// Relative multiplicative noise `sqrt(<dphi_ac^2>) / phi_ac`.
    pub ac_level: f64,
    pub seed: u64,
    pub samples_per_period: f64,
    pub n_times: usize,
    pub horizon: HorizonPolicy,
    pub exec: Execution,
}

impl ScanPlan {
    pub fn new(frequencies: Vec<f64>, amplitudes: Vec<f64>, noise: NoiseSpec) -> Self {
        ScanPlan {
            frequencies,
            amplitudes,
            n_trials: 1 << 11,
            dd: DDSequence::xy8(),
            noise,
            ac_level: 0.0,
            seed: 0,
            samples_per_period: 32.0,
            n_times: 48,
            horizon: HorizonPolicy::default(),
            exec: Execution::Parallel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() || self.amplitudes.is_empty() {
            return Err(Error::arg("scan needs at least one frequency and amplitude"));
        }
        if self.frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("scan frequencies must be strictly increasing"));
        }
        if self.frequencies.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::arg("scan frequencies must be positive"));
        }
        if self.amplitudes.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::arg("amplitude fractions must lie in (0, 1]"));
        }
        if self.samples_per_period < 20.0 {
            return Err(Error::arg("need at least 20 samples per modulation period"));
        }
        if !(self.ac_level >= 0.0) {
            return Err(Error::arg("ac level must be non-negative"));
        }
        let h = &self.horizon;
        if !(h.decay > 0.0 && h.min > 0.0 && h.max >= h.min) {
            return Err(Error::arg("invalid horizon policy"));
        }
        self.noise.validate()
    }

    /// Log-spaced grid of `n` frequencies between `lo_hz` and `hi_hz`.
    pub fn log_grid(lo_hz: f64, hi_hz: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![hz_to_rad(lo_hz)];
        }
        (0..n)
            .map(|i| {
                let f = (lo_hz.ln() + (hi_hz / lo_hz).ln() * i as f64 / (n - 1) as f64).exp();
                hz_to_rad(f)
            })
            .collect()
    }
}

/// Outcome marker of one scan point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFlag {
    Ok,
    FitDegenerate,
    Numerical,
}

impl RowFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RowFlag::Ok => "ok",
            RowFlag::FitDegenerate => "fit_degenerate",
            RowFlag::Numerical => "numerical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(RowFlag::Ok),
            "fit_degenerate" => Some(RowFlag::FitDegenerate),
            "numerical" => Some(RowFlag::Numerical),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub omega_m: f64,
    pub phi_ac_frac: f64,
    pub gamma: f64,
    pub gamma_err: f64,
    /// `gamma / (b0^2 phi_ac^2)`.
    pub psd: f64,
    pub r2: f64,
    pub flag: RowFlag,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rows: Vec<ScanRow>,
}

impl ScanResult {
    pub fn failure_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let bad = self.rows.iter().filter(|r| r.flag != RowFlag::Ok).count();
        bad as f64 / self.rows.len() as f64
    }
}

/// Time at which the analytic decay reaches the policy target, clamped to
/// the policy limits.
pub fn choose_horizon(
    device: &TransmonParams,
    drive: &FluxDrive,
    dd: &DDSequence,
    s_dc: &NoiseSpec,
    s_ac: &NoiseSpec,
    policy: &HorizonPolicy,
) -> Result<f64> {
    let chi = |t: f64| analytic_decoherence(device, drive, dd, s_dc, s_ac, t);
    if chi(policy.max)? < policy.decay {
        return Ok(policy.max);
    }
    if chi(policy.min)? >= policy.decay {
        return Ok(policy.min);
    }
    let (mut lo, mut hi) = (policy.min.ln(), policy.max.ln());
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if chi(mid.exp())? < policy.decay {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.exp())
}

/// Run every (frequency, amplitude) point of the plan.
pub fn run_scan(plan: &ScanPlan, device: &TransmonParams) -> Result<ScanResult> {
    run_scan_with(plan, device, |_, _| {})
}

/// As [`run_scan`], calling `progress(done, total)` after every point.
pub fn run_scan_with(
    plan: &ScanPlan,
    device: &TransmonParams,
    progress: impl Fn(usize, usize),
) -> Result<ScanResult> {
    plan.validate()?;
    device.validate()?;
    let b0 = curvature_b0(device);
    let total = plan.frequencies.len() * plan.amplitudes.len();
    let mut rows = Vec::with_capacity(total);
    let mut index = 0u64;
    for &frac in &plan.amplitudes {
        let phi_ac = frac * PHI_MAX;
        let s_ac = relative_ac_noise(plan.ac_level, phi_ac)?;
        for &wm in &plan.frequencies {
            let seed = derive_seed(plan.seed, index);
            index += 1;
            let probe = FluxDrive::at_sweet_spot(frac, wm, plan.horizon.max)?;
            let horizon =
                choose_horizon(device, &probe, &plan.dd, &plan.noise, &s_ac, &plan.horizon)?;
            let drive = FluxDrive::at_sweet_spot(frac, wm, horizon)?;
            let sim = CoherenceSim {
                n_trials: plan.n_trials,
                dt: Some(drive.period() / plan.samples_per_period),
                n_times: plan.n_times,
                seed,
                exec: plan.exec,
            };
            let curve = simulate_coherence(device, &drive, &plan.dd, &plan.noise, &s_ac, &sim)?;
            let k = b0 * b0 * phi_ac * phi_ac;
            let row = match fit_decay(&curve) {
                Ok(est) => ScanRow {
                    omega_m: wm,
                    phi_ac_frac: frac,
                    gamma: est.gamma,
                    gamma_err: est.gamma_err,
                    psd: est.gamma / k,
                    r2: est.r2,
                    flag: RowFlag::Ok,
                },
                Err(e) => ScanRow {
                    omega_m: wm,
                    phi_ac_frac: frac,
                    gamma: 0.0,
                    gamma_err: f64::NAN,
                    psd: 0.0,
                    r2: 0.0,
                    flag: match e {
                        Error::FitDegenerate(_) => RowFlag::FitDegenerate,
                        _ => RowFlag::Numerical,
                    },
                },
            };
            rows.push(row);
            progress(rows.len(), total);
        }
    }
    Ok(ScanResult { rows })
}

/// Settings of the peak-resolution stage.
#[derive(Clone, Debug)]
pub struct ResolveOptions {
    /// Half-width of the fitted band around `center`, rad/s.
    pub window: f64,
    /// Band center; defaults to the frequency of the largest PSD estimate.
    pub center: Option<f64>,
    pub n_fits: usize,
    pub r2_min: f64,
    /// Typical peak half-width used to draw restart widths, rad/s.
    pub width_guess: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for ResolveOptions {
    fn default() -> Self {
        ResolveOptions {
            window: hz_to_rad(200e6),
            center: None,
            n_fits: 100,
            r2_min: 0.8,
            width_guess: 1.0 / 25e-9,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

/// Mean and spread of one fitted quantity over the accepted restarts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    /// `sqrt(std^2 + mean covariance variance)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakFitResult {
    /// Peak centers, ascending, rad/s.
    pub centers: [Estimate; 2],
    /// Lorentzian half-widths, rad/s.
    pub widths: [Estimate; 2],
    /// Peak PSD heights.
    pub amplitudes: [Estimate; 2],
    pub pink_amplitude: Estimate,
    pub pink_exponent: Estimate,
    pub n_successful_fits: usize,
    pub n_rows: usize,
    /// Whether the two centers are separated by more than their bounds.
    pub resolved: bool,
}

/// Shifted-Lorentzian shape with unit height at `center`, mirrored to
/// negative frequencies like the double-sided AR1 spectrum.
pub fn peak_shape(omega: f64, center: f64, width: f64) -> f64 {
    let l = |x: f64| 1.0 / (1.0 + (x / width).powi(2));
    l(omega - center) + l(omega + center)
}

/// Composite model: `A / w^beta + sum_j a_j shape(w; c_j, g_j)`.
/// Parameters: `[c1, c2, g1, g2, ln a1, ln a2, ln A, beta]`.
pub fn composite_model(p: &[f64], omega: f64) -> f64 {
    p[6].exp() / omega.powf(p[7])
        + p[4].exp() * peak_shape(omega, p[0], p[2])
        + p[5].exp() * peak_shape(omega, p[1], p[3])
}

struct FitOutcome {
    params: Vec<f64>,
    errs: Vec<f64>,
    r2: f64,
}

/// Fit the two-peak composite to the highest-amplitude rows in the window
/// from `n_fits` randomised starts.
pub fn resolve_peaks(result: &ScanResult, opts: &ResolveOptions) -> Result<PeakFitResult> {
    let top = result
        .rows
        .iter()
        .filter(|r| r.flag == RowFlag::Ok)
        .map(|r| r.phi_ac_frac)
        .fold(f64::NEG_INFINITY, f64::max);
    let usable: Vec<&ScanRow> = result
        .rows
        .iter()
        .filter(|r| r.flag == RowFlag::Ok && r.phi_ac_frac == top && r.psd > 0.0)
        .collect();
    let center = match opts.center {
        Some(c) => c,
        None => usable
            .iter()
            .max_by(|a, b| a.psd.total_cmp(&b.psd))
            .map(|r| r.omega_m)
            .ok_or_else(|| Error::Resolution {
                successes: 0,
                msg: "no usable scan rows".into(),
            })?,
    };
    let rows: Vec<&ScanRow> = usable
        .into_iter()
        .filter(|r| (r.omega_m - center).abs() <= opts.window)
        .collect();
    if rows.len() < 10 {
        return Err(Error::Resolution {
            successes: 0,
            msg: format!("only {} usable rows inside the window (need 10)", rows.len()),
        });
    }
    let w: Vec<f64> = rows.iter().map(|r| r.omega_m).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.psd.ln()).collect();
    let (w_lo, w_hi) = (w[0], w[w.len() - 1]);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let g = opts.width_guess;
    let lower = vec![w_lo, w_lo, 0.02 * g, 0.02 * g, y_min - 10.0, y_min - 10.0, -200.0, 0.0];
    let upper = vec![w_hi, w_hi, 50.0 * g, 50.0 * g, y_max + 5.0, y_max + 5.0, 200.0, 3.0];
    let interp = |x: f64| -> f64 {
        let i = w.partition_point(|&v| v < x).clamp(1, w.len() - 1);
        let f = (x - w[i - 1]) / (w[i] - w[i - 1]);
        y[i - 1] + f * (y[i] - y[i - 1])
    };
    let outcomes = map_indexed(opts.exec, opts.n_fits, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, k as u64));
        let mut c = [rng.gen_range(w_lo..=w_hi), rng.gen_range(w_lo..=w_hi)];
        c.sort_by(f64::total_cmp);
        let width = |r: &mut ChaCha8Rng| g * (0.2f64.ln() + r.gen::<f64>() * 25f64.ln()).exp();
        let (g1, g2) = (width(&mut rng), width(&mut rng));
        let floor = y_min + w_lo.ln();
        let p0 = [
            c[0],
            c[1],
            g1,
            g2,
            interp(c[0]) - 0.7,
            interp(c[1]) - 0.7,
            floor,
            1.0,
        ];
        let resid = |p: &[f64], r: &mut [f64]| {
            for ((ri, &wi), &yi) in r.iter_mut().zip(&w).zip(&y) {
                *ri = composite_model(p, wi).ln() - yi;
            }
        };
        let lm = LmOptions {
            max_iter: 400,
            lower: Some(lower.clone()),
            upper: Some(upper.clone()),
            ..Default::default()
        };
        let res = levenberg_marquardt(resid, &p0, w.len(), &lm).ok()?;
        let mut r = vec![0.0; w.len()];
        resid(&res.params, &mut r);
        let mut params = res.params.clone();
        let mut errs = res.std_errors();
        if params[0] > params[1] {
            for (a, b) in [(0, 1), (2, 3), (4, 5)] {
                params.swap(a, b);
                errs.swap(a, b);
            }
        }
        Some(FitOutcome {
            params,
            errs,
            r2: r_squared(&y, &r),
        })
    });
    let kept: Vec<FitOutcome> = outcomes
        .into_iter()
        .flatten()
        .filter(|o| o.r2 >= opts.r2_min && o.params.iter().all(|v| v.is_finite()))
        .collect();
    if kept.len() < 10 {
        return Err(Error::Resolution {
            successes: kept.len(),
            msg: format!(
                "{} of {} fits reached R^2 >= {}",
                kept.len(),
                opts.n_fits,
                opts.r2_min
            ),
        });
    }
    let stat = |f: &dyn Fn(&FitOutcome) -> (f64, f64)| {
        let n = kept.len() as f64;
        let vals: Vec<(f64, f64)> = kept.iter().map(f).collect();
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let cov: Vec<f64> = vals.iter().map(|v| v.1 * v.1).filter(|v| v.is_finite()).collect();
        let cov_mean = if cov.is_empty() {
            0.0
        } else {
            cov.iter().sum::<f64>() / cov.len() as f64
        };
        Estimate {
            mean,
            std: var.sqrt(),
            bound: (var + cov_mean).sqrt(),
        }
    };
    let plain = |i: usize| stat(&move |o: &FitOutcome| (o.params[i], o.errs[i]));
    let expd = |i: usize| stat(&move |o: &FitOutcome| (o.params[i].exp(), o.params[i].exp() * o.errs[i]));
    let centers = [plain(0), plain(1)];
    let resolved = centers[1].mean - centers[0].mean > centers[0].bound + centers[1].bound;
    Ok(PeakFitResult {
        centers,
        widths: [plain(2), plain(3)],
        amplitudes: [expd(4), expd(5)],
        pink_amplitude: expd(6),
        pink_exponent: plain(7),
        n_successful_fits: kept.len(),
        n_rows: w.len(),
        resolved,
    })
}
