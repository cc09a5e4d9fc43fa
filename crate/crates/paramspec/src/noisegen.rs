//! Flux-noise models: analytic double-sided spectra and seeded time-domain
//! realisations.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::par::derive_seed;
use crate::{hz_to_rad, Error, Result};

/// Default infrared cutoff of pink spectra, rad/s.
pub fn default_omega_ir() -> f64 {
    hz_to_rad(1e3)
}

/// Default ultraviolet cutoff of pink spectra, rad/s.
pub fn default_omega_uv() -> f64 {
    hz_to_rad(10e9)
}

/// Analytic description of a stationary Gaussian noise process.
/// Spectra are double sided, `S(-w) = S(w)`, in reduced-flux^2 * s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `S = amplitude / |w|` between the cutoffs, zero outside.
    Pink {
        amplitude: f64,
        omega_ir: f64,
        omega_uv: f64,
    },
    /// First-order autoregressive process with correlation time `t_corr`,
    /// standard deviation `sigma`, optionally heterodyned to `center`.
    Ar1 { t_corr: f64, sigma: f64, center: f64 },
    White { level: f64 },
    Composite { components: Vec<NoiseSpec> },
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec::Composite { components: vec![] }
    }

    pub fn pink(amplitude: f64) -> Self {
        NoiseSpec::Pink {
            amplitude,
            omega_ir: default_omega_ir(),
            omega_uv: default_omega_uv(),
        }
    }

    /// Pink background `(60 uPhi0)^2 / |w|` plus two AR1 peaks
    /// (25 ns, 247 uPhi0) centred at 500 and 580 MHz.
    pub fn two_peak_reference() -> Self {
        let peak = |f: f64| NoiseSpec::Ar1 {
            t_corr: 25e-9,
            sigma: crate::micro_phi0_to_reduced(247.0),
            center: crate::hz_to_rad(f),
        };
        NoiseSpec::Composite {
            components: vec![
                NoiseSpec::pink(crate::micro_phi0_to_reduced(60.0).powi(2)),
                peak(500e6),
                peak(580e6),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Pink {
                amplitude,
                omega_ir,
                omega_uv,
            } => {
                if !(*omega_ir > 0.0 && omega_ir < omega_uv) {
                    return Err(Error::arg("pink cutoffs must satisfy 0 < omega_ir < omega_uv"));
                }
                if *amplitude < 0.0 {
                    return Err(Error::arg("pink amplitude must be non-negative"));
                }
            }
            NoiseSpec::Ar1 {
                t_corr,
                sigma,
                center,
            } => {
                if !(*t_corr > 0.0 && *sigma >= 0.0 && *center >= 0.0) {
                    return Err(Error::arg("AR1 needs t_corr > 0, sigma >= 0, center >= 0"));
                }
            }
            NoiseSpec::White { level } => {
                if *level < 0.0 {
                    return Err(Error::arg("white level must be non-negative"));
                }
            }
            NoiseSpec::Composite { components } => {
                for c in components {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }

    /// True when every sample of every realisation is exactly zero.
    pub fn is_zero(&self) -> bool {
        match self {
            NoiseSpec::Pink { amplitude, .. } => *amplitude == 0.0,
            NoiseSpec::Ar1 { sigma, .. } => *sigma == 0.0,
            NoiseSpec::White { level } => *level == 0.0,
            NoiseSpec::Composite { components } => components.iter().all(|c| c.is_zero()),
        }
    }

    /// Integrated variance `(1/2pi) * int S dw`, when finite.
    pub fn variance(&self) -> Option<f64> {
        match self {
            NoiseSpec::Pink {
                amplitude,
                omega_ir,
                omega_uv,
            } => Some(amplitude / PI * (omega_uv / omega_ir).ln()),
            NoiseSpec::Ar1 { sigma, .. } => Some(sigma * sigma),
            NoiseSpec::White { level } => (*level == 0.0).then_some(0.0),
            NoiseSpec::Composite { components } => {
                components.iter().map(|c| c.variance()).sum::<Option<f64>>()
            }
        }
    }

    /// Frequencies where the spectrum has kinks or peaks, useful as
    /// quadrature breakpoints.
    pub fn features(&self) -> Vec<f64> {
        match self {
            NoiseSpec::Pink {
                omega_ir, omega_uv, ..
            } => vec![*omega_ir, *omega_uv],
            NoiseSpec::Ar1 { center, .. } => vec![*center],
            NoiseSpec::White { .. } => vec![],
            NoiseSpec::Composite { components } => {
                components.iter().flat_map(|c| c.features()).collect()
            }
        }
    }
}

/// Continuous-time analytic spectrum at angular frequency `omega`.
pub fn analytic_psd(spec: &NoiseSpec, omega: f64) -> Result<f64> {
    psd_with_step(spec, omega, None)
}

/// Spectrum of the process as sampled with step `dt` (exact discrete AR1
/// form); `None` gives the continuous limit.
pub fn psd_with_step(spec: &NoiseSpec, omega: f64, dt: Option<f64>) -> Result<f64> {
    let w = omega.abs();
    Ok(match spec {
        NoiseSpec::Pink {
            amplitude,
            omega_ir,
            omega_uv,
        } => {
            if *amplitude == 0.0 {
                0.0
            } else if w == 0.0 {
                return Err(Error::arg("pink spectrum diverges at zero frequency"));
            } else if w < *omega_ir || w > *omega_uv {
                0.0
            } else {
                amplitude / w
            }
        }
        NoiseSpec::Ar1 {
            t_corr,
            sigma,
            center,
        } => {
            let base = |x: f64| ar1_psd(*t_corr, *sigma, dt, x);
            if *center == 0.0 {
                base(w)
            } else {
                0.5 * (base(w - center) + base(w + center))
            }
        }
        NoiseSpec::White { level } => *level,
        NoiseSpec::Composite { components } => {
            let mut s = 0.0;
            for c in components {
                s += psd_with_step(c, w, dt)?;
            }
            s
        }
    })
}

/// Unshifted AR1 spectrum, discrete when `dt` is given.
pub fn ar1_psd(t_corr: f64, sigma: f64, dt: Option<f64>, omega: f64) -> f64 {
    match dt {
        Some(dt) => {
            let rho = (-dt / t_corr).exp();
            let var_eps = sigma * sigma * (1.0 - rho * rho);
            dt * var_eps / (1.0 + rho * rho - 2.0 * rho * (omega * dt).cos())
        }
        None => 2.0 * sigma * sigma * t_corr / (1.0 + (omega * t_corr).powi(2)),
    }
}

/// Pink multiplicative-noise spectrum whose integrated standard deviation is
/// `level_fraction * phi_ac`, with default cutoffs.
pub fn relative_ac_noise(level_fraction: f64, phi_ac: f64) -> Result<NoiseSpec> {
    relative_ac_noise_with(level_fraction, phi_ac, default_omega_ir(), default_omega_uv())
}

pub fn relative_ac_noise_with(
    level_fraction: f64,
    phi_ac: f64,
    omega_ir: f64,
    omega_uv: f64,
) -> Result<NoiseSpec> {
    if level_fraction < 0.0 {
        return Err(Error::arg("level fraction must be non-negative"));
    }
    let var = (level_fraction * phi_ac).powi(2);
    Ok(NoiseSpec::Pink {
        amplitude: PI * var / (omega_uv / omega_ir).ln(),
        omega_ir,
        omega_uv,
    })
}

/// A sampled noise realisation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTrace {
    pub dt: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
}

/// Generate `n` samples spaced by `dt`, deterministically from `seed`.
pub fn sample_trace(spec: &NoiseSpec, dt: f64, n: usize, seed: u64) -> Result<NoiseTrace> {
    if n < 2 || !(dt > 0.0) {
        return Err(Error::arg("need n >= 2 samples and dt > 0"));
    }
    spec.validate()?;
    check_resolution(spec, dt)?;
    let mut samples = vec![0.0; n];
    add_trace(spec, dt, seed, &mut samples);
    Ok(NoiseTrace { dt, samples, seed })
}

fn check_resolution(spec: &NoiseSpec, dt: f64) -> Result<()> {
    match spec {
        NoiseSpec::Ar1 { t_corr, .. } if dt > 0.5 * t_corr => Err(Error::arg(format!(
            "dt = {dt:e} s does not resolve the AR1 correlation time {t_corr:e} s"
        ))),
        NoiseSpec::Composite { components } => {
            components.iter().try_for_each(|c| check_resolution(c, dt))
        }
        _ => Ok(()),
    }
}

/// Accumulate a realisation of `spec` into `out` (no validation).
pub fn add_trace(spec: &NoiseSpec, dt: f64, seed: u64, out: &mut [f64]) {
    if spec.is_zero() {
        return;
    }
    match spec {
        NoiseSpec::Pink {
            amplitude,
            omega_ir,
            omega_uv,
        } => add_pink(*amplitude, *omega_ir, *omega_uv, dt, seed, out),
        NoiseSpec::Ar1 {
            t_corr,
            sigma,
            center,
        } => add_ar1(*t_corr, *sigma, *center, dt, seed, out),
        NoiseSpec::White { level } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sd = (level / dt).sqrt();
            for x in out.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x += sd * g;
            }
        }
        NoiseSpec::Composite { components } => {
            for (i, c) in components.iter().enumerate() {
                add_trace(c, dt, derive_seed(seed, i as u64), out);
            }
        }
    }
}

fn add_ar1(t_corr: f64, sigma: f64, center: f64, dt: f64, seed: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = (-dt / t_corr).exp();
    let sd_eps = sigma * (1.0 - rho * rho).sqrt();
    let g0: f64 = rng.sample(StandardNormal);
    let mut x = sigma * g0;
    if center == 0.0 {
        for (k, o) in out.iter_mut().enumerate() {
            if k > 0 {
                let g: f64 = rng.sample(StandardNormal);
                x = rho * x + sd_eps * g;
            }
            *o += x;
        }
        return;
    }
    // Two independent quadratures keep the shifted process Gaussian and
    // mixing; a single carrier with a random phase has the same spectrum but
    // a trace-dependent slow component.
    let g1: f64 = rng.sample(StandardNormal);
    let mut y = sigma * g1;
    let step = Complex64::from_polar(1.0, center * dt);
    let mut rot = Complex64::new(1.0, 0.0);
    for (k, o) in out.iter_mut().enumerate() {
        if k > 0 {
            let gx: f64 = rng.sample(StandardNormal);
            let gy: f64 = rng.sample(StandardNormal);
            x = rho * x + sd_eps * gx;
            y = rho * y + sd_eps * gy;
            rot *= step;
            if k % 1024 == 0 {
                rot = Complex64::from_polar(1.0, center * dt * k as f64);
            }
        }
        *o += x * rot.re - y * rot.im;
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn add_pink(amplitude: f64, omega_ir: f64, omega_uv: f64, dt: f64, seed: u64, out: &mut [f64]) {
    let n = out.len();
    let nfft = n.next_power_of_two().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dw = 2.0 * PI / (nfft as f64 * dt);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    // One-sided bins carry E|c_k|^2 = 4 S(w_k) / (N dt) so the real part has
    // variance sum_k S(w_k) dw / pi, the double-sided integral.
    for (k, b) in buf.iter_mut().enumerate().take(nfft / 2).skip(1) {
        let w = k as f64 * dw;
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        if w >= omega_ir * (1.0 - 1e-12) && w <= omega_uv {
            let s = amplitude / w;
            let sd = (2.0 * s / (nfft as f64 * dt)).sqrt();
            *b = Complex64::new(sd * g1, sd * g2);
        }
    }
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(nfft));
    fft.process(&mut buf);
    for (o, b) in out.iter_mut().zip(buf.iter()) {
        *o += b.re;
    }
    let low_top = (0.5 * dw).min(omega_uv);
    if omega_ir < low_top {
        add_low_band(amplitude, omega_ir, low_top, dt, &mut rng, out);
    }
}

/// Power below the lowest FFT bin, as Gaussian random sinusoids in
/// quarter-octave sub-bands. Each sinusoid is slower than one cycle per
/// trace, so it is evaluated on a coarse grid and interpolated linearly.
fn add_low_band(
    amplitude: f64,
    lo: f64,
    hi: f64,
    dt: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [f64],
) {
    let n_bands = ((hi / lo).log2() * 4.0).ceil().max(1.0) as usize;
    let ratio = (hi / lo).powf(1.0 / n_bands as f64);
    let mut comps = Vec::with_capacity(n_bands);
    let mut a = lo;
    for _ in 0..n_bands {
        let b = a * ratio;
        let var = amplitude / PI * (b / a).ln();
        let w = a * (b / a).powf(rng.gen::<f64>());
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        comps.push((w, var.sqrt() * g1, var.sqrt() * g2));
        a = b;
    }
    let n = out.len();
    let n_coarse = 256.min(n - 1).max(1);
    let span = (n - 1) as f64 * dt;
    let grid: Vec<f64> = (0..=n_coarse)
        .map(|j| {
            let t = span * j as f64 / n_coarse as f64;
            comps
                .iter()
                .map(|&(w, c, s)| {
                    let (sn, cs) = (w * t).sin_cos();
                    c * cs + s * sn
                })
                .sum()
        })
        .collect();
    for (k, o) in out.iter_mut().enumerate() {
        let x = k as f64 * n_coarse as f64 / (n - 1) as f64;
        let j = (x.floor() as usize).min(n_coarse - 1);
        let f = x - j as f64;
        *o += grid[j] + f * (grid[j + 1] - grid[j]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar1_zero_frequency() {
        let dt = 1e-10;
        let t = 25e-9;
        let sigma = 2e-4;
        let spec = NoiseSpec::Ar1 {
            t_corr: t,
            sigma,
            center: 0.0,
        };
        let rho: f64 = (-dt / t).exp();
        let var_eps = sigma * sigma * (1.0 - rho * rho);
        let expect = dt * var_eps / (1.0 - rho).powi(2);
        let got = psd_with_step(&spec, 0.0, Some(dt)).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn pink_edges() {
        let spec = NoiseSpec::pink(3.0);
        let ir = default_omega_ir();
        assert_eq!(analytic_psd(&spec, ir).unwrap(), 3.0 / ir);
        assert!(analytic_psd(&spec, 0.0).is_err());
        assert_eq!(analytic_psd(&spec, 0.5 * ir).unwrap(), 0.0);
    }

    #[test]
    fn zero_sigma_trace() {
        let spec = NoiseSpec::Ar1 {
            t_corr: 1e-8,
            sigma: 0.0,
            center: 0.0,
        };
        let tr = sample_trace(&spec, 1e-10, 64, 1).unwrap();
        assert!(tr.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn argument_errors() {
        let spec = NoiseSpec::pink(1.0);
        assert!(sample_trace(&spec, 1e-9, 1, 0).is_err());
        assert!(sample_trace(&spec, 0.0, 16, 0).is_err());
        let ar = NoiseSpec::Ar1 {
            t_corr: 1e-9,
            sigma: 1.0,
            center: 0.0,
        };
        assert!(sample_trace(&ar, 1e-9, 16, 0).is_err());
    }

    #[test]
    fn relative_ac_level() {
        let phi_ac = 0.6 * PI / 2.0;
        let spec = relative_ac_noise(4e-5, phi_ac).unwrap();
        let var = spec.variance().unwrap();
        assert!(((var.sqrt() / phi_ac) / 4e-5 - 1.0).abs() < 1e-12);
        assert!(relative_ac_noise(0.0, phi_ac).unwrap().is_zero());
    }

    #[test]
    fn shifted_peak_height() {
        let spec = NoiseSpec::Ar1 {
            t_corr: 25e-9,
            sigma: 1e-3,
            center: hz_to_rad(500e6),
        };
        let peak = analytic_psd(&spec, hz_to_rad(500e6)).unwrap();
        let expect = 1e-6 * 25e-9;
        assert!((peak / expect - 1.0).abs() < 1e-3);
    }
}
