//! Closed-form statistics: Fisher information for the decay rate, optimal
//! interrogation time, Cramér-Rao precision, single- and two-peak frequency
//! bounds, and the parametric vs spin-lock sensitivity comparison.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::device::{curvature_b0, gap_slope, TransmonParams};
use crate::error::{Error, Result};

/// Resources of a complete experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementBudget {
    /// Total experiment time.
    pub t_meas: f64,
    /// Initialisation plus readout overhead per shot.
    pub t_m: f64,
    /// Readout efficiency in (0, 1].
    #[serde(default = "one")]
    pub c_readout: f64,
    /// Number of repeated sequences.
    #[serde(default = "one_usize")]
    pub n_omega: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl MeasurementBudget {
    pub fn new(t_meas: f64, t_m: f64) -> Result<Self> {
        let b = MeasurementBudget {
            t_meas,
            t_m,
            c_readout: 1.0,
            n_omega: 1,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_m > 0.0 && self.t_meas > self.t_m) {
            return Err(Error::arg("budget requires t_meas > t_m > 0"));
        }
        if !(self.c_readout > 0.0 && self.c_readout <= 1.0) {
            return Err(Error::arg("readout efficiency must lie in (0, 1]"));
        }
        if self.n_omega == 0 {
            return Err(Error::arg("n_omega must be at least 1"));
        }
        Ok(())
    }
}

/// Gaussian spectral line sampled through the decay rate,
/// `Gamma(w) = A / (sigma sqrt(2 pi)) exp(-(w - wc)^2 / 2 sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralPeakModel {
    pub a_omega: f64,
    pub sigma_omega: f64,
    pub omega_c: f64,
    /// Peak separation for two-line models.
    #[serde(default)]
    pub epsilon: f64,
}

impl SpectralPeakModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_omega > 0.0) {
            return Err(Error::arg("sigma_omega must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::arg("epsilon must be non-negative"));
        }
        Ok(())
    }

    /// Mean decay rate seen at detuning `dw` from the center.
    pub fn rate(&self, dw: f64) -> f64 {
        let s = self.sigma_omega;
        self.a_omega / (s * (2.0 * PI).sqrt()) * (-dw * dw / (2.0 * s * s)).exp()
    }

    /// Mean rate of the equal-weight doublet with lines at `+-offset` around
    /// the mean frequency.
    pub fn doublet_rate(&self, dw: f64, offset: f64) -> f64 {
        0.5 * (self.rate(dw - offset) + self.rate(dw + offset))
    }
}

/// Fisher information about `Gamma` from one binary shot of length `t`
/// under `p = exp(-gamma t - (alpha t)^2)`.
pub fn fisher_gamma(gamma: f64, alpha: f64, t: f64) -> f64 {
    let x = gamma * t + (alpha * t).powi(2);
    if x > 700.0 {
        return t * t * (-x).exp();
    }
    t * t / x.exp_m1()
}

/// Heuristic and information-maximising interrogation times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalTime {
    /// 1/e crossing of the decay.
    pub heuristic: f64,
    /// Argmax of [`fisher_gamma`].
    pub numeric: f64,
}

pub fn optimal_time(gamma: f64, alpha: f64) -> Result<OptimalTime> {
    if !(gamma >= 0.0 && alpha >= 0.0) || (gamma == 0.0 && alpha == 0.0) {
        return Err(Error::arg("optimal time needs a non-negative, non-zero rate"));
    }
    let heuristic = crate::dephasing::coherence_time(gamma, alpha);
    // The information is unimodal in t; bracket on a log grid then refine.
    let f = |lt: f64| fisher_gamma(gamma, alpha, lt.exp());
    let (lo, hi) = ((heuristic * 1e-3).ln(), (heuristic * 10.0).ln());
    let n = 400;
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=n {
        let v = f(lo + (hi - lo) * i as f64 / n as f64);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    let step = (hi - lo) / n as f64;
    let a = lo + step * (best as f64 - 1.0);
    let b = lo + step * (best as f64 + 1.0);
    let numeric = golden_max(f, a, b, 1e-12).exp();
    Ok(OptimalTime { heuristic, numeric })
}

/// Golden-section maximisation of a unimodal function on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Cramér-Rao precision on `Gamma` after repeating shots of length `t_o`
/// for the whole budget.
pub fn sigma_gamma(budget: &MeasurementBudget, gamma: f64, alpha: f64, t_o: f64) -> Result<f64> {
    if !(t_o > 0.0) {
        return Err(Error::arg("interrogation time must be positive"));
    }
    let info = fisher_gamma(gamma, alpha, t_o);
    Ok(((t_o + budget.t_m) / budget.t_meas).sqrt() / info.sqrt())
}

/// Information about a single line center from one rate estimate taken at
/// detuning `dw`.
pub fn fisher_center(peak: &SpectralPeakModel, sigma_g: f64, dw: f64) -> Result<f64> {
    if !(sigma_g > 0.0) {
        return Err(Error::arg("sigma_gamma must be positive"));
    }
    let s = peak.sigma_omega;
    Ok(peak.a_omega.powi(2) * (-dw * dw / (s * s)).exp() * dw * dw
        / (2.0 * PI * sigma_g * sigma_g * s.powi(6)))
}

/// Largest single-shot center information, reached at `|dw| = sigma`.
pub fn fisher_center_max(peak: &SpectralPeakModel, sigma_g: f64) -> f64 {
    peak.a_omega.powi(2) / (2.0 * PI * E * sigma_g * sigma_g * peak.sigma_omega.powi(4))
}

/// Lower bound on the center uncertainty for an experiment whose coherence
/// time is `t_phi`.
pub fn center_uncertainty(peak: &SpectralPeakModel, budget: &MeasurementBudget, t_phi: f64) -> f64 {
    (2.0 * PI * E
        / (peak.a_omega.powi(2) * budget.n_omega as f64 * budget.t_meas * t_phi.powi(5)))
    .sqrt()
}

/// Separation information in the closed form
/// `A^2/(8 pi sg^2 s^6) [g(dw - eps) - g(dw + eps)]^2` with
/// `g(x) = x exp(-x^2 / 2 s^2)`.
///
/// This is the exact information about `eps` when the two lines sit at
/// `+-eps` around the mean frequency; see [`fisher_separation`] for lines at
/// `+-eps/2`.
pub fn fisher_epsilon(peak: &SpectralPeakModel, sigma_g: f64, dw: f64) -> Result<f64> {
    if !(sigma_g > 0.0) {
        return Err(Error::arg("sigma_gamma must be positive"));
    }
    let s = peak.sigma_omega;
    let eps = peak.epsilon;
    let g = |x: f64| x * (-x * x / (2.0 * s * s)).exp();
    let bracket = g(dw - eps) - g(dw + eps);
    Ok(peak.a_omega.powi(2) * bracket * bracket / (8.0 * PI * sigma_g * sigma_g * s.powi(6)))
}

/// Information about the full separation `eps` of two equal lines placed at
/// `+-eps/2` around the mean frequency.
pub fn fisher_separation(peak: &SpectralPeakModel, sigma_g: f64, dw: f64) -> Result<f64> {
    let half = SpectralPeakModel {
        epsilon: 0.5 * peak.epsilon,
        ..*peak
    };
    // d/d(eps) = (1/2) d/d(half separation).
    Ok(0.25 * fisher_epsilon(&half, sigma_g, dw)?)
}

/// Separation bounds for a two-line spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionBound {
    /// Irresolvable-regime bound limited by the coherence time.
    pub delta_epsilon: f64,
    /// Single-line center bound with the same resources.
    pub delta_center: f64,
    /// Sequential-measurement bound for long-lived spectral features.
    pub qdyne: f64,
}

pub fn resolution_bound(
    peak: &SpectralPeakModel,
    budget: &MeasurementBudget,
    t_phi: f64,
) -> Result<ResolutionBound> {
    if peak.epsilon == 0.0 {
        return Err(Error::numerical(
            "separation bound diverges for coincident lines (epsilon = 0)",
        ));
    }
    let a2 = peak.a_omega.powi(2);
    let delta_epsilon = (2.0 * PI
        / (a2 * budget.n_omega as f64 * budget.t_meas * t_phi.powi(7) * peak.epsilon.powi(2)))
    .sqrt();
    Ok(ResolutionBound {
        delta_epsilon,
        delta_center: center_uncertainty(peak, budget, t_phi),
        qdyne: 1.0 / (a2 * t_phi.powi(4) * budget.t_meas.powi(2)).sqrt(),
    })
}

/// Smallest detectable additive PSD for parametric modulation.
pub fn sensitivity_parametric(
    device: &TransmonParams,
    phi_ac: f64,
    budget: &MeasurementBudget,
    t_phi: f64,
) -> f64 {
    let b0 = curvature_b0(device);
    E / (2.0 * budget.c_readout * b0 * b0 * phi_ac * phi_ac * t_phi.sqrt())
}

/// Spin-lock baseline for the same budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinlockSensitivity {
    /// Smallest detectable PSD at the Rabi frequency.
    pub s_min: f64,
    /// Gap slope at a quarter flux quantum.
    pub nu1: f64,
    /// `nu1 / b0`, close to 3/2 for `d ~ 1/3`.
    pub slope_factor: f64,
}

pub fn sensitivity_spinlock(
    device: &TransmonParams,
    budget: &MeasurementBudget,
    t_1rho: f64,
) -> Result<SpinlockSensitivity> {
    if !(t_1rho > 0.0) {
        return Err(Error::arg("t_1rho must be positive"));
    }
    let nu1 = gap_slope(device, PI / 4.0);
    Ok(SpinlockSensitivity {
        s_min: E / (2.0 * budget.c_readout * nu1 * nu1 * t_1rho.sqrt()),
        nu1,
        slope_factor: nu1 / curvature_b0(device),
    })
}

/// Ratio of coherent-signal responses, parametric over spin-lock.
pub fn coherent_ratio(device: &TransmonParams, phi_ac: f64) -> f64 {
    (curvature_b0(device) * phi_ac / gap_slope(device, PI / 4.0)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_small_t_limit() {
        let (g, t) = (1e6, 1e-12);
        let v = fisher_gamma(g, 0.0, t);
        assert!((v / (t / g) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn fisher_overflow_guard() {
        let v = fisher_gamma(1e6, 0.0, 1e-2);
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn optimal_time_closed_forms() {
        let o = optimal_time(1e6, 1e6).unwrap();
        assert!((o.heuristic - 0.5 * (5f64.sqrt() - 1.0) * 1e-6).abs() < 1e-18);
        let o = optimal_time(0.0, 2e5).unwrap();
        assert!((o.heuristic - 5e-6).abs() < 1e-18);
        assert!(optimal_time(0.0, 0.0).is_err());
    }

    #[test]
    fn budget_validation() {
        assert!(MeasurementBudget::new(1e-3, 1e-6).is_ok());
        assert!(MeasurementBudget::new(1e-6, 1e-3).is_err());
    }
}
