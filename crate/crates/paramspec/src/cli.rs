//! Command-line front end: configuration files, run manifests and CSV/JSON
//! emission for every pipeline.
//!
//! Configuration files are JSON. Frequencies are plain Hz and are converted to
//! angular frequency once, while the file is read. Flux amplitudes of noise
//! processes are given in micro flux quanta.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dephasing::{
    analytic_decoherence, fit_decay, leading_rate, simulate_coherence, CoherenceSim, DDSequence,
};
use crate::device::{FluxDrive, TransmonParams};
use crate::error::{Error, Result};
use crate::estimation::{
    center_uncertainty, coherent_ratio, fisher_center_max, fisher_gamma, optimal_time,
    resolution_bound, sensitivity_parametric, sensitivity_spinlock, sigma_gamma,
    MeasurementBudget, SpectralPeakModel,
};
use crate::multilevel::{
    calibrate_pulse, run_leakage_scan, ChargeBasisModel, CalibrationOptions, DragPulse,
    EvolveOptions, LeakageScan, LevelModel,
};
use crate::noisegen::{analytic_psd, relative_ac_noise, sample_trace, NoiseSpec};
use crate::par::{with_threads, Execution};
use crate::relaxation::{run_relax_scan, RelaxScan};
use crate::spectroscopy::{
    resolve_peaks, run_scan_with, HorizonPolicy, ResolveOptions, RowFlag, ScanPlan, ScanResult,
    ScanRow,
};
use crate::{hz_to_rad, micro_phi0_to_reduced, rad_to_hz, PHI_MAX};

/// Version of every JSON document and manifest written by the tool.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that replaces the seed of the configuration file.
pub const SEED_ENV: &str = "PARAMSPEC_SEED";

const SCAN_COLUMNS: [&str; 7] = [
    "omega_m_hz",
    "phi_ac_frac",
    "gamma",
    "gamma_err",
    "psd",
    "r2",
    "flag",
];

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub ec_hz: f64,
    pub ej1_hz: f64,
    pub ej2_hz: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        let p = TransmonParams::reference();
        DeviceConfig {
            ec_hz: rad_to_hz(p.ec),
            ej1_hz: rad_to_hz(p.ej1),
            ej2_hz: rad_to_hz(p.ej2),
        }
    }
}

/// Flux-noise process as written in a configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    /// `S = (amplitude_uphi0 uPhi0)^2 / |w|` between the cutoffs.
    Pink {
        amplitude_uphi0: f64,
        #[serde(default = "default_ir_hz")]
        omega_ir_hz: f64,
        #[serde(default = "default_uv_hz")]
        omega_uv_hz: f64,
    },
    Ar1 {
        t_corr_s: f64,
        sigma_uphi0: f64,
        #[serde(default)]
        center_hz: f64,
    },
    /// Two-sided level in reduced-flux units squared per rad/s.
    White { level: f64 },
    Composite { components: Vec<NoiseConfig> },
}

fn default_ir_hz() -> f64 {
    1e3
}

fn default_uv_hz() -> f64 {
    10e9
}

impl NoiseConfig {
    pub fn to_spec(&self) -> NoiseSpec {
        match self {
            NoiseConfig::Pink {
                amplitude_uphi0,
                omega_ir_hz,
                omega_uv_hz,
            } => NoiseSpec::Pink {
                amplitude: micro_phi0_to_reduced(*amplitude_uphi0).powi(2),
                omega_ir: hz_to_rad(*omega_ir_hz),
                omega_uv: hz_to_rad(*omega_uv_hz),
            },
            NoiseConfig::Ar1 {
                t_corr_s,
                sigma_uphi0,
                center_hz,
            } => NoiseSpec::Ar1 {
                t_corr: *t_corr_s,
                sigma: micro_phi0_to_reduced(*sigma_uphi0),
                center: hz_to_rad(*center_hz),
            },
            NoiseConfig::White { level } => NoiseSpec::White { level: *level },
            NoiseConfig::Composite { components } => NoiseSpec::Composite {
                components: components.iter().map(|c| c.to_spec()).collect(),
            },
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("{path}.{key}"), msg));
        match self {
            NoiseConfig::Pink {
                amplitude_uphi0,
                omega_ir_hz,
                omega_uv_hz,
            } => {
                if !(*amplitude_uphi0 >= 0.0) {
                    return bad("amplitude_uphi0", "must be non-negative");
                }
                if !(*omega_ir_hz > 0.0) {
                    return bad("omega_ir_hz", "must be positive");
                }
                if !(omega_uv_hz > omega_ir_hz) {
                    return bad("omega_uv_hz", "must exceed omega_ir_hz");
                }
            }
            NoiseConfig::Ar1 {
                t_corr_s,
                sigma_uphi0,
                center_hz,
            } => {
                if !(*t_corr_s > 0.0) {
                    return bad("t_corr_s", "must be positive");
                }
                if !(*sigma_uphi0 >= 0.0) {
                    return bad("sigma_uphi0", "must be non-negative");
                }
                if !(*center_hz >= 0.0) {
                    return bad("center_hz", "must be non-negative");
                }
            }
            NoiseConfig::White { level } => {
                if !(*level >= 0.0) {
                    return bad("level", "must be non-negative");
                }
            }
            NoiseConfig::Composite { components } => {
                for (i, c) in components.iter().enumerate() {
                    c.check(&format!("{path}.components[{i}]"))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcNoiseConfig {
    /// Integrated rms of the multiplicative noise relative to the amplitude.
    #[serde(default)]
    pub level: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub omega_m_hz: f64,
    /// Fraction of the maximal amplitude.
    pub amplitude: f64,
    /// Static bias in reduced flux.
    #[serde(default)]
    pub phi_dc: f64,
    pub duration_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Free,
    Hahn,
    Xy8,
    Xy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdConfig {
    pub sequence: SequenceKind,
    /// Pulse count for the generic `xy` family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pulses: Option<usize>,
}

impl Default for DdConfig {
    fn default() -> Self {
        DdConfig {
            sequence: SequenceKind::Xy8,
            n_pulses: None,
        }
    }
}

impl DdConfig {
    pub fn to_sequence(&self) -> Result<DDSequence> {
        Ok(match self.sequence {
            SequenceKind::Free => DDSequence::free(),
            SequenceKind::Hahn => DDSequence::hahn(),
            SequenceKind::Xy8 => DDSequence::xy8(),
            SequenceKind::Xy => match self.n_pulses {
                Some(n) if n > 0 => DDSequence::xy(n),
                _ => return Err(Error::config("dd.n_pulses", "required and positive for `xy`")),
            },
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "default_sample_dt")]
    pub dt_s: f64,
    #[serde(default = "default_sample_n")]
    pub n_samples: usize,
}

fn default_sample_dt() -> f64 {
    1e-10
}

fn default_sample_n() -> usize {
    4096
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            dt_s: default_sample_dt(),
            n_samples: default_sample_n(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdConfig {
    #[serde(default = "default_psd_lo")]
    pub f_min_hz: f64,
    #[serde(default = "default_psd_hi")]
    pub f_max_hz: f64,
    #[serde(default = "default_psd_n")]
    pub n_points: usize,
}

fn default_psd_lo() -> f64 {
    1e6
}

fn default_psd_hi() -> f64 {
    1e9
}

fn default_psd_n() -> usize {
    200
}

impl Default for PsdConfig {
    fn default() -> Self {
        PsdConfig {
            f_min_hz: default_psd_lo(),
            f_max_hz: default_psd_hi(),
            n_points: default_psd_n(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_n_times")]
    pub n_times: usize,
    #[serde(default = "default_spp")]
    pub samples_per_period: f64,
}

fn default_trials() -> usize {
    1 << 11
}

fn default_n_times() -> usize {
    48
}

fn default_spp() -> f64 {
    32.0
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_trials: default_trials(),
            n_times: default_n_times(),
            samples_per_period: default_spp(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub decay: f64,
    pub min_s: f64,
    pub max_s: f64,
}

impl From<HorizonPolicy> for HorizonConfig {
    fn from(h: HorizonPolicy) -> Self {
        HorizonConfig {
            decay: h.decay,
            min_s: h.min,
            max_s: h.max,
        }
    }
}

impl HorizonConfig {
    fn policy(&self) -> HorizonPolicy {
        HorizonPolicy {
            decay: self.decay,
            min: self.min_s,
            max: self.max_s,
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        if !(self.decay > 0.0) {
            return Err(Error::config(format!("{path}.decay"), "must be positive"));
        }
        if !(self.min_s > 0.0) {
            return Err(Error::config(format!("{path}.min_s"), "must be positive"));
        }
        if !(self.max_s >= self.min_s) {
            return Err(Error::config(format!("{path}.max_s"), "must be at least min_s"));
        }
        Ok(())
    }
}

/// Frequency axis given either explicitly or as a log-spaced grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies_hz: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_min_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_max_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_freqs: Option<usize>,
}

impl GridConfig {
    fn resolve(&self, path: &str, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if let Some(f) = &self.frequencies_hz {
            if f.is_empty() {
                return Err(Error::config(format!("{path}.frequencies_hz"), "empty list"));
            }
            for (i, &x) in f.iter().enumerate() {
                if !(x > 0.0) {
                    return Err(Error::config(format!("{path}.frequencies_hz[{i}]"), "must be positive"));
                }
                if i > 0 && x <= f[i - 1] {
                    return Err(Error::config(
                        format!("{path}.frequencies_hz[{i}]"),
                        "frequencies must be strictly increasing",
                    ));
                }
            }
            return Ok(f.iter().map(|&x| hz_to_rad(x)).collect());
        }
        let lo = self.f_min_hz.unwrap_or(lo);
        let hi = self.f_max_hz.unwrap_or(hi);
        let n = self.n_freqs.unwrap_or(n);
        if !(lo > 0.0) {
            return Err(Error::config(format!("{path}.f_min_hz"), "must be positive"));
        }
        if !(hi > lo) {
            return Err(Error::config(format!("{path}.f_max_hz"), "must exceed f_min_hz"));
        }
        if n == 0 {
            return Err(Error::config(format!("{path}.n_freqs"), "must be at least 1"));
        }
        Ok(ScanPlan::log_grid(lo, hi, n))
    }
}

fn check_amplitudes(path: &str, amps: &[f64]) -> Result<()> {
    if amps.is_empty() {
        return Err(Error::config(path, "empty list"));
    }
    for (i, &a) in amps.iter().enumerate() {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::config(
                format!("{path}[{i}]"),
                format!("amplitude fraction {a} outside (0, 1]"),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(flatten)]
    pub grid: GridConfig,
    #[serde(default = "default_scan_amps")]
    pub amplitudes: Vec<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_spp")]
    pub samples_per_period: f64,
    #[serde(default = "default_n_times")]
    pub n_times: usize,
    #[serde(default = "default_scan_horizon")]
    pub horizon: HorizonConfig,
}

fn default_scan_amps() -> Vec<f64> {
    vec![0.2, 0.4, 0.6]
}

fn default_scan_horizon() -> HorizonConfig {
    HorizonPolicy::default().into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveConfig {
    #[serde(default = "default_window_hz")]
    pub window_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_hz: Option<f64>,
    #[serde(default = "default_n_fits")]
    pub n_fits: usize,
    #[serde(default = "default_r2_min")]
    pub r2_min: f64,
    /// Typical peak half-width in Hz.
    #[serde(default = "default_width_hz")]
    pub width_guess_hz: f64,
}

fn default_window_hz() -> f64 {
    200e6
}

fn default_n_fits() -> usize {
    100
}

fn default_r2_min() -> f64 {
    0.8
}

fn default_width_hz() -> f64 {
    rad_to_hz(1.0 / 25e-9)
}

impl Default for ResolveConfig {
    fn default() -> Self {
        ResolveConfig {
            window_hz: default_window_hz(),
            center_hz: None,
            n_fits: default_n_fits(),
            r2_min: default_r2_min(),
            width_guess_hz: default_width_hz(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub t_meas_s: f64,
    pub t_m_s: f64,
    #[serde(default = "default_one")]
    pub c_readout: f64,
    #[serde(default = "default_one_usize")]
    pub n_omega: usize,
}

fn default_one() -> f64 {
    1.0
}

fn default_one_usize() -> usize {
    1
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            t_meas_s: 1e-3,
            t_m_s: 1e-6,
            c_readout: 1.0,
            n_omega: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakConfig {
    /// Integrated line strength, `int Gamma dw` in s^-2.
    pub a_omega: f64,
    pub sigma_hz: f64,
    pub center_hz: f64,
    #[serde(default)]
    pub epsilon_hz: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherConfig {
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_s: Option<f64>,
    #[serde(default = "default_psd_n")]
    pub n_points: usize,
    /// Rotating-frame relaxation time of the spin-lock comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_1rho_s: Option<f64>,
    #[serde(default = "default_fisher_amp")]
    pub amplitude: f64,
}

fn default_fisher_amp() -> f64 {
    0.6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub amplitude_hz: f64,
    pub drive_freq_hz: f64,
    #[serde(default)]
    pub drag_factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakageConfig {
    #[serde(flatten)]
    pub grid: GridConfig,
    #[serde(default = "default_leak_amps")]
    pub amplitudes: Vec<f64>,
    #[serde(default = "default_leak_duration")]
    pub duration_s: f64,
    #[serde(default = "default_levels")]
    pub n_levels: usize,
    #[serde(default = "default_charge")]
    pub n_charge: usize,
    #[serde(default = "default_leak_dt")]
    pub dt_s: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_sigma_p")]
    pub sigma_p_s: f64,
    /// Fixed pulse; when absent the pulse is calibrated first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseConfig>,
}

fn default_leak_amps() -> Vec<f64> {
    vec![0.3, 0.6]
}

fn default_leak_duration() -> f64 {
    10e-6
}

fn default_levels() -> usize {
    10
}

fn default_charge() -> usize {
    401
}

fn default_leak_dt() -> f64 {
    1e-12
}

fn default_window() -> usize {
    10
}

fn default_sigma_p() -> f64 {
    5e-9
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxConfig {
    #[serde(flatten)]
    pub grid: GridConfig,
    #[serde(default = "default_fisher_amp")]
    pub amplitude: f64,
    /// Relaxation times; `null` stands for no relaxation.
    #[serde(default = "default_t1s")]
    pub t1_s: Vec<Option<f64>>,
    #[serde(default = "default_traces")]
    pub n_traces: usize,
    #[serde(default = "default_windows")]
    pub windows: usize,
    #[serde(default)]
    pub post_select: bool,
    #[serde(default = "default_relax_horizon")]
    pub horizon: HorizonConfig,
}

fn default_t1s() -> Vec<Option<f64>> {
    vec![Some(10e-6), Some(100e-6), None]
}

fn default_traces() -> usize {
    1 << 8
}

fn default_windows() -> usize {
    64
}

fn default_relax_horizon() -> HorizonConfig {
    HorizonConfig {
        decay: 2.0,
        min_s: 0.05e-6,
        max_s: 20e-6,
    }
}

/// Complete run configuration; every section is optional until a subcommand
/// needs it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub ac_noise: AcNoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub dd: DdConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub psd: PsdConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub resolve: ResolveConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak: Option<PeakConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage: Option<LeakageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax: Option<RelaxConfig>,
}

impl RunConfig {
    pub fn device_params(&self) -> Result<TransmonParams> {
        let d = &self.device;
        TransmonParams::new(hz_to_rad(d.ec_hz), hz_to_rad(d.ej1_hz), hz_to_rad(d.ej2_hz))
            .map_err(|e| Error::config("device", e.to_string()))
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        self.noise
            .as_ref()
            .map(|n| n.to_spec())
            .ok_or_else(|| Error::config("noise", "section required by this command"))
    }

    /// Range checks beyond what deserialisation enforces.
    pub fn validate(&self) -> Result<()> {
        self.device_params()?;
        if let Some(n) = &self.noise {
            n.check("noise")?;
        }
        if !(self.ac_noise.level >= 0.0) {
            return Err(Error::config("ac_noise.level", "must be non-negative"));
        }
        if let Some(d) = &self.drive {
            if !(d.omega_m_hz > 0.0) {
                return Err(Error::config("drive.omega_m_hz", "must be positive"));
            }
            check_amplitudes("drive.amplitude", &[d.amplitude])
                .map_err(|_| Error::config("drive.amplitude", "fraction outside (0, 1]"))?;
            if !(d.duration_s > 0.0) {
                return Err(Error::config("drive.duration_s", "must be positive"));
            }
        }
        self.dd.to_sequence()?;
        if !(self.sample.dt_s > 0.0) || self.sample.n_samples < 2 {
            return Err(Error::config("sample", "need dt_s > 0 and n_samples >= 2"));
        }
        if !(self.psd.f_min_hz > 0.0 && self.psd.f_max_hz > self.psd.f_min_hz) || self.psd.n_points < 2 {
            return Err(Error::config("psd", "need 0 < f_min_hz < f_max_hz and n_points >= 2"));
        }
        if self.sim.n_trials == 0 {
            return Err(Error::config("sim.n_trials", "must be positive"));
        }
        if self.sim.samples_per_period < 20.0 {
            return Err(Error::config("sim.samples_per_period", "must be at least 20"));
        }
        if let Some(s) = &self.scan {
            s.grid.resolve("scan", 1e7, 1e9, 86)?;
            check_amplitudes("scan.amplitudes", &s.amplitudes)?;
            if s.n_trials == 0 {
                return Err(Error::config("scan.n_trials", "must be positive"));
            }
            if s.samples_per_period < 20.0 {
                return Err(Error::config("scan.samples_per_period", "must be at least 20"));
            }
            s.horizon.check("scan.horizon")?;
        }
        let r = &self.resolve;
        if !(r.window_hz > 0.0) {
            return Err(Error::config("resolve.window_hz", "must be positive"));
        }
        if !(r.r2_min <= 1.0) {
            return Err(Error::config("resolve.r2_min", "must not exceed 1"));
        }
        if !(r.width_guess_hz > 0.0) {
            return Err(Error::config("resolve.width_guess_hz", "must be positive"));
        }
        self.budget()?;
        if let Some(p) = &self.peak {
            if !(p.sigma_hz > 0.0) {
                return Err(Error::config("peak.sigma_hz", "must be positive"));
            }
            if !(p.epsilon_hz >= 0.0) {
                return Err(Error::config("peak.epsilon_hz", "must be non-negative"));
            }
        }
        if let Some(f) = &self.fisher {
            if !(f.gamma >= 0.0) {
                return Err(Error::config("fisher.gamma", "must be non-negative"));
            }
            if !(f.alpha >= 0.0) {
                return Err(Error::config("fisher.alpha", "must be non-negative"));
            }
            if f.gamma == 0.0 && f.alpha == 0.0 {
                return Err(Error::config("fisher.gamma", "gamma and alpha cannot both vanish"));
            }
            if f.n_points < 2 {
                return Err(Error::config("fisher.n_points", "must be at least 2"));
            }
            check_amplitudes("fisher.amplitude", &[f.amplitude])
                .map_err(|_| Error::config("fisher.amplitude", "fraction outside (0, 1]"))?;
        }
        if let Some(l) = &self.leakage {
            l.grid.resolve("leakage", 1e7, 1e9, 12)?;
            check_amplitudes("leakage.amplitudes", &l.amplitudes)?;
            if !(l.duration_s > 0.0) {
                return Err(Error::config("leakage.duration_s", "must be positive"));
            }
            if l.n_levels < 3 {
                return Err(Error::config("leakage.n_levels", "must be at least 3"));
            }
            if l.n_charge % 2 == 0 || l.n_charge < l.n_levels {
                return Err(Error::config("leakage.n_charge", "must be odd and at least n_levels"));
            }
            if !(l.dt_s > 0.0) {
                return Err(Error::config("leakage.dt_s", "must be positive"));
            }
            if l.window == 0 {
                return Err(Error::config("leakage.window", "must be positive"));
            }
            if !(l.sigma_p_s > 0.0) {
                return Err(Error::config("leakage.sigma_p_s", "must be positive"));
            }
        }
        if let Some(r) = &self.relax {
            r.grid.resolve("relax", 3e8, 7e8, 5)?;
            check_amplitudes("relax.amplitude", &[r.amplitude])
                .map_err(|_| Error::config("relax.amplitude", "fraction outside (0, 1]"))?;
            for (i, t) in r.t1_s.iter().enumerate() {
                if let Some(t) = t {
                    if !(*t > 0.0) {
                        return Err(Error::config(format!("relax.t1_s[{i}]"), "must be positive"));
                    }
                }
            }
            if r.n_traces == 0 {
                return Err(Error::config("relax.n_traces", "must be positive"));
            }
            r.horizon.check("relax.horizon")?;
        }
        Ok(())
    }

    fn budget(&self) -> Result<MeasurementBudget> {
        let b = &self.budget;
        let m = MeasurementBudget {
            t_meas: b.t_meas_s,
            t_m: b.t_m_s,
            c_readout: b.c_readout,
            n_omega: b.n_omega,
        };
        m.validate().map_err(|e| Error::config("budget", e.to_string()))?;
        Ok(m)
    }

    fn drive(&self) -> Result<FluxDrive> {
        let d = self
            .drive
            .as_ref()
            .ok_or_else(|| Error::config("drive", "section required by this command"))?;
        FluxDrive::new(
            d.phi_dc,
            d.amplitude * PHI_MAX,
            hz_to_rad(d.omega_m_hz),
            d.duration_s,
        )
        .map_err(|e| Error::config("drive", e.to_string()))
    }
}

/// Marker key identifying a manifest written by a previous run.
const MANIFEST_KEY: &str = "paramspec_manifest";

/// Parse a configuration from JSON text. A manifest is accepted too, in which
/// case its embedded resolved configuration is used.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key(MANIFEST_KEY) {
            value = obj
                .remove("config")
                .ok_or_else(|| Error::config("config", "manifest without a config"))?;
        }
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let mut path = e.path().to_string();
        let msg = e.into_inner().to_string();
        if let Some(key) = msg
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
        {
            if path == "." {
                path = key.to_string();
            } else if !path.ends_with(key) {
                path = format!("{path}.{key}");
            }
        }
        let path = if path == "." { "$".to_string() } else { path };
        Error::config(path, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// Nine significant digits in scientific notation.
pub fn fmt9(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Round to nine significant digits for JSON emission.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        fmt9(x).parse().unwrap_or(x)
    } else {
        x
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let (false, Some(x)) = (n.is_i64() || n.is_u64(), n.as_f64()) {
                if let Some(m) = serde_json::Number::from_f64(round9(x)) {
                    *n = m;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write a CSV table with a fixed header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e.into()))?;
    w.write_record(header).map_err(|e| io_err(path, e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e.into()))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Write a versioned JSON document; floats are rounded to nine digits.
pub fn write_json(path: &Path, kind: &str, body: Value) -> Result<()> {
    let mut doc = json!({ "schema_version": SCHEMA_VERSION, "kind": kind });
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    round_value(&mut doc);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::numerical(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Path of a sidecar file next to `out`, `scan.csv` giving `scan.csv.<suffix>`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
    let config = serde_json::to_value(cfg).map_err(|e| Error::numerical(e.to_string()))?;
    let doc = json!({
        MANIFEST_KEY: {
            "schema_version": SCHEMA_VERSION,
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.seed,
            "options": extra,
        },
        "config": config,
    });
    let path = sidecar(out, "manifest.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::numerical(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

/// Read a scan table written by the `scan` subcommand.
pub fn read_scan_csv(path: &Path) -> Result<ScanResult> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e.into()))?;
    let header = r.headers().map_err(|e| io_err(path, e.into()))?.clone();
    if header.iter().collect::<Vec<_>>() != SCAN_COLUMNS {
        return Err(Error::config(
            path.display().to_string(),
            format!("expected columns {}", SCAN_COLUMNS.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e.into()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|_| {
                Error::config(format!("{}[{}].{}", path.display(), i, SCAN_COLUMNS[k]), "not a number")
            })
        };
        let flag = RowFlag::parse(rec[6].trim()).ok_or_else(|| {
            Error::config(format!("{}[{}].flag", path.display(), i), "unknown flag")
        })?;
        rows.push(ScanRow {
            omega_m: hz_to_rad(num(0)?),
            phi_ac_frac: num(1)?,
            gamma: num(2)?,
            gamma_err: num(3)?,
            psd: num(4)?,
            r2: num(5)?,
            flag,
        });
    }
    Ok(ScanResult { rows })
}

pub fn scan_rows(result: &ScanResult) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt9(rad_to_hz(r.omega_m)),
                fmt9(r.phi_ac_frac),
                fmt9(r.gamma),
                fmt9(r.gamma_err),
                fmt9(r.psd),
                fmt9(r.r2),
                r.flag.as_str().to_string(),
            ]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "paramspec", version, about = "Parametric noise spectroscopy toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file (a previous run manifest also works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed overriding both the configuration and PARAMSPEC_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker count hint, 0 for all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseAction {
    /// One realisation as (t, value).
    Sample,
    /// Analytic spectrum as (omega_hz, psd).
    Psd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Spinlock,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a noise process or tabulate its spectrum.
    Noise {
        action: NoiseAction,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo decoherence at one operating point with a decay fit.
    Dephase {
        #[command(flatten)]
        common: Common,
    },
    /// Frequency and amplitude scan of fitted decay rates.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Fit two spectral peaks to a scan table.
    Resolve {
        /// Scan CSV produced by `paramspec scan`.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fisher information and SNR versus shot length.
    Fisher {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form precision and sensitivity bounds.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Multi-level leakage scan.
    Leakage {
        /// Add a spin-lock comparison column.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-T1 decay rates from the master equation.
    Relax {
        /// Single relaxation time in seconds replacing the configured list.
        #[arg(long)]
        t1: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None => parse_config_str("{}")?,
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn progress(label: &str) -> impl Fn(usize, usize) + '_ {
    move |done, total| eprintln!("{label}: {done}/{total}")
}

fn run_noise(action: NoiseAction, common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let spec = cfg.noise_spec()?;
    match action {
        NoiseAction::Sample => {
            let s = &cfg.sample;
            let trace = sample_trace(&spec, s.dt_s, s.n_samples, cfg.seed)?;
            let rows: Vec<Vec<String>> = trace
                .samples
                .iter()
                .enumerate()
                .map(|(k, v)| vec![fmt9(k as f64 * trace.dt), fmt9(*v)])
                .collect();
            write_csv(&common.out, &["t", "value"], &rows)?;
            write_manifest(&common.out, "noise sample", &cfg, json!({}))
        }
        NoiseAction::Psd => {
            let grid = ScanPlan::log_grid(cfg.psd.f_min_hz, cfg.psd.f_max_hz, cfg.psd.n_points);
            let mut rows = Vec::with_capacity(grid.len());
            for w in grid {
                rows.push(vec![fmt9(rad_to_hz(w)), fmt9(analytic_psd(&spec, w)?)]);
            }
            write_csv(&common.out, &["omega_hz", "psd"], &rows)?;
            write_manifest(&common.out, "noise psd", &cfg, json!({}))
        }
    }
}

fn ac_noise(cfg: &RunConfig, phi_ac: f64) -> Result<NoiseSpec> {
    if cfg.ac_noise.level == 0.0 {
        Ok(NoiseSpec::zero())
    } else {
        relative_ac_noise(cfg.ac_noise.level, phi_ac)
    }
}

fn run_dephase(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let p = cfg.device_params()?;
    let drive = cfg.drive()?;
    let dd = cfg.dd.to_sequence()?;
    let s_dc = cfg.noise_spec()?;
    let s_ac = ac_noise(&cfg, drive.phi_ac)?;
    let sim = CoherenceSim {
        n_trials: cfg.sim.n_trials,
        dt: Some(drive.period() / cfg.sim.samples_per_period),
        n_times: cfg.sim.n_times,
        seed: cfg.seed,
        exec: Execution::Parallel,
    };
    eprintln!("dephase: {} trials", sim.n_trials);
    let w = simulate_coherence(&p, &drive, &dd, &s_dc, &s_ac, &sim)?;
    let mut rows = Vec::with_capacity(w.len());
    for &(t, v) in &w {
        let chi = analytic_decoherence(&p, &drive, &dd, &s_dc, &s_ac, t)?;
        rows.push(vec![fmt9(t), fmt9(v), fmt9((-chi).exp())]);
    }
    write_csv(&common.out, &["t", "W_mc", "W_analytic"], &rows)?;
    write_manifest(&common.out, "dephase", &cfg, json!({}))?;
    let fit = fit_decay(&w)?;
    write_json(
        &sidecar(&common.out, "fit.json"),
        "decay_fit",
        json!({
            "gamma": fit.gamma,
            "gamma_err": fit.gamma_err,
            "alpha": fit.alpha,
            "alpha_err": fit.alpha_err,
            "r2": fit.r2,
            "t_phi": fit.t_phi,
            "clipped": fit.clipped,
            "leading_rate": leading_rate(&p, &drive, &s_dc)?,
        }),
    )
}

fn scan_plan(cfg: &RunConfig) -> Result<ScanPlan> {
    let s = cfg
        .scan
        .as_ref()
        .ok_or_else(|| Error::config("scan", "section required by this command"))?;
    let mut plan = ScanPlan::new(s.grid.resolve("scan", 1e7, 1e9, 86)?, s.amplitudes.clone(), cfg.noise_spec()?);
    plan.n_trials = s.n_trials;
    plan.dd = cfg.dd.to_sequence()?;
    plan.ac_level = cfg.ac_noise.level;
    plan.seed = cfg.seed;
    plan.samples_per_period = s.samples_per_period;
    plan.n_times = s.n_times;
    plan.horizon = s.horizon.policy();
    plan.validate().map_err(|e| Error::config("scan", e.to_string()))?;
    Ok(plan)
}

fn run_scan_cmd(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let p = cfg.device_params()?;
    let plan = scan_plan(&cfg)?;
    let result = run_scan_with(&plan, &p, progress("scan"))?;
    write_csv(&common.out, &SCAN_COLUMNS, &scan_rows(&result))?;
    write_manifest(&common.out, "scan", &cfg, json!({}))?;
    if result.failure_fraction() > 0.2 {
        return Err(Error::numerical(format!(
            "{:.0}% of scan points failed to fit",
            100.0 * result.failure_fraction()
        )));
    }
    Ok(())
}

fn run_resolve(input: &Path, common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let scan = read_scan_csv(input)?;
    let r = &cfg.resolve;
    let opts = ResolveOptions {
        window: hz_to_rad(r.window_hz),
        center: r.center_hz.map(hz_to_rad),
        n_fits: r.n_fits,
        r2_min: r.r2_min,
        width_guess: hz_to_rad(r.width_guess_hz),
        seed: cfg.seed,
        exec: Execution::Parallel,
    };
    let fit = resolve_peaks(&scan, &opts)?;
    let hz = |e: &crate::spectroscopy::Estimate| {
        json!({
            "mean": rad_to_hz(e.mean),
            "std": rad_to_hz(e.std),
            "bound": rad_to_hz(e.bound),
        })
    };
    let raw = |e: &crate::spectroscopy::Estimate| json!({ "mean": e.mean, "std": e.std, "bound": e.bound });
    write_json(
        &common.out,
        "peak_fit",
        json!({
            "centers_hz": [hz(&fit.centers[0]), hz(&fit.centers[1])],
            "half_widths_hz": [hz(&fit.widths[0]), hz(&fit.widths[1])],
            "amplitudes": [raw(&fit.amplitudes[0]), raw(&fit.amplitudes[1])],
            "pink_amplitude": raw(&fit.pink_amplitude),
            "pink_exponent": raw(&fit.pink_exponent),
            "n_successful_fits": fit.n_successful_fits,
            "n_rows": fit.n_rows,
            "resolved": fit.resolved,
        }),
    )?;
    write_manifest(
        &common.out,
        "resolve",
        &cfg,
        json!({ "input": input.display().to_string() }),
    )?;
    if !fit.resolved {
        return Err(Error::Resolution {
            successes: fit.n_successful_fits,
            msg: "peak centers are not separated by more than their bounds".into(),
        });
    }
    Ok(())
}

fn fisher_section(cfg: &RunConfig) -> Result<&FisherConfig> {
    cfg.fisher
        .as_ref()
        .ok_or_else(|| Error::config("fisher", "section required by this command"))
}

fn run_fisher(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let f = fisher_section(&cfg)?;
    let budget = cfg.budget()?;
    let t_phi = crate::dephasing::coherence_time(f.gamma, f.alpha);
    let t_max = f.t_max_s.unwrap_or(5.0 * t_phi);
    if !(t_max > 0.0) {
        return Err(Error::config("fisher.t_max_s", "must be positive"));
    }
    let mut rows = Vec::with_capacity(f.n_points);
    for k in 1..=f.n_points {
        let t = t_max * k as f64 / f.n_points as f64;
        let info = fisher_gamma(f.gamma, f.alpha, t);
        let snr = f.gamma / sigma_gamma(&budget, f.gamma, f.alpha, t)?;
        rows.push(vec![fmt9(t), fmt9(info), fmt9(snr)]);
    }
    write_csv(&common.out, &["t", "I", "snr"], &rows)?;
    write_manifest(&common.out, "fisher", &cfg, json!({}))
}

fn run_bounds(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let f = fisher_section(&cfg)?;
    let p = cfg.device_params()?;
    let budget = cfg.budget()?;
    let opt = optimal_time(f.gamma, f.alpha)?;
    let sg = sigma_gamma(&budget, f.gamma, f.alpha, opt.numeric)?;
    let t_phi = crate::dephasing::coherence_time(f.gamma, f.alpha);
    let phi_ac = f.amplitude * PHI_MAX;
    let mut body = json!({
        "gamma": f.gamma,
        "alpha": f.alpha,
        "t_phi": t_phi,
        "optimal_time": { "heuristic": opt.heuristic, "numeric": opt.numeric },
        "sigma_gamma": sg,
        "snr": f.gamma / sg,
        "sensitivity_parametric": sensitivity_parametric(&p, phi_ac, &budget, t_phi),
        "coherent_ratio": coherent_ratio(&p, phi_ac),
    });
    if let Some(t1r) = f.t_1rho_s {
        let s = sensitivity_spinlock(&p, &budget, t1r)?;
        body["spinlock"] = json!({ "s_min": s.s_min, "nu1": s.nu1, "slope_factor": s.slope_factor });
    }
    if let Some(pk) = &cfg.peak {
        let peak = SpectralPeakModel {
            a_omega: pk.a_omega,
            sigma_omega: hz_to_rad(pk.sigma_hz),
            omega_c: hz_to_rad(pk.center_hz),
            epsilon: hz_to_rad(pk.epsilon_hz),
        };
        peak.validate().map_err(|e| Error::config("peak", e.to_string()))?;
        body["fisher_center_max"] = json!(fisher_center_max(&peak, sg));
        body["center_uncertainty_hz"] = json!(rad_to_hz(center_uncertainty(&peak, &budget, t_phi)));
        if peak.epsilon > 0.0 {
            let r = resolution_bound(&peak, &budget, t_phi)?;
            body["resolution_hz"] = json!({
                "delta_epsilon": rad_to_hz(r.delta_epsilon),
                "delta_center": rad_to_hz(r.delta_center),
                "qdyne": rad_to_hz(r.qdyne),
            });
        }
    }
    write_json(&common.out, "bounds", body)?;
    write_manifest(&common.out, "bounds", &cfg, json!({}))
}

fn run_leakage(baseline: Option<Baseline>, common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let l = cfg
        .leakage
        .as_ref()
        .ok_or_else(|| Error::config("leakage", "section required by this command"))?;
    let p = cfg.device_params()?;
    let model = LevelModel::full_cosine(&ChargeBasisModel {
        n_charge: l.n_charge,
        device: p,
        n_levels: l.n_levels,
    })?;
    let opts = EvolveOptions {
        dt: l.dt_s,
        ..EvolveOptions::default()
    };
    let (pulse, infidelity) = match &l.pulse {
        Some(pc) => (
            DragPulse::gaussian(
                hz_to_rad(pc.amplitude_hz),
                l.sigma_p_s,
                hz_to_rad(pc.drive_freq_hz),
                pc.drag_factor,
            ),
            None,
        ),
        None => {
            eprintln!("leakage: calibrating pulse");
            let base = DragPulse::gaussian(
                DragPulse::pi_amplitude(model.n01(), l.sigma_p_s),
                l.sigma_p_s,
                model.e01(),
                0.0,
            );
            let cal = calibrate_pulse(
                &model,
                &base,
                &CalibrationOptions {
                    dt: l.dt_s,
                    ..CalibrationOptions::default()
                },
            )?;
            (cal.pulse, Some(cal.infidelity))
        }
    };
    let scan = LeakageScan {
        frequencies: l.grid.resolve("leakage", 1e7, 1e9, 12)?,
        amplitudes: l.amplitudes.clone(),
        duration: l.duration_s,
        dd: cfg.dd.to_sequence()?,
        pulse,
        spinlock: baseline == Some(Baseline::Spinlock),
        window: l.window,
        opts,
        exec: Execution::Parallel,
    };
    eprintln!(
        "leakage: {} points",
        scan.frequencies.len() * scan.amplitudes.len()
    );
    let rows = run_leakage_scan(&model, &scan)?;
    let mut header = vec!["omega_m_hz", "phi_ac_frac", "leakage_sim", "leakage_analytic"];
    if scan.spinlock {
        header.push("leakage_spinlock");
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                fmt9(rad_to_hz(r.omega_m)),
                fmt9(r.phi_ac_frac),
                fmt9(r.leakage_sim),
                fmt9(r.leakage_analytic),
            ];
            if let Some(s) = r.leakage_spinlock {
                v.push(fmt9(s));
            }
            v
        })
        .collect();
    write_csv(&common.out, &header, &table)?;
    write_json(
        &sidecar(&common.out, "pulse.json"),
        "pulse",
        json!({
            "amplitude_hz": rad_to_hz(pulse.amplitude),
            "drive_freq_hz": rad_to_hz(pulse.drive_freq),
            "drag_factor": pulse.drag_factor,
            "sigma_s": pulse.width,
            "infidelity": infidelity,
        }),
    )?;
    write_manifest(
        &common.out,
        "leakage",
        &cfg,
        json!({ "baseline": baseline.map(|_| "spinlock") }),
    )
}

fn run_relax(t1: Option<f64>, common: &Common) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(t) = t1 {
        if !(t > 0.0) {
            return Err(Error::config("--t1", "must be positive"));
        }
        let r = cfg.relax.get_or_insert_with(|| {
            serde_json::from_value(json!({})).expect("relax defaults deserialize")
        });
        r.t1_s = vec![Some(t)];
    }
    let r = cfg
        .relax
        .clone()
        .ok_or_else(|| Error::config("relax", "section required by this command"))?;
    let p = cfg.device_params()?;
    let t1s: Vec<f64> = r.t1_s.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    let mut scan = RelaxScan::new(r.grid.resolve("relax", 3e8, 7e8, 5)?, r.amplitude, cfg.noise_spec()?, t1s);
    scan.n_traces = r.n_traces;
    scan.windows = r.windows;
    scan.post_select = r.post_select;
    scan.horizon = r.horizon.policy();
    scan.seed = cfg.seed;
    let rows = run_relax_scan(&p, &scan, progress("relax"))?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt9(rad_to_hz(r.omega_m)),
                fmt9(r.rate),
                fmt9(r.rate_err),
                fmt9(r.t1),
            ]
        })
        .collect();
    write_csv(&common.out, &["omega_m_hz", "rate", "rate_err", "t1"], &table)?;
    write_manifest(&common.out, "relax", &cfg, json!({ "t1": t1 }))
}

fn common_of(cmd: &Command) -> &Common {
    match cmd {
        Command::Noise { common, .. }
        | Command::Dephase { common }
        | Command::Scan { common }
        | Command::Resolve { common, .. }
        | Command::Fisher { common }
        | Command::Bounds { common }
        | Command::Leakage { common, .. }
        | Command::Relax { common, .. } => common,
    }
}

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let threads = common_of(&cli.command).threads;
    with_threads(threads, || match &cli.command {
        Command::Noise { action, common } => run_noise(*action, common),
        Command::Dephase { common } => run_dephase(common),
        Command::Scan { common } => run_scan_cmd(common),
        Command::Resolve { input, common } => run_resolve(input, common),
        Command::Fisher { common } => run_fisher(common),
        Command::Bounds { common } => run_bounds(common),
        Command::Leakage { baseline, common } => run_leakage(*baseline, common),
        Command::Relax { t1, common } => run_relax(*t1, common),
    })
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
