//! Tunable-transmon circuit model: gap curves, curvature at the sweet spot and
//! the flux drive waveform.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Step used by the finite-difference derivatives of the gap.
pub const FD_STEP: f64 = 1e-4;

/// Circuit energies of a SQUID-tunable transmon, all as angular frequencies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    pub ec: f64,
    pub ej1: f64,
    pub ej2: f64,
}

impl TransmonParams {
    pub fn new(ec: f64, ej1: f64, ej2: f64) -> Result<Self> {
        let p = TransmonParams { ec, ej1, ej2 };
        p.validate()?;
        Ok(p)
    }

    /// Build from a target sweet-spot gap, charging energy and asymmetry,
    /// inverting `omega_max = sqrt(8 EJ EC) - EC`.
    pub fn from_gap(omega_max: f64, ec: f64, d: f64) -> Result<Self> {
        let ej = (omega_max + ec).powi(2) / (8.0 * ec);
        Self::new(ec, 0.5 * ej * (1.0 - d), 0.5 * ej * (1.0 + d))
    }

    /// 6 GHz sweet-spot gap, 300 MHz anharmonicity, asymmetry 1/3.
    pub fn reference() -> Self {
        Self::from_gap(crate::hz_to_rad(6e9), crate::hz_to_rad(0.3e9), 1.0 / 3.0)
            .expect("reference parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ec > 0.0 && self.ej1 > 0.0 && self.ej2 > 0.0) {
            return Err(Error::arg("ec, ej1 and ej2 must be positive"));
        }
        let d = self.d();
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::arg(format!("asymmetry d = {d} outside (0, 1)")));
        }
        if self.xi() >= 1.0 {
            return Err(Error::arg("not in the transmon regime (xi >= 1)"));
        }
        Ok(())
    }

    pub fn ej_sum(&self) -> f64 {
        self.ej1 + self.ej2
    }

    /// Junction asymmetry as a magnitude in (0, 1).
    pub fn d(&self) -> f64 {
        ((self.ej2 - self.ej1) / (self.ej2 + self.ej1)).abs()
    }

    pub fn xi(&self) -> f64 {
        (2.0 * self.ec / self.ej_sum()).sqrt()
    }

    /// Anharmonicity of the Kerr approximation, equal to the charging energy.
    pub fn eta(&self) -> f64 {
        self.ec
    }

    pub fn omega_max(&self) -> f64 {
        energy_gap(self, 0.0)
    }
}

/// Effective Josephson energy `(EJ1+EJ2) sqrt(cos^2 + d^2 sin^2)`.
pub fn effective_josephson(p: &TransmonParams, phi_e: f64) -> f64 {
    let (s, c) = phi_e.sin_cos();
    let d = p.d();
    p.ej_sum() * (c * c + d * d * s * s).sqrt()
}

/// Transmon gap `sqrt(8 EJ,eff EC) - EC`.
pub fn energy_gap(p: &TransmonParams, phi_e: f64) -> f64 {
    (8.0 * effective_josephson(p, phi_e) * p.ec).sqrt() - p.ec
}

/// Half the second derivative of `f` at zero, fourth-order central stencil.
pub fn curvature_of(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let second = (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h))
        / (12.0 * h * h);
    0.5 * second
}

/// Sweet-spot curvature `b0 = (1/2) d^2 gap / dphi^2` at zero flux.
pub fn curvature_b0(p: &TransmonParams) -> f64 {
    curvature_of(|x| energy_gap(p, x), FD_STEP)
}

/// First derivative of the gap with respect to flux.
pub fn gap_slope(p: &TransmonParams, phi_e: f64) -> f64 {
    let h = FD_STEP;
    let f = |x: f64| energy_gap(p, phi_e + x);
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Sinusoidal flux drive around a bias point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxDrive {
    pub phi_dc: f64,
    pub phi_ac: f64,
    pub omega_m: f64,
    pub duration: f64,
}

impl FluxDrive {
    pub fn new(phi_dc: f64, phi_ac: f64, omega_m: f64, duration: f64) -> Result<Self> {
        let d = FluxDrive {
            phi_dc,
            phi_ac,
            omega_m,
            duration,
        };
        d.validate()?;
        Ok(d)
    }

    /// Sweet-spot drive with amplitude given as a fraction of `pi/2`.
    pub fn at_sweet_spot(amp_frac: f64, omega_m: f64, duration: f64) -> Result<Self> {
        Self::new(0.0, amp_frac * PI / 2.0, omega_m, duration)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi_ac < 0.0 || self.phi_dc.abs() + self.phi_ac > PI / 2.0 + 1e-12 {
            return Err(Error::arg("drive leaves the quadratic well: |phi_dc| + phi_ac > pi/2"));
        }
        if !(self.omega_m > 0.0 && self.duration > 0.0) {
            return Err(Error::arg("omega_m and duration must be positive"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega_m
    }
}

/// Instantaneous reduced flux including injected noise.
pub fn drive_value(drive: &FluxDrive, t: f64, dc_noise: f64, ac_noise: f64) -> f64 {
    drive.phi_dc + dc_noise + (drive.phi_ac + ac_noise) * (drive.omega_m * t).sin()
}

/// Noise-induced gap shift. At the sweet spot this is the first-order
/// expansion of the quadratic gap; away from it the exact gap difference.
///
/// The shift carries the sign convention `-2 b0 phi_ac sin(w t) dc - ...`,
/// which is the negative of the raw gap difference. Only its second moment
/// enters the decoherence function, so the overall sign is immaterial; the
/// exact branch uses the same convention so both branches agree.
pub fn delta_omega(
    p: &TransmonParams,
    drive: &FluxDrive,
    t: f64,
    dc_noise: f64,
    ac_noise: f64,
) -> f64 {
    if drive.phi_dc == 0.0 {
        let b0 = curvature_b0(p);
        delta_omega_linear(b0, drive, t, dc_noise, ac_noise)
    } else {
        energy_gap(p, drive_value(drive, t, 0.0, 0.0))
            - energy_gap(p, drive_value(drive, t, dc_noise, ac_noise))
    }
}

/// First-order gap shift for a precomputed curvature.
pub fn delta_omega_linear(b0: f64, drive: &FluxDrive, t: f64, dc_noise: f64, ac_noise: f64) -> f64 {
    let wt = drive.omega_m * t;
    -2.0 * b0 * drive.phi_ac * wt.sin() * dc_noise
        - b0 * drive.phi_ac * (1.0 - (2.0 * wt).cos()) * ac_noise
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hz_to_rad;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn ej_limits() {
        let p = TransmonParams::reference();
        assert!(close(effective_josephson(&p, 0.0), p.ej_sum(), 1e-15));
        assert!(close(effective_josephson(&p, PI / 2.0), p.d() * p.ej_sum(), 1e-12));
        let expect = p.ej_sum() * (0.5 + 0.5 / 9.0f64).sqrt();
        assert!(close(effective_josephson(&p, PI / 4.0), expect, 1e-12));
    }

    #[test]
    fn reference_gap_is_six_ghz() {
        let p = TransmonParams::reference();
        assert!(close(p.omega_max(), hz_to_rad(6e9), 1e-12));
        assert!(close(p.ej_sum(), hz_to_rad(16.5375e9), 1e-12));
        assert!(close(p.d(), 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn b0_matches_coarse_differences() {
        let p = TransmonParams::reference();
        let b0 = curvature_b0(&p);
        assert!(b0 < 0.0);
        let coarse = |h: f64| {
            (energy_gap(&p, h) - 2.0 * energy_gap(&p, 0.0) + energy_gap(&p, -h)) / (2.0 * h * h)
        };
        let (c3, c4) = (coarse(1e-3), coarse(1e-4));
        // Richardson: the second-order stencil error shrinks by 100x per decade.
        assert!((c3 - b0).abs() < 1e-5 * b0.abs());
        assert!((c4 - b0).abs() < (c3 - b0).abs().max(1e-6 * b0.abs()));
        // Closed form of the sweet-spot curvature.
        let analytic = -(8.0 * p.ej_sum() * p.ec).sqrt() * (1.0 - p.d().powi(2)) / 4.0;
        assert!(close(b0, analytic, 1e-6));
    }

    #[test]
    fn quadratic_curvature_is_exact() {
        let c = -3.7e9;
        assert!(close(curvature_of(|x| c * x * x, 1e-4), c, 1e-6));
    }

    #[test]
    fn quadratic_model_tracks_gap() {
        let p = TransmonParams::reference();
        let b0 = curvature_b0(&p);
        for i in 1..=30 {
            let phi = 0.01 * i as f64;
            let quad = p.omega_max() + b0 * phi * phi;
            assert!(close(quad, energy_gap(&p, phi), 0.01), "phi = {phi}");
            if phi <= 0.2 {
                let err = (energy_gap(&p, phi) - p.omega_max() - b0 * phi * phi).abs();
                assert!(err < 0.05 * (b0 * phi * phi).abs());
            }
        }
    }

    #[test]
    fn drive_and_shift_basics() {
        let p = TransmonParams::reference();
        let drive = FluxDrive::at_sweet_spot(0.6, hz_to_rad(500e6), 1e-6).unwrap();
        assert_eq!(drive_value(&drive, 0.0, 0.0, 0.0), 0.0);
        let quarter = PI / (2.0 * drive.omega_m);
        assert!(close(drive_value(&drive, quarter, 0.0, 0.0), drive.phi_ac, 1e-12));
        assert_eq!(delta_omega(&p, &drive, 0.3e-9, 0.0, 0.0), 0.0);
        let b0 = curvature_b0(&p);
        let n = 1e-5;
        assert!(close(
            delta_omega(&p, &drive, quarter, n, 0.0),
            -2.0 * b0 * drive.phi_ac * n,
            1e-12
        ));
    }

    #[test]
    fn linear_shift_matches_exact_gap() {
        let p = TransmonParams::reference();
        let b0 = curvature_b0(&p);
        let drive = FluxDrive::at_sweet_spot(0.05, hz_to_rad(500e6), 1e-6).unwrap();
        for &t in &[0.1e-9, 0.37e-9, 0.8e-9] {
            let n = 1e-4;
            let exact = energy_gap(&p, drive_value(&drive, t, n, 0.0))
                - energy_gap(&p, drive_value(&drive, t, 0.0, 0.0));
            let lin = -delta_omega_linear(b0, &drive, t, n, 0.0);
            // First order in the noise, quadratic gap: residual is O(n^2) plus
            // the quartic correction of the gap at this small amplitude.
            assert!((exact - lin).abs() < 0.02 * lin.abs() + (b0 * n * n).abs() * 2.0);
        }
    }

    #[test]
    fn rejects_bad_drive() {
        assert!(FluxDrive::new(0.5, 1.2, 1.0, 1.0).is_err());
        assert!(TransmonParams::new(1.0, 2.0, 2.0).is_err());
    }
}
