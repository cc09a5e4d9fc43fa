//! Leakage out of the qubit subspace: full-cosine transmon in the charge
//! basis projected onto its lowest levels, a Kerr-oscillator comparison, DRAG
//! pulse calibration, a spin-lock baseline and the Bessel-series analysis.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dephasing::{Axis, DDSequence};
use crate::device::{curvature_b0, effective_josephson, energy_gap, FluxDrive, TransmonParams};
use crate::error::{Error, Result};
use crate::estimation::golden_max;
use crate::par::{map_indexed, Execution};

/// Truncated charge basis for the full-cosine Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChargeBasisModel {
    /// Odd number of charge states, `-(n-1)/2 ..= (n-1)/2`.
    pub n_charge: usize,
    pub device: TransmonParams,
    /// Eigenstates kept for time evolution.
    pub n_levels: usize,
}

impl ChargeBasisModel {
    pub fn new(device: TransmonParams) -> Self {
        ChargeBasisModel {
            n_charge: 401,
            device,
            n_levels: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_charge < 3 || self.n_charge % 2 == 0 {
            return Err(Error::arg("n_charge must be odd and at least 3"));
        }
        if self.n_levels < 3 || self.n_levels > self.n_charge {
            return Err(Error::arg("n_levels must lie in [3, n_charge]"));
        }
        self.device.validate()
    }
}

/// `4 E_C n^2 - E_J,eff(phi_e) cos(phi)` in the charge basis; `cos(phi)` is
/// half the sum of the unit charge shifts.
pub fn build_charge_hamiltonian(model: &ChargeBasisModel, phi_e: f64) -> DMatrix<f64> {
    let n = model.n_charge;
    let half = ((n - 1) / 2) as f64;
    let ej = effective_josephson(&model.device, phi_e);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let q = i as f64 - half;
        h[(i, i)] = 4.0 * model.device.ec * q * q;
        if i + 1 < n {
            h[(i, i + 1)] = -0.5 * ej;
            h[(i + 1, i)] = -0.5 * ej;
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    FullCosine,
    Kerr,
}

/// Real symmetric operator stored with its eigendecomposition.
#[derive(Clone, Debug)]
struct Eig {
    vecs: Vec<f64>,
    vals: Vec<f64>,
}

/// Newton-Schulz steps towards the nearest orthogonal matrix; rounding in
/// the eigenvectors otherwise shows up as a steady norm drift over 1e7 steps.
fn polish(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let mut q = q.clone();
    for _ in 0..3 {
        let g = q.transpose() * &q;
        q = &q * (DMatrix::identity(n, n) * 1.5 - g * 0.5);
    }
    q
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
    out
}

fn eig_of(m: &DMatrix<f64>) -> (Eig, DMatrix<f64>) {
    let se = SymmetricEigen::new(m.clone());
    let v = polish(&se.eigenvectors);
    let eig = Eig {
        vecs: row_major(&v),
        vals: se.eigenvalues.iter().copied().collect(),
    };
    (eig, v)
}

/// Few-level Hamiltonian `H(t) = diag(E) + a(t) C + b(t) N`, where `C` carries
/// the flux dependence and `N` is the charge operator that couples to both the
/// flux-drive phase term and the microwave pulses.
#[derive(Clone, Debug)]
pub struct LevelModel {
    /// Level energies relative to the ground state, rad/s.
    pub energies: Vec<f64>,
    pub flux_operator: DMatrix<f64>,
    pub charge: DMatrix<f64>,
    pub device: TransmonParams,
    kind: Kind,
    c: Eig,
    // V_n^T V_c and V_c^T V_n, row major.
    m1: Vec<f64>,
    m2: Vec<f64>,
    n_vals: Vec<f64>,
}

impl LevelModel {
    /// Diagonalise at the sweet spot and project onto the lowest levels; the
    /// operators stay fixed while the flux is modulated.
    pub fn full_cosine(model: &ChargeBasisModel) -> Result<Self> {
        model.validate()?;
        let n = model.n_charge;
        let half = ((n - 1) / 2) as f64;
        let se = SymmetricEigen::new(build_charge_hamiltonian(model, 0.0));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let k = model.n_levels;
        let centre = (n - 1) / 2;
        let mut basis = DMatrix::zeros(n, k);
        for (col, &idx) in order.iter().take(k).enumerate() {
            let v = se.eigenvectors.column(idx);
            // Even states are fixed by their zero-charge amplitude, odd ones by
            // the amplitude at charge +1.
            let s = if v[centre + col % 2] < 0.0 { -1.0 } else { 1.0 };
            basis.set_column(col, &(v * s));
        }
        let e0 = se.eigenvalues[order[0]];
        let energies: Vec<f64> = order.iter().take(k).map(|&i| se.eigenvalues[i] - e0).collect();
        let mut cos_phi = DMatrix::zeros(n, n);
        let mut charge = DMatrix::zeros(n, n);
        for i in 0..n {
            charge[(i, i)] = i as f64 - half;
            if i + 1 < n {
                cos_phi[(i, i + 1)] = 0.5;
                cos_phi[(i + 1, i)] = 0.5;
            }
        }
        let c = basis.transpose() * cos_phi * &basis;
        let q = basis.transpose() * charge * &basis;
        Ok(Self::assemble(energies, c, q, model.device, Kind::FullCosine))
    }

    /// Anharmonic oscillator `w_T a^+a - (eta/2) a^+a^+aa` truncated to
    /// `levels` Fock states, in the gauge where the charge operator is real.
    pub fn kerr(device: &TransmonParams, levels: usize) -> Result<Self> {
        device.validate()?;
        if levels < 3 {
            return Err(Error::arg("Kerr truncation needs at least 3 levels"));
        }
        let w = device.omega_max();
        let eta = device.eta();
        let energies: Vec<f64> = (0..levels)
            .map(|k| {
                let k = k as f64;
                w * k - 0.5 * eta * k * (k - 1.0)
            })
            .collect();
        let number = DMatrix::from_fn(levels, levels, |i, j| if i == j { i as f64 } else { 0.0 });
        let scale = 1.0 / (2.0 * device.xi().sqrt());
        let charge = DMatrix::from_fn(levels, levels, |i, j| {
            if i + 1 == j {
                scale * (j as f64).sqrt()
            } else if j + 1 == i {
                scale * (i as f64).sqrt()
            } else {
                0.0
            }
        });
        Ok(Self::assemble(energies, number, charge, *device, Kind::Kerr))
    }

    fn assemble(
        energies: Vec<f64>,
        flux_operator: DMatrix<f64>,
        charge: DMatrix<f64>,
        device: TransmonParams,
        kind: Kind,
    ) -> Self {
        let (c, vc) = eig_of(&flux_operator);
        let (q, vq) = eig_of(&charge);
        let cross = polish(&(vq.transpose() * vc));
        let m1 = row_major(&cross);
        let m2 = row_major(&cross.transpose());
        LevelModel {
            energies,
            flux_operator,
            charge,
            device,
            kind,
            c,
            m1,
            m2,
            n_vals: q.vals,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn e01(&self) -> f64 {
        self.energies[1]
    }

    /// `E01 - E12`.
    pub fn anharmonicity(&self) -> f64 {
        2.0 * self.energies[1] - self.energies[2]
    }

    /// Charge matrix element between the two qubit levels.
    pub fn n01(&self) -> f64 {
        self.charge[(0, 1)]
    }

    /// Populations of `psi` over the eigenstates of the static Hamiltonian
    /// `diag(E) + a C`, in ascending energy. At the sweet spot (`a = 0`) these
    /// are the squared amplitudes themselves.
    pub fn instantaneous_populations(&self, a: f64, psi: &[Complex64]) -> Vec<f64> {
        if a == 0.0 {
            return psi.iter().map(|z| z.norm_sqr()).collect();
        }
        let mut h = &self.flux_operator * a;
        for (i, e) in self.energies.iter().enumerate() {
            h[(i, i)] += e;
        }
        let se = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..psi.len()).collect();
        order.sort_by(|&x, &y| se.eigenvalues[x].total_cmp(&se.eigenvalues[y]));
        order
            .iter()
            .map(|&j| {
                let v = se.eigenvectors.column(j);
                psi.iter()
                    .zip(v.iter())
                    .map(|(z, c)| z * *c)
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .collect()
    }

    /// Coefficient of the flux operator at bias `phi_e`.
    pub fn flux_coefficient(&self, phi_e: f64) -> f64 {
        match self.kind {
            Kind::FullCosine => self.device.ej_sum() - effective_josephson(&self.device, phi_e),
            Kind::Kerr => energy_gap(&self.device, phi_e) - energy_gap(&self.device, 0.0),
        }
    }
}

/// Gaussian pulse with a derivative-removal quadrature,
/// `[Ox sin(wd t + theta) + Oy cos(wd t + theta)] n` with `theta = 0` for X and
/// `pi/2` for Y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragPulse {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub cutoff: f64,
    pub drive_freq: f64,
    pub drag_factor: f64,
    pub axis: Axis,
}

impl DragPulse {
    /// Pulse of width `sigma` cut at four widths and centered at its cutoff.
    pub fn gaussian(amplitude: f64, sigma: f64, drive_freq: f64, drag_factor: f64) -> Self {
        DragPulse {
            amplitude,
            center: 4.0 * sigma,
            width: sigma,
            cutoff: 4.0 * sigma,
            drive_freq,
            drag_factor,
            axis: Axis::X,
        }
    }

    /// Rough pi-pulse amplitude from the Gaussian area on the qubit transition.
    pub fn pi_amplitude(n01: f64, sigma: f64) -> f64 {
        PI / (n01.abs() * (2.0 * PI).sqrt() * sigma)
    }

    pub fn moved(&self, center: f64, axis: Axis) -> Self {
        DragPulse {
            center,
            axis,
            ..*self
        }
    }

    /// In-phase and quadrature envelopes at `t`.
    pub fn envelopes(&self, t: f64, eta: f64) -> (f64, f64) {
        let x = t - self.center;
        if x.abs() > self.cutoff {
            return (0.0, 0.0);
        }
        let ox = self.amplitude * (-x * x / (2.0 * self.width * self.width)).exp();
        // -(lambda/eta) d/dt of the Gaussian.
        let oy = self.drag_factor / eta * ox * x / (self.width * self.width);
        (ox, oy)
    }

    /// Coefficient of the charge operator at `t`.
    pub fn signal(&self, t: f64, eta: f64) -> f64 {
        let (ox, oy) = self.envelopes(t, eta);
        if ox == 0.0 {
            return 0.0;
        }
        let theta = match self.axis {
            Axis::X => 0.0,
            Axis::Y => 0.5 * PI,
        };
        let (s, c) = (self.drive_freq * t + theta).sin_cos();
        ox * s + oy * c
    }
}

/// Starting state of an evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Level(usize),
    /// Equal superposition of the two qubit levels.
    Plus,
}

/// Integration and recording settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    /// Steps between regular population records.
    pub record_stride: usize,
    /// Number of closely spaced records at the end of the run.
    pub tail: usize,
    /// Steps between the closing records.
    pub tail_stride: usize,
    /// Allowed norm drift per 10 us of evolution.
    pub norm_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            dt: 1e-12,
            record_stride: 1000,
            tail: 10,
            tail_stride: 10,
            norm_tol: 1e-8,
        }
    }
}

/// Level populations at the recorded times, over the eigenstates of the
/// static Hamiltonian at the instantaneous flux bias.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PopulationSeries {
    pub times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    /// Largest deviation of the state norm from one.
    pub norm_drift: f64,
}

fn matvec(m: &[f64], v: &[Complex64], out: &mut [Complex64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * n..(i + 1) * n];
        let mut re = 0.0;
        let mut im = 0.0;
        for (a, z) in row.iter().zip(v) {
            re += a * z.re;
            im += a * z.im;
        }
        *o = Complex64::new(re, im);
    }
}

fn matvec_t(m: &[f64], v: &[Complex64], out: &mut [Complex64]) {
    let n = v.len();
    for o in out.iter_mut() {
        *o = Complex64::new(0.0, 0.0);
    }
    for (k, z) in v.iter().enumerate() {
        let row = &m[k * n..(k + 1) * n];
        for (o, a) in out.iter_mut().zip(row) {
            o.re += a * z.re;
            o.im += a * z.im;
        }
    }
}

/// Strang-split propagation of `psi` over `[0, t_end]`:
/// `exp(-i a C dt/2) exp(-i b N dt) exp(-i a C dt/2)` between diagonal
/// half-steps, with `a` and `b` evaluated at step midpoints. After step `k`
/// of `steps`, `record` receives the state at the end of that step whenever
/// `want(k, steps)` holds.
fn propagate(
    model: &LevelModel,
    t_end: f64,
    dt_req: f64,
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
    psi: &mut [Complex64],
    want: impl Fn(usize, usize) -> bool,
    mut record: impl FnMut(f64, &[Complex64]),
) {
    let n = psi.len();
    let steps = ((t_end / dt_req).ceil() as usize).max(1);
    let dt = t_end / steps as f64;
    let half_d: Vec<Complex64> = model
        .energies
        .iter()
        .map(|e| Complex64::from_polar(1.0, -0.5 * e * dt))
        .collect();
    let full_d: Vec<Complex64> = half_d.iter().map(|z| z * z).collect();
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for (z, p) in psi.iter_mut().zip(&half_d) {
        *z *= p;
    }
    for k in 0..steps {
        let t = (k as f64 + 0.5) * dt;
        let ak = a(t);
        let bk = b(t);
        matvec_t(&model.c.vecs, psi, &mut u);
        for (z, c) in u.iter_mut().zip(&model.c.vals) {
            *z *= Complex64::from_polar(1.0, -0.5 * ak * c * dt);
        }
        matvec(&model.m1, &u, &mut w);
        for (z, q) in w.iter_mut().zip(&model.n_vals) {
            *z *= Complex64::from_polar(1.0, -bk * q * dt);
        }
        matvec(&model.m2, &w, &mut u);
        for (z, c) in u.iter_mut().zip(&model.c.vals) {
            *z *= Complex64::from_polar(1.0, -0.5 * ak * c * dt);
        }
        matvec(&model.c.vecs, &u, psi);
        let last = k + 1 == steps;
        let d = if last { &half_d } else { &full_d };
        for (z, p) in psi.iter_mut().zip(d) {
            *z *= p;
        }
        if want(k, steps) {
            let t = (k + 1) as f64 * dt;
            if last {
                record(t, psi);
            } else {
                // The next diagonal half-step is already folded in.
                for ((o, z), p) in w.iter_mut().zip(psi.iter()).zip(&half_d) {
                    *o = z * p.conj();
                }
                record(t, &w);
            }
        }
    }
}

fn initial_vector(n: usize, initial: InitialState) -> Result<Vec<Complex64>> {
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    match initial {
        InitialState::Level(k) if k < n => psi[k] = Complex64::new(1.0, 0.0),
        InitialState::Level(k) => {
            return Err(Error::arg(format!("initial level {k} outside {n} levels")))
        }
        InitialState::Plus => {
            psi[0] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            psi[1] = psi[0];
        }
    }
    Ok(psi)
}

fn run_recorded(
    model: &LevelModel,
    t_end: f64,
    opts: &EvolveOptions,
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
    initial: InitialState,
) -> Result<PopulationSeries> {
    if !(opts.dt > 0.0 && t_end > 0.0) || opts.record_stride == 0 || opts.tail_stride == 0 {
        return Err(Error::arg("invalid evolution settings"));
    }
    let mut psi = initial_vector(model.n_levels(), initial)?;
    let mut out = PopulationSeries::default();
    let stride = opts.record_stride;
    let tail_span = opts.tail * opts.tail_stride;
    let want = |k: usize, steps: usize| {
        let from_end = steps - 1 - k;
        (from_end < tail_span && from_end % opts.tail_stride == 0) || (k + 1) % stride == 0
    };
    propagate(model, t_end, opts.dt, &a, b, &mut psi, want, |t, s| {
        let pops = model.instantaneous_populations(a(t), s);
        let norm: f64 = pops.iter().sum();
        out.norm_drift = out.norm_drift.max((norm - 1.0).abs());
        out.times.push(t);
        out.populations.push(pops);
    });
    let allowed = opts.norm_tol * (t_end / 10e-6).max(1.0);
    if out.norm_drift > allowed {
        return Err(Error::numerical(format!(
            "norm drift {:.3e} exceeds {:.1e}; reduce dt",
            out.norm_drift, allowed
        )));
    }
    Ok(out)
}

/// Time derivative of the phase shift, `d phi_ac w_m cos(w_m t)`, in the
/// linear approximation `phi_0 ~ d phi_e`.
fn phase_shift_rate(device: &TransmonParams, drive: &FluxDrive, t: f64) -> f64 {
    device.d() * drive.phi_ac * drive.omega_m * (drive.omega_m * t).cos()
}

/// Evolve under noise-free flux modulation plus the given pulses over the
/// drive duration.
pub fn evolve_sequence(
    model: &LevelModel,
    drive: &FluxDrive,
    pulses: &[DragPulse],
    opts: &EvolveOptions,
    initial: InitialState,
) -> Result<PopulationSeries> {
    drive.validate()?;
    let fastest = drive
        .omega_m
        .max(model.energies[1])
        .max(pulses.iter().map(|p| p.drive_freq).fold(0.0, f64::max));
    if opts.dt > 2.0 * PI / (40.0 * fastest) {
        return Err(Error::arg(format!(
            "dt = {:.3e} s resolves the fastest frequency with fewer than 40 steps",
            opts.dt
        )));
    }
    let eta = model.device.eta();
    let dev = model.device;
    let a = |t: f64| model.flux_coefficient(drive.phi_dc + drive.phi_ac * (drive.omega_m * t).sin());
    let b = |t: f64| {
        let mut v = -phase_shift_rate(&dev, drive, t);
        for p in pulses {
            v += p.signal(t, eta);
        }
        v
    };
    run_recorded(model, drive.duration, opts, a, b, initial)
}

/// Largest population outside the two qubit levels over the last `window`
/// records.
pub fn leakage_metric(series: &PopulationSeries, window: usize) -> Result<f64> {
    let n = series.populations.len();
    if window == 0 || n < window {
        return Err(Error::arg(format!("series of {n} records is shorter than the window {window}")));
    }
    Ok(series.populations[n - window..]
        .iter()
        .map(|p| p.iter().skip(2).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Pulses of a decoupling sequence placed at its pulse times over `duration`.
pub fn sequence_pulses(dd: &DDSequence, base: &DragPulse, duration: f64) -> Result<Vec<DragPulse>> {
    let times = dd.pulse_times(duration);
    if let (Some(first), Some(last)) = (times.first(), times.last()) {
        if first - base.cutoff < 0.0 || last + base.cutoff > duration {
            return Err(Error::arg("pulse envelopes do not fit inside the sequence"));
        }
    }
    Ok(times
        .into_iter()
        .zip(&dd.axes)
        .map(|(t, &ax)| base.moved(t, ax))
        .collect())
}

/// Two-level block of the pulse propagator in the frame rotating at the
/// drive frequency, columns for initial states 0 and 1.
fn qubit_block(model: &LevelModel, pulse: &DragPulse, dt: f64) -> [[Complex64; 2]; 2] {
    let eta = model.device.eta();
    let t_end = pulse.center + pulse.cutoff;
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for k in 0..2 {
        let mut psi = initial_vector(model.n_levels(), InitialState::Level(k)).expect("k < 2");
        propagate(model, t_end, dt, |_| 0.0, |t| pulse.signal(t, eta), &mut psi, |_, _| false, |_, _| {});
        for j in 0..2 {
            let frame = Complex64::from_polar(1.0, j as f64 * pulse.drive_freq * t_end);
            m[j][k] = frame * psi[j];
        }
    }
    m
}

/// Leakage-aware average gate infidelity of a pulse starting at time zero
/// against a pi rotation (a sine carrier rotates about y in the frame of the
/// drive, a cosine carrier about x).
pub fn gate_infidelity(model: &LevelModel, pulse: &DragPulse, dt: f64) -> f64 {
    let m = qubit_block(model, pulse, dt);
    let i = Complex64::new(0.0, 1.0);
    let overlap = match pulse.axis {
        Axis::X => i * m[0][1] - i * m[1][0],
        Axis::Y => m[0][1] + m[1][0],
    };
    let frob: f64 = m.iter().flatten().map(|z| z.norm_sqr()).sum();
    1.0 - (frob + overlap.norm_sqr()) / 6.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub pulse: DragPulse,
    pub infidelity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationOptions {
    pub dt: f64,
    pub rounds: usize,
    /// Stop once a full round improves the infidelity by less than this.
    pub tol: f64,
    /// Largest acceptable final infidelity.
    pub max_infidelity: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            dt: 1e-12,
            rounds: 4,
            tol: 1e-6,
            max_infidelity: 1e-2,
        }
    }
}

/// Coordinate descent over amplitude, drive frequency and DRAG factor with
/// golden-section line searches, minimising the average pi-gate infidelity of
/// the static device.
pub fn calibrate_pulse(
    model: &LevelModel,
    base: &DragPulse,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let start = base.moved(base.cutoff, base.axis);
    let cost = |p: &DragPulse| gate_infidelity(model, p, opts.dt);
    let mut best = start;
    let mut best_cost = cost(&best);
    let mut spans = [0.2 * base.amplitude.abs(), 2.0 * PI * 10e6, 0.8];
    for _ in 0..opts.rounds {
        let before = best_cost;
        for (axis, span) in spans.iter_mut().enumerate() {
            let set = |p: &DragPulse, v: f64| {
                let mut q = *p;
                match axis {
                    0 => q.amplitude = v,
                    1 => q.drive_freq = v,
                    _ => q.drag_factor = v,
                }
                q
            };
            let cur = match axis {
                0 => best.amplitude,
                1 => best.drive_freq,
                _ => best.drag_factor,
            };
            let tol = 1e-3 * *span / (1.0 + 2.0 * cur.abs());
            let v = golden_max(|v| -cost(&set(&best, v)), cur - *span, cur + *span, tol);
            let cand = set(&best, v);
            let c = cost(&cand);
            if c < best_cost {
                best = cand;
                best_cost = c;
            }
            *span *= 0.5;
        }
        if before - best_cost < opts.tol {
            break;
        }
    }
    if !(best_cost <= opts.max_infidelity) {
        return Err(Error::Calibration(format!(
            "best infidelity {best_cost:.3e} above {:.1e}",
            opts.max_infidelity
        )));
    }
    Ok(Calibration {
        pulse: best,
        infidelity: best_cost,
    })
}

/// Continuous resonant drive on the qubit transition with Rabi frequency
/// `rabi`, starting from the locked state.
pub fn spinlock_evolution(
    model: &LevelModel,
    rabi: f64,
    duration: f64,
    opts: &EvolveOptions,
) -> Result<PopulationSeries> {
    let wd = model.e01();
    if opts.dt > 2.0 * PI / (40.0 * wd) {
        return Err(Error::arg("dt does not resolve the qubit frequency"));
    }
    let amp = rabi / model.n01().abs();
    run_recorded(model, duration, opts, |_| 0.0, |t| amp * (wd * t).cos(), InitialState::Plus)
}

pub fn spinlock_leakage(
    model: &LevelModel,
    rabi: f64,
    duration: f64,
    opts: &EvolveOptions,
    window: usize,
) -> Result<f64> {
    leakage_metric(&spinlock_evolution(model, rabi, duration, opts)?, window)
}

/// Anharmonic-oscillator description used by the analytic leakage bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KerrModel {
    /// Period-averaged gap.
    pub omega_bar: f64,
    pub eta: f64,
    pub xi: f64,
    pub d: f64,
    /// Sweet-spot curvature.
    pub b0: f64,
    pub truncation: usize,
}

impl KerrModel {
    /// Average the exact gap over one modulation period.
    pub fn from_device(p: &TransmonParams, drive: &FluxDrive, truncation: usize) -> Self {
        let n = 512;
        let omega_bar = (0..n)
            .map(|k| {
                let x = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                energy_gap(p, drive.phi_dc + drive.phi_ac * x.sin())
            })
            .sum::<f64>()
            / n as f64;
        KerrModel {
            omega_bar,
            eta: p.eta(),
            xi: p.xi(),
            d: p.d(),
            b0: curvature_b0(p),
            truncation,
        }
    }

    /// Lowest harmonic order that reaches the 1-2 transition,
    /// `floor(((w_bar - eta) / w_m - 1) / 2)`.
    pub fn resonance_order(&self, omega_m: f64) -> i64 {
        (((self.omega_bar - self.eta) / omega_m - 1.0) / 2.0).floor() as i64
    }

    /// Bessel argument `w_tilde / (2 w_m)` with `w_tilde = b0 phi_ac^2 / 2`.
    pub fn bessel_argument(&self, drive: &FluxDrive) -> f64 {
        self.b0 * drive.phi_ac * drive.phi_ac / 2.0 / (2.0 * drive.omega_m)
    }
}

/// Bessel function of the first kind for integer order by Miller's backward
/// recurrence normalised with `J0 + 2 sum J_2k = 1`.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let sign_n = if n < 0 && n % 2 != 0 { -1.0 } else { 1.0 };
    let m = n.unsigned_abs() as usize;
    let sign_x = if x < 0.0 && m % 2 == 1 { -1.0 } else { 1.0 };
    let x = x.abs();
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    let top = m.max(x as usize) + 20 + (10.0 * (m.max(x as usize) as f64).sqrt()) as usize;
    let start = top + top % 2;
    let (mut next, mut cur) = (0.0f64, 1e-300f64);
    let mut norm = 0.0;
    let mut want = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        // `cur` now holds the unnormalised J_{k-1}.
        let order = k - 1;
        if order == m {
            want = cur;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > 1e250 {
            next *= 1e-250;
            cur *= 1e-250;
            norm *= 1e-250;
            want *= 1e-250;
        }
    }
    norm += cur;
    sign_n * sign_x * want / norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTerm {
    pub n: i64,
    /// Harmonic `2n + 1` of the modulation frequency.
    pub order: i64,
    /// `|d phi_ac w_m / (2 sqrt(xi)) J_n(z)|`.
    pub coupling: f64,
}

/// Harmonic interaction terms of the interaction-picture Hamiltonian for
/// `n = -n_max ..= n_max`.
pub fn bessel_interaction_terms(kerr: &KerrModel, drive: &FluxDrive, n_max: i64) -> Vec<InteractionTerm> {
    let z = kerr.bessel_argument(drive);
    let pref = kerr.d * drive.phi_ac * drive.omega_m / (2.0 * kerr.xi.sqrt());
    (-n_max..=n_max)
        .map(|n| InteractionTerm {
            n,
            order: 2 * n + 1,
            coupling: (pref * bessel_j(n, z)).abs(),
        })
        .collect()
}

/// Rabi-like bound `g^2 / (g^2 + delta^2)` on the 1-2 leakage amplitude.
pub fn analytic_leak_amplitude(kerr: &KerrModel, drive: &FluxDrive) -> f64 {
    let delta = kerr.omega_bar - kerr.eta - drive.omega_m;
    let g = kerr.d * drive.omega_m * drive.phi_ac * (2.0 / kerr.xi).sqrt();
    let g2 = g * g;
    if g2 == 0.0 {
        return 0.0;
    }
    g2 / (g2 + delta * delta)
}

/// One point of a leakage scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub omega_m: f64,
    pub phi_ac_frac: f64,
    /// Full-cosine model with the pulse sequence.
    pub leakage_sim: f64,
    /// Full-cosine model without pulses.
    pub leakage_free: f64,
    pub leakage_analytic: f64,
    /// Spin-lock baseline at Rabi frequency equal to `omega_m`.
    pub leakage_spinlock: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LeakageScan {
    pub frequencies: Vec<f64>,
    /// Fractions of `PHI_MAX`.
    pub amplitudes: Vec<f64>,
    pub duration: f64,
    pub dd: DDSequence,
    pub pulse: DragPulse,
    pub spinlock: bool,
    pub window: usize,
    pub opts: EvolveOptions,
    pub exec: Execution,
}

/// Run every (frequency, amplitude) point with and without pulses, plus the
/// spin-lock baseline once per frequency when requested.
pub fn run_leakage_scan(model: &LevelModel, scan: &LeakageScan) -> Result<Vec<LeakageRow>> {
    let pulses_base = scan.pulse;
    let points: Vec<(f64, f64)> = scan
        .amplitudes
        .iter()
        .flat_map(|&a| scan.frequencies.iter().map(move |&w| (w, a)))
        .collect();
    let results = map_indexed(scan.exec, points.len(), |i| -> Result<(f64, f64, f64)> {
        let (wm, frac) = points[i];
        let drive = FluxDrive::at_sweet_spot(frac, wm, scan.duration)?;
        let pulses = sequence_pulses(&scan.dd, &pulses_base, scan.duration)?;
        let with = evolve_sequence(model, &drive, &pulses, &scan.opts, InitialState::Plus)?;
        let free = evolve_sequence(model, &drive, &[], &scan.opts, InitialState::Plus)?;
        let kerr = KerrModel::from_device(&model.device, &drive, model.n_levels());
        Ok((
            leakage_metric(&with, scan.window)?,
            leakage_metric(&free, scan.window)?,
            analytic_leak_amplitude(&kerr, &drive),
        ))
    });
    let spin: Vec<Option<f64>> = if scan.spinlock {
        map_indexed(scan.exec, scan.frequencies.len(), |i| {
            spinlock_leakage(model, scan.frequencies[i], scan.duration, &scan.opts, scan.window)
        })
        .into_iter()
        .map(|r| r.map(Some))
        .collect::<Result<_>>()?
    } else {
        vec![None; scan.frequencies.len()]
    };
    let mut rows = Vec::with_capacity(points.len());
    for (i, r) in results.into_iter().enumerate() {
        let (sim, free, analytic) = r?;
        let (wm, frac) = points[i];
        rows.push(LeakageRow {
            omega_m: wm,
            phi_ac_frac: frac,
            leakage_sim: sim,
            leakage_free: free,
            leakage_analytic: analytic,
            leakage_spinlock: spin[i % scan.frequencies.len()],
        });
    }
    Ok(rows)
}
