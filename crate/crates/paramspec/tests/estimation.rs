use paramspec::device::TransmonParams;
use paramspec::estimation::*;
use paramspec::hz_to_rad;
use proptest::prelude::*;

fn peak(eps_hz: f64) -> SpectralPeakModel {
    SpectralPeakModel {
        a_omega: 1e13,
        sigma_omega: hz_to_rad(10e6),
        omega_c: hz_to_rad(500e6),
        epsilon: hz_to_rad(eps_hz),
    }
}

#[test]
fn optimal_time_sits_near_1_6_over_gamma() {
    for gamma in [1e3, 3e5, 1e7] {
        let opt = optimal_time(gamma, 0.0).unwrap();
        assert!((opt.numeric * gamma - 1.5936).abs() < 1e-3);
        assert!((opt.heuristic * gamma - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gaussian_decay_shortens_the_optimum() {
    let pure = optimal_time(1e5, 0.0).unwrap().numeric;
    let mixed = optimal_time(1e5, 2e5).unwrap().numeric;
    assert!(mixed < pure);
    assert!(optimal_time(0.0, 0.0).is_err());
}

#[test]
fn center_information_peaks_one_width_away() {
    let p = peak(0.0);
    let sg = 1e3;
    let top = fisher_center_max(&p, sg);
    let at_sigma = fisher_center(&p, sg, p.sigma_omega).unwrap();
    assert!((at_sigma / top - 1.0).abs() < 1e-12);
    for k in [0.0, 0.3, 0.9, 1.1, 2.0, 4.0] {
        assert!(fisher_center(&p, sg, k * p.sigma_omega).unwrap() <= top * (1.0 + 1e-12));
    }
}

#[test]
fn coincident_lines_have_no_separation_bound() {
    let b = MeasurementBudget::new(1e-3, 1e-6).unwrap();
    assert!(resolution_bound(&peak(0.0), &b, 1e-5).is_err());
}

#[test]
fn budget_validation() {
    assert!(MeasurementBudget::new(1e-6, 1e-3).is_err());
    let mut b = MeasurementBudget::new(1e-3, 1e-6).unwrap();
    b.c_readout = 1.5;
    assert!(b.validate().is_err());
}

#[test]
fn spinlock_slope_factor_near_three_halves() {
    let p = TransmonParams::reference();
    let b = MeasurementBudget::new(1e-3, 1e-6).unwrap();
    let s = sensitivity_spinlock(&p, &b, 10e-6).unwrap();
    assert!((s.slope_factor - 1.554).abs() < 5e-3, "{}", s.slope_factor);
    let ratio = coherent_ratio(&p, 0.6 * paramspec::PHI_MAX);
    assert!((ratio - 0.6 * paramspec::PHI_MAX / s.slope_factor).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fisher_gamma_positive_and_bounded(g in 1e2f64..1e8, x in 1e-3f64..20.0) {
        let t = x / g;
        let i = fisher_gamma(g, 0.0, t);
        prop_assert!(i > 0.0 && i <= t / g * (1.0 + 1e-12));
    }

    #[test]
    fn separation_is_a_quarter_of_half_spacing_information(
        eps in 1e5f64..5e7, dw in -5e7f64..5e7, sg in 1e1f64..1e5,
    ) {
        let p = peak(eps);
        let half = SpectralPeakModel { epsilon: 0.5 * p.epsilon, ..p };
        let dw = hz_to_rad(dw);
        let a = fisher_separation(&p, sg, dw).unwrap();
        let b = 0.25 * fisher_epsilon(&half, sg, dw).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.abs() + 1e-300);
    }

    #[test]
    fn separation_and_center_bounds_are_linked(
        eps in 1e5f64..5e7, t_phi in 1e-7f64..1e-4, t_meas in 1e-4f64..1.0,
    ) {
        let p = peak(eps);
        let b = MeasurementBudget::new(t_meas, 1e-6).unwrap();
        let r = resolution_bound(&p, &b, t_phi).unwrap();
        let lhs = r.delta_epsilon * t_phi * p.epsilon * 1f64.exp().sqrt();
        prop_assert!((lhs / r.delta_center - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precision_scales_with_root_budget(g in 1e3f64..1e7, k in 2.0f64..100.0) {
        let t = optimal_time(g, 0.0).unwrap().numeric;
        let short = MeasurementBudget::new(1e-2, 1e-6).unwrap();
        let long = MeasurementBudget::new(k * 1e-2, 1e-6).unwrap();
        let a = sigma_gamma(&short, g, 0.0, t).unwrap();
        let b = sigma_gamma(&long, g, 0.0, t).unwrap();
        prop_assert!((a / b - k.sqrt()).abs() < 1e-9 * k.sqrt());
    }

    #[test]
    fn optimum_scales_inversely_with_rate(g in 1e2f64..1e8, a_frac in 0.0f64..3.0, k in 0.1f64..10.0) {
        let o1 = optimal_time(g, a_frac * g).unwrap().numeric;
        let o2 = optimal_time(k * g, k * a_frac * g).unwrap().numeric;
        prop_assert!((o1 / (k * o2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn golden_section_finds_parabola_vertex(c in -5.0f64..5.0) {
        let x = golden_max(|x| -(x - c).powi(2), -10.0, 10.0, 1e-12);
        prop_assert!((x - c).abs() < 1e-6);
    }
}
