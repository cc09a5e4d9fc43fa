use paramspec::hz_to_rad;
use paramspec::noisegen::*;
use paramspec::par::derive_seed;
use proptest::prelude::*;

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn same_seed_same_trace() {
    let spec = NoiseSpec::two_peak_reference();
    let a = sample_trace(&spec, 1e-10, 4096, 42).unwrap();
    let b = sample_trace(&spec, 1e-10, 4096, 42).unwrap();
    let c = sample_trace(&spec, 1e-10, 4096, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
}

#[test]
fn composite_is_the_sum_of_its_parts() {
    let parts = vec![
        NoiseSpec::pink(1e-9),
        NoiseSpec::Ar1 {
            t_corr: 25e-9,
            sigma: 1e-4,
            center: hz_to_rad(300e6),
        },
    ];
    let spec = NoiseSpec::Composite {
        components: parts.clone(),
    };
    let whole = sample_trace(&spec, 1e-10, 2048, 5).unwrap().samples;
    let mut sum = vec![0.0; 2048];
    for (i, c) in parts.iter().enumerate() {
        add_trace(c, 1e-10, derive_seed(5, i as u64), &mut sum);
    }
    assert_eq!(whole, sum);
    let w = hz_to_rad(310e6);
    let total = analytic_psd(&spec, w).unwrap();
    let split: f64 = parts.iter().map(|c| analytic_psd(c, w).unwrap()).sum();
    assert!((total - split).abs() <= 1e-15 * total);
}

#[test]
fn ar1_sample_variance() {
    let sigma = 3e-4;
    for center in [0.0, hz_to_rad(500e6)] {
        let spec = NoiseSpec::Ar1 {
            t_corr: 25e-9,
            sigma,
            center,
        };
        let mut acc = 0.0;
        let n_traces = 64;
        for seed in 0..n_traces {
            acc += mean_square(&sample_trace(&spec, 1e-10, 1 << 14, seed).unwrap().samples);
        }
        let v = acc / n_traces as f64;
        assert!((v / (sigma * sigma) - 1.0).abs() < 0.03, "variance ratio {}", v / (sigma * sigma));
    }
}

#[test]
fn pink_sample_variance() {
    let spec = NoiseSpec::pink(1e-9);
    let expect = spec.variance().unwrap();
    let n_traces = 200;
    let mut acc = 0.0;
    for seed in 0..n_traces {
        acc += mean_square(&sample_trace(&spec, 2e-11, 1 << 14, seed).unwrap().samples);
    }
    let v = acc / n_traces as f64;
    assert!((v / expect - 1.0).abs() < 0.1, "variance ratio {}", v / expect);
}

#[test]
fn white_sample_variance() {
    let spec = NoiseSpec::White { level: 2e-18 };
    let dt = 1e-10;
    let x = sample_trace(&spec, dt, 1 << 16, 3).unwrap().samples;
    let v = mean_square(&x);
    assert!((v / (2e-18 / dt) - 1.0).abs() < 0.02);
}

#[test]
fn zero_spec_is_silent() {
    let x = sample_trace(&NoiseSpec::zero(), 1e-9, 128, 0).unwrap();
    assert!(x.samples.iter().all(|&v| v == 0.0));
}

#[test]
fn serde_round_trip() {
    let spec = NoiseSpec::two_peak_reference();
    let text = serde_json::to_string(&spec).unwrap();
    let back: NoiseSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(spec, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psd_is_non_negative(w in 1e4f64..1e11, a in 0.0f64..1e-6, s in 0.0f64..1e-3) {
        let spec = NoiseSpec::Composite {
            components: vec![
                NoiseSpec::pink(a),
                NoiseSpec::Ar1 { t_corr: 25e-9, sigma: s, center: hz_to_rad(5e8) },
            ],
        };
        prop_assert!(analytic_psd(&spec, w).unwrap() >= 0.0);
    }

    #[test]
    fn discrete_ar1_approaches_lorentzian(f in 0.0f64..1e9, t_corr in 5e-9f64..1e-7) {
        let spec = NoiseSpec::Ar1 { t_corr, sigma: 1e-3, center: 0.0 };
        let w = hz_to_rad(f);
        let exact = analytic_psd(&spec, w).unwrap();
        let sampled = psd_with_step(&spec, w, Some(1e-12)).unwrap();
        prop_assert!((sampled / exact - 1.0).abs() < 1e-3);
    }

    #[test]
    fn pink_scales_as_one_over_f(w in 1e5f64..1e9, k in 1.1f64..10.0) {
        let spec = NoiseSpec::pink(1e-9);
        let a = analytic_psd(&spec, w).unwrap();
        let b = analytic_psd(&spec, k * w).unwrap();
        prop_assert!((a / b - k).abs() < 1e-12 * k);
    }

    #[test]
    fn relative_ac_variance(level in 1e-6f64..1e-2, frac in 0.05f64..1.0) {
        let phi = frac * paramspec::PHI_MAX;
        let spec = relative_ac_noise(level, phi).unwrap();
        let v = spec.variance().unwrap();
        prop_assert!((v.sqrt() / phi / level - 1.0).abs() < 1e-12);
    }
}
