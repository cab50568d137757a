use proptest::prelude::*;
use pulsenoise::io::{format_trace, parse_trace, TraceFormat};
use pulsenoise::{
    estimate_psd, fit_noise_scaling, integrate_boxcar, integrate_dcs, pulse_variance, sample_pulse_train,
    synthesize_trace, CoherentPulseTrainSpec, DetectorChainConfig, GatingWindow, PulseChargeSample, Trace,
    WindowKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const US: f64 = 1e-6;

fn white_trace(seed: u64, len: usize, dt: f64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    Trace::new(samples, dt, 0.0).unwrap()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn chain_is_linear(
        scale in -50.0f64..50.0,
        residual in 0.0f64..0.2,
        seed in any::<u64>(),
    ) {
        let cfg = DetectorChainConfig::version_one().with_enc(0.0).with_residual(residual);
        let spec = CoherentPulseTrainSpec::balanced(1e5, 1.0 * US, 10.0 * US, 8).with_imbalance(0.3);
        let pulses = sample_pulse_train(&spec, seed).unwrap();
        let scaled: Vec<_> = pulses
            .iter()
            .map(|p| PulseChargeSample {
                differential_electrons: scale * p.differential_electrons,
                total_electrons: scale.abs() * p.total_electrons,
                ..*p
            })
            .collect();
        let a = synthesize_trace(&pulses, &spec, &cfg, seed).unwrap();
        let b = synthesize_trace(&scaled, &spec, &cfg, seed).unwrap();
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            prop_assert!((scale * x - y).abs() <= 1e-9 * peak * scale.abs().max(1.0));
        }
    }

    #[test]
    fn psd_satisfies_parseval(seed in any::<u64>(), log_len in 6u32..11, segments in 2usize..20) {
        let l = 1usize << log_len;
        let t = white_trace(seed, l * segments, 1e-8);
        let psd = estimate_psd(&t, l).unwrap();
        let rel = psd.total_power() / variance(&t.samples) - 1.0;
        prop_assert!(rel.abs() < 0.02, "relative Parseval error {}", rel);
    }

    #[test]
    fn dcs_cancels_offsets(seed in any::<u64>(), offset in -1e4f64..1e4, sigma_samples in 20usize..200) {
        let t = white_trace(seed, 20_000, 1e-8);
        let shifted = Trace::new(t.samples.iter().map(|v| v + offset).collect(), t.sample_interval, 0.0).unwrap();
        let sigma = sigma_samples as f64 * 1e-8;
        let w = GatingWindow::starting_at(WindowKind::Dcs, sigma, 2.0 * sigma).unwrap();
        let period = 5.0 * sigma;
        let count = 20_000 / (5 * sigma_samples) - 1;
        let a = integrate_dcs(&t, &w, period, count).unwrap();
        let b = integrate_dcs(&shifted, &w, period, count).unwrap();
        for (x, y) in a.areas.iter().zip(&b.areas) {
            prop_assert!((x - y).abs() <= 1e-10 * offset.abs().max(1.0));
        }
        let ba = integrate_boxcar(&t, &w, period, count).unwrap();
        let bb = integrate_boxcar(&shifted, &w, period, count).unwrap();
        for (x, y) in ba.areas.iter().zip(&bb.areas) {
            prop_assert!((y - x - offset).abs() <= 1e-9 * offset.abs().max(1.0));
        }
    }

    #[test]
    fn dcs_suppresses_slow_sinusoids(
        periods_per_sigma in 30.0f64..300.0,
        phase in 0.0f64..std::f64::consts::TAU,
        spacing in 1.1f64..3.7,
    ) {
        let dt = 1e-8;
        let sigma = 100.0 * dt;
        let omega = std::f64::consts::TAU / (periods_per_sigma * sigma);
        let len = 400_000;
        let samples = (0..len).map(|i| (omega * i as f64 * dt + phase).sin()).collect();
        let t = Trace::new(samples, dt, 0.0).unwrap();
        // pulse spacing incommensurate with the sinusoid samples every phase
        let period = spacing * 2.0 * sigma + 7.0 * dt;
        let count = ((len as f64 * dt - 4.0 * sigma) / period) as usize;
        let w = GatingWindow::starting_at(WindowKind::Dcs, sigma, sigma).unwrap();
        let d = pulse_variance(&integrate_dcs(&t, &w, period, count).unwrap()).unwrap();
        let b = pulse_variance(&integrate_boxcar(&t, &w, period, count).unwrap()).unwrap();
        prop_assert!(b / d >= 100.0, "suppression {}", b / d);
    }

    #[test]
    fn fit_recovers_exact_decomposition(
        c in 1.0f64..1e6,
        a in 0.1f64..10.0,
        b in 0.0f64..1e-6,
    ) {
        let n = [0.0, 1e3, 1e4, 1e5, 1e6];
        let v: Vec<f64> = n.iter().map(|x| c + a * x + b * x * x).collect();
        let r = fit_noise_scaling(&n, &v, 1000, 1.0).unwrap();
        prop_assert!((r.electronic_variance / c - 1.0).abs() < 1e-6);
        prop_assert!((r.linear_coeff / a - 1.0).abs() < 1e-6);
        prop_assert!((r.quadratic_coeff - b).abs() < 1e-9 * b.max(1e-6));
        prop_assert!((r.n_3db - c / a).abs() < 1e-6 * c / a);
    }

    #[test]
    fn trace_text_round_trips(seed in any::<u64>(), len in 1usize..500, origin in -1e-3f64..1e-3) {
        let mut t = white_trace(seed, len, 2.5e-9);
        t.origin_time = origin;
        let back = parse_trace(&format_trace(&t), TraceFormat::TwoColumn).unwrap();
        prop_assert_eq!(&back.samples, &t.samples);
        prop_assert!((back.sample_interval / t.sample_interval - 1.0).abs() < 1e-12);
        prop_assert!((back.origin_time - t.origin_time).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), photons in 0.0f64..1e7) {
        let cfg = DetectorChainConfig::version_one();
        let spec = CoherentPulseTrainSpec::balanced(photons, 1.0 * US, 10.0 * US, 5);
        let a = synthesize_trace(&sample_pulse_train(&spec, seed).unwrap(), &spec, &cfg, seed).unwrap();
        let b = synthesize_trace(&sample_pulse_train(&spec, seed).unwrap(), &spec, &cfg, seed).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn window_spectrum_matches_sampled_window_energy() {
    // time-domain energy of a finely sampled window equals the analytic
    // spectrum integral divided by pi
    for kind in [WindowKind::Boxcar, WindowKind::Dcs] {
        let w = GatingWindow::new(kind, 1.0, 0.0).unwrap();
        let n = 200_000;
        let dt = 4.0 / n as f64;
        let energy: f64 = (0..n).map(|i| w.value(-2.0 + (i as f64 + 0.5) * dt).powi(2)).sum::<f64>() * dt;
        assert!((energy * std::f64::consts::PI / w.power_spectrum_integral() - 1.0).abs() < 1e-4);
    }
}
