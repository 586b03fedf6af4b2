mod common;

use common::*;
use convbeam::cli::source_seed;
use convbeam::cxla::CMatrix;
use convbeam::mask::{MaskRole, MaskShape, MaskTensor};
use convbeam::scene::{render, speechlike_source, SceneSpec};
use convbeam::stft::{stft, SpectroTensor, StftConfig};
use convbeam::wpe::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

/// Two-bin geometry: bin 0 carries the test signal, bin 1 stays zero.
fn tiny(frames: usize, channels: usize, values: &[Complex64]) -> SpectroTensor {
    let cfg = StftConfig {
        window_len: 2,
        shift: 1,
        transform_len: 2,
    };
    let mut data = Vec::with_capacity(frames * 2 * channels);
    for t in 0..frames {
        data.extend_from_slice(&values[t * channels..(t + 1) * channels]);
        data.extend(std::iter::repeat_n(c(0.0, 0.0), channels));
    }
    SpectroTensor::from_data(frames, 2, channels, data, cfg, 16_000).unwrap()
}

/// Source with a random per-frame power envelope.
fn source(r: &mut impl Rng, frames: usize) -> (Vec<Complex64>, Vec<f64>) {
    let power: Vec<f64> = (0..frames).map(|_| 10f64.powf(r.random_range(-2.0..1.0))).collect();
    let s = power.iter().map(|p| cgauss(r) * p.sqrt()).collect();
    (s, power)
}

#[test]
fn filter_matches_brute_force_least_squares() {
    let mut r = rng(31);
    for (channels, taps, delay) in [(1, 2, 1), (2, 3, 2), (3, 2, 3)] {
        let frames = 120;
        let block: Vec<Complex64> = (0..frames * channels).map(|_| cgauss(&mut r)).collect();
        let power: Vec<f64> = (0..frames).map(|_| r.random_range(0.1..5.0)).collect();
        let cfg = WpeConfig {
            taps,
            delay,
            eps_wpe: 0.0,
            ..WpeConfig::default()
        };
        let g = prediction_filter(&block, &power, channels, &cfg).unwrap();

        let dim = taps * channels;
        let a = CMatrix::from_fn(frames, dim, |t, i| {
            let (k, ch) = (i / channels, i % channels);
            let lag = delay + k;
            let x = if t >= lag { block[(t - lag) * channels + ch] } else { c(0.0, 0.0) };
            x / power[t].sqrt()
        });
        let b = CMatrix::from_fn(frames, channels, |t, ch| block[t * channels + ch] / power[t].sqrt());
        // the filter is applied as Gᴴ x, so the regression coefficients are conj(G)
        let h = least_squares(&a, &b);
        let oracle = CMatrix::from_fn(dim, channels, |i, j| h[(i, j)].conj());
        let rel = max_abs_diff(&g, &oracle) / oracle.max_abs();
        assert!(rel <= 1e-8, "C={channels} K={taps} D={delay}: {rel:e}");
    }
}

#[test]
fn single_echo_is_removed() {
    let mut r = rng(32);
    let frames = 400;
    let delay = 3;
    for channels in [1, 2] {
        let (s, power) = source(&mut r, frames);
        let gains: Vec<Complex64> = (0..channels).map(|ch| c(1.0, 0.3 * ch as f64)).collect();
        // single-pole echo: y[t] = s[t] + 0.9 y[t - delay - 1]
        let mut y = vec![c(0.0, 0.0); frames * channels];
        for t in 0..frames {
            for ch in 0..channels {
                let e = if t > delay { y[(t - delay - 1) * channels + ch] * 0.9 } else { c(0.0, 0.0) };
                y[t * channels + ch] = s[t] * gains[ch] + e;
            }
        }
        let spec = tiny(frames, channels, &y);
        let lambda = PowerMap::floored(frames, 2, power.iter().flat_map(|&p| [p, 0.0]).collect()).unwrap();
        let cfg = WpeConfig {
            taps: 2,
            delay,
            ..WpeConfig::default()
        };
        let out = wpe_filter(&spec, &lambda, &cfg).unwrap();
        let mut before = 0.0;
        let mut after = 0.0;
        for t in 0..frames {
            for ch in 0..channels {
                let direct = s[t] * gains[ch];
                before += (y[t * channels + ch] - direct).norm_sqr();
                after += (out.get(t, 0, ch) - direct).norm_sqr();
            }
        }
        let reduction = 10.0 * (before / after).log10();
        assert!(reduction >= 10.0, "C={channels}: {reduction:.1} dB");
    }
}

#[test]
fn anechoic_scene_passes_nearly_unchanged() {
    let cfg = StftConfig::default();
    for seed in 0..3 {
        let spec = SceneSpec::standard(1, 2, 0.0, f64::INFINITY, seed);
        let dry = [speechlike_source(source_seed(seed, 0), 3.0, 16_000)];
        let truth = render(&spec, &dry, &cfg).unwrap();
        let y = stft(&truth.mixture, &cfg).unwrap();
        let lambda = PowerMap::from_spectrum(&stft(&truth.early[0], &cfg).unwrap()).unwrap();
        let out = wpe_filter(&y, &lambda, &WpeConfig::default()).unwrap();
        let diff: f64 = out.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let ratio = (diff / y.energy()).sqrt();
        assert!(ratio <= 0.1, "seed {seed}: {ratio}");
    }
}

#[test]
#[ignore = "does not hold at K = 5 on simulated rooms: frame-domain prediction also removes early energy"]
fn late_energy_does_not_grow_in_reverberant_scenes() {
    let cfg = StftConfig::default();
    for (t60, seed) in [(0.3, 20), (0.6, 21), (0.9, 22)] {
        let spec = SceneSpec::standard(1, 2, t60, f64::INFINITY, seed);
        let dry = [speechlike_source(source_seed(seed, 0), 3.0, 16_000)];
        let truth = render(&spec, &dry, &cfg).unwrap();
        let y = stft(&truth.mixture, &cfg).unwrap();
        let early = stft(&truth.early[0], &cfg).unwrap();
        let lambda = PowerMap::from_spectrum(&early).unwrap();
        let out = wpe_filter(&y, &lambda, &WpeConfig::default()).unwrap();
        let residual = |x: &SpectroTensor| -> f64 {
            x.as_slice().iter().zip(early.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum()
        };
        let (before, after) = (residual(&y), residual(&out));
        assert!(after <= before, "T60 {t60}: {after:e} > {before:e}");
    }
}

#[test]
fn constant_mask_scale_cancels_in_power() {
    let mut r = rng(33);
    let frames = 6;
    let values: Vec<Complex64> = (0..frames * 2).map(|_| cgauss(&mut r)).collect();
    let y = tiny(frames, 2, &values);
    let shape = MaskShape::PerChannel { frames, bins: 2, channels: 2 };
    let ones = MaskTensor::constant(shape, 1.0, MaskRole::Wpe, 0).unwrap();
    let k = MaskTensor::constant(shape, 0.37, MaskRole::Wpe, 0).unwrap();
    let a = estimate_power(&y, &ones).unwrap();
    let b = estimate_power(&y, &k).unwrap();
    for t in 0..frames {
        let direct = (values[2 * t].norm_sqr() + values[2 * t + 1].norm_sqr()) / 2.0;
        assert!((a.get(t, 0) - direct).abs() < 1e-14);
        assert!((a.get(t, 0) - b.get(t, 0)).abs() < 1e-14);
    }
}

#[test]
fn floors_keep_power_positive() {
    let y = tiny(10, 1, &[c(0.0, 0.0); 10]);
    let zero = MaskTensor::constant(MaskShape::Vad { frames: 10 }, 0.0, MaskRole::Wpe, 0).unwrap();
    let lambda = estimate_power(&y, &zero).unwrap();
    assert!(lambda.values().iter().all(|&v| v == LAMBDA_ABS_FLOOR));
    let out = wpe_filter(&y, &lambda, &WpeConfig::default()).unwrap();
    assert!(out.is_finite());
    assert_eq!(out.energy(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_is_equivariant_to_input_scale(seed in any::<u64>(), re in -3.0..3.0f64, im in -3.0..3.0f64, p in 0.01..100.0f64) {
        let alpha = c(re, im);
        prop_assume!(alpha.norm() > 0.05);
        let mut r = rng(seed);
        let frames = 40;
        let channels = 2;
        let values: Vec<Complex64> = (0..frames * channels).map(|_| cgauss(&mut r)).collect();
        let power: Vec<f64> = (0..frames).flat_map(|_| [r.random_range(0.1..2.0), 1.0]).collect();
        let cfg = WpeConfig { taps: 2, delay: 1, ..WpeConfig::default() };

        let base = wpe_filter(&tiny(frames, channels, &values), &PowerMap::floored(frames, 2, power.clone()).unwrap(), &cfg).unwrap();
        let scaled_values: Vec<Complex64> = values.iter().map(|v| v * alpha).collect();
        let scaled_power: Vec<f64> = power.iter().map(|v| v * alpha.norm_sqr() * p).collect();
        let scaled = wpe_filter(&tiny(frames, channels, &scaled_values), &PowerMap::floored(frames, 2, scaled_power).unwrap(), &cfg).unwrap();
        for (a, b) in base.as_slice().iter().zip(scaled.as_slice()) {
            prop_assert!((a * alpha - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
    }
}
