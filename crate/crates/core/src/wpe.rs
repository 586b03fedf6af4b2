//! Mask-weighted WPE dereverberation.
//!
//! Per frequency, the late reverberation in each channel is predicted from
//! a delayed window of past multichannel frames; the prediction filter is
//! the solution of the inverse-power-weighted normal equations.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cxla::{csolve, diag_load, hermitize, CMatrix};
use crate::error::{Error, Result};
use crate::mask::MaskTensor;
use crate::stft::SpectroTensor;

/// Relative (per frequency) power floor.
pub const LAMBDA_REL_FLOOR: f64 = 1e-10;
/// Absolute power floor.
pub const LAMBDA_ABS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WpeConfig {
    pub enabled: bool,
    /// Filter taps per channel.
    pub taps: usize,
    /// Prediction delay in frames.
    pub delay: usize,
    pub iterations: usize,
    /// Diagonal loading of the weighted correlation matrix.
    pub eps_wpe: f64,
    /// Flooring factor of the WPE mask.
    pub xi_wpe: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            taps: 5,
            delay: 3,
            iterations: 1,
            eps_wpe: 1e-3,
            xi_wpe: 1e-6,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.delay == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "wpe taps {}, delay {} and iterations {} must all be >= 1",
                self.taps, self.delay, self.iterations
            )));
        }
        if !(self.eps_wpe >= 0.0) || !self.eps_wpe.is_finite() {
            return Err(Error::InvalidArgument(format!("eps_wpe {}", self.eps_wpe)));
        }
        if !(0.0..1.0).contains(&self.xi_wpe) {
            return Err(Error::InvalidArgument(format!("xi_wpe {}", self.xi_wpe)));
        }
        Ok(())
    }
}

/// Time-varying source power `λ[t, f]`, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl PowerMap {
    /// Builds a power map and applies the relative and absolute floors.
    pub fn floored(frames: usize, bins: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins || frames == 0 || bins == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} power values for ({frames}, {bins})",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("power values must be finite and >= 0".into()));
        }
        for f in 0..bins {
            let peak = (0..frames).map(|t| values[t * bins + f]).fold(0.0, f64::max);
            let floor = (LAMBDA_REL_FLOOR * peak).max(LAMBDA_ABS_FLOOR);
            for t in 0..frames {
                let v = &mut values[t * bins + f];
                *v = v.max(floor);
            }
        }
        Ok(Self {
            frames,
            bins,
            values,
        })
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::floored(frames, bins, vec![value; frames * bins])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }

    /// Channel-mean power of a spectrogram, floored.
    pub fn from_spectrum(spec: &SpectroTensor) -> Result<Self> {
        let (frames, bins, channels) = spec.shape();
        let values = (0..frames)
            .flat_map(|t| (0..bins).map(move |f| (t, f)))
            .map(|(t, f)| {
                spec.frame_bin(t, f).iter().map(|z| z.norm_sqr()).sum::<f64>() / channels as f64
            })
            .collect();
        Self::floored(frames, bins, values)
    }
}

/// Mask-normalized channel-mean power:
/// `λ[t,f] = (1/C) Σ_c M[t,f,c] / mean_τ(M[τ,f,c]) · |Y[t,f,c]|²`.
pub fn estimate_power(mixture: &SpectroTensor, mask: &MaskTensor) -> Result<PowerMap> {
    let (frames, bins, channels) = mixture.shape();
    mask.check_compatible(frames, bins, channels)?;
    let mut time_mean = vec![0.0; bins * channels];
    for t in 0..frames {
        for f in 0..bins {
            for c in 0..channels {
                time_mean[f * channels + c] += mask.value(t, f, c);
            }
        }
    }
    time_mean.iter_mut().for_each(|m| *m /= frames as f64);

    let mut values = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        for f in 0..bins {
            let mut acc = 0.0;
            for c in 0..channels {
                let mean = time_mean[f * channels + c];
                if mean > 0.0 {
                    acc += mask.value(t, f, c) / mean * mixture.get(t, f, c).norm_sqr();
                }
            }
            values.push(acc / channels as f64);
        }
    }
    PowerMap::floored(frames, bins, values)
}

/// Stacked delayed context `[Y[t−Δ]; …; Y[t−Δ−K+1]]`, zero before frame 0.
fn delayed_context(block: &[Complex64], t: usize, channels: usize, cfg: &WpeConfig, out: &mut [Complex64]) {
    for k in 0..cfg.taps {
        let lag = cfg.delay + k;
        let dst = &mut out[k * channels..(k + 1) * channels];
        if t >= lag {
            let src = (t - lag) * channels;
            dst.copy_from_slice(&block[src..src + channels]);
        } else {
            dst.fill(Complex64::new(0.0, 0.0));
        }
    }
}

/// Prediction filter `G` (`KC × C`) for one frequency bin, given the bin's
/// `T × C` frame-major block and its power trajectory.
pub fn prediction_filter(block: &[Complex64], power: &[f64], channels: usize, cfg: &WpeConfig) -> Result<CMatrix> {
    let frames = power.len();
    let dim = cfg.taps * channels;
    let mut corr = CMatrix::zeros(dim, dim);
    let mut cross = CMatrix::zeros(dim, channels);
    let mut ctx = vec![Complex64::new(0.0, 0.0); dim];
    for t in 0..frames {
        delayed_context(block, t, channels, cfg, &mut ctx);
        let inv = 1.0 / power[t];
        let current = &block[t * channels..(t + 1) * channels];
        for i in 0..dim {
            let a = ctx[i] * inv;
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in i..dim {
                corr[(i, j)] += a * ctx[j].conj();
            }
            for (c, y) in current.iter().enumerate() {
                cross[(i, c)] += a * y.conj();
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            corr[(i, j)] = corr[(j, i)].conj();
        }
    }
    if corr.trace().re == 0.0 {
        // nothing to predict from
        return Ok(CMatrix::zeros(dim, channels));
    }
    let loaded = diag_load(&hermitize(&corr)?, cfg.eps_wpe)?;
    csolve(&loaded, &cross)
}

fn apply_bin(block: &[Complex64], filter: &CMatrix, channels: usize, cfg: &WpeConfig) -> Vec<Complex64> {
    let frames = block.len() / channels;
    let dim = cfg.taps * channels;
    let mut ctx = vec![Complex64::new(0.0, 0.0); dim];
    let mut out = block.to_vec();
    for t in 0..frames {
        delayed_context(block, t, channels, cfg, &mut ctx);
        for c in 0..channels {
            let pred: Complex64 = (0..dim).map(|i| filter[(i, c)].conj() * ctx[i]).sum();
            out[t * channels + c] -= pred;
        }
    }
    out
}

fn check_frames(mixture: &SpectroTensor, lambda: &PowerMap, cfg: &WpeConfig) -> Result<()> {
    cfg.validate()?;
    let (frames, bins, _) = mixture.shape();
    if lambda.frames != frames || lambda.bins != bins {
        return Err(Error::ShapeMismatch(format!(
            "power map ({}, {}) vs spectrogram ({frames}, {bins})",
            lambda.frames, lambda.bins
        )));
    }
    let needed = cfg.delay + cfg.taps;
    if frames <= needed {
        return Err(Error::TooFewFrames { frames, needed });
    }
    Ok(())
}

fn bin_power(lambda: &PowerMap, f: usize) -> Vec<f64> {
    (0..lambda.frames).map(|t| lambda.get(t, f)).collect()
}

/// Per-bin prediction filters for a single pass with power `lambda`.
pub fn wpe_filters(mixture: &SpectroTensor, lambda: &PowerMap, cfg: &WpeConfig) -> Result<Vec<CMatrix>> {
    check_frames(mixture, lambda, cfg)?;
    let channels = mixture.channels();
    (0..mixture.bins())
        .into_par_iter()
        .map(|f| {
            prediction_filter(&mixture.bin_slice(f), &bin_power(lambda, f), channels, cfg)
                .map_err(|e| e.at_bin(f))
        })
        .collect()
}

/// Dereverberates `mixture` given the target's power trajectory.
///
/// With more than one iteration the power is re-estimated from the current
/// output between passes; the filter is always applied to the observation.
pub fn wpe_filter(mixture: &SpectroTensor, lambda: &PowerMap, cfg: &WpeConfig) -> Result<SpectroTensor> {
    check_frames(mixture, lambda, cfg)?;
    let channels = mixture.channels();
    let blocks: Vec<Vec<Complex64>> = (0..mixture.bins()).map(|f| mixture.bin_slice(f)).collect();
    let mut power = lambda.clone();
    let mut output = mixture.clone();
    for iteration in 0..cfg.iterations {
        if iteration > 0 {
            power = PowerMap::from_spectrum(&output)?;
        }
        let processed = blocks
            .par_iter()
            .enumerate()
            .map(|(f, block)| {
                let g = prediction_filter(block, &bin_power(&power, f), channels, cfg)
                    .map_err(|e| e.at_bin(f))?;
                Ok(apply_bin(block, &g, channels, cfg))
            })
            .collect::<Result<Vec<_>>>()?;
        for (f, block) in processed.iter().enumerate() {
            output.set_bin_slice(f, block);
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{MaskRole, MaskShape};
    use crate::stft::StftConfig;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spectro_1bin(values: &[Complex64], channels: usize) -> SpectroTensor {
        // a 2-point transform has two bins; bin 1 is kept at zero
        let cfg = StftConfig {
            window_len: 2,
            shift: 1,
            transform_len: 2,
        };
        let frames = values.len() / channels;
        let mut data = Vec::new();
        for t in 0..frames {
            data.extend_from_slice(&values[t * channels..(t + 1) * channels]);
            data.extend(std::iter::repeat_n(c(0.0, 0.0), channels));
        }
        SpectroTensor::from_data(frames, 2, channels, data, cfg, 16_000).unwrap()
    }

    #[test]
    fn unit_mask_gives_channel_mean_power() {
        let y = spectro_1bin(&[c(1.0, 1.0), c(2.0, 0.0), c(0.0, 3.0), c(1.0, 0.0)], 2);
        let ones = MaskTensor::constant(MaskShape::Vad { frames: 2 }, 1.0, MaskRole::Wpe, 0).unwrap();
        let lambda = estimate_power(&y, &ones).unwrap();
        assert!((lambda.get(0, 0) - 3.0).abs() < 1e-15);
        assert!((lambda.get(1, 0) - 5.0).abs() < 1e-15);

        let k = MaskTensor::constant(MaskShape::Vad { frames: 2 }, 0.3, MaskRole::Wpe, 0).unwrap();
        let scaled = estimate_power(&y, &k).unwrap();
        for (a, b) in scaled.values().iter().zip(lambda.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn two_frame_hand_example() {
        let xi = 1e-6;
        let y = spectro_1bin(&[c(2.0, 0.0), c(1.0, 0.0)], 1);
        let m = MaskTensor::new(
            MaskShape::PerChannel {
                frames: 2,
                bins: 2,
                channels: 1,
            },
            vec![1.0, 1.0, xi, 1.0],
            MaskRole::Wpe,
            0,
        )
        .unwrap();
        let lambda = estimate_power(&y, &m).unwrap();
        let mean = (1.0 + xi) / 2.0;
        assert!((lambda.get(0, 0) - 4.0 / mean).abs() < 1e-12);
        assert!((lambda.get(0, 0) - 8.0).abs() < 1e-4);
        assert!((lambda.get(1, 0) - xi / mean).abs() < 1e-18);
    }

    #[test]
    fn floors_zero_power() {
        let p = PowerMap::floored(2, 1, vec![0.0, 4.0]).unwrap();
        assert_eq!(p.get(0, 0), 4e-10);
        let silent = PowerMap::floored(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(silent.get(1, 0), LAMBDA_ABS_FLOOR);
    }

    #[test]
    fn filter_shape_is_kc_by_c() {
        let frames = 40;
        let channels = 2;
        let values: Vec<Complex64> = (0..frames * channels)
            .map(|i| c(((i * 7) % 11) as f64 - 5.0, ((i * 3) % 5) as f64))
            .collect();
        let y = spectro_1bin(&values, channels);
        let lambda = PowerMap::constant(frames, 2, 1.0).unwrap();
        let filters = wpe_filters(&y, &lambda, &WpeConfig::default()).unwrap();
        assert_eq!(filters[0].rows(), 10);
        assert_eq!(filters[0].cols(), 2);
        // silent bin 1 gets the zero filter
        assert_eq!(filters[1], CMatrix::zeros(10, 2));
    }

    #[test]
    fn too_few_frames() {
        let y = spectro_1bin(&[c(1.0, 0.0); 8], 1);
        let lambda = PowerMap::constant(8, 2, 1.0).unwrap();
        assert!(matches!(
            wpe_filter(&y, &lambda, &WpeConfig::default()),
            Err(Error::TooFewFrames { frames: 8, needed: 8 })
        ));
    }
}
