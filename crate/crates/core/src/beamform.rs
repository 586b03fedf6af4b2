//! Mask-weighted spatial covariances and MVDR / wMPDR beamformers.
//!
//! Both variants share the same filter formulas; they differ only in the
//! weights used for the interference covariance `Φ_N`: the noise mask for
//! MVDR, the inverse target power for wMPDR.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cxla::{csolve, csolve_vec, diag_load, hermitize, power_iter_maxeig, CMatrix, CVector};
use crate::error::{Error, Result};
use crate::mask::{MaskShape, MaskTensor};
use crate::stft::SpectroTensor;
use crate::wpe::PowerMap;

/// Below this total weight a covariance is considered undefined.
pub const MIN_WEIGHT_SUM: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mvdr,
    Wmpdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// Trace-normalized `Φ_N⁻¹ Φ_S u`.
    WithoutSv,
    /// Distortionless response to an estimated steering vector.
    WithSv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefMode {
    FixedOnehot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamformerConfig {
    pub variant: Variant,
    pub formula: Formula,
    /// 1-based reference channel.
    pub ref_channel: usize,
    pub ref_mode: RefMode,
    pub eps_bf: f64,
    pub xi_bf: f64,
    pub sv_power_iters: usize,
}

impl Default for BeamformerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mvdr,
            formula: Formula::WithSv,
            ref_channel: 1,
            ref_mode: RefMode::FixedOnehot,
            eps_bf: 1e-8,
            xi_bf: 1e-2,
            sv_power_iters: 2,
        }
    }
}

impl BeamformerConfig {
    pub fn validate(&self, channels: Option<usize>) -> Result<()> {
        if self.ref_channel == 0 || channels.is_some_and(|c| self.ref_channel > c) {
            return Err(Error::InvalidArgument(format!(
                "reference channel {} outside 1..={}",
                self.ref_channel,
                channels.map_or("C".to_string(), |c| c.to_string())
            )));
        }
        if self.sv_power_iters == 0 {
            return Err(Error::InvalidArgument("sv_power_iters must be >= 1".into()));
        }
        if !(self.eps_bf >= 0.0) || !self.eps_bf.is_finite() {
            return Err(Error::InvalidArgument(format!("eps_bf {}", self.eps_bf)));
        }
        if !(0.0..1.0).contains(&self.xi_bf) {
            return Err(Error::InvalidArgument(format!("xi_bf {}", self.xi_bf)));
        }
        Ok(())
    }

    /// 0-based reference channel index.
    pub fn ref_index(&self) -> usize {
        self.ref_channel - 1
    }
}

/// Nonnegative per-(t, f) covariance weights, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TfWeights {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl TfWeights {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for ({frames}, {bins})",
                values.len()
            )));
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
        }
        Ok(Self {
            frames,
            bins,
            values,
        })
    }

    /// Weights from a channel-averaged or per-frame mask.
    pub fn from_mask(mask: &MaskTensor, bins: usize) -> Result<Self> {
        let frames = mask.frames();
        match mask.shape() {
            MaskShape::PerChannel { .. } => Err(Error::ShapeMismatch(
                "covariance weights need a channel-averaged mask".into(),
            )),
            MaskShape::ChannelAveraged { bins: b, .. } if b != bins => Err(Error::ShapeMismatch(
                format!("mask has {b} bins, spectrogram {bins}"),
            )),
            _ => {
                let values = (0..frames)
                    .flat_map(|t| (0..bins).map(move |f| (t, f)))
                    .map(|(t, f)| mask.value(t, f, 0))
                    .collect();
                Self::new(frames, bins, values)
            }
        }
    }

    /// `1 / λ`, the wMPDR weighting.
    pub fn inverse_power(lambda: &PowerMap) -> Self {
        Self {
            frames: lambda.frames(),
            bins: lambda.bins(),
            values: lambda.values().iter().map(|l| 1.0 / l).collect(),
        }
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Speech,
    Interference,
    Noise,
}

/// One `C × C` Hermitian matrix per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianStack {
    pub kind: CovarianceKind,
    pub matrices: Vec<CMatrix>,
}

impl HermitianStack {
    pub fn bins(&self) -> usize {
        self.matrices.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<CVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVectors {
    pub vectors: Vec<CVector>,
}

/// A bin whose PSD statistics are identically zero.
fn is_silent(phi: &CMatrix) -> bool {
    phi.trace().re == 0.0 && phi.max_abs() == 0.0
}

/// Weighted spatial covariance per frequency:
/// `Φ_f = Σ_t w[t,f] Ŷ Ŷᴴ / Σ_t w[t,f]`.
pub fn covariance(spec: &SpectroTensor, weights: &TfWeights, kind: CovarianceKind) -> Result<HermitianStack> {
    let (frames, bins, channels) = spec.shape();
    if weights.frames != frames || weights.bins != bins {
        return Err(Error::ShapeMismatch(format!(
            "weights ({}, {}) vs spectrogram ({frames}, {bins})",
            weights.frames, weights.bins
        )));
    }
    let matrices = (0..bins)
        .into_par_iter()
        .map(|f| {
            let mut acc = CMatrix::zeros(channels, channels);
            let mut total = 0.0;
            for t in 0..frames {
                let w = weights.get(t, f);
                total += w;
                if w == 0.0 {
                    continue;
                }
                let y = spec.frame_bin(t, f);
                for i in 0..channels {
                    let a = y[i] * w;
                    for j in i..channels {
                        acc[(i, j)] += a * y[j].conj();
                    }
                }
            }
            if !(total >= MIN_WEIGHT_SUM) {
                return Err(Error::DegenerateWeights { sum: total }.at_bin(f));
            }
            for i in 0..channels {
                for j in 0..i {
                    acc[(i, j)] = acc[(j, i)].conj();
                }
            }
            hermitize(&acc.scale(Complex64::new(1.0 / total, 0.0))).map_err(|e| e.at_bin(f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HermitianStack { kind, matrices })
}

/// Interference weights for the chosen variant.
pub fn interference_weights(variant: Variant, noise_mask: &TfWeights, lambda: &PowerMap) -> TfWeights {
    match variant {
        Variant::Mvdr => noise_mask.clone(),
        Variant::Wmpdr => TfWeights::inverse_power(lambda),
    }
}

fn check_stacks(a: &HermitianStack, b_bins: usize) -> Result<()> {
    if a.bins() != b_bins {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} frequency bins",
            a.bins(),
            b_bins
        )));
    }
    Ok(())
}

/// Steering vector per frequency: `Φ_noise · maxeigvec(Φ_noise⁻¹ Φ_S)`,
/// the eigenvector approximated by power iteration from `(1, …, 1)/√C`.
pub fn steering_vector(
    phi_noise: &HermitianStack,
    phi_s: &HermitianStack,
    iters: usize,
    eps: f64,
) -> Result<SteeringVectors> {
    check_stacks(phi_noise, phi_s.bins())?;
    let vectors = phi_noise
        .matrices
        .par_iter()
        .zip(&phi_s.matrices)
        .enumerate()
        .map(|(f, (noise, speech))| {
            let run = || -> Result<CVector> {
                let seed = CVector::uniform(noise.rows());
                if is_silent(noise) || is_silent(speech) {
                    return Ok(seed);
                }
                let b = csolve(&diag_load(noise, eps)?, speech)?;
                let e = power_iter_maxeig(&b, iters, &seed)?;
                noise.mul_vec(&e)
            };
            run().map_err(|e| e.at_bin(f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SteeringVectors { vectors })
}

/// `w = Φ_N⁻¹Φ_S u / Trace(Φ_N⁻¹Φ_S)`.
pub fn filter_wo_sv(phi_n: &HermitianStack, phi_s: &HermitianStack, u: &CVector, eps: f64) -> Result<FilterBank> {
    check_stacks(phi_n, phi_s.bins())?;
    let filters = phi_n
        .matrices
        .par_iter()
        .zip(&phi_s.matrices)
        .enumerate()
        .map(|(f, (n, s))| {
            let run = || -> Result<CVector> {
                if is_silent(n) || is_silent(s) {
                    return Ok(u.clone());
                }
                let t = csolve(&diag_load(n, eps)?, s)?;
                let trace = t.trace();
                let norm = t.frobenius_norm();
                if trace.norm() < 1e-12 * norm || norm == 0.0 {
                    return Err(Error::NearZeroTrace {
                        trace: trace.norm(),
                        norm,
                    });
                }
                Ok(t.mul_vec(u)?.scale(trace.inv()))
            };
            run().map_err(|e| e.at_bin(f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank { filters })
}

/// `w = Φ_N⁻¹v / (vᴴ Φ_N⁻¹ v) · conj(v_q)`; `q` is 0-based.
pub fn filter_with_sv(phi_n: &HermitianStack, v: &SteeringVectors, q: usize, eps: f64) -> Result<FilterBank> {
    check_stacks(phi_n, v.vectors.len())?;
    let filters = phi_n
        .matrices
        .par_iter()
        .zip(&v.vectors)
        .enumerate()
        .map(|(f, (n, v))| {
            let run = || -> Result<CVector> {
                if q >= v.len() {
                    return Err(Error::InvalidArgument(format!(
                        "reference index {q} for {} channels",
                        v.len()
                    )));
                }
                if is_silent(n) {
                    return Ok(CVector::one_hot(v.len(), q));
                }
                let scale = v.norm();
                if !(scale > 0.0) {
                    return Err(Error::ZeroDenominator { denom: 0.0 });
                }
                // the formula is invariant to the scale of v
                let unit = v.scale(Complex64::new(1.0 / scale, 0.0));
                let a = csolve_vec(&diag_load(n, eps)?, &unit)?;
                let denom = unit.dot(&a);
                if denom.norm() < 1e-30 {
                    return Err(Error::ZeroDenominator { denom: denom.norm() });
                }
                Ok(a.scale(unit[q].conj() / denom))
            };
            run().map_err(|e| e.at_bin(f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterBank { filters })
}

/// `X̂[t, f] = w_fᴴ Ŷ[t, f]`, a single-channel spectrogram.
pub fn apply_filter(spec: &SpectroTensor, w: &FilterBank) -> Result<SpectroTensor> {
    let (frames, bins, channels) = spec.shape();
    if w.filters.len() != bins || w.filters.iter().any(|f| f.len() != channels) {
        return Err(Error::ShapeMismatch(format!(
            "filter bank of {} bins vs spectrogram ({frames}, {bins}, {channels})",
            w.filters.len()
        )));
    }
    let mut out = spec.zeros_like(1);
    for t in 0..frames {
        for (f, filter) in w.filters.iter().enumerate() {
            let y = spec.frame_bin(t, f);
            let z: Complex64 = filter.as_slice().iter().zip(y).map(|(w, y)| w.conj() * y).sum();
            out.set(t, f, 0, z);
        }
    }
    Ok(out)
}
