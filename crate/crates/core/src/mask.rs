//! Time-frequency masks: oracle estimation, flooring, channel averaging,
//! VAD-like collapse and the binary mask file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::{stft, AudioBuffer, SpectroTensor, StftConfig};

/// Denominator guard of the oracle magnitude ratio.
pub const ORACLE_DELTA: f64 = 1e-10;

const MAGIC: &[u8; 4] = b"CBMK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRole {
    Wpe,
    BfTarget,
    BfNoise,
}

impl MaskRole {
    pub const ALL: [MaskRole; 3] = [MaskRole::Wpe, MaskRole::BfTarget, MaskRole::BfNoise];

    pub fn code(self) -> u8 {
        match self {
            MaskRole::Wpe => 0,
            MaskRole::BfTarget => 1,
            MaskRole::BfNoise => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MaskRole::Wpe),
            1 => Ok(MaskRole::BfTarget),
            2 => Ok(MaskRole::BfNoise),
            other => Err(Error::MaskFormat(format!("unknown role code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskRole::Wpe => "wpe",
            MaskRole::BfTarget => "bf_target",
            MaskRole::BfNoise => "bf_noise",
        }
    }
}

/// Whether masks vary over frequency or share one value per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    Tf,
    Vad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskShape {
    PerChannel { frames: usize, bins: usize, channels: usize },
    ChannelAveraged { frames: usize, bins: usize },
    Vad { frames: usize },
}

impl MaskShape {
    pub fn rank(&self) -> u8 {
        match self {
            MaskShape::PerChannel { .. } => 3,
            MaskShape::ChannelAveraged { .. } => 2,
            MaskShape::Vad { .. } => 1,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            MaskShape::PerChannel {
                frames,
                bins,
                channels,
            } => vec![frames, bins, channels],
            MaskShape::ChannelAveraged { frames, bins } => vec![frames, bins],
            MaskShape::Vad { frames } => vec![frames],
        }
    }

    pub fn frames(&self) -> usize {
        self.dims()[0]
    }

    fn count(&self) -> Option<usize> {
        self.dims().iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    shape: MaskShape,
    values: Vec<f64>,
    role: MaskRole,
    speaker: u8,
}

impl MaskTensor {
    pub fn new(shape: MaskShape, values: Vec<f64>, role: MaskRole, speaker: u8) -> Result<Self> {
        let count = shape
            .count()
            .ok_or_else(|| Error::ShapeMismatch(format!("{:?} overflows", shape.dims())))?;
        if count == 0 {
            return Err(Error::ShapeMismatch(format!("empty mask shape {:?}", shape.dims())));
        }
        if values.len() != count {
            return Err(Error::ShapeMismatch(format!(
                "{} values for mask shape {:?}",
                values.len(),
                shape.dims()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::MaskValue { index, value });
        }
        Ok(Self {
            shape,
            values,
            role,
            speaker,
        })
    }

    pub fn constant(shape: MaskShape, value: f64, role: MaskRole, speaker: u8) -> Result<Self> {
        let count = shape
            .count()
            .ok_or_else(|| Error::ShapeMismatch("mask shape overflows".into()))?;
        Self::new(shape, vec![value; count], role, speaker)
    }

    pub fn shape(&self) -> MaskShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn speaker(&self) -> u8 {
        self.speaker
    }

    pub fn frames(&self) -> usize {
        self.shape.frames()
    }

    /// Value at `(t, f, c)`, broadcasting over missing axes.
    #[inline]
    pub fn value(&self, t: usize, f: usize, c: usize) -> f64 {
        match self.shape {
            MaskShape::PerChannel { bins, channels, .. } => self.values[(t * bins + f) * channels + c],
            MaskShape::ChannelAveraged { bins, .. } => self.values[t * bins + f],
            MaskShape::Vad { .. } => self.values[t],
        }
    }

    /// Checks that the mask can be broadcast against a `(T, F, C)` tensor.
    pub fn check_compatible(&self, frames: usize, bins: usize, channels: usize) -> Result<()> {
        let ok = match self.shape {
            MaskShape::PerChannel {
                frames: t,
                bins: f,
                channels: c,
            } => t == frames && f == bins && c == channels,
            MaskShape::ChannelAveraged { frames: t, bins: f } => t == frames && f == bins,
            MaskShape::Vad { frames: t } => t == frames,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} mask of shape {:?} against ({frames}, {bins}, {channels})",
                self.role.name(),
                self.shape.dims()
            )))
        }
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The three masks driving one speaker's enhancement.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub wpe: MaskTensor,
    pub target: MaskTensor,
    pub noise: MaskTensor,
}

/// Entrywise `max(M, ξ)`.
pub fn floor_mask(mask: &MaskTensor, xi: f64) -> Result<MaskTensor> {
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::InvalidArgument(format!("flooring factor {xi} outside [0, 1)")));
    }
    Ok(MaskTensor {
        values: mask.values.iter().map(|&v| v.max(xi)).collect(),
        ..mask.clone()
    })
}

/// Mean over channels of a `(T, F, C)` mask.
pub fn channel_average(mask: &MaskTensor) -> Result<MaskTensor> {
    match mask.shape {
        MaskShape::PerChannel {
            frames,
            bins,
            channels,
        } => {
            let values = mask
                .values
                .chunks_exact(channels)
                .map(|chunk| chunk.iter().sum::<f64>() / channels as f64)
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            Ok(MaskTensor {
                shape: MaskShape::ChannelAveraged { frames, bins },
                values,
                ..mask.clone()
            })
        }
        MaskShape::ChannelAveraged { .. } | MaskShape::Vad { .. } => Ok(mask.clone()),
    }
}

/// One value per frame: the mean over frequency (and channels).
pub fn vad_collapse(mask: &MaskTensor) -> MaskTensor {
    let frames = mask.frames();
    let per_frame = match mask.shape {
        MaskShape::Vad { .. } => return mask.clone(),
        MaskShape::PerChannel { bins, channels, .. } => bins * channels,
        MaskShape::ChannelAveraged { bins, .. } => bins,
    };
    let values = mask
        .values
        .chunks_exact(per_frame)
        .map(|chunk| (chunk.iter().sum::<f64>() / per_frame as f64).clamp(0.0, 1.0))
        .collect();
    MaskTensor {
        shape: MaskShape::Vad { frames },
        values,
        ..mask.clone()
    }
}

/// Expands a per-frame mask to `(T, F)` with equal values across frequency.
pub fn broadcast_vad(mask: &MaskTensor, bins: usize) -> Result<MaskTensor> {
    let MaskShape::Vad { frames } = mask.shape else {
        return Err(Error::ShapeMismatch("broadcast expects a per-frame mask".into()));
    };
    let values = mask
        .values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, bins))
        .collect();
    Ok(MaskTensor {
        shape: MaskShape::ChannelAveraged { frames, bins },
        values,
        ..mask.clone()
    })
}

/// Ground-truth component spectrograms used to derive oracle masks.
#[derive(Debug, Clone)]
pub struct TruthSpectra {
    pub early: Vec<SpectroTensor>,
    pub late_sum: SpectroTensor,
    pub noise: SpectroTensor,
}

impl TruthSpectra {
    /// Transforms per-speaker early images, per-speaker late parts and the
    /// noise image.
    pub fn from_audio(
        early: &[AudioBuffer],
        late: &[AudioBuffer],
        noise: &AudioBuffer,
        config: &StftConfig,
    ) -> Result<Self> {
        if early.is_empty() || early.len() != late.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} early images and {} late parts",
                early.len(),
                late.len()
            )));
        }
        let early_specs = early
            .iter()
            .map(|a| stft(a, config))
            .collect::<Result<Vec<_>>>()?;
        let mut late_sum = stft(&late[0], config)?;
        for part in &late[1..] {
            let spec = stft(part, config)?;
            if !spec.same_shape(&late_sum) {
                return Err(Error::ShapeMismatch("late parts differ in shape".into()));
            }
            late_sum = add_spectra(&late_sum, &spec);
        }
        Ok(Self {
            early: early_specs,
            late_sum,
            noise: stft(noise, config)?,
        })
    }

    pub fn speakers(&self) -> usize {
        self.early.len()
    }
}

fn add_spectra(a: &SpectroTensor, b: &SpectroTensor) -> SpectroTensor {
    let (frames, bins, channels) = a.shape();
    let mut out = a.clone();
    for t in 0..frames {
        for f in 0..bins {
            for c in 0..channels {
                out.set(t, f, c, a.get(t, f, c) + b.get(t, f, c));
            }
        }
    }
    out
}

/// Per-channel magnitude-ratio masks for every speaker.
pub fn oracle_masks(truth: &TruthSpectra, mixture: &SpectroTensor) -> Result<Vec<MaskSet>> {
    let shape = mixture.shape();
    let parts = truth
        .early
        .iter()
        .chain([&truth.late_sum, &truth.noise]);
    for part in parts {
        if part.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "truth component {:?} vs mixture {:?}",
                part.shape(),
                shape
            )));
        }
    }
    let (frames, bins, channels) = shape;
    let count = frames * bins * channels;
    let mut denom = vec![ORACLE_DELTA; count];
    for (i, d) in denom.iter_mut().enumerate() {
        *d += truth.late_sum.as_slice()[i].norm() + truth.noise.as_slice()[i].norm();
        for early in &truth.early {
            *d += early.as_slice()[i].norm();
        }
    }
    let mask_shape = MaskShape::PerChannel {
        frames,
        bins,
        channels,
    };
    truth
        .early
        .iter()
        .enumerate()
        .map(|(j, early)| {
            let speaker = u8::try_from(j)
                .map_err(|_| Error::InvalidArgument("more than 255 speakers".into()))?;
            let target: Vec<f64> = early
                .as_slice()
                .iter()
                .zip(&denom)
                .map(|(z, d)| (z.norm() / d).clamp(0.0, 1.0))
                .collect();
            let noise: Vec<f64> = target.iter().map(|m| (1.0 - m).clamp(0.0, 1.0)).collect();
            Ok(MaskSet {
                wpe: MaskTensor::new(mask_shape, target.clone(), MaskRole::Wpe, speaker)?,
                target: MaskTensor::new(mask_shape, target, MaskRole::BfTarget, speaker)?,
                noise: MaskTensor::new(mask_shape, noise, MaskRole::BfNoise, speaker)?,
            })
        })
        .collect()
}

pub fn encode_masks(mask: &MaskTensor) -> Vec<u8> {
    let dims = mask.shape.dims();
    let mut out = Vec::with_capacity(11 + 4 * dims.len() + 8 * mask.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(mask.role.code());
    out.push(mask.speaker);
    out.push(mask.shape.rank());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &mask.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_masks(bytes: &[u8]) -> Result<MaskTensor> {
    let mut cursor = bytes;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::MaskFormat(format!("truncated while reading {what}")));
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    if take(4, "magic")? != MAGIC {
        return Err(Error::MaskFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::MaskFormat(format!("unsupported version {version}")));
    }
    let role = MaskRole::from_code(take(1, "role")?[0])?;
    let speaker = take(1, "speaker")?[0];
    let rank = take(1, "rank")?[0];
    if !(1..=3).contains(&rank) {
        return Err(Error::MaskFormat(format!("rank {rank} not in 1..=3")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        dims.push(u32::from_le_bytes(take(4, "dims")?.try_into().unwrap()) as usize);
    }
    let shape = match dims[..] {
        [frames] => MaskShape::Vad { frames },
        [frames, bins] => MaskShape::ChannelAveraged { frames, bins },
        [frames, bins, channels] => MaskShape::PerChannel {
            frames,
            bins,
            channels,
        },
        _ => unreachable!(),
    };
    let count = shape
        .count()
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::MaskFormat(format!("shape {dims:?} overflows")))?;
    let payload = take(count * 8, "values")?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if !cursor.is_empty() {
        return Err(Error::MaskFormat(format!("{} trailing bytes", cursor.len())));
    }
    MaskTensor::new(shape, values, role, speaker)
}

pub fn save_masks(mask: &MaskTensor, path: &Path) -> Result<()> {
    fs::write(path, encode_masks(mask))?;
    Ok(())
}

pub fn load_masks(path: &Path) -> Result<MaskTensor> {
    decode_masks(&fs::read(path)?)
}

/// Conventional file name for a speaker's mask (`bf_target_spk1.cbmk`, …).
pub fn mask_file_name(role: MaskRole, speaker: usize) -> String {
    format!("{}_spk{}.cbmk", role.name(), speaker + 1)
}
