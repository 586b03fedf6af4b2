//! Per-speaker enhancement chain: masks, WPE, covariances, beamformer,
//! synthesis.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamform::{
    apply_filter, covariance, filter_with_sv, filter_wo_sv, interference_weights, steering_vector,
    BeamformerConfig, CovarianceKind, FilterBank, Formula, SteeringVectors, TfWeights, Variant,
};
use crate::config::EnhanceConfig;
use crate::cxla::CVector;
use crate::error::{Error, Result};
use crate::mask::{
    broadcast_vad, channel_average, floor_mask, oracle_masks, vad_collapse, MaskSet, MaskTensor,
    MaskType, TruthSpectra,
};
use crate::scene::{SceneSpec, SceneTruth};
use crate::stft::{istft, stft, AudioBuffer, SpectroTensor};
use crate::wpe::{estimate_power, wpe_filter, PowerMap, WpeConfig};

/// Masks after flooring and channel reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedMasks {
    /// Per-channel for T-F masks, `(T, F)` for VAD masks.
    pub wpe: MaskTensor,
    /// `(T, F)`.
    pub target: MaskTensor,
    /// `(T, F)`.
    pub noise: MaskTensor,
}

pub fn prepare_masks(
    set: &MaskSet,
    mask_type: MaskType,
    wpe: &WpeConfig,
    bf: &BeamformerConfig,
    bins: usize,
) -> Result<PreparedMasks> {
    let reduce = |m: &MaskTensor, xi: f64, keep_channels: bool| -> Result<MaskTensor> {
        let floored = floor_mask(m, xi)?;
        match mask_type {
            MaskType::Tf if keep_channels => Ok(floored),
            MaskType::Tf => channel_average(&floored),
            MaskType::Vad => broadcast_vad(&vad_collapse(&floored), bins),
        }
    };
    Ok(PreparedMasks {
        wpe: reduce(&set.wpe, wpe.xi_wpe, true)?,
        target: reduce(&set.target, bf.xi_bf, false)?,
        noise: reduce(&set.noise, bf.xi_bf, false)?,
    })
}

/// Dereverberated observation and the power used to obtain it.
#[derive(Debug, Clone)]
pub struct Dereverbed {
    pub lambda: PowerMap,
    pub output: SpectroTensor,
}

pub fn dereverberate(mixture: &SpectroTensor, masks: &PreparedMasks, cfg: &WpeConfig) -> Result<Dereverbed> {
    let lambda = estimate_power(mixture, &masks.wpe).map_err(|e| e.in_stage("power"))?;
    let output = if cfg.enabled {
        wpe_filter(mixture, &lambda, cfg).map_err(|e| e.in_stage("wpe"))?
    } else {
        mixture.clone()
    };
    Ok(Dereverbed { lambda, output })
}

#[derive(Debug, Clone)]
pub struct BeamformOutput {
    pub filters: FilterBank,
    pub steering: Option<SteeringVectors>,
    /// Single-channel spectrogram.
    pub enhanced: SpectroTensor,
}

pub fn beamform(derev: &Dereverbed, masks: &PreparedMasks, cfg: &BeamformerConfig) -> Result<BeamformOutput> {
    let spec = &derev.output;
    let (_, bins, channels) = spec.shape();
    cfg.validate(Some(channels)).map_err(|e| e.in_stage("beamformer"))?;
    let q = cfg.ref_index();

    let cov = |weights: &TfWeights, kind| covariance(spec, weights, kind).map_err(|e| e.in_stage("covariance"));
    let speech_w = TfWeights::from_mask(&masks.target, bins).map_err(|e| e.in_stage("covariance"))?;
    let noise_w = TfWeights::from_mask(&masks.noise, bins).map_err(|e| e.in_stage("covariance"))?;
    let phi_s = cov(&speech_w, CovarianceKind::Speech)?;
    let phi_n = cov(
        &interference_weights(cfg.variant, &noise_w, &derev.lambda),
        CovarianceKind::Interference,
    )?;

    let (filters, steering) = match cfg.formula {
        Formula::WithoutSv => {
            let u = CVector::one_hot(channels, q);
            let w = filter_wo_sv(&phi_n, &phi_s, &u, cfg.eps_bf).map_err(|e| e.in_stage("filter"))?;
            (w, None)
        }
        Formula::WithSv => {
            let phi_noise = match cfg.variant {
                Variant::Mvdr => phi_n.clone(),
                Variant::Wmpdr => cov(&noise_w, CovarianceKind::Noise)?,
            };
            let v = steering_vector(&phi_noise, &phi_s, cfg.sv_power_iters, cfg.eps_bf)
                .map_err(|e| e.in_stage("steering"))?;
            let w = filter_with_sv(&phi_n, &v, q, cfg.eps_bf).map_err(|e| e.in_stage("filter"))?;
            (w, Some(v))
        }
    };
    let enhanced = apply_filter(spec, &filters).map_err(|e| e.in_stage("apply"))?;
    Ok(BeamformOutput {
        filters,
        steering,
        enhanced,
    })
}

#[derive(Debug, Clone)]
pub struct SpeakerOutput {
    pub masks: PreparedMasks,
    pub dereverbed: Dereverbed,
    pub beamformed: BeamformOutput,
    pub audio: AudioBuffer,
}

/// Full chain for one speaker on an analysed mixture.
pub fn enhance_speaker(mixture: &SpectroTensor, set: &MaskSet, cfg: &EnhanceConfig) -> Result<SpeakerOutput> {
    let (frames, bins, channels) = mixture.shape();
    for m in [&set.wpe, &set.target, &set.noise] {
        m.check_compatible(frames, bins, channels).map_err(|e| e.in_stage("masks"))?;
    }
    let masks = prepare_masks(set, cfg.mask_type, &cfg.wpe, &cfg.beamformer, bins)
        .map_err(|e| e.in_stage("masks"))?;
    let dereverbed = dereverberate(mixture, &masks, &cfg.wpe)?;
    let beamformed = beamform(&dereverbed, &masks, &cfg.beamformer)?;
    let audio = istft(&beamformed.enhanced).map_err(|e| e.in_stage("istft"))?;
    Ok(SpeakerOutput {
        masks,
        dereverbed,
        beamformed,
        audio,
    })
}

/// Leading `channels_used` channels (all when 0).
pub fn select_channels(audio: &AudioBuffer, channels_used: usize) -> Result<AudioBuffer> {
    if channels_used == 0 {
        return Ok(audio.clone());
    }
    audio.take_channels(channels_used).map_err(|e| e.in_stage("input"))
}

/// Enhances every speaker of a time-domain mixture.
pub fn enhance(mixture: &AudioBuffer, masks: &[MaskSet], cfg: &EnhanceConfig) -> Result<Vec<AudioBuffer>> {
    cfg.validate()?;
    if !mixture.is_finite() {
        return Err(Error::InvalidArgument("mixture has non-finite samples".into()).in_stage("input"));
    }
    let input = select_channels(mixture, cfg.channels_used)?;
    let spec = stft(&input, &cfg.stft).map_err(|e| e.in_stage("stft"))?;
    masks
        .iter()
        .map(|set| enhance_speaker(&spec, set, cfg).map(|out| out.audio))
        .collect()
}

/// Ground-truth components read back from a simulation directory.
#[derive(Debug, Clone)]
pub struct TruthAudio {
    pub mixture: AudioBuffer,
    pub early: Vec<AudioBuffer>,
    pub late: Vec<AudioBuffer>,
    pub noise: AudioBuffer,
}

impl TruthAudio {
    pub fn from_scene(truth: &SceneTruth) -> Self {
        Self {
            mixture: truth.mixture.clone(),
            early: truth.early.clone(),
            late: truth.late.clone(),
            noise: truth.noise.clone(),
        }
    }

    pub fn speakers(&self) -> usize {
        self.early.len()
    }

    /// Same components restricted to the leading channels.
    pub fn select_channels(&self, channels_used: usize) -> Result<Self> {
        let pick = |a: &AudioBuffer| select_channels(a, channels_used);
        Ok(Self {
            mixture: pick(&self.mixture)?,
            early: self.early.iter().map(pick).collect::<Result<_>>()?,
            late: self.late.iter().map(pick).collect::<Result<_>>()?,
            noise: pick(&self.noise)?,
        })
    }
}

/// Oracle mask sets computed on the selected channels.
pub fn oracle_mask_sets(truth: &TruthAudio, cfg: &EnhanceConfig) -> Result<Vec<MaskSet>> {
    let truth = truth.select_channels(cfg.channels_used)?;
    let mixture = stft(&truth.mixture, &cfg.stft).map_err(|e| e.in_stage("stft"))?;
    let spectra = TruthSpectra::from_audio(&truth.early, &truth.late, &truth.noise, &cfg.stft)
        .map_err(|e| e.in_stage("masks"))?;
    oracle_masks(&spectra, &mixture).map_err(|e| e.in_stage("masks"))
}

/// Wall-clock time per named stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(pub BTreeMap<String, f64>);

impl Timings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

/// Record of a CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Option<EnhanceConfig>,
    pub scene: Option<SceneSpec>,
    /// File name to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Milliseconds.
    pub timings_ms: Timings,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            config: None,
            scene: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_ms: Timings::default(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(display_name(path), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(display_name(path), sha256_file(path)?);
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
