//! WAV reading and writing (16-bit PCM or 32-bit float).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    #[default]
    Float32,
    Pcm16,
}

fn wav_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    let frames = interleaved.len() / channels.max(1);
    let mut out = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &x) in frame.iter().enumerate() {
            out[c].push(x);
        }
    }
    AudioBuffer::new(spec.sample_rate, out)
}

/// Rounds a sample the way [`write_wav`] stores it.
pub fn quantize(x: f64, format: WavFormat) -> f64 {
    match format {
        WavFormat::Float32 => x as f32 as f64,
        WavFormat::Pcm16 => pcm16(x) as f64 / 32768.0,
    }
}

fn pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Float32 => 32,
            WavFormat::Pcm16 => 16,
        },
        sample_format: match format {
            WavFormat::Float32 => hound::SampleFormat::Float,
            WavFormat::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for n in 0..audio.len() {
        for c in 0..audio.num_channels() {
            let x = audio.channel(c)[n];
            match format {
                WavFormat::Float32 => writer.write_sample(x as f32),
                WavFormat::Pcm16 => writer.write_sample(pcm16(x)),
            }
            .map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
