//! Synthetic reverberant multi-speaker scenes with exact early/late
//! decomposition.
//!
//! Each impulse response is a fractional-delay direct path, a handful of
//! sparse early reflections, and an exponentially decaying noise tail.
//! Splitting the response at `direct arrival + early_window_ms` gives the
//! early and late images of every source.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cxla::CVector;
use crate::error::{Error, Result};
use crate::stft::{AudioBuffer, StftConfig};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Half-width of the windowed-sinc fractional delay (33 taps in total).
const SINC_HALF: i64 = 16;
/// Reflections and the tail are arranged around this boundary.
const REFLECTION_WINDOW_S: f64 = 0.05;
/// Mean number of sparse early reflections per response.
const MEAN_REFLECTIONS: f64 = 6.0;
/// Sabine's constant in s/m.
const SABINE: f64 = 0.161;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    /// Width, depth and height in meters.
    pub dimensions: [f64; 3],
    /// Reverberation time in seconds; 0 gives a direct path only.
    pub t60: f64,
}

impl Room {
    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    /// Diffuse-field energy of the tail per second of T60, relative to the
    /// direct path at 1 m (Sabine: 16 pi T60 / (0.161 V)).
    pub fn diffuse_gain(&self) -> f64 {
        16.0 * PI / (SABINE * self.volume())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub speakers: usize,
    pub channels: usize,
    pub sample_rate: u32,
    pub room: Room,
    pub sources: Vec<[f64; 3]>,
    pub mics: Vec<[f64; 3]>,
    /// Noise level relative to the reverberant speech at channel 1, in dB.
    /// `inf` disables noise.
    pub noise_snr: f64,
    pub early_window_ms: f64,
    pub seed: u64,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.speakers == 0 || self.channels == 0 {
            return bad("scene needs at least one speaker and one channel".into());
        }
        if self.sources.len() != self.speakers || self.mics.len() != self.channels {
            return bad(format!(
                "{} source positions for {} speakers, {} mic positions for {} channels",
                self.sources.len(),
                self.speakers,
                self.mics.len(),
                self.channels
            ));
        }
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.room.t60 >= 0.0) || !self.room.t60.is_finite() {
            return bad(format!("T60 {} must be finite and >= 0", self.room.t60));
        }
        if !(self.early_window_ms >= 0.0) {
            return bad(format!("early window {} ms", self.early_window_ms));
        }
        if self.noise_snr.is_nan() {
            return bad("noise SNR is NaN".into());
        }
        let inside = |p: &[f64; 3]| {
            p.iter()
                .zip(&self.room.dimensions)
                .all(|(x, d)| *x >= 0.0 && x <= d)
        };
        for (i, p) in self.sources.iter().enumerate() {
            if !inside(p) {
                return bad(format!("source {} at {:?} is outside the room", i + 1, p));
            }
        }
        for (i, p) in self.mics.iter().enumerate() {
            if !inside(p) {
                return bad(format!("mic {} at {:?} is outside the room", i + 1, p));
            }
        }
        Ok(())
    }

    /// A 6 × 5 × 3 m room with a centered array and sources 1–2 m away
    /// at well-separated azimuths, all drawn from `seed`.
    pub fn standard(speakers: usize, channels: usize, t60: f64, noise_snr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5ce7e);
        let center = [3.0, 2.5, 1.4];
        let radius = 0.1;
        let mics = (0..channels)
            .map(|c| {
                if channels == 1 {
                    center
                } else {
                    let phi = 2.0 * PI * c as f64 / channels as f64;
                    [center[0] + radius * phi.cos(), center[1] + radius * phi.sin(), center[2]]
                }
            })
            .collect();
        let base: f64 = rng.random_range(0.0..2.0 * PI);
        let sources = (0..speakers)
            .map(|j| {
                let spread = 2.0 * PI / speakers.max(2) as f64;
                let az = base + j as f64 * spread + rng.random_range(-0.25..0.25) * spread;
                let d: f64 = rng.random_range(1.0..2.0);
                let h: f64 = rng.random_range(-0.2..0.2);
                [center[0] + d * az.cos(), center[1] + d * az.sin(), center[2] + 0.2 + h]
            })
            .collect();
        Self {
            speakers,
            channels,
            sample_rate: 16_000,
            room: Room {
                dimensions: [6.0, 5.0, 3.0],
                t60,
            },
            sources,
            mics,
            noise_snr,
            early_window_ms: 50.0,
            seed,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Early window in STFT frames, rounded.
    pub fn early_window_frames(&self, stft: &StftConfig) -> usize {
        let shift_ms = stft.shift as f64 * 1000.0 / self.sample_rate as f64;
        (self.early_window_ms / shift_ms).round() as usize
    }

    fn rng_for(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Room impulse response of one source/mic pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    /// Direct-path arrival in (fractional) samples.
    pub direct_delay: f64,
    /// Index where the late part starts.
    pub split: usize,
}

impl Rir {
    pub fn early(&self) -> &[f64] {
        &self.taps[..self.split.min(self.taps.len())]
    }

    pub fn late(&self) -> &[f64] {
        &self.taps[self.split.min(self.taps.len())..]
    }
}

fn sinc_taps(out: &mut [f64], delay: f64, amplitude: f64) {
    let center = delay.floor() as i64;
    let width = (SINC_HALF + 1) as f64;
    for n in center - SINC_HALF..=center + SINC_HALF {
        if n < 0 || n as usize >= out.len() {
            continue;
        }
        let x = n as f64 - delay;
        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let window = 0.5 * (1.0 + (PI * x / width).cos());
        out[n as usize] += amplitude * sinc * window;
    }
}

/// Synthesizes the response from `speaker` to `channel` (both 0-based).
pub fn synth_rir(spec: &SceneSpec, speaker: usize, channel: usize) -> Rir {
    let fs = spec.sample_rate as f64;
    let d = distance(&spec.sources[speaker], &spec.mics[channel]);
    let delay = d / SPEED_OF_SOUND * fs;
    let amplitude = 1.0 / d.max(0.1);
    let t60 = spec.room.t60;
    let split = (delay + spec.early_window_ms * 1e-3 * fs).round() as usize;

    let reverb_len = if t60 > 0.0 {
        ((REFLECTION_WINDOW_S + 2.0 * t60) * fs).ceil() as usize
    } else {
        0
    };
    let len = (delay.floor() as usize + SINC_HALF as usize + 1 + reverb_len).max(split);
    let mut taps = vec![0.0; len];
    sinc_taps(&mut taps, delay, amplitude);

    if t60 > 0.0 {
        let mut rng = spec.rng_for(1 + (speaker * spec.channels + channel) as u64);
        // amplitude decay rate: -60 dB of energy at t = T60
        let decay = (1e-3f64).ln() / t60;

        let count = Poisson::new(MEAN_REFLECTIONS).map(|p| p.sample(&mut rng)).unwrap_or(0.0) as usize;
        for _ in 0..count {
            let lag: f64 = rng.random_range(0.0..REFLECTION_WINDOW_S);
            let lag = REFLECTION_WINDOW_S - lag; // (0, window]
            let gain: f64 = rng.random_range(0.1..0.4);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let n = (delay + lag * fs).round() as usize;
            if n < len {
                taps[n] += sign * gain * amplitude * (decay * lag).exp();
            }
        }

        let sigma0 = (spec.room.diffuse_gain() * 2.0 * (1e3f64).ln() / fs).sqrt();
        let gate = (delay + REFLECTION_WINDOW_S * fs).ceil() as usize;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        for (n, tap) in taps.iter_mut().enumerate().skip(gate) {
            let elapsed = (n as f64 - delay) / fs;
            *tap += sigma0 * (decay * elapsed).exp() * normal.sample(&mut rng);
        }
    }

    Rir {
        taps,
        direct_delay: delay,
        split,
    }
}

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; out_len];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |s: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (b, &v) in buf.iter_mut().zip(s) {
            b.re = v;
        }
        buf
    };
    let mut a = load(x);
    let mut b = load(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < x.len() + h.len() - 1 { a[i].re * scale } else { 0.0 })
        .collect()
}

/// Everything the simulator knows about a rendered scene.
#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub spec: SceneSpec,
    pub mixture: AudioBuffer,
    /// Direct path plus early reflections, per speaker.
    pub early: Vec<AudioBuffer>,
    /// Late reverberation, per speaker.
    pub late: Vec<AudioBuffer>,
    pub noise: AudioBuffer,
    pub dry: Vec<AudioBuffer>,
    /// `rirs[j][c]`.
    pub rirs: Vec<Vec<Rir>>,
    /// `steering[j][f]`: early-response transfer at each STFT bin.
    pub steering: Vec<Vec<CVector>>,
}

impl SceneTruth {
    /// Reverberant image (early + late) of speaker `j`.
    pub fn image(&self, j: usize) -> AudioBuffer {
        let channels = self.early[j]
            .channels()
            .iter()
            .zip(self.late[j].channels())
            .map(|(e, l)| e.iter().zip(l).map(|(a, b)| a + b).collect())
            .collect();
        AudioBuffer::new(self.mixture.sample_rate(), channels).expect("consistent image")
    }
}

/// Transfer function of `taps` at the bins of a `transform_len`-point DFT.
pub fn transfer_at_bins(taps: &[f64], transform_len: usize) -> Vec<Complex64> {
    let bins = transform_len / 2 + 1;
    (0..bins)
        .map(|f| {
            let w = -2.0 * PI * f as f64 / transform_len as f64;
            taps.iter()
                .enumerate()
                .map(|(n, &h)| Complex64::from_polar(h, w * n as f64))
                .sum()
        })
        .collect()
}

/// Renders the scene for the given dry sources (one mono buffer each).
pub fn render(spec: &SceneSpec, dry: &[AudioBuffer], stft: &StftConfig) -> Result<SceneTruth> {
    spec.validate()?;
    if dry.len() != spec.speakers {
        return Err(Error::InvalidArgument(format!(
            "{} dry sources for {} speakers",
            dry.len(),
            spec.speakers
        )));
    }
    for (j, s) in dry.iter().enumerate() {
        if s.sample_rate() != spec.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "source {} at {} Hz, scene at {} Hz",
                j + 1,
                s.sample_rate(),
                spec.sample_rate
            )));
        }
        if s.num_channels() != 1 {
            return Err(Error::InvalidArgument(format!("source {} is not mono", j + 1)));
        }
        if s.is_empty() {
            return Err(Error::EmptyAudio);
        }
    }
    let len = dry.iter().map(AudioBuffer::len).max().unwrap_or(0);
    let fs = spec.sample_rate;

    let mut early = Vec::with_capacity(spec.speakers);
    let mut late = Vec::with_capacity(spec.speakers);
    let mut rirs = Vec::with_capacity(spec.speakers);
    let mut steering = Vec::with_capacity(spec.speakers);
    for (j, source) in dry.iter().enumerate() {
        let mut padded = source.channel(0).to_vec();
        padded.resize(len, 0.0);
        let responses: Vec<Rir> = (0..spec.channels).map(|c| synth_rir(spec, j, c)).collect();
        let e: Vec<Vec<f64>> = responses.iter().map(|r| fft_convolve(&padded, r.early(), len)).collect();
        let l: Vec<Vec<f64>> = responses.iter().map(|r| fft_convolve(&padded, r.late(), len)).collect();
        let per_channel: Vec<Vec<Complex64>> = responses
            .iter()
            .map(|r| transfer_at_bins(r.early(), stft.transform_len))
            .collect();
        let bins = stft.bins();
        steering.push(
            (0..bins)
                .map(|f| CVector::new(per_channel.iter().map(|h| h[f]).collect()))
                .collect::<Result<Vec<_>>>()?,
        );
        early.push(AudioBuffer::new(fs, e)?);
        late.push(AudioBuffer::new(fs, l)?);
        rirs.push(responses);
    }

    let mut speech = vec![vec![0.0; len]; spec.channels];
    for j in 0..spec.speakers {
        for (c, acc) in speech.iter_mut().enumerate() {
            for ((a, e), l) in acc.iter_mut().zip(early[j].channel(c)).zip(late[j].channel(c)) {
                *a += e + l;
            }
        }
    }

    let ref_power = speech[0].iter().map(|x| x * x).sum::<f64>() / len as f64;
    let noise_std = if spec.noise_snr.is_finite() && ref_power > 0.0 {
        (ref_power / 10f64.powf(spec.noise_snr / 10.0)).sqrt()
    } else {
        0.0
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<Vec<f64>> = (0..spec.channels)
        .map(|c| {
            if noise_std == 0.0 {
                return vec![0.0; len];
            }
            let mut rng = spec.rng_for((1 << 40) + c as u64);
            (0..len).map(|_| noise_std * normal.sample(&mut rng)).collect()
        })
        .collect();

    let mixture = speech
        .iter()
        .zip(&noise)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();

    Ok(SceneTruth {
        spec: spec.clone(),
        mixture: AudioBuffer::new(fs, mixture)?,
        early,
        late,
        noise: AudioBuffer::new(fs, noise)?,
        dry: dry.to_vec(),
        rirs,
        steering,
    })
}

/// Two-pole resonator with unit gain at its center frequency.
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64, freq: f64, bandwidth: f64, fs: f64) -> f64 {
        let r = (-PI * bandwidth / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Speech-like test signal from a source-filter model: syllables of voiced
/// phones (jittered glottal pulse train through three gliding formant
/// resonators) and unvoiced phones (band-limited Gaussian noise), separated
/// by pauses. Normalized to an RMS of 0.05.
pub fn speechlike_source(seed: u64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nyquist = 0.45 * fs;
    let base_f0: f64 = rng.random_range(95.0..230.0);
    let mut out = vec![0.0; len];

    let mut pos = (rng.random_range(0.0..0.2) * fs) as usize;
    while pos < len {
        let phones = rng.random_range(1..=4);
        let mut formants = [
            rng.random_range(300.0..850.0),
            rng.random_range(900.0..2300.0),
            rng.random_range(2300.0..3200.0),
        ];
        let mut f0 = base_f0 * rng.random_range(0.85..1.2);
        let mut filters = [Resonator::new(), Resonator::new(), Resonator::new()];
        let mut noise_filter = Resonator::new();
        let mut next_pulse = 0.0;
        for _ in 0..phones {
            let dur = (rng.random_range(0.04..0.12) * fs) as usize;
            let end = (pos + dur).min(len);
            let n_seg = end.saturating_sub(pos);
            if rng.random_bool(0.75) {
                let target = [
                    rng.random_range(300.0..850.0),
                    rng.random_range(900.0..2300.0),
                    rng.random_range(2300.0..3200.0),
                ];
                let f0_end = (f0 * rng.random_range(0.9..1.1)).clamp(0.7 * base_f0, 1.4 * base_f0);
                let start_formants = formants;
                let start_f0 = f0;
                for i in 0..n_seg {
                    let frac = i as f64 / n_seg as f64;
                    let f0_now = start_f0 + (f0_end - start_f0) * frac;
                    let mut excitation = 0.02 * normal.sample(&mut rng);
                    next_pulse -= 1.0;
                    if next_pulse <= 0.0 {
                        excitation += 1.0 + 0.1 * normal.sample(&mut rng);
                        next_pulse += fs / f0_now * (1.0 + 0.02 * normal.sample(&mut rng));
                    }
                    let mut v = 0.0;
                    for (k, filter) in filters.iter_mut().enumerate() {
                        let f = start_formants[k] + (target[k] - start_formants[k]) * frac;
                        v += filter.step(excitation, f.min(nyquist), 60.0 + 40.0 * k as f64, fs) / (k + 1) as f64;
                    }
                    out[pos + i] += v;
                }
                formants = target;
                f0 = f0_end;
            } else {
                let center: f64 = rng.random_range(2000.0..6000.0);
                let bandwidth: f64 = rng.random_range(800.0..2500.0);
                let level: f64 = rng.random_range(0.1..0.3);
                for i in 0..n_seg {
                    let frac = i as f64 / n_seg as f64;
                    let env = (PI * frac).sin();
                    let x = normal.sample(&mut rng);
                    out[pos + i] += level * env * noise_filter.step(x, center.min(nyquist), bandwidth, fs);
                }
            }
            pos = end;
        }
        let gap = if rng.random_bool(0.2) {
            rng.random_range(0.15..0.45)
        } else {
            rng.random_range(0.02..0.12)
        };
        pos += (gap * fs) as usize;
    }

    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.05 / rms);
    }
    AudioBuffer::mono(sample_rate, out).expect("mono buffer")
}
