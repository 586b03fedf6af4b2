//! Multichannel STFT analysis and weighted overlap-add synthesis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multichannel real audio, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidArgument("audio needs at least one channel".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|ch| ch.len() != len) {
            return Err(Error::ShapeMismatch("channels differ in length".into()));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// First `n` channels.
    pub fn take_channels(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.channels.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} channels from a {}-channel buffer",
                self.channels.len()
            )));
        }
        Self::new(self.sample_rate, self.channels[..n].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().flatten().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_len: usize,
    pub shift: usize,
    pub transform_len: usize,
}

impl Default for StftConfig {
    /// 25 ms Hann window, 10 ms shift and a 512-point transform at 16 kHz.
    fn default() -> Self {
        Self {
            window_len: 400,
            shift: 160,
            transform_len: 512,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.transform_len / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.shift > self.window_len {
            return Err(Error::InvalidArgument(format!(
                "shift {} must be in 1..={}",
                self.shift, self.window_len
            )));
        }
        if self.transform_len < self.window_len || self.transform_len % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "transform length {} must be even and at least the window length {}",
                self.transform_len, self.window_len
            )));
        }
        Ok(())
    }

    /// Periodic Hann window.
    pub fn analysis_window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        (0..self.window_len)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
            .collect()
    }

    /// Analysis window divided by the overlapped squared-window sum, so that
    /// analysis followed by synthesis is the identity away from the edges.
    pub fn synthesis_window(&self) -> Vec<f64> {
        let w = self.analysis_window();
        let len = w.len() as isize;
        let shift = self.shift as isize;
        (0..len)
            .map(|n| {
                let mut denom = 0.0;
                let mut k = n % shift;
                while k < len {
                    denom += w[k as usize] * w[k as usize];
                    k += shift;
                }
                if denom > 0.0 {
                    w[n as usize] / denom
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Complex spectrogram indexed `(frame, bin, channel)`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroTensor {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    signal_len: Option<usize>,
}

impl SpectroTensor {
    pub fn zeros(frames: usize, bins: usize, channels: usize, config: StftConfig, sample_rate: u32) -> Self {
        Self {
            frames,
            bins,
            channels,
            data: vec![Complex64::new(0.0, 0.0); frames * bins * channels],
            config,
            sample_rate,
            signal_len: None,
        }
    }

    pub fn from_data(
        frames: usize,
        bins: usize,
        channels: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self> {
        if frames == 0 || channels == 0 || bins != config.bins() {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram ({frames}, {bins}, {channels}) with {} bins expected",
                config.bins()
            )));
        }
        if data.len() != frames * bins * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for shape ({frames}, {bins}, {channels})",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            channels,
            data,
            config,
            sample_rate,
            signal_len: None,
        })
    }

    /// Same geometry and metadata, new channel count, zero data.
    pub fn zeros_like(&self, channels: usize) -> Self {
        let mut out = Self::zeros(self.frames, self.bins, channels, self.config, self.sample_rate);
        out.signal_len = self.signal_len;
        out
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.bins, self.channels)
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn set_signal_len(&mut self, len: Option<usize>) {
        self.signal_len = len;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn offset(&self, t: usize, f: usize, c: usize) -> usize {
        (t * self.bins + f) * self.channels + c
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize, c: usize) -> Complex64 {
        self.data[self.offset(t, f, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, f: usize, c: usize, z: Complex64) {
        let i = self.offset(t, f, c);
        self.data[i] = z;
    }

    /// Channel vector at `(t, f)`.
    pub fn frame_bin(&self, t: usize, f: usize) -> &[Complex64] {
        let i = self.offset(t, f, 0);
        &self.data[i..i + self.channels]
    }

    pub fn frame_bin_mut(&mut self, t: usize, f: usize) -> &mut [Complex64] {
        let i = self.offset(t, f, 0);
        &mut self.data[i..i + self.channels]
    }

    /// Copies bin `f` out as a `T × C` frame-major block.
    pub fn bin_slice(&self, f: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.frames * self.channels);
        for t in 0..self.frames {
            out.extend_from_slice(self.frame_bin(t, f));
        }
        out
    }

    pub fn set_bin_slice(&mut self, f: usize, block: &[Complex64]) {
        for t in 0..self.frames {
            let c = self.channels;
            self.frame_bin_mut(t, f)
                .copy_from_slice(&block[t * c..(t + 1) * c]);
        }
    }

    pub fn channel(&self, c: usize) -> Result<Self> {
        self.take_channels_at(&[c])
    }

    fn take_channels_at(&self, picks: &[usize]) -> Result<Self> {
        if let Some(&bad) = picks.iter().find(|&&c| c >= self.channels) {
            return Err(Error::InvalidArgument(format!(
                "channel {bad} out of range for {} channels",
                self.channels
            )));
        }
        let mut out = self.zeros_like(picks.len());
        for t in 0..self.frames {
            for f in 0..self.bins {
                for (k, &c) in picks.iter().enumerate() {
                    out.set(t, f, k, self.get(t, f, c));
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn same_shape(&self, other: &SpectroTensor) -> bool {
        self.shape() == other.shape()
    }
}

/// Short-time Fourier transform of every channel.
///
/// Frame `t` covers samples `[t·shift, t·shift + window_len)`, zero-padded
/// past the end, so there are `ceil(len / shift)` frames.
pub fn stft(audio: &AudioBuffer, config: &StftConfig) -> Result<SpectroTensor> {
    config.validate()?;
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let len = audio.len();
    let frames = len.div_ceil(config.shift);
    let bins = config.bins();
    let nfft = config.transform_len;
    let window = config.analysis_window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let mut out = SpectroTensor::zeros(frames, bins, audio.num_channels(), *config, audio.sample_rate());
    out.signal_len = Some(len);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for (c, samples) in audio.channels().iter().enumerate() {
        for t in 0..frames {
            let start = t * config.shift;
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (n, w) in window.iter().enumerate() {
                if let Some(&x) = samples.get(start + n) {
                    buf[n].re = x * w;
                }
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out.set(t, f, c, buf[f]);
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`stft`].
///
/// Output length is `(T − 1)·shift + window_len`, trimmed to the original
/// signal length when the spectrogram remembers it.
pub fn istft(spec: &SpectroTensor) -> Result<AudioBuffer> {
    let config = spec.config;
    config.validate()?;
    let nfft = config.transform_len;
    let synth = config.synthesis_window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(nfft);
    let full_len = (spec.frames - 1) * config.shift + config.window_len;
    let out_len = spec.signal_len.unwrap_or(full_len);

    let mut channels = Vec::with_capacity(spec.channels);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let scale = 1.0 / nfft as f64;
    for c in 0..spec.channels {
        let mut acc = vec![0.0; full_len.max(out_len)];
        for t in 0..spec.frames {
            for f in 0..spec.bins {
                buf[f] = spec.get(t, f, c);
            }
            for f in spec.bins..nfft {
                buf[f] = buf[nfft - f].conj();
            }
            ifft.process(&mut buf);
            let start = t * config.shift;
            for (n, w) in synth.iter().enumerate() {
                acc[start + n] += buf[n].re * scale * w;
            }
        }
        acc.truncate(out_len);
        channels.push(acc);
    }
    AudioBuffer::new(spec.sample_rate, channels)
}
