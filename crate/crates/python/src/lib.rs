//! Python bindings for the `convbeam` frontend.
//!
//! Matrices cross the boundary as lists of rows of complex numbers, audio
//! as lists of channels of floats.

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use convbeam::beamform::{Formula, Variant};
use convbeam::cxla::{self, CMatrix, CVector};
use convbeam::mask::MaskType;
use convbeam::metrics::{self, ScoreReport};
use convbeam::pipeline::{self, TruthAudio};
use convbeam::scene::{self, SceneSpec, SceneTruth};
use convbeam::stft::{self, AudioBuffer, SpectroTensor, StftConfig};

create_exception!(convbeam_py, ConvbeamError, PyException);

fn err(e: convbeam::Error) -> PyErr {
    ConvbeamError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<Complex64>>) -> PyResult<CMatrix> {
    CMatrix::from_rows(&rows).map_err(err)
}

fn from_matrix(m: &CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect()).collect()
}

fn to_audio(channels: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<AudioBuffer> {
    AudioBuffer::new(sample_rate, channels).map_err(err)
}

/// Inverse of a square complex matrix.
#[pyfunction]
fn cinv(matrix: Vec<Vec<Complex64>>) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(from_matrix(&cxla::cinv(&to_matrix(matrix)?).map_err(err)?))
}

/// Solves `matrix · X = rhs`.
#[pyfunction]
fn csolve(matrix: Vec<Vec<Complex64>>, rhs: Vec<Vec<Complex64>>) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(from_matrix(&cxla::csolve(&to_matrix(matrix)?, &to_matrix(rhs)?).map_err(err)?))
}

/// `Φ + ε · Trace(Φ) · I`.
#[pyfunction]
fn diag_load(matrix: Vec<Vec<Complex64>>, eps: f64) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(from_matrix(&cxla::diag_load(&to_matrix(matrix)?, eps).map_err(err)?))
}

#[pyfunction]
fn hermitize(matrix: Vec<Vec<Complex64>>) -> PyResult<Vec<Vec<Complex64>>> {
    Ok(from_matrix(&cxla::hermitize(&to_matrix(matrix)?).map_err(err)?))
}

/// Dominant eigenvector by power iteration, seeded with `(1, …, 1)/√m`
/// unless `seed` is given.
#[pyfunction]
#[pyo3(signature = (matrix, iters = 50, seed = None))]
fn power_iteration(matrix: Vec<Vec<Complex64>>, iters: usize, seed: Option<Vec<Complex64>>) -> PyResult<Vec<Complex64>> {
    let m = to_matrix(matrix)?;
    let seed = match seed {
        Some(s) => CVector::new(s).map_err(err)?,
        None => CVector::uniform(m.rows()),
    };
    Ok(cxla::power_iter_maxeig(&m, iters, &seed).map_err(err)?.into_vec())
}

/// Multichannel spectrogram.
#[pyclass(frozen, module = "convbeam_py")]
struct Spectrogram {
    inner: SpectroTensor,
}

#[pymethods]
impl Spectrogram {
    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames()
    }

    #[getter]
    fn bins(&self) -> usize {
        self.inner.bins()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn get(&self, t: usize, f: usize, c: usize) -> PyResult<Complex64> {
        let (frames, bins, channels) = self.inner.shape();
        if t >= frames || f >= bins || c >= channels {
            return Err(PyValueError::new_err(format!(
                "index ({t}, {f}, {c}) outside ({frames}, {bins}, {channels})"
            )));
        }
        Ok(self.inner.get(t, f, c))
    }

    /// Nested `[frame][bin][channel]` list.
    fn to_list(&self) -> Vec<Vec<Vec<Complex64>>> {
        (0..self.inner.frames())
            .map(|t| (0..self.inner.bins()).map(|f| self.inner.frame_bin(t, f).to_vec()).collect())
            .collect()
    }

    fn energy(&self) -> f64 {
        self.inner.energy()
    }

    fn __repr__(&self) -> String {
        let (t, f, c) = self.inner.shape();
        format!("Spectrogram(frames={t}, bins={f}, channels={c})")
    }
}

#[pyfunction]
#[pyo3(name = "stft", signature = (channels, sample_rate = 16_000, window_len = 400, shift = 160, transform_len = 512))]
fn py_stft(channels: Vec<Vec<f64>>, sample_rate: u32, window_len: usize, shift: usize, transform_len: usize) -> PyResult<Spectrogram> {
    let cfg = StftConfig {
        window_len,
        shift,
        transform_len,
    };
    let inner = stft::stft(&to_audio(channels, sample_rate)?, &cfg).map_err(err)?;
    Ok(Spectrogram { inner })
}

#[pyfunction]
#[pyo3(name = "istft")]
fn py_istft(spec: &Spectrogram) -> PyResult<Vec<Vec<f64>>> {
    Ok(stft::istft(&spec.inner).map_err(err)?.into_channels())
}

#[pyfunction]
fn si_sdr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    metrics::si_sdr(&estimate, &reference).map_err(err)
}

/// SDR with an `taps`-tap distortion filter.
#[pyfunction]
#[pyo3(signature = (estimate, reference, taps = metrics::DEFAULT_SDR_TAPS))]
fn sdr(estimate: Vec<f64>, reference: Vec<f64>, taps: usize) -> PyResult<f64> {
    metrics::sdr_simple(&estimate, &reference, taps).map_err(err)
}

/// Best estimate-to-reference assignment by SI-SDR: `(permutation, scores)`.
#[pyfunction]
fn pit_assign(estimates: Vec<Vec<f64>>, references: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let est: Vec<&[f64]> = estimates.iter().map(Vec::as_slice).collect();
    let refs: Vec<&[f64]> = references.iter().map(Vec::as_slice).collect();
    let pit = metrics::pit_assign(&est, &refs).map_err(err)?;
    Ok((pit.permutation, pit.scores))
}

/// Enhancement settings.
#[pyclass(from_py_object, module = "convbeam_py")]
#[derive(Clone)]
struct EnhanceConfig {
    inner: convbeam::config::EnhanceConfig,
}

#[pymethods]
impl EnhanceConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: Default::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: convbeam::config::EnhanceConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    #[getter]
    fn wpe_enabled(&self) -> bool {
        self.inner.wpe.enabled
    }

    #[setter]
    fn set_wpe_enabled(&mut self, on: bool) {
        self.inner.wpe.enabled = on;
    }

    /// `"tf"` or `"vad"`.
    #[getter]
    fn mask_type(&self) -> &'static str {
        match self.inner.mask_type {
            MaskType::Tf => "tf",
            MaskType::Vad => "vad",
        }
    }

    #[setter]
    fn set_mask_type(&mut self, name: &str) -> PyResult<()> {
        self.inner.mask_type = match name {
            "tf" => MaskType::Tf,
            "vad" => MaskType::Vad,
            _ => return Err(PyValueError::new_err(format!("unknown mask type {name:?}"))),
        };
        Ok(())
    }

    /// `"mvdr"` or `"wmpdr"`.
    #[getter]
    fn variant(&self) -> &'static str {
        match self.inner.beamformer.variant {
            Variant::Mvdr => "mvdr",
            Variant::Wmpdr => "wmpdr",
        }
    }

    #[setter]
    fn set_variant(&mut self, name: &str) -> PyResult<()> {
        self.inner.beamformer.variant = match name {
            "mvdr" => Variant::Mvdr,
            "wmpdr" => Variant::Wmpdr,
            _ => return Err(PyValueError::new_err(format!("unknown variant {name:?}"))),
        };
        Ok(())
    }

    /// `"with_sv"` or `"without_sv"`.
    #[getter]
    fn formula(&self) -> &'static str {
        match self.inner.beamformer.formula {
            Formula::WithSv => "with_sv",
            Formula::WithoutSv => "without_sv",
        }
    }

    #[setter]
    fn set_formula(&mut self, name: &str) -> PyResult<()> {
        self.inner.beamformer.formula = match name {
            "with_sv" => Formula::WithSv,
            "without_sv" => Formula::WithoutSv,
            _ => return Err(PyValueError::new_err(format!("unknown formula {name:?}"))),
        };
        Ok(())
    }
}

/// Simulated reverberant mixture with its ground-truth components.
#[pyclass(frozen, module = "convbeam_py")]
struct Scene {
    truth: SceneTruth,
}

#[pymethods]
impl Scene {
    #[getter]
    fn speakers(&self) -> usize {
        self.truth.early.len()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.truth.mixture.sample_rate()
    }

    #[getter]
    fn mixture(&self) -> Vec<Vec<f64>> {
        self.truth.mixture.channels().to_vec()
    }

    #[getter]
    fn noise(&self) -> Vec<Vec<f64>> {
        self.truth.noise.channels().to_vec()
    }

    fn early(&self, speaker: usize) -> PyResult<Vec<Vec<f64>>> {
        self.pick(&self.truth.early, speaker)
    }

    fn late(&self, speaker: usize) -> PyResult<Vec<Vec<f64>>> {
        self.pick(&self.truth.late, speaker)
    }

    /// Per-bin steering vectors `[bin][channel]` of one speaker.
    fn steering(&self, speaker: usize) -> PyResult<Vec<Vec<Complex64>>> {
        let v = self.truth.steering.get(speaker).ok_or_else(|| self.bad_speaker(speaker))?;
        Ok(v.iter().map(|x| x.as_slice().to_vec()).collect())
    }

    fn spec_toml(&self) -> PyResult<String> {
        self.truth.spec.to_toml().map_err(err)
    }
}

impl Scene {
    fn bad_speaker(&self, speaker: usize) -> PyErr {
        PyValueError::new_err(format!("speaker {speaker} of {}", self.truth.early.len()))
    }

    fn pick(&self, images: &[AudioBuffer], speaker: usize) -> PyResult<Vec<Vec<f64>>> {
        images
            .get(speaker)
            .map(|a| a.channels().to_vec())
            .ok_or_else(|| self.bad_speaker(speaker))
    }
}

/// Renders a shoebox-room scene with speech-like sources.
#[pyfunction]
#[pyo3(signature = (speakers = 2, channels = 6, t60 = 0.4, noise_snr = 20.0, duration = 6.0, seed = 0, early_window_ms = None))]
fn simulate(
    py: Python<'_>,
    speakers: usize,
    channels: usize,
    t60: f64,
    noise_snr: f64,
    duration: f64,
    seed: u64,
    early_window_ms: Option<f64>,
) -> PyResult<Scene> {
    let mut spec = SceneSpec::standard(speakers, channels, t60, noise_snr, seed);
    if let Some(ms) = early_window_ms {
        spec.early_window_ms = ms;
    }
    let truth = py
        .detach(|| {
            let dry: Vec<AudioBuffer> = (0..speakers)
                .map(|j| scene::speechlike_source(convbeam::cli::source_seed(seed, j), duration, 16_000))
                .collect();
            scene::render(&spec, &dry, &StftConfig::default())
        })
        .map_err(err)?;
    Ok(Scene { truth })
}

/// Enhances every speaker of `scene` with oracle masks; one output
/// signal per speaker.
#[pyfunction]
#[pyo3(signature = (scene, config = None))]
fn enhance(py: Python<'_>, scene: &Scene, config: Option<EnhanceConfig>) -> PyResult<Vec<Vec<f64>>> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let outs = py
        .detach(|| {
            let truth = TruthAudio::from_scene(&scene.truth);
            let sets = pipeline::oracle_mask_sets(&truth, &cfg)?;
            pipeline::enhance(&scene.truth.mixture, &sets, &cfg)
        })
        .map_err(err)?;
    Ok(outs.into_iter().map(|a| a.into_channels().swap_remove(0)).collect())
}

/// PIT-aligned scores of `estimates` against the early images of `scene`
/// at `ref_channel` (0-based). Returns a dict with `permutation`,
/// `si_sdr`, `sdr`, `delta_si_sdr` and `delta_sdr` lists.
#[pyfunction]
#[pyo3(signature = (estimates, scene, ref_channel = 0, edge = 400))]
fn evaluate<'py>(
    py: Python<'py>,
    estimates: Vec<Vec<f64>>,
    scene: &Scene,
    ref_channel: usize,
    edge: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let truth = &scene.truth;
    if ref_channel >= truth.mixture.num_channels() {
        return Err(PyValueError::new_err(format!("reference channel {ref_channel} out of range")));
    }
    let est: Vec<&[f64]> = estimates.iter().map(Vec::as_slice).collect();
    let refs: Vec<&[f64]> = truth.early.iter().map(|a| a.channel(ref_channel)).collect();
    let report = ScoreReport::evaluate(&est, &refs, truth.mixture.channel(ref_channel), edge).map_err(err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("permutation", &report.permutation)?;
    let column = |f: fn(&metrics::SpeakerScore) -> f64| report.speakers.iter().map(f).collect::<Vec<_>>();
    out.set_item("si_sdr", column(|s| s.si_sdr))?;
    out.set_item("sdr", column(|s| s.sdr))?;
    out.set_item("delta_si_sdr", column(|s| s.delta_si_sdr()))?;
    out.set_item("delta_sdr", column(|s| s.delta_sdr()))?;
    Ok(out)
}

#[pymodule]
pub fn convbeam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConvbeamError", m.py().get_type::<ConvbeamError>())?;
    m.add_class::<Spectrogram>()?;
    m.add_class::<EnhanceConfig>()?;
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(cinv, m)?)?;
    m.add_function(wrap_pyfunction!(csolve, m)?)?;
    m.add_function(wrap_pyfunction!(diag_load, m)?)?;
    m.add_function(wrap_pyfunction!(hermitize, m)?)?;
    m.add_function(wrap_pyfunction!(power_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(py_stft, m)?)?;
    m.add_function(wrap_pyfunction!(py_istft, m)?)?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(sdr, m)?)?;
    m.add_function(wrap_pyfunction!(pit_assign, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(enhance, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
