//! File-level commands behind the `convbeam` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::beamform::{Formula, Variant};
use crate::config::{EnhanceConfig, MaskSource};
use crate::cxla::CVector;
use crate::error::{Error, Result};
use crate::mask::{load_masks, mask_file_name, MaskRole, MaskSet, MaskType};
use crate::metrics::ScoreReport;
use crate::pipeline::{
    beamform, dereverberate, oracle_mask_sets, prepare_masks, select_channels, RunManifest, Timings,
    TruthAudio,
};
use crate::scene::{render, speechlike_source, SceneSpec};
use crate::stft::{istft, stft, AudioBuffer};
use crate::wav::{quantize, read_wav, write_wav, WavFormat};

pub const MIXTURE_WAV: &str = "mixture.wav";
pub const NOISE_WAV: &str = "noise.wav";
pub const STEERING_FILE: &str = "steering.cbsv";
pub const SCENE_FILE: &str = "scene.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_TSV: &str = "report.tsv";

const STEERING_MAGIC: &[u8; 4] = b"CBSV";
const STEERING_VERSION: u32 = 1;

pub fn early_wav(j: usize) -> String {
    format!("early_spk{}.wav", j + 1)
}

pub fn late_wav(j: usize) -> String {
    format!("late_spk{}.wav", j + 1)
}

pub fn enhanced_wav(j: usize) -> String {
    format!("enhanced_spk{}.wav", j + 1)
}

/// Seed of speaker `j`'s synthetic source.
pub fn source_seed(seed: u64, j: usize) -> u64 {
    seed ^ ((j as u64 + 1) << 32)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// `steering[j][f]` as `CBSV`, version, `J`, `F`, `C` (u32 LE) followed by
/// `(re, im)` f64 LE pairs in `j, f, c` order.
pub fn encode_steering(steering: &[Vec<CVector>]) -> Result<Vec<u8>> {
    let speakers = steering.len();
    let bins = steering.first().map_or(0, Vec::len);
    let channels = steering.first().and_then(|s| s.first()).map_or(0, CVector::len);
    if steering.iter().flatten().any(|v| v.len() != channels) || steering.iter().any(|s| s.len() != bins) {
        return Err(Error::ShapeMismatch("ragged steering vectors".into()));
    }
    let mut out = Vec::with_capacity(20 + 16 * speakers * bins * channels);
    out.extend_from_slice(STEERING_MAGIC);
    for v in [STEERING_VERSION, speakers as u32, bins as u32, channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for z in steering.iter().flatten().flat_map(|v| v.as_slice()) {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_steering(bytes: &[u8]) -> Result<Vec<Vec<CVector>>> {
    let bad = |m: &str| Error::InvalidArgument(format!("steering file: {m}"));
    if bytes.len() < 20 || &bytes[..4] != STEERING_MAGIC {
        return Err(bad("bad header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != STEERING_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (speakers, bins, channels) = (word(1), word(2), word(3));
    let count = speakers
        .checked_mul(bins)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != 20 + 16 * count {
        return Err(bad("length does not match header"));
    }
    let mut values = bytes[20..].chunks_exact(16).map(|c| {
        Complex64::new(
            f64::from_le_bytes(c[..8].try_into().unwrap()),
            f64::from_le_bytes(c[8..].try_into().unwrap()),
        )
    });
    (0..speakers)
        .map(|_| {
            (0..bins)
                .map(|_| CVector::new(values.by_ref().take(channels).collect()))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub scene: SceneSpec,
    /// Mono source WAVs; synthetic sources are generated when empty.
    pub sources: Vec<PathBuf>,
    /// Length of generated sources in seconds.
    pub duration_s: f64,
    pub out: PathBuf,
    pub format: WavFormat,
}

/// Renders a scene and writes its mixture, components, truth steering
/// vectors and manifest.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let spec = &args.scene;
    spec.validate()?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(spec.seed);
    manifest.scene = Some(spec.clone());

    let mut timings = Timings::default();
    let dry = if args.sources.is_empty() {
        (0..spec.speakers)
            .map(|j| speechlike_source(source_seed(spec.seed, j), args.duration_s, spec.sample_rate))
            .collect()
    } else {
        for path in &args.sources {
            manifest.add_input(path)?;
        }
        args.sources.iter().map(|p| read_wav(p)).collect::<Result<Vec<_>>>()?
    };
    let truth = timings.time("render", || render(spec, &dry, &crate::stft::StftConfig::default()))?;

    let q = |a: &AudioBuffer| quantize_buffer(a, args.format);
    let early: Vec<AudioBuffer> = truth.early.iter().map(q).collect::<Result<_>>()?;
    let late: Vec<AudioBuffer> = truth.late.iter().map(q).collect::<Result<_>>()?;
    let noise = q(&truth.noise)?;
    let mut parts: Vec<&AudioBuffer> = Vec::new();
    for j in 0..spec.speakers {
        parts.push(&early[j]);
        parts.push(&late[j]);
    }
    parts.push(&noise);
    let mixture = sum_components(&parts, args.format)?;

    let out = &args.out;
    let mut outputs = vec![(out.join(MIXTURE_WAV), mixture)];
    for j in 0..spec.speakers {
        outputs.push((out.join(early_wav(j)), early[j].clone()));
        outputs.push((out.join(late_wav(j)), late[j].clone()));
    }
    outputs.push((out.join(NOISE_WAV), noise));
    timings.time("write", || -> Result<()> {
        for (path, audio) in &outputs {
            write_wav(path, audio, args.format)?;
        }
        std::fs::write(out.join(STEERING_FILE), encode_steering(&truth.steering)?)?;
        std::fs::write(out.join(SCENE_FILE), spec.to_toml()?)?;
        Ok(())
    })?;
    for (path, _) in &outputs {
        manifest.add_output(path)?;
    }
    manifest.add_output(&out.join(STEERING_FILE))?;
    manifest.add_output(&out.join(SCENE_FILE))?;
    manifest.timings_ms = timings;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn quantize_buffer(a: &AudioBuffer, format: WavFormat) -> Result<AudioBuffer> {
    let channels = a
        .channels()
        .iter()
        .map(|ch| ch.iter().map(|&x| quantize(x, format)).collect())
        .collect();
    AudioBuffer::new(a.sample_rate(), channels)
}

/// Sample-wise sum in storage precision, so the stored mixture is the sum
/// of the stored components.
fn sum_components(parts: &[&AudioBuffer], format: WavFormat) -> Result<AudioBuffer> {
    let first = parts[0];
    let channels = (0..first.num_channels())
        .map(|c| {
            (0..first.len())
                .map(|n| match format {
                    WavFormat::Float32 => parts.iter().fold(0f32, |acc, p| acc + p.channel(c)[n] as f32) as f64,
                    WavFormat::Pcm16 => quantize(parts.iter().map(|p| p.channel(c)[n]).sum(), format),
                })
                .collect()
        })
        .collect();
    AudioBuffer::new(first.sample_rate(), channels)
}

/// Number of consecutive `name(0), name(1), …` files present in `dir`.
fn count_files(dir: &Path, name: impl Fn(usize) -> String) -> usize {
    (0..).take_while(|&j| dir.join(name(j)).is_file()).count()
}

/// Reads the component WAVs written by [`cmd_simulate`].
pub fn read_truth(dir: &Path) -> Result<TruthAudio> {
    let speakers = count_files(dir, early_wav);
    if speakers == 0 {
        return Err(Error::InvalidArgument(format!(
            "no {} in {}",
            early_wav(0),
            dir.display()
        )));
    }
    Ok(TruthAudio {
        mixture: read_wav(&dir.join(MIXTURE_WAV))?,
        early: (0..speakers).map(|j| read_wav(&dir.join(early_wav(j)))).collect::<Result<_>>()?,
        late: (0..speakers).map(|j| read_wav(&dir.join(late_wav(j)))).collect::<Result<_>>()?,
        noise: read_wav(&dir.join(NOISE_WAV))?,
    })
}

/// Loads the `3J` mask files of a mask directory.
pub fn read_mask_files(dir: &Path) -> Result<Vec<MaskSet>> {
    let speakers = count_files(dir, |j| mask_file_name(MaskRole::Wpe, j));
    if speakers == 0 {
        return Err(Error::MaskFormat(format!("no mask files in {}", dir.display())));
    }
    (0..speakers)
        .map(|j| {
            let load = |role| load_masks(&dir.join(mask_file_name(role, j)));
            Ok(MaskSet {
                wpe: load(MaskRole::Wpe)?,
                target: load(MaskRole::BfTarget)?,
                noise: load(MaskRole::BfNoise)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EnhanceArgs {
    pub config: EnhanceConfig,
    pub mixture: PathBuf,
    /// Simulation directory, required for oracle masks.
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Enhances every speaker and writes `enhanced_spk{j}.wav` plus a manifest.
pub fn cmd_enhance(args: &EnhanceArgs) -> Result<RunManifest> {
    let cfg = &args.config;
    cfg.validate()?;
    let mut manifest = RunManifest::new("enhance");
    manifest.seed = args.seed;
    manifest.config = Some(cfg.clone());
    let mut timings = Timings::default();

    let mixture = read_wav(&args.mixture)?;
    manifest.add_input(&args.mixture)?;
    if cfg.channels_used > mixture.num_channels() {
        return Err(Error::InvalidArgument(format!(
            "channels_used {} exceeds the {} input channels",
            cfg.channels_used,
            mixture.num_channels()
        ))
        .in_stage("input"));
    }
    let masks = match &cfg.mask_source {
        MaskSource::Oracle => {
            let dir = args.truth.as_ref().ok_or_else(|| {
                Error::InvalidArgument("oracle masks need a truth directory".into()).in_stage("masks")
            })?;
            let truth = read_truth(dir)?;
            for j in 0..truth.speakers() {
                manifest.add_input(&dir.join(early_wav(j)))?;
                manifest.add_input(&dir.join(late_wav(j)))?;
            }
            manifest.add_input(&dir.join(NOISE_WAV))?;
            timings.time("masks", || oracle_mask_sets(&truth, cfg))?
        }
        MaskSource::File(dir) => {
            let sets = read_mask_files(dir).map_err(|e| e.in_stage("masks"))?;
            for j in 0..sets.len() {
                for role in [MaskRole::Wpe, MaskRole::BfTarget, MaskRole::BfNoise] {
                    manifest.add_input(&dir.join(mask_file_name(role, j)))?;
                }
            }
            sets
        }
    };

    create_dir(&args.out)?;
    let input = select_channels(&mixture, cfg.channels_used)?;
    let spec = timings.time("stft", || stft(&input, &cfg.stft)).map_err(|e| e.in_stage("stft"))?;
    for (j, set) in masks.iter().enumerate() {
        let out = timings.time("enhance", || crate::pipeline::enhance_speaker(&spec, set, cfg))?;
        let path = args.out.join(enhanced_wav(j));
        write_wav(&path, &out.audio, cfg.output.format)?;
        manifest.add_output(&path)?;
    }
    manifest.timings_ms = timings;
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub enhanced: Vec<PathBuf>,
    pub truth: PathBuf,
    pub out: PathBuf,
    /// 0-based reference channel.
    pub ref_index: usize,
    /// Samples dropped at both ends before scoring.
    pub edge: usize,
}

fn ref_channel(audio: &AudioBuffer, q: usize, what: &str) -> Result<Vec<f64>> {
    if q >= audio.num_channels() {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} channels, reference channel {} requested",
            audio.num_channels(),
            q + 1
        )));
    }
    Ok(audio.channel(q).to_vec())
}

/// Scores a set of single-channel estimates against the truth directory.
pub fn score(enhanced: &[AudioBuffer], truth: &TruthAudio, ref_index: usize, edge: usize) -> Result<ScoreReport> {
    if enhanced.len() != truth.speakers() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates for {} speakers",
            enhanced.len(),
            truth.speakers()
        )));
    }
    let len = truth.mixture.len();
    if let Some(bad) = enhanced.iter().find(|a| a.len() != len) {
        return Err(Error::ShapeMismatch(format!("estimate of {} samples, truth of {len}", bad.len())));
    }
    let refs = truth
        .early
        .iter()
        .map(|a| ref_channel(a, ref_index, "early image"))
        .collect::<Result<Vec<_>>>()?;
    let input = ref_channel(&truth.mixture, ref_index, "mixture")?;
    let est: Vec<&[f64]> = enhanced.iter().map(|a| a.channel(0)).collect();
    let refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
    ScoreReport::evaluate(&est, &refs, &input, edge)
}

pub fn write_report(report: &ScoreReport, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    std::fs::write(dir.join(REPORT_TXT), report.to_table())?;
    std::fs::write(dir.join(REPORT_TSV), report.to_tsv())?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<ScoreReport> {
    let truth = read_truth(&args.truth)?;
    let enhanced = args.enhanced.iter().map(|p| read_wav(p)).collect::<Result<Vec<_>>>()?;
    let report = score(&enhanced, &truth, args.ref_index, args.edge)?;
    write_report(&report, &args.out)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DemoArgs {
    pub out: PathBuf,
    pub seed: u64,
    pub channels: usize,
    pub duration_s: f64,
    pub t60: f64,
    pub noise_snr: f64,
}

impl Default for DemoArgs {
    fn default() -> Self {
        Self {
            out: PathBuf::from("demo"),
            seed: 0,
            channels: 6,
            duration_s: 6.0,
            t60: 0.4,
            noise_snr: 20.0,
        }
    }
}

/// One row of the demo grid.
#[derive(Debug, Clone)]
pub struct GridRow {
    pub variant: Variant,
    pub formula: Formula,
    pub mask_type: MaskType,
    pub report: ScoreReport,
}

impl GridRow {
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}",
            variant_name(self.variant),
            formula_name(self.formula),
            mask_type_name(self.mask_type)
        )
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Mvdr => "mvdr",
        Variant::Wmpdr => "wmpdr",
    }
}

fn formula_name(f: Formula) -> &'static str {
    match f {
        Formula::WithoutSv => "without_sv",
        Formula::WithSv => "with_sv",
    }
}

fn mask_type_name(m: MaskType) -> &'static str {
    match m {
        MaskType::Tf => "tf",
        MaskType::Vad => "vad",
    }
}

#[derive(Debug, Clone)]
pub struct DemoResult {
    pub input: ScoreReport,
    pub rows: Vec<GridRow>,
}

impl DemoResult {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<8} {:<11} {:<5} {:>9} {:>9} {:>6} {:>6}",
            "variant", "formula", "mask", "SDR", "SI-SDR", "PESQ", "STOI"
        )
        .unwrap();
        let mean = |r: &ScoreReport, f: fn(&crate::metrics::SpeakerScore) -> f64| {
            r.speakers.iter().map(f).sum::<f64>() / r.speakers.len() as f64
        };
        writeln!(
            out,
            "{:<8} {:<11} {:<5} {:>9.2} {:>9.2} {:>6} {:>6}",
            "input",
            "-",
            "-",
            mean(&self.input, |s| s.input_sdr),
            mean(&self.input, |s| s.input_si_sdr),
            "n/a",
            "n/a"
        )
        .unwrap();
        for row in &self.rows {
            writeln!(
                out,
                "{:<8} {:<11} {:<5} {:>9.2} {:>9.2} {:>6} {:>6}",
                variant_name(row.variant),
                formula_name(row.formula),
                mask_type_name(row.mask_type),
                mean(&row.report, |s| s.sdr),
                mean(&row.report, |s| s.si_sdr),
                "n/a",
                "n/a"
            )
            .unwrap();
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for line in row.report.to_tsv().lines() {
                writeln!(out, "{}\t{}", row.name(), line).unwrap();
            }
        }
        out
    }
}

/// Simulates a two-speaker scene, runs the eight-configuration grid and
/// scores every cell.
pub fn cmd_demo(args: &DemoArgs) -> Result<DemoResult> {
    let scene_dir = args.out.join("scene");
    let spec = SceneSpec::standard(2, args.channels, args.t60, args.noise_snr, args.seed);
    cmd_simulate(&SimulateArgs {
        scene: spec,
        sources: Vec::new(),
        duration_s: args.duration_s,
        out: scene_dir.clone(),
        format: WavFormat::Float32,
    })?;
    let truth = read_truth(&scene_dir)?;
    let base = EnhanceConfig::default();
    let edge = base.stft.window_len;
    let q = base.beamformer.ref_index();
    let spec = stft(&truth.mixture, &base.stft)?;
    let sets = oracle_mask_sets(&truth, &base)?;

    let mut rows = Vec::new();
    for mask_type in [MaskType::Tf, MaskType::Vad] {
        // WPE output depends only on the speaker and the mask type
        let derev = sets
            .iter()
            .map(|set| {
                let masks = prepare_masks(set, mask_type, &base.wpe, &base.beamformer, spec.bins())?;
                Ok((dereverberate(&spec, &masks, &base.wpe)?, masks))
            })
            .collect::<Result<Vec<_>>>()?;
        for variant in [Variant::Mvdr, Variant::Wmpdr] {
            for formula in [Formula::WithSv, Formula::WithoutSv] {
                let mut bf = base.beamformer;
                bf.variant = variant;
                bf.formula = formula;
                let enhanced = derev
                    .iter()
                    .map(|(d, masks)| istft(&beamform(d, masks, &bf)?.enhanced))
                    .collect::<Result<Vec<_>>>()?;
                let row = GridRow {
                    variant,
                    formula,
                    mask_type,
                    report: score(&enhanced, &truth, q, edge)?,
                };
                let dir = args.out.join(row.name());
                create_dir(&dir)?;
                for (j, audio) in enhanced.iter().enumerate() {
                    write_wav(&dir.join(enhanced_wav(j)), audio, WavFormat::Float32)?;
                }
                write_report(&row.report, &dir)?;
                rows.push(row);
            }
        }
    }
    rows.sort_by_key(|r| (r.mask_type == MaskType::Vad, r.variant == Variant::Wmpdr, r.formula == Formula::WithoutSv));
    let result = DemoResult {
        input: rows[0].report.clone(),
        rows,
    };
    std::fs::write(args.out.join(REPORT_TXT), result.to_table())?;
    std::fs::write(args.out.join(REPORT_TSV), result.to_tsv())?;
    Ok(result)
}
