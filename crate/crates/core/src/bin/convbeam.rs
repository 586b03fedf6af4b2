use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use convbeam::cli::{
    cmd_demo, cmd_enhance, cmd_evaluate, cmd_simulate, DemoArgs, EnhanceArgs, EvaluateArgs, SimulateArgs,
};
use convbeam::config::EnhanceConfig;
use convbeam::scene::SceneSpec;
use convbeam::wav::WavFormat;
use convbeam::{Error, Result};

#[derive(Parser)]
#[command(name = "convbeam", version, about = "Mask-based WPE + MVDR/wMPDR speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a reverberant scene and its ground-truth components.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scene description (TOML); a standard scene is generated otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Mono 16 kHz source WAVs, one per speaker.
        #[arg(long, num_args = 1..)]
        sources: Vec<PathBuf>,
        #[arg(long, default_value_t = 2)]
        speakers: usize,
        #[arg(long, default_value_t = 6)]
        channels: usize,
        #[arg(long, default_value_t = 0.4)]
        t60: f64,
        #[arg(long, default_value_t = 20.0)]
        snr: f64,
        /// Length of generated sources in seconds.
        #[arg(long, default_value_t = 6.0)]
        duration: f64,
        /// Write 16-bit PCM instead of 32-bit float.
        #[arg(long)]
        pcm16: bool,
    },
    /// Enhance every speaker of a mixture.
    Enhance {
        #[command(flatten)]
        common: Common,
        /// Enhancement config (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mixture: PathBuf,
        /// Simulation directory for oracle masks.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score enhanced WAVs against a simulation directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        enhanced: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        /// 1-based reference channel.
        #[arg(long, default_value_t = 1)]
        ref_channel: usize,
    },
    /// Simulate, enhance over the variant grid and evaluate.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        channels: usize,
        #[arg(long, default_value_t = 6.0)]
        duration: f64,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<EnhanceConfig> {
    let cfg = match path {
        Some(p) => EnhanceConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => EnhanceConfig::default(),
    };
    cfg.apply_env(std::env::vars())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            common,
            config,
            sources,
            speakers,
            channels,
            t60,
            snr,
            duration,
            pcm16,
        } => {
            let mut scene = match &config {
                Some(p) => SceneSpec::from_toml(&std::fs::read_to_string(p)?)?,
                None => SceneSpec::standard(speakers, channels, t60, snr, common.seed.unwrap_or(0)),
            };
            if let (Some(seed), Some(_)) = (common.seed, &config) {
                scene.seed = seed;
            }
            let manifest = cmd_simulate(&SimulateArgs {
                scene,
                sources,
                duration_s: duration,
                out: common.out,
                format: if pcm16 { WavFormat::Pcm16 } else { WavFormat::Float32 },
            })?;
            log::info!("simulate wrote {} files", manifest.outputs.len());
        }
        Command::Enhance {
            common,
            config,
            mixture,
            truth,
        } => {
            let manifest = cmd_enhance(&EnhanceArgs {
                config: load_config(config.as_ref())?,
                mixture,
                truth,
                out: common.out,
                seed: common.seed,
            })?;
            log::info!("enhance wrote {} files", manifest.outputs.len());
        }
        Command::Evaluate {
            common,
            enhanced,
            truth,
            ref_channel,
        } => {
            if ref_channel == 0 {
                return Err(Error::InvalidArgument("reference channel is 1-based".into()));
            }
            let report = cmd_evaluate(&EvaluateArgs {
                enhanced,
                truth,
                out: common.out,
                ref_index: ref_channel - 1,
                edge: EnhanceConfig::default().stft.window_len,
            })?;
            print!("{}", report.to_table());
        }
        Command::Demo {
            common,
            channels,
            duration,
        } => {
            let result = cmd_demo(&DemoArgs {
                out: common.out,
                seed: common.seed.unwrap_or(0),
                channels,
                duration_s: duration,
                ..DemoArgs::default()
            })?;
            print!("{}", result.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
