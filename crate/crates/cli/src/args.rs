use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tempo", version, about = "Audio-conditioned video tooling: alignment scoring, tokens and a toy diffusion model")]
pub struct Cli {
    /// Read additional flags from a `key = value` file. Flags given on the
    /// command line win over the file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score how well audio onsets line up with video motion peaks.
    AvAlign(AvAlignArgs),
    /// Map audio embeddings to per-frame condition tokens.
    Tokens(TokensArgs),
    /// Write a synthetic corpus of clips with known event frames.
    GenSynth(GenSynthArgs),
    /// Train the mapper and pooling against the frozen toy model.
    TrainToy(TrainToyArgs),
    /// Sample a video from a checkpoint and an audio file.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct AvAlignArgs {
    #[arg(long, value_name = "PATH", required_unless_present = "batch", conflicts_with = "batch")]
    pub video: Option<PathBuf>,
    #[arg(long, value_name = "PATH", required_unless_present = "batch", conflicts_with = "batch")]
    pub audio: Option<PathBuf>,
    /// Frame tolerance for a match.
    #[arg(long, default_value_t = 1)]
    pub tolerance: usize,
    /// Frame rate to use instead of the one in the video header.
    #[arg(long, value_name = "RATE")]
    pub fps_override: Option<String>,
    #[arg(long)]
    pub json: bool,
    /// Read `VIDEO AUDIO` pairs from standard input, one per line.
    #[arg(long)]
    pub batch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TokenMode {
    Windows,
    Vec,
}

#[derive(Debug, Args)]
pub struct TokensArgs {
    /// TTE1 embeddings file.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["audio", "toy_encoder"], required_unless_present = "audio")]
    pub embeddings: Option<PathBuf>,
    /// WAV file, embedded with the built-in toy encoder.
    #[arg(long, value_name = "PATH", requires = "toy_encoder")]
    pub audio: Option<PathBuf>,
    #[arg(long, requires = "audio")]
    pub toy_encoder: bool,
    /// Audio segments (frames) for the toy encoder.
    #[arg(long = "L", value_name = "N", default_value_t = 24)]
    pub segments: usize,
    /// Encoder layers for the toy encoder.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Feature width per layer for the toy encoder.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = TokenMode::Windows)]
    pub mode: TokenMode,
    /// Use the trained adapter from a checkpoint instead of a fresh one.
    #[arg(long, value_name = "PATH")]
    pub ckpt: Option<PathBuf>,
    /// Token width per layer of a fresh adapter.
    #[arg(long, default_value_t = 8)]
    pub token_dim: usize,
    #[arg(long, default_value_t = 512)]
    pub mapper_hidden: usize,
    /// Seed of a fresh adapter.
    #[arg(long, env = "TEMPO_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Bounce,
    Flash,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub clips: usize,
    /// Audio delay in frames.
    #[arg(long, default_value_t = 0)]
    pub shift: usize,
    #[arg(long, env = "TEMPO_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Kind::Bounce)]
    pub kind: Kind,
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 24)]
    pub fps: u32,
    #[arg(long, default_value_t = 6)]
    pub events: usize,
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    #[arg(long, default_value_t = 64)]
    pub height: u32,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Learning rate; defaults to a rate suited to the optimizer.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_l1: f64,
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Loss history, one value per line. Defaults to `<ckpt>.loss.txt`.
    #[arg(long, value_name = "PATH")]
    pub loss_log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Sgd)]
    pub optimizer: OptimizerKind,
    #[arg(long, env = "TEMPO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Videos per batch.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Frames per clip and per generated video.
    #[arg(long = "L", value_name = "N", default_value_t = 24)]
    pub frames: usize,
    #[arg(long, default_value_t = 512)]
    pub mapper_hidden: usize,
    #[arg(long, value_enum, default_value_t = TokenMode::Windows)]
    pub mode: TokenMode,
    /// Window of steps averaged for the reported first/last losses.
    #[arg(long, default_value_t = 20)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub audio: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, env = "TEMPO_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Offset into the audio, in seconds. The clip conditions on the next
    /// `L / fps` seconds.
    #[arg(long, value_name = "SECS", default_value_t = 0.0)]
    pub start: f64,
}
