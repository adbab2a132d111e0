mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Vector quantization with duplicate removal for speech features, and the
/// tooling to evaluate it.
#[derive(Debug, Parser)]
#[command(name = "vqdr", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output style for summaries printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Root for relative paths in manifests; defaults to the manifest's directory.
    #[arg(long, global = true, env = "VQDR_CORPUS_ROOT")]
    pub corpus_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Mfcc,
    Logmel,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Mel bands.
    #[arg(long, default_value_t = 80)]
    pub n_mels: usize,
    /// Cepstral coefficients kept, c0 included.
    #[arg(long, default_value_t = 40)]
    pub n_mfcc: usize,
    #[arg(long, default_value_t = 25.0)]
    pub window_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hop_ms: f64,
    #[arg(long, default_value_t = 8000.0)]
    pub f_max: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract log-Mel or MFCC features for every manifest entry.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Mfcc)]
        kind: Kind,
        /// Also write a CSV next to each binary dump.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Train a k-means codebook on feature dumps.
    TrainVq {
        /// Feature files or directories searched for `.feat` files.
        #[arg(long, required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
    },
    /// Map a feature dump to codeword indices, optionally run-length encoded.
    Quantize {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// Remove adjacent duplicates and write `code,duration_frames`.
        #[arg(long)]
        dedup: bool,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruction MCD as a function of codebook size.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Held-out utterances; otherwise a seeded fraction of `--manifest`.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// z-score features before clustering.
        #[arg(long)]
        standardize: bool,
        /// Keep c0 in the distortion.
        #[arg(long)]
        include_c0: bool,
        /// Directory for sweep.csv, sweep.svg and stats.txt.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Duration and F0 differences between two parallel manifests.
    Prosody {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Measure untrimmed audio.
        #[arg(long)]
        no_trim: bool,
        #[arg(long, default_value_t = 40.0)]
        trim_db: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// How much timing survives quantization and duplicate removal.
    Bottleneck {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// 2-D projection of embedding vectors (CSV rows: label,v1,v2,...).
    Project {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Tsne)]
        method: Method,
        #[arg(long, default_value_t = 5.0)]
        perplexity: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a counterbalanced AB/ABX listening-test plan.
    Plan {
        /// TSV with header `stim_id utt_id system_tag condition path`.
        #[arg(long)]
        stimuli: PathBuf,
        #[arg(long, value_enum)]
        design: DesignArg,
        /// `baseline,proposed[,reference[,question]]`; repeat for several.
        #[arg(long = "pairing", required = true)]
        pairings: Vec<String>,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long)]
        plan_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the listening-test HTTP service.
    Serve {
        #[arg(long)]
        plan_dir: PathBuf,
        #[arg(long, env = "VQDR_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Browser UI assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Aggregate a response log against its plan.
    Results {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic speech corpus and its manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        speakers: usize,
        #[arg(long, default_value_t = 6)]
        utts: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Ab,
    Abx,
}

/// Bad flag values found after parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
