use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "igmseg", version, about = "Instance segmentation from inpainting information gain")]
struct Cli {
    /// Threads for patch-level parallelism; output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Pipeline configuration (key=value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic images, ground-truth labels and oracle models.
    Generate {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory; receives images/, labels/ and models/.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the local-statistics inpainting model on a set of images.
    Fit {
        #[command(flatten)]
        config: ConfigArg,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Training images (PGM).
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Estimate an affinity field by the sliding-window split sweep.
    Affinities {
        #[command(flatten)]
        config: ConfigArg,
        /// Model file used for every image.
        #[arg(long)]
        model: PathBuf,
        /// Output file for a single image, or a directory receiving `<stem>.iaf`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Cluster an affinity field with the Mutex Watershed.
    Segment {
        /// Affinity file (IAF1).
        #[arg(long)]
        affinities: PathBuf,
        #[arg(long)]
        alpha: f64,
        /// PGM whose nonzero pixels form the foreground.
        #[arg(long)]
        foreground: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        min_segment: usize,
        /// Output label map (PGM).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted label maps against ground truth with identical file names.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated IoU thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = igmseg_core::metrics::DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        /// Ignore predicted pixels on unlabelled ground truth.
        #[arg(long)]
        sparse_gt: bool,
        #[arg(long, default_value = "prediction")]
        method: String,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick α by SEG on validation fields `<name>.iaf` paired with `<name>.pgm`.
    SweepAlpha {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        affinities: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated α grid; defaults to `mws.alpha_grid`.
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        /// Restrict segmentation to the ground-truth foreground.
        #[arg(long)]
        true_fg: bool,
        #[arg(long, value_delimiter = ',', default_values_t = igmseg_core::metrics::DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        /// CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One-line `error[kind]: message` on stderr.
fn report(kind: &str, message: &str) {
    let flat: String = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{kind}]: {flat}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(cli.command, cli.workers.max(1)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<igmseg_core::Error>())
                .map_or("runtime", |c| c.kind());
            // core errors already embed their source text
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !parts.last().is_some_and(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            report(kind, &parts.join(": "));
            ExitCode::FAILURE
        }
    }
}
