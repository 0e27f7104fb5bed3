use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crowdmask_cli::commands::{self, DemoArgs};
use crowdmask_cli::CliError;

/// Crowd instance segmentation numerics toolkit.
#[derive(Parser)]
#[command(name = "crowdmask", version, about)]
struct Cli {
    /// JSON run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a feature tensor with point prompts into a label map.
    Segment {
        /// Feature tensor (f32, [channels, h, w]).
        #[arg(long)]
        features: PathBuf,
        /// Points JSON file.
        #[arg(long)]
        points: PathBuf,
        /// Output label-map tensor (u32, [h, w]).
        #[arg(long)]
        out: PathBuf,
        /// Optional PNG render of the label map.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Evaluate the three losses on a fixture; JSON on stdout.
    Losses {
        /// Feature tensor (f32, [channels, h, w]).
        #[arg(long)]
        features: PathBuf,
        /// Points JSON file.
        #[arg(long)]
        points: PathBuf,
        /// Instance label-map tensor (u32, [h, w]).
        #[arg(long)]
        labels: PathBuf,
        /// Scalar prediction tensor for the counting constraints
        /// (defaults to channel 0 of the features).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Also run the finite-difference gradient oracle (quadratic
        /// cost; intended for small fixtures).
        #[arg(long)]
        gradcheck: bool,
    },
    /// Build constrained annotation masks from points and candidates.
    Edpsam {
        /// Image tensor (f32, [3, h, w], values in [0, 1]).
        #[arg(long)]
        image: PathBuf,
        /// Points JSON file.
        #[arg(long)]
        points: PathBuf,
        /// Candidate masks as a label-map tensor; omitted means every
        /// point falls back to its NNEC disk.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Output label-map tensor.
        #[arg(long)]
        out: PathBuf,
        /// Write the SLIC superpixel map instead of an annotation.
        #[arg(long)]
        slic_only: bool,
        /// Optional PNG render of the output.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Compare predicted and ground-truth label maps; JSON on stdout.
    Eval {
        /// Predicted label-map tensor.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth label-map tensor.
        #[arg(long)]
        gt: PathBuf,
        /// Pair instances by shared id instead of greedy IoU matching.
        #[arg(long)]
        by_id: bool,
    },
    /// Synthetic end-to-end demo: generate, optimize, segment, score.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 16.0)]
        min_separation: f64,
        /// Also run the density-bucketed segmentation timing harness.
        #[arg(long)]
        bench: bool,
        /// Write the metrics JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for PNG renders (ground truth, segmentation,
        /// channel-0 response).
        #[arg(long)]
        png_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Segment {
            features,
            points,
            out,
            png,
        } => commands::cmd_segment(&features, &points, config, &out, png.as_deref()),
        Command::Losses {
            features,
            points,
            labels,
            pred,
            gradcheck,
        } => commands::cmd_losses(
            &features,
            &points,
            &labels,
            pred.as_deref(),
            config,
            gradcheck,
        ),
        Command::Edpsam {
            image,
            points,
            candidates,
            out,
            slic_only,
            png,
        } => commands::cmd_edpsam(
            &image,
            &points,
            candidates.as_deref(),
            config,
            &out,
            slic_only,
            png.as_deref(),
        ),
        Command::Eval { pred, gt, by_id } => commands::cmd_eval(&pred, &gt, by_id),
        Command::Demo {
            seed,
            instances,
            height,
            width,
            min_separation,
            bench,
            out,
            png_dir,
        } => commands::cmd_demo(
            config,
            &DemoArgs {
                seed,
                instances,
                height,
                width,
                min_separation,
                bench,
                out,
                png_dir,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code)
        }
    }
}
