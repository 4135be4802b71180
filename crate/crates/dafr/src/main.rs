use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dafr::commands::{self, EvalMode, TrainArgs};
use dafr::CliError;

/// Train, fine-tune, run and evaluate the DAFR super-resolution network.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 data error,
/// 4 checkpoint/artifact error.
#[derive(Parser)]
#[command(name = "dafr", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TrainFlags {
    /// Folder of HR training PNGs.
    #[arg(long)]
    dataset: PathBuf,
    /// Optional folder of HR validation PNGs.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Output directory for checkpoint, report and manifest.
    #[arg(long)]
    out: PathBuf,
    /// TOML plan file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for weight init and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch cap (the saturation rule may stop earlier).
    #[arg(long)]
    epochs: Option<usize>,
}

impl TrainFlags {
    fn into_args(self) -> TrainArgs {
        TrainArgs {
            dataset: self.dataset,
            val: self.val,
            out: self.out,
            config: self.config,
            seed: self.seed,
            epochs: self.epochs,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the residual network from scratch (step 1).
    TrainStep1 {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train the main network from a step-1 checkpoint (step 2).
    TrainStep2 {
        #[command(flatten)]
        flags: TrainFlags,
        /// Step-1 (residual) checkpoint to transfer from.
        #[arg(long)]
        pretrained: PathBuf,
    },
    /// Adapt a trained model to a new scale (deconvolution only).
    FinetuneScale {
        #[command(flatten)]
        flags: TrainFlags,
        /// Trained main-network checkpoint to adapt.
        #[arg(long)]
        base: PathBuf,
        /// New upscale factor (2, 3 or 4; must differ from the base).
        #[arg(long)]
        scale: usize,
    },
    /// Upscale one image with a trained checkpoint.
    Sr {
        /// Trained main-network checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Input PNG (grayscale or color).
        #[arg(long)]
        input: PathBuf,
        /// Output PNG path.
        #[arg(long)]
        output: PathBuf,
        /// Expected upscale factor; fails if the checkpoint disagrees.
        #[arg(long)]
        scale: Option<usize>,
    },
    /// Average Y-channel PSNR of a model or the bicubic baseline.
    Eval {
        /// Trained main-network checkpoint.
        #[arg(long, conflicts_with = "bicubic")]
        model: Option<PathBuf>,
        /// Evaluate plain bicubic upscaling instead of a model.
        #[arg(long)]
        bicubic: bool,
        /// Folder of HR ground-truth PNGs.
        #[arg(long)]
        dataset: PathBuf,
        /// Upscale factor under test (2, 3 or 4).
        #[arg(long)]
        scale: usize,
        /// Border width excluded from PSNR (defaults to the scale).
        #[arg(long)]
        shave: Option<usize>,
        /// Print full-precision PSNR values instead of 2 decimals.
        #[arg(long)]
        precise: bool,
    },
    /// Parameter counts for a network shape.
    ParamCount {
        /// Middle-layer count.
        #[arg(long)]
        n: usize,
        /// Middle-layer filter count.
        #[arg(long)]
        m: usize,
        /// Image channels.
        #[arg(long, default_value_t = 1)]
        c: usize,
    },
}

fn run(cmd: Cmd) -> dafr::Result<()> {
    match cmd {
        Cmd::TrainStep1 { flags } => commands::cmd_train_step1(&flags.into_args()),
        Cmd::TrainStep2 { flags, pretrained } => {
            commands::cmd_train_step2(&flags.into_args(), &pretrained)
        }
        Cmd::FinetuneScale { flags, base, scale } => {
            commands::cmd_finetune_scale(&flags.into_args(), &base, scale)
        }
        Cmd::Sr {
            model,
            input,
            output,
            scale,
        } => commands::cmd_sr(&model, &input, &output, scale),
        Cmd::Eval {
            model,
            bicubic,
            dataset,
            scale,
            shave,
            precise,
        } => {
            let mode = match (model, bicubic) {
                (Some(path), false) => EvalMode::Model(path),
                (None, true) => EvalMode::Bicubic,
                _ => {
                    return Err(CliError::Config(
                        "exactly one of --model and --bicubic is required".into(),
                    ))
                }
            };
            commands::cmd_eval(&mode, &dataset, scale, shave, precise)
        }
        Cmd::ParamCount { n, m, c } => commands::cmd_param_count(n, m, c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
