//! Implementations behind each CLI subcommand.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dafr_core::imaging::{bicubic_resize, modcrop, psnr_y, Image};
use dafr_core::model::{param_count_exact, param_count_formula, Model, ModelKind, NetworkConfig};
use dafr_core::train::{
    finetune_scale, super_resolve, train_step1, train_step2, TrainObserver, TrainPhase, TrainPlan,
    TrainReport,
};

use crate::error::{CliError, Result};
use crate::plan::{inherit_net_shape, resolve_plan, Manifest, SrManifest};
use crate::{checkpoint, io, report};

/// Flags shared by all training subcommands.
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub val: Option<PathBuf>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
}

/// Wall clock plus per-epoch progress lines on stderr.
struct StdObserver {
    t0: Instant,
}

impl StdObserver {
    fn new() -> Self {
        StdObserver { t0: Instant::now() }
    }
}

impl TrainObserver for StdObserver {
    fn now_micros(&mut self) -> u64 {
        self.t0.elapsed().as_micros() as u64
    }

    fn on_epoch(&mut self, epoch: usize, mean_loss: f64, val_psnr: Option<f64>) {
        match val_psnr {
            Some(p) => eprintln!("epoch {epoch}: loss {mean_loss:.6}, val {p:.2} dB"),
            None => eprintln!("epoch {epoch}: loss {mean_loss:.6}"),
        }
    }
}

fn load_corpora(args: &TrainArgs) -> Result<(Vec<Image>, Vec<Image>)> {
    let train = io::load_dataset(&args.dataset)?;
    let val = match &args.val {
        Some(dir) => io::load_dataset(dir)?,
        None => Vec::new(),
    };
    Ok((train, val))
}

fn write_run_artifacts(
    out: &Path,
    command: &str,
    ckpt_name: &str,
    plan: &TrainPlan,
    model: &Model<f32>,
    rep: &TrainReport,
) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Artifact(format!("cannot create {}: {e}", out.display())))?;
    let ckpt = out.join(ckpt_name);
    let csv = out.join("report.csv");
    let manifest = out.join("manifest.toml");
    checkpoint::save(model, &ckpt)?;
    report::write_csv(rep, &csv)?;
    Manifest::for_plan(command, plan).write(&manifest)?;
    println!("checkpoint: {}", ckpt.display());
    println!("report: {}", csv.display());
    println!("manifest: {}", manifest.display());
    Ok(())
}

pub fn cmd_train_step1(args: &TrainArgs) -> Result<()> {
    let plan = resolve_plan(
        TrainPhase::Step1Residual,
        args.config.as_deref(),
        args.seed,
        args.epochs,
    )?;
    let (train, val) = load_corpora(args)?;
    let (model, rep) = train_step1(&plan, &train, &val, &mut StdObserver::new())?;
    write_run_artifacts(&args.out, "train-step1", "step1.ckpt", &plan, &model, &rep)
}

pub fn cmd_train_step2(args: &TrainArgs, pretrained_path: &Path) -> Result<()> {
    let pretrained = checkpoint::load(pretrained_path)?;
    if pretrained.kind != ModelKind::Residual {
        return Err(CliError::Artifact(format!(
            "{} is not a step-1 (residual) checkpoint",
            pretrained_path.display()
        )));
    }
    let mut plan = resolve_plan(
        TrainPhase::Step2Main,
        args.config.as_deref(),
        args.seed,
        args.epochs,
    )?;
    inherit_net_shape(&mut plan, &pretrained.cfg);
    let (train, val) = load_corpora(args)?;
    let (model, rep) = train_step2(&plan, &pretrained, &train, &val, &mut StdObserver::new())?;
    write_run_artifacts(&args.out, "train-step2", "step2.ckpt", &plan, &model, &rep)
}

pub fn cmd_finetune_scale(args: &TrainArgs, base_path: &Path, scale: usize) -> Result<()> {
    let base = checkpoint::load(base_path)?;
    if base.kind != ModelKind::Dafr {
        return Err(CliError::Artifact(format!(
            "{} is not a main-network checkpoint",
            base_path.display()
        )));
    }
    let mut plan = resolve_plan(
        TrainPhase::FinetuneScale,
        args.config.as_deref(),
        args.seed,
        args.epochs,
    )?;
    inherit_net_shape(&mut plan, &base.cfg);
    plan.net.s = scale;
    plan.validate()?;
    let (train, val) = load_corpora(args)?;
    let (model, rep) =
        finetune_scale(&base, scale, &plan, &train, &val, &mut StdObserver::new())?;
    let name = format!("finetune-x{scale}.ckpt");
    write_run_artifacts(&args.out, "finetune-scale", &name, &plan, &model, &rep)
}

pub fn cmd_sr(
    model_path: &Path,
    input: &Path,
    output: &Path,
    scale: Option<usize>,
) -> Result<()> {
    let model = checkpoint::load(model_path)?;
    if model.kind != ModelKind::Dafr {
        return Err(CliError::Artifact(format!(
            "{} is not a main-network checkpoint",
            model_path.display()
        )));
    }
    if let Some(s) = scale {
        if s != model.cfg.s {
            return Err(CliError::Artifact(format!(
                "requested x{s} but the checkpoint upscales x{}",
                model.cfg.s
            )));
        }
    }
    let img = io::load_image(input)?;
    let out = super_resolve(&model, &img).map_err(|e| CliError::Config(e.to_string()))?;
    io::save_png(&out, output)?;
    let manifest_path = output.with_extension("manifest.toml");
    SrManifest::for_model("sr", &model).write(&manifest_path)?;
    println!("output: {}", output.display());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}

pub enum EvalMode {
    Bicubic,
    Model(PathBuf),
}

/// Per-image and average Y-channel PSNR of the bicubic round trip
/// (baseline) or of a model applied to the bicubic-downscaled input.
pub fn cmd_eval(
    mode: &EvalMode,
    dataset: &Path,
    scale: usize,
    shave: Option<usize>,
    precise: bool,
) -> Result<()> {
    if !(2..=4).contains(&scale) {
        return Err(CliError::Config(format!(
            "upscale factor must be 2, 3 or 4, got {scale}"
        )));
    }
    let shave = shave.unwrap_or(scale);
    let model = match mode {
        EvalMode::Bicubic => None,
        EvalMode::Model(path) => {
            let m = checkpoint::load(path)?;
            if m.kind != ModelKind::Dafr {
                return Err(CliError::Artifact(format!(
                    "{} is not a main-network checkpoint",
                    path.display()
                )));
            }
            if m.cfg.s != scale {
                return Err(CliError::Artifact(format!(
                    "requested x{scale} but the checkpoint upscales x{}",
                    m.cfg.s
                )));
            }
            Some(m)
        }
    };

    let files = io::list_pngs(dataset)?;
    let fmt = |p: f64| {
        if precise {
            p.to_string()
        } else {
            format!("{p:.2}")
        }
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in &files {
        let psnr = match eval_one(f, scale, shave, model.as_ref()) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", f.display());
                continue;
            }
        };
        let name = f.file_name().unwrap_or_default().to_string_lossy();
        println!("{name} {}", fmt(psnr));
        sum += psnr;
        count += 1;
    }
    if count == 0 {
        return Err(CliError::Data(format!(
            "no evaluable images in {}",
            dataset.display()
        )));
    }
    println!("average {}", fmt(sum / count as f64));
    Ok(())
}

fn eval_one(
    path: &Path,
    scale: usize,
    shave: usize,
    model: Option<&Model<f32>>,
) -> Result<f64> {
    let hr = modcrop(&io::load_image(path)?, scale);
    let to_data = |e: dafr_core::Error| CliError::Data(e.to_string());
    let lr = bicubic_resize(&hr, 1.0 / scale as f64).map_err(to_data)?;
    let rec = match model {
        None => bicubic_resize(&lr, scale as f64).map_err(to_data)?,
        Some(m) => super_resolve(m, &lr).map_err(to_data)?,
    };
    psnr_y(&hr, &rec, shave).map_err(to_data)
}

pub fn cmd_param_count(n: usize, m: usize, c: usize) -> Result<()> {
    if n < 1 || m < 1 || c < 1 {
        return Err(CliError::Config(format!(
            "n, m and c must be positive (got n={n}, m={m}, c={c})"
        )));
    }
    let cfg = NetworkConfig {
        n,
        m,
        c,
        ..NetworkConfig::default()
    };
    let model = dafr_core::model::build_dafr::<f32>(&cfg, 0)?;
    let counts = param_count_exact(&model);
    let formula = param_count_formula(n, m);
    println!("formula: {formula}");
    println!(
        "weights: {} (delta {})",
        counts.weights,
        counts.weights as i64 - formula as i64
    );
    println!("biases: {}", counts.biases);
    println!("prelu: {}", counts.prelu_coeffs);
    println!("total: {}", counts.total());
    Ok(())
}
