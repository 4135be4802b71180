//! Training-plan files and run manifests.
//!
//! Plans are TOML; every key is optional and fills in over the phase
//! defaults, with command-line flags applied last. Manifests echo the
//! fully resolved configuration (plus seed and format version) and are
//! deliberately free of timestamps so same-seed runs produce
//! byte-identical artifacts.

use std::fs;
use std::path::Path;

use dafr_core::model::NetworkConfig;
use dafr_core::train::{TrainPhase, TrainPlan};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub patience: Option<usize>,
    pub min_rel_improvement: Option<f64>,
    pub stride_main: Option<usize>,
    pub stride_residual: Option<usize>,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub c: Option<usize>,
    pub s: Option<usize>,
    pub f_sub: Option<usize>,
    pub f_sub_r: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_conv: Option<f64>,
    pub lr_deconv: Option<f64>,
    pub clip_theta: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub initial: Option<f64>,
    pub factor: Option<f64>,
    pub every_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
}

impl PlanFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad plan file {}: {e}", path.display())))
    }

    fn apply(&self, plan: &mut TrainPlan) {
        macro_rules! put {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        put!(plan.epochs, self.epochs);
        put!(plan.seed, self.seed);
        put!(plan.patience, self.patience);
        put!(plan.min_rel_improvement, self.min_rel_improvement);
        put!(plan.stride_main, self.stride_main);
        put!(plan.stride_residual, self.stride_residual);
        put!(plan.net.n, self.net.n);
        put!(plan.net.m, self.net.m);
        put!(plan.net.c, self.net.c);
        put!(plan.net.s, self.net.s);
        put!(plan.net.f_sub, self.net.f_sub);
        put!(plan.net.f_sub_r, self.net.f_sub_r);
        put!(plan.optim.momentum, self.optim.momentum);
        put!(plan.optim.weight_decay, self.optim.weight_decay);
        put!(plan.optim.batch_size, self.optim.batch_size);
        put!(plan.optim.lr_conv, self.optim.lr_conv);
        put!(plan.optim.lr_deconv, self.optim.lr_deconv);
        put!(plan.optim.clip_theta, self.optim.clip_theta);
        put!(plan.optim.schedule.initial, self.schedule.initial);
        put!(plan.optim.schedule.factor, self.schedule.factor);
        put!(plan.optim.schedule.every_epochs, self.schedule.every_epochs);
        put!(plan.loss.epsilon, self.loss.epsilon);
        put!(plan.loss.alpha, self.loss.alpha);
    }
}

/// Phase defaults, then the plan file, then explicit flags; validated at
/// the end so the error names the resolved values.
pub fn resolve_plan(
    phase: TrainPhase,
    config: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<TrainPlan> {
    let mut plan = TrainPlan::for_phase(phase);
    if let Some(path) = config {
        PlanFile::read(path)?.apply(&mut plan);
    }
    if let Some(s) = seed {
        plan.seed = s;
    }
    if let Some(e) = epochs {
        plan.epochs = e;
    }
    plan.validate().map_err(CliError::from)?;
    Ok(plan)
}

/// Manifest written beside every file-producing run.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub net: ManifestNet,
    pub optim: ManifestOptim,
    pub loss: ManifestLoss,
    pub train: ManifestTrain,
}

#[derive(Debug, Serialize)]
pub struct ManifestNet {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub s: usize,
    pub f_sub: usize,
    pub f_sub_r: usize,
}

#[derive(Debug, Serialize)]
pub struct ManifestOptim {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lr_conv: f64,
    pub lr_deconv: f64,
    pub clip_theta: f64,
    pub schedule_initial: f64,
    pub schedule_factor: f64,
    pub schedule_every_epochs: usize,
}

#[derive(Debug, Serialize)]
pub struct ManifestLoss {
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Debug, Serialize)]
pub struct ManifestTrain {
    pub epochs: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub stride_main: usize,
    pub stride_residual: usize,
}

impl<'a> Manifest<'a> {
    pub fn for_plan(command: &'a str, plan: &TrainPlan) -> Self {
        Manifest {
            version: crate::checkpoint::VERSION,
            command,
            seed: plan.seed,
            net: ManifestNet {
                n: plan.net.n,
                m: plan.net.m,
                c: plan.net.c,
                s: plan.net.s,
                f_sub: plan.net.f_sub,
                f_sub_r: plan.net.f_sub_r,
            },
            optim: ManifestOptim {
                momentum: plan.optim.momentum,
                weight_decay: plan.optim.weight_decay,
                batch_size: plan.optim.batch_size,
                lr_conv: plan.optim.lr_conv,
                lr_deconv: plan.optim.lr_deconv,
                clip_theta: plan.optim.clip_theta,
                schedule_initial: plan.optim.schedule.initial,
                schedule_factor: plan.optim.schedule.factor,
                schedule_every_epochs: plan.optim.schedule.every_epochs,
            },
            loss: ManifestLoss {
                epsilon: plan.loss.epsilon,
                alpha: plan.loss.alpha,
            },
            train: ManifestTrain {
                epochs: plan.epochs,
                patience: plan.patience,
                min_rel_improvement: plan.min_rel_improvement,
                stride_main: plan.stride_main,
                stride_residual: plan.stride_residual,
            },
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| CliError::Artifact(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text)
            .map_err(|e| CliError::Artifact(format!("cannot write {}: {e}", path.display())))
    }
}

/// Minimal manifest for inference runs: echoes the checkpoint identity.
#[derive(Debug, Serialize)]
pub struct SrManifest<'a> {
    pub version: u32,
    pub command: &'a str,
    pub model: SrModelEcho,
}

#[derive(Debug, Serialize)]
pub struct SrModelEcho {
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub s: usize,
    pub seed: u64,
    pub step: u64,
}

impl<'a> SrManifest<'a> {
    pub fn for_model(command: &'a str, model: &dafr_core::model::Model<f32>) -> Self {
        SrManifest {
            version: crate::checkpoint::VERSION,
            command,
            model: SrModelEcho {
                kind: match model.kind {
                    dafr_core::model::ModelKind::Dafr => "dafr".into(),
                    dafr_core::model::ModelKind::Residual => "residual".into(),
                },
                n: model.cfg.n,
                m: model.cfg.m,
                c: model.cfg.c,
                s: model.cfg.s,
                seed: model.seed,
                step: model.step,
            },
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| CliError::Artifact(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text)
            .map_err(|e| CliError::Artifact(format!("cannot write {}: {e}", path.display())))
    }
}

/// Default network shape for a plan, taken from an existing model: the
/// conv-stack geometry must match a checkpoint the phase builds upon.
pub fn inherit_net_shape(plan: &mut TrainPlan, cfg: &NetworkConfig) {
    plan.net.n = cfg.n;
    plan.net.m = cfg.m;
    plan.net.c = cfg.c;
}
