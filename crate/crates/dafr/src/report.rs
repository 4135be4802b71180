//! Training-report serialization: comma-separated text with the fixed
//! column set `step,epoch,lr_conv,lr_deconv,loss,val_psnr`. Floats print
//! in shortest round-trip form, so identical runs serialize to identical
//! bytes; `val_psnr` is empty on records without a validation pass.

use std::fs;
use std::path::Path;

use dafr_core::train::TrainReport;

use crate::error::{CliError, Result};

pub fn render_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,epoch,lr_conv,lr_deconv,loss,val_psnr\n");
    for r in &report.records {
        let val = r.val_psnr.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.epoch, r.lr_conv, r.lr_deconv, r.loss, val
        ));
    }
    out
}

pub fn write_csv(report: &TrainReport, path: &Path) -> Result<()> {
    fs::write(path, render_csv(report))
        .map_err(|e| CliError::Artifact(format!("cannot write {}: {e}", path.display())))
}
