//! `vmr perturb`: write a noise-degraded copy of the annotations, with the
//! noise spec and generator identity recorded in the file's header line.

use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use vmr_core::data::{load_annotations, save_annotations, Strictness};
use vmr_core::metrics::temporal_iou;
use vmr_core::perturb::{perturb_dataset, RNG_ALGORITHM};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct PerturbReport {
    pub version: String,
    pub rng: String,
    pub seed: u64,
    pub noise: String,
    pub records: usize,
    pub mean_abs_dstart: f64,
    pub mean_abs_dend: f64,
    pub mean_iou: f64,
}

pub fn run(cfg: &RunConfig, out: Option<&Path>, strictness: Strictness) -> Result<PerturbReport> {
    cfg.require_annotations()?;
    cfg.ensure_output_dir()?;
    let default_path = cfg.paths.output_dir.join("annotations_perturbed.jsonl");
    let out_path = out.unwrap_or(&default_path);
    RunConfig::ensure_parent(out_path)?;

    let records = load_annotations(&cfg.paths.annotations, strictness)?;
    let perturbed = perturb_dataset(&records, &cfg.noise)?;

    let n = records.len().max(1) as f64;
    let mut dstart = 0.0;
    let mut dend = 0.0;
    let mut iou = 0.0;
    for (original, noisy) in records.iter().zip(perturbed.iter()) {
        dstart += (original.annotation().start() - noisy.annotation().start()).abs();
        dend += (original.annotation().end() - noisy.annotation().end()).abs();
        iou += temporal_iou(original.annotation(), noisy.annotation());
    }

    let provenance = json!({
        "tool": "vmr",
        "version": vmr_core::version(),
        "command": "perturb",
        "rng": RNG_ALGORITHM,
        "seed": cfg.noise.seed,
        "noise": cfg.noise.kind.describe(),
    });
    save_annotations(&perturbed, out_path, Some(&provenance))?;

    let report = PerturbReport {
        version: vmr_core::version().to_string(),
        rng: RNG_ALGORITHM.to_string(),
        seed: cfg.noise.seed,
        noise: cfg.noise.kind.describe(),
        records: records.len(),
        mean_abs_dstart: dstart / n,
        mean_abs_dend: dend / n,
        mean_iou: iou / n,
    };
    std::fs::write(
        cfg.paths.output_dir.join("perturb_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    eprintln!(
        "perturb: {} records, noise {}, mean |dstart| {:.4}, mean IoU {:.4} -> {}",
        report.records,
        report.noise,
        report.mean_abs_dstart,
        report.mean_iou,
        out_path.display(),
    );
    Ok(report)
}
