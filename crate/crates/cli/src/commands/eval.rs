//! `vmr eval`: score a predictions file against the annotated moments and
//! emit the metric report as JSON and CSV.

use std::io::BufRead;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use vmr_core::data::{load_annotations, Strictness};
use vmr_core::metrics::{evaluate, GroundTruth, MetricReport, Prediction};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct EvalReport<'a> {
    version: &'a str,
    config: &'a RunConfig,
    predictions: usize,
    ground_truths: usize,
    report: &'a MetricReport,
}

/// Reads predictions JSONL, reporting malformed lines with their numbers.
pub fn load_predictions(path: &Path, strictness: Strictness) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open predictions {}", path.display()))?;
    let mut preds = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<Prediction>(trimmed) {
            Ok(pred) => preds.push(pred),
            Err(err) => match strictness {
                Strictness::Strict => {
                    anyhow::bail!("predictions line {}: {err}", lineno + 1)
                }
                Strictness::Lenient => {
                    log::warn!("skipping predictions line {}: {err}", lineno + 1)
                }
            },
        }
    }
    Ok(preds)
}

pub fn run(cfg: &RunConfig, predictions: Option<&Path>, strictness: Strictness) -> Result<MetricReport> {
    cfg.require_annotations()?;
    cfg.ensure_output_dir()?;
    let default_path = cfg.paths.output_dir.join("predictions.jsonl");
    let pred_path = predictions.unwrap_or(&default_path);

    let records = load_annotations(&cfg.paths.annotations, strictness)?;
    let gts = GroundTruth::from_records(&records);
    let preds = load_predictions(pred_path, strictness)?;
    if preds.is_empty() {
        log::warn!(
            "no predictions in {}; all metrics will be zero",
            pred_path.display()
        );
    }

    let report = evaluate(
        &preds,
        &gts,
        &cfg.metrics.r1_thresholds,
        &cfg.metrics.map_thresholds,
    )?;

    let full = EvalReport {
        version: vmr_core::version(),
        config: cfg,
        predictions: preds.len(),
        ground_truths: gts.len(),
        report: &report,
    };
    std::fs::write(
        cfg.paths.output_dir.join("metrics.json"),
        serde_json::to_string_pretty(&full)?,
    )?;
    std::fs::write(cfg.paths.output_dir.join("metrics.csv"), report.to_csv())?;

    // Data summary goes to stdout; everything else stays on stderr.
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}
