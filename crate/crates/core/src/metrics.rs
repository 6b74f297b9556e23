//! Localization evaluation: temporal IoU, R1@mu, and mean average precision
//! over a grid of IoU thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Segment, VideoRecord};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
    #[error("duplicate ground truth for video '{0}'")]
    DuplicateGroundTruth(String),
    #[error("thresholds must be nonempty and each within (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("prediction score must be finite (video '{0}')")]
    NonFiniteScore(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One predicted moment with its ranking confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PredictionRow", into = "PredictionRow")]
pub struct Prediction {
    pub video_id: String,
    pub segment: Segment,
    pub score: f64,
}

/// Wire form of one predictions JSONL line.
#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    video_id: String,
    start_sec: f64,
    end_sec: f64,
    score: f64,
}

impl TryFrom<PredictionRow> for Prediction {
    type Error = MetricError;

    fn try_from(row: PredictionRow) -> Result<Self, Self::Error> {
        if !row.score.is_finite() {
            return Err(MetricError::NonFiniteScore(row.video_id));
        }
        Ok(Prediction {
            segment: Segment::new(row.start_sec, row.end_sec)?,
            video_id: row.video_id,
            score: row.score,
        })
    }
}

impl From<Prediction> for PredictionRow {
    fn from(p: Prediction) -> Self {
        PredictionRow {
            video_id: p.video_id,
            start_sec: p.segment.start(),
            end_sec: p.segment.end(),
            score: p.score,
        }
    }
}

/// One annotated moment used as evaluation reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub video_id: String,
    pub segment: Segment,
}

impl GroundTruth {
    pub fn from_records(records: &[VideoRecord]) -> Vec<GroundTruth> {
        records
            .iter()
            .map(|r| GroundTruth {
                video_id: r.video_id().to_string(),
                segment: *r.annotation(),
            })
            .collect()
    }
}

/// One metric value at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetric {
    pub mu: f64,
    pub value: f64,
}

/// Evaluation report: R1 per threshold, AP per threshold, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r1_at: Vec<ThresholdMetric>,
    pub per_threshold_ap: Vec<ThresholdMetric>,
    pub map_mean: f64,
}

impl MetricReport {
    /// Flat CSV for plotting: `metric,mu,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mu,value\n");
        for m in &self.r1_at {
            out.push_str(&format!("r1,{},{}\n", m.mu, m.value));
        }
        for m in &self.per_threshold_ap {
            out.push_str(&format!("ap,{},{}\n", m.mu, m.value));
        }
        out.push_str(&format!("map_mean,,{}\n", self.map_mean));
        out
    }
}

/// Default mAP threshold grid: 0.5 to 0.95, step 0.05.
pub fn default_map_thresholds() -> Vec<f64> {
    (10..20).map(|i| i as f64 / 20.0).collect()
}

/// Default R1 thresholds.
pub fn default_r1_thresholds() -> Vec<f64> {
    vec![0.5, 0.7]
}

/// Intersection over union of two intervals; 0 when disjoint.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.length() + b.length() - inter;
    inter / union
}

/// Prediction order: score descending, then earlier start, then input order.
fn ranked_indices(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        preds[j]
            .score
            .total_cmp(&preds[i].score)
            .then(preds[i].segment.start().total_cmp(&preds[j].segment.start()))
            .then(i.cmp(&j))
    });
    order
}

fn check_unique_gts(gts: &[GroundTruth]) -> Result<(), MetricError> {
    let mut seen = std::collections::HashSet::new();
    for gt in gts {
        if !seen.insert(gt.video_id.as_str()) {
            return Err(MetricError::DuplicateGroundTruth(gt.video_id.clone()));
        }
    }
    Ok(())
}

/// Fraction of queries whose top-ranked prediction reaches IoU >= `mu` with
/// the ground truth. Queries without predictions count as misses.
pub fn r1_at_iou(
    preds: &[Prediction],
    gts: &[GroundTruth],
    mu: f64,
) -> Result<f64, MetricError> {
    if gts.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    check_unique_gts(gts)?;
    let order = ranked_indices(preds);
    let mut hits = 0usize;
    for gt in gts {
        let top = order
            .iter()
            .map(|&i| &preds[i])
            .find(|p| p.video_id == gt.video_id);
        if let Some(pred) = top {
            if temporal_iou(&pred.segment, &gt.segment) >= mu {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / gts.len() as f64)
}

/// Average precision at one threshold: score-ranked greedy one-to-one
/// matching (each ground truth matched at most once, best IoU first), with
/// all-points precision interpolation.
fn average_precision(preds: &[Prediction], gts: &[GroundTruth], mu: f64) -> f64 {
    let order = ranked_indices(preds);
    let mut gt_matched = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    for &pi in &order {
        let pred = &preds[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_matched[gi] || gt.video_id != pred.video_id {
                continue;
            }
            let iou = temporal_iou(&pred.segment, &gt.segment);
            if iou >= mu && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                gt_matched[gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }

    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Precision envelope from the right (all-points interpolation).
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let recall_step = 1.0 / gts.len() as f64;
    is_tp
        .iter()
        .zip(precision.iter())
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p * recall_step)
        .sum()
}

/// Mean average precision over the threshold grid.
pub fn mean_ap(
    preds: &[Prediction],
    gts: &[GroundTruth],
    thresholds: &[f64],
) -> Result<MetricReport, MetricError> {
    if gts.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    if thresholds.is_empty() {
        return Err(MetricError::InvalidThreshold(f64::NAN));
    }
    for &mu in thresholds {
        if !mu.is_finite() || mu <= 0.0 || mu > 1.0 {
            return Err(MetricError::InvalidThreshold(mu));
        }
    }
    let per_threshold_ap: Vec<ThresholdMetric> = thresholds
        .iter()
        .map(|&mu| ThresholdMetric {
            mu,
            value: average_precision(preds, gts, mu),
        })
        .collect();
    let map_mean =
        per_threshold_ap.iter().map(|m| m.value).sum::<f64>() / per_threshold_ap.len() as f64;
    Ok(MetricReport {
        r1_at: Vec::new(),
        per_threshold_ap,
        map_mean,
    })
}

/// Full evaluation: R1 at each requested threshold plus mAP over the grid.
pub fn evaluate(
    preds: &[Prediction],
    gts: &[GroundTruth],
    r1_thresholds: &[f64],
    map_thresholds: &[f64],
) -> Result<MetricReport, MetricError> {
    let mut report = mean_ap(preds, gts, map_thresholds)?;
    report.r1_at = r1_thresholds
        .iter()
        .map(|&mu| {
            r1_at_iou(preds, gts, mu).map(|value| ThresholdMetric { mu, value })
        })
        .collect::<Result<_, _>>()?;
    Ok(report)
}
