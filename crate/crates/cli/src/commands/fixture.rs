//! `vmr fixture`: generate a fully offline synthetic dataset. Frame
//! embeddings carry planted start/end-description directions near the
//! annotated boundaries, the expansion cache is pre-warmed with matching
//! descriptions, and a predictions file with known overlaps is included, so
//! the whole pipeline runs without any network access.

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use vmr_core::data::{save_annotations, Segment, VideoRecord};
use vmr_core::expand::{cache_key, CacheEntry, ExpansionCache, PROMPT_VERSION};
use vmr_core::io::save_embeddings;
use vmr_core::matrix::{dot, norm};
use vmr_core::metrics::Prediction;
use vmr_core::supervision::pool_query;
use vmr_core::textembed::embed_text;
use vmr_core::Mat;

use crate::config::RunConfig;

const STRIDE_SEC: f64 = 2.0;
const VERBS: [&str; 8] = [
    "opens", "closes", "lifts", "drops", "pushes", "pulls", "turns", "shakes",
];
const NOUNS: [&str; 8] = [
    "door", "box", "chair", "laptop", "bottle", "curtain", "drawer", "window",
];

/// Where each synthetic video planted its boundaries.
#[derive(Debug, Clone, Serialize)]
pub struct PlantedVideo {
    pub video_id: String,
    pub query: String,
    /// Annotated boundary frames.
    pub anchor_start: usize,
    pub anchor_end: usize,
    /// Frames carrying the exact start/end description direction; the default
    /// strategy must recover these as the pseudo boundaries.
    pub planted_start: usize,
    pub planted_end: usize,
}

#[derive(Debug, Serialize)]
struct FixtureManifest<'a> {
    version: &'a str,
    seed: u64,
    videos: &'a [PlantedVideo],
}

fn normalize(v: &mut [f64]) {
    let len = norm(v);
    if len > 0.0 {
        for x in v.iter_mut() {
            *x /= len;
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if norm(&v) > 1e-6 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Gram-Schmidt over the planted directions; degenerate inputs are dropped.
fn orthonormal_basis(directions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in directions {
        let mut u = v.clone();
        for b in &basis {
            let proj = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b.iter()) {
                *ui -= proj * bi;
            }
        }
        if norm(&u) > 1e-9 {
            normalize(&mut u);
            basis.push(u);
        }
    }
    basis
}

fn remove_components(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let proj = dot(v, b);
        for (vi, bi) in v.iter_mut().zip(b.iter()) {
            *vi -= proj * bi;
        }
    }
}

/// A background frame orthogonal to every planted direction (falls back to a
/// raw random direction when the dimension is too small to orthogonalize).
fn background_frame(rng: &mut ChaCha8Rng, dim: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    for _ in 0..32 {
        let mut v = random_unit(rng, dim);
        remove_components(&mut v, basis);
        if norm(&v) > 1e-6 {
            normalize(&mut v);
            return v;
        }
    }
    random_unit(rng, dim)
}

fn pooled_direction(tokens: &Mat) -> Vec<f64> {
    let mut pooled = pool_query(tokens);
    normalize(&mut pooled);
    pooled
}

pub fn run(cfg: &RunConfig, videos: usize, frames: usize, dim: usize) -> Result<Vec<PlantedVideo>> {
    ensure!(videos >= 1, "need at least one video");
    ensure!(frames >= 4, "need at least 4 frames per video");
    ensure!(dim >= 2, "need embedding dimension of at least 2");

    RunConfig::ensure_parent(&cfg.paths.annotations)?;
    RunConfig::ensure_parent(&cfg.paths.cache)?;
    std::fs::create_dir_all(&cfg.paths.embeddings_dir)?;
    cfg.ensure_output_dir()?;
    // The cache file is rebuilt from scratch for reproducible fixtures.
    if cfg.paths.cache.exists() {
        std::fs::remove_file(&cfg.paths.cache)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut planted = Vec::new();
    let mut predictions = Vec::new();
    let mut cache = ExpansionCache::open(&cfg.paths.cache)
        .with_context(|| format!("cannot open cache {}", cfg.paths.cache.display()))?;

    for v in 0..videos {
        let verb = VERBS[v % VERBS.len()];
        let noun = NOUNS[(v / VERBS.len() + v) % NOUNS.len()];
        let video_id = format!("clip{v:04}");
        let query = format!("person {verb} the {noun} {v}");
        let start_desc = format!("the hands reach toward the {noun} as motion {v} begins");
        let end_desc = format!("the {noun} settles into stillness as motion {v} ends");

        let last = frames - 1;
        let anchor_start = ((0.3 * last as f64).round() as usize).clamp(1, frames - 3);
        let anchor_end =
            ((0.7 * last as f64).round() as usize).clamp(anchor_start + 1, frames - 2);
        let planted_start = anchor_start - 1;
        let planted_end = anchor_end + 1;
        let survivor_start = planted_start.checked_sub(1);
        let survivor_end = (planted_end + 1 < frames).then_some(planted_end + 1);

        let duration = frames as f64 * STRIDE_SEC;
        let annotation = Segment::new(
            anchor_start as f64 * STRIDE_SEC,
            (anchor_end as f64 + 0.5) * STRIDE_SEC,
        )?;

        let f_s: Mat = embed_text(&start_desc, dim)?;
        let f_e: Mat = embed_text(&end_desc, dim)?;
        let f_q: Mat = embed_text(&query, dim)?;
        let d_s = pooled_direction(&f_s);
        let d_e = pooled_direction(&f_e);
        let d_q = pooled_direction(&f_q);
        let basis = orthonormal_basis(&[d_s.clone(), d_e.clone(), d_q.clone()]);

        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(frames);
        for t in 0..frames {
            if t == planted_start {
                rows.push(d_s.clone());
            } else if t == planted_end {
                rows.push(d_e.clone());
            } else {
                let mut frame = background_frame(&mut rng, dim, &basis);
                let planted_mix = if Some(t) == survivor_start {
                    Some(&d_s)
                } else if Some(t) == survivor_end {
                    Some(&d_e)
                } else {
                    None
                };
                if let Some(direction) = planted_mix {
                    // Strong but non-maximal alignment: the frame survives the
                    // probability threshold without stealing the argmax.
                    let residual = (1.0f64 - 0.9 * 0.9).sqrt();
                    for (f, d) in frame.iter_mut().zip(direction.iter()) {
                        *f = 0.9 * d + residual * *f;
                    }
                }
                rows.push(frame);
            }
        }
        let f_v = Mat::from_rows(&rows)?;
        save_embeddings(
            &f_v,
            &cfg.paths.embeddings_dir.join(format!("{video_id}.emb")),
        )?;

        let record = VideoRecord::new(
            video_id.clone(),
            duration,
            STRIDE_SEC,
            annotation,
            query.clone(),
            Some(format!("{video_id}.emb")),
        )?;

        cache.put(CacheEntry {
            key: cache_key(&query, &cfg.llm.model_id, PROMPT_VERSION),
            start_desc: start_desc.clone(),
            end_desc: end_desc.clone(),
            created_at: 0,
        })?;

        predictions.push(Prediction {
            video_id: video_id.clone(),
            segment: annotation,
            score: 0.9,
        });
        let shift = (annotation.length() / 2.0).min(duration - annotation.end());
        if shift > 0.0 {
            predictions.push(Prediction {
                video_id: video_id.clone(),
                segment: Segment::new(annotation.start() + shift, annotation.end() + shift)?,
                score: 0.2,
            });
        }

        planted.push(PlantedVideo {
            video_id,
            query,
            anchor_start,
            anchor_end,
            planted_start,
            planted_end,
        });
        records.push(record);
    }

    save_annotations(&records, &cfg.paths.annotations, None)?;

    let pred_path = cfg.paths.output_dir.join("predictions.jsonl");
    let mut lines = String::new();
    for pred in &predictions {
        lines.push_str(&serde_json::to_string(pred)?);
        lines.push('\n');
    }
    std::fs::write(&pred_path, lines)?;

    let manifest = FixtureManifest {
        version: vmr_core::version(),
        seed: cfg.seed,
        videos: &planted,
    };
    std::fs::write(
        cfg.paths.output_dir.join("fixture_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    eprintln!(
        "fixture: {videos} videos, {frames} frames x {dim} dims -> {}",
        cfg.paths.annotations.display()
    );
    Ok(planted)
}
