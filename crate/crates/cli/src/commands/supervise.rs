//! `vmr supervise`: turn annotations, embeddings, and expansions into
//! per-frame probability supervision, optionally emitting fused features.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use vmr_core::data::{load_annotations, save_supervision, Strictness, SupervisionTarget, VideoRecord};
use vmr_core::expand::{ExpandedQuery, ExpanderConfig, ExpansionCache, HttpChatClient, QueryExpander};
use vmr_core::fusion::enhance;
use vmr_core::io::{load_embeddings, save_embeddings};
use vmr_core::supervision::{generate_supervision, QueryEmbeddings};
use vmr_core::textembed::embed_text;
use vmr_core::Mat;

use crate::commands::worker_pool;
use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct SuperviseReport<'a> {
    version: &'a str,
    config: &'a RunConfig,
    records_total: usize,
    records_written: usize,
    records_skipped: usize,
}

/// Query expansions keyed by the original query text, read from the
/// expansions JSONL when present and otherwise from the cache.
fn load_expansions(
    cfg: &RunConfig,
    records: &[VideoRecord],
    strictness: Strictness,
) -> Result<HashMap<String, ExpandedQuery>> {
    let mut map = HashMap::new();
    let expansions_path = cfg.paths.output_dir.join("expansions.jsonl");
    if expansions_path.is_file() {
        let file = std::fs::File::open(&expansions_path)?;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ExpandedQuery = serde_json::from_str(line.trim())
                .with_context(|| format!("expansions line {}", lineno + 1))?;
            map.insert(row.original.clone(), row);
        }
        return Ok(map);
    }

    let cache = ExpansionCache::open(&cfg.paths.cache)
        .with_context(|| format!("cannot open cache {}", cfg.paths.cache.display()))?;
    let expander = QueryExpander::<HttpChatClient>::new(
        None,
        cache,
        ExpanderConfig {
            offline: true,
            ..cfg.llm.expander_config()
        },
    );
    for record in records {
        let query = record.query_text();
        if map.contains_key(query) {
            continue;
        }
        match expander.expand(query) {
            Ok(expansion) => {
                map.insert(query.to_string(), expansion);
            }
            Err(err) => match strictness {
                Strictness::Strict => {
                    return Err(err).with_context(|| {
                        format!("no expansion available for query '{query}'")
                    })
                }
                Strictness::Lenient => {
                    log::warn!("skipping query '{query}': {err}");
                }
            },
        }
    }
    Ok(map)
}

fn sidecar(dir: &Path, video_id: &str, suffix: &str) -> Option<PathBuf> {
    let path = dir.join(format!("{video_id}.{suffix}.emb"));
    path.is_file().then_some(path)
}

/// Loads a query-part embedding: a sidecar file when present, the
/// deterministic text embedding otherwise.
fn query_part(dir: &Path, video_id: &str, suffix: &str, text: &str, dim: usize) -> Result<Mat> {
    match sidecar(dir, video_id, suffix) {
        Some(path) => load_embeddings(&path)
            .with_context(|| format!("sidecar embedding {}", path.display())),
        None => embed_text(text, dim).map_err(Into::into),
    }
}

struct PerRecord {
    target: SupervisionTarget,
    fused: Option<Mat>,
}

fn process(
    cfg: &RunConfig,
    record: &VideoRecord,
    expansions: &HashMap<String, ExpandedQuery>,
    emit_fused: bool,
) -> Result<PerRecord> {
    let file_name = record
        .embeddings_path()
        .map(str::to_string)
        .unwrap_or_else(|| format!("{}.emb", record.video_id()));
    let emb_path = cfg.paths.embeddings_dir.join(file_name);
    if !emb_path.is_file() {
        bail!("missing embedding file {}", emb_path.display());
    }
    let f_v: Mat = load_embeddings(&emb_path)
        .with_context(|| format!("embedding file {}", emb_path.display()))?;
    let expansion = expansions
        .get(record.query_text())
        .with_context(|| format!("no expansion for query '{}'", record.query_text()))?;

    let dim = f_v.dim();
    let dir = &cfg.paths.embeddings_dir;
    let id = record.video_id();
    let f_s = query_part(dir, id, "s", &expansion.start_desc, dim)?;
    let f_q = query_part(dir, id, "q", &expansion.original, dim)?;
    let f_e = query_part(dir, id, "e", &expansion.end_desc, dim)?;

    let queries = QueryEmbeddings {
        start: f_s.clone(),
        original: f_q.clone(),
        end: f_e.clone(),
    };
    let target = generate_supervision(record, &f_v, &queries, &cfg.supervision)
        .with_context(|| format!("supervision for video '{id}'"))?;
    let fused = if emit_fused {
        Some(enhance(&f_v, &f_s, &f_q, &f_e, &cfg.fusion)?)
    } else {
        None
    };
    Ok(PerRecord { target, fused })
}

pub fn run(cfg: &RunConfig, emit_fused: bool, strictness: Strictness) -> Result<usize> {
    cfg.require_annotations()?;
    cfg.require_embeddings_dir()?;
    cfg.ensure_output_dir()?;

    let records = load_annotations(&cfg.paths.annotations, strictness)?;
    let expansions = load_expansions(cfg, &records, strictness)?;

    let pool = worker_pool(cfg.jobs)?;
    let results: Vec<(usize, Result<PerRecord>)> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, record)| (i, process(cfg, record, &expansions, emit_fused)))
            .collect()
    });

    let mut targets = Vec::new();
    let mut fused_files = Vec::new();
    let mut skipped = 0usize;
    for (i, result) in results {
        match result {
            Ok(per) => {
                if let Some(fused) = per.fused {
                    fused_files.push((records[i].video_id().to_string(), fused));
                }
                targets.push(per.target);
            }
            Err(err) => match strictness {
                Strictness::Strict => {
                    return Err(err)
                        .with_context(|| format!("record '{}'", records[i].video_id()))
                }
                Strictness::Lenient => {
                    log::warn!("skipping record '{}': {err:#}", records[i].video_id());
                    skipped += 1;
                }
            },
        }
    }

    let out_path = cfg.paths.output_dir.join("supervision.jsonl");
    save_supervision(&targets, &out_path)?;

    if !fused_files.is_empty() {
        let fused_dir = cfg.paths.output_dir.join("fused");
        std::fs::create_dir_all(&fused_dir)?;
        for (video_id, fused) in &fused_files {
            save_embeddings(fused, &fused_dir.join(format!("{video_id}.emb")))?;
        }
    }

    let report = SuperviseReport {
        version: vmr_core::version(),
        config: cfg,
        records_total: records.len(),
        records_written: targets.len(),
        records_skipped: skipped,
    };
    std::fs::write(
        cfg.paths.output_dir.join("supervise_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    eprintln!(
        "supervise: wrote {} targets to {} ({} skipped)",
        targets.len(),
        out_path.display(),
        skipped,
    );
    Ok(targets.len())
}
