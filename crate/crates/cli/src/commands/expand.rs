//! `vmr expand`: expand every unique query through the LLM (or the cache)
//! and write the expansions JSONL.

use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use vmr_core::data::{load_annotations, Strictness};
use vmr_core::expand::{ExpandedQuery, ExpansionCache, HttpChatClient, QueryExpander};

use crate::config::RunConfig;
use crate::commands::worker_pool;

pub struct ExpandSummary {
    pub unique_queries: usize,
    pub cache_hits: usize,
    pub fetched: usize,
    pub failures: usize,
}

pub fn run(cfg: &RunConfig, strictness: Strictness) -> Result<ExpandSummary> {
    cfg.require_annotations()?;
    cfg.ensure_output_dir()?;
    RunConfig::ensure_parent(&cfg.paths.cache)?;

    let records = load_annotations(&cfg.paths.annotations, strictness)?;
    let mut unique: Vec<String> = Vec::new();
    for record in &records {
        if !unique.iter().any(|q| q == record.query_text()) {
            unique.push(record.query_text().to_string());
        }
    }

    let cache = ExpansionCache::open(&cfg.paths.cache)
        .with_context(|| format!("cannot open cache {}", cfg.paths.cache.display()))?;
    let client = if cfg.llm.offline {
        None
    } else {
        match HttpChatClient::from_env() {
            Ok(client) => Some(client),
            Err(err) => {
                log::warn!("LLM endpoint not configured ({err}); serving from cache only");
                None
            }
        }
    };
    let expander = QueryExpander::new(client, cache, cfg.llm.expander_config());

    type ExpandOutcome = Result<(ExpandedQuery, bool), vmr_core::expand::ExpandError>;
    let pool = worker_pool(cfg.jobs)?;
    let results: Vec<(String, ExpandOutcome)> =
        pool.install(|| {
            unique
                .par_iter()
                .map(|query| (query.clone(), expander.expand_detailed(query)))
                .collect()
        });

    let mut rows = Vec::new();
    let mut hits = 0usize;
    let mut fetched = 0usize;
    let mut failed: Vec<(String, String)> = Vec::new();
    for (query, result) in results {
        match result {
            Ok((expansion, from_cache)) => {
                if from_cache {
                    hits += 1;
                } else {
                    fetched += 1;
                }
                rows.push(expansion);
            }
            Err(err) => failed.push((query, err.to_string())),
        }
    }

    let out_path = cfg.paths.output_dir.join("expansions.jsonl");
    let mut out = BufWriter::new(File::create(&out_path)?);
    for row in &rows {
        writeln!(out, "{}", serde_json::to_string(row)?)?;
    }
    out.flush()?;
    expander.compact_cache().context("cache compaction")?;

    eprintln!(
        "expand: {} unique queries, {} cache hits, {} fetched, {} failures ({} network calls)",
        unique.len(),
        hits,
        fetched,
        failed.len(),
        expander.network_calls(),
    );
    if !failed.is_empty() {
        for (query, err) in &failed {
            eprintln!("expand: failed '{query}': {err}");
        }
        bail!("{} of {} queries failed to expand", failed.len(), unique.len());
    }
    Ok(ExpandSummary {
        unique_queries: unique.len(),
        cache_hits: hits,
        fetched,
        failures: failed.len(),
    })
}
