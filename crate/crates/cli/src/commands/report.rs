//! `vmr report`: print the fully resolved configuration with the toolkit
//! version, for embedding in experiment notes and audits.

use anyhow::Result;
use serde_json::json;

use vmr_core::perturb::RNG_ALGORITHM;

use crate::config::RunConfig;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let value = json!({
        "tool": "vmr",
        "version": vmr_core::version(),
        "rng": RNG_ALGORITHM,
        "config": cfg,
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}
