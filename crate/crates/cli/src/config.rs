//! Run configuration: one TOML file with sections per subsystem, plus
//! command-line overrides (flags win).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use vmr_core::expand::ExpanderConfig;
use vmr_core::fusion::FusionConfig;
use vmr_core::loss::LossWeights;
use vmr_core::metrics::{default_map_thresholds, default_r1_thresholds};
use vmr_core::perturb::NoiseSpec;
use vmr_core::supervision::SupervisionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: PathBuf,
    pub embeddings_dir: PathBuf,
    pub cache: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            annotations: PathBuf::from("data/annotations.jsonl"),
            embeddings_dir: PathBuf::from("data/embeddings"),
            cache: PathBuf::from("data/expansion_cache.jsonl"),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub offline: bool,
    pub max_network_attempts: u32,
    pub parse_reprompts: u32,
    pub backoff_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let base = ExpanderConfig::default();
        Self {
            model_id: base.model_id,
            temperature: base.temperature,
            max_tokens: base.max_tokens,
            offline: false,
            max_network_attempts: base.max_network_attempts,
            parse_reprompts: base.parse_reprompts,
            backoff_ms: base.backoff_ms,
        }
    }
}

impl LlmSettings {
    pub fn expander_config(&self) -> ExpanderConfig {
        ExpanderConfig {
            model_id: self.model_id.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            offline: self.offline,
            max_network_attempts: self.max_network_attempts,
            parse_reprompts: self.parse_reprompts,
            backoff_ms: self.backoff_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub r1_thresholds: Vec<f64>,
    pub map_thresholds: Vec<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            r1_thresholds: default_r1_thresholds(),
            map_thresholds: default_map_thresholds(),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for per-video parallel stages; 0 means one per core.
    pub jobs: usize,
    pub paths: Paths,
    pub llm: LlmSettings,
    pub supervision: SupervisionConfig,
    pub fusion: FusionConfig,
    pub loss: LossWeights,
    pub noise: NoiseSpec,
    pub metrics: MetricSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            jobs: 0,
            paths: Paths::default(),
            llm: LlmSettings::default(),
            supervision: SupervisionConfig::default(),
            fusion: FusionConfig::default(),
            loss: LossWeights::default(),
            noise: NoiseSpec::default(),
            metrics: MetricSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;
        Ok(config)
    }

    /// Validates every numeric invariant before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.supervision
            .validate()
            .context("supervision section")?;
        self.fusion.validate().context("fusion section")?;
        self.loss.validate().context("loss section")?;
        self.noise.validate().context("noise section")?;
        if !(0.0..=2.0).contains(&self.llm.temperature) || !self.llm.temperature.is_finite() {
            bail!("llm.temperature must lie in [0, 2]");
        }
        if self.llm.max_tokens == 0 {
            bail!("llm.max_tokens must be positive");
        }
        if self.llm.max_network_attempts == 0 {
            bail!("llm.max_network_attempts must be positive");
        }
        for (name, list) in [
            ("metrics.r1_thresholds", &self.metrics.r1_thresholds),
            ("metrics.map_thresholds", &self.metrics.map_thresholds),
        ] {
            if list.is_empty() {
                bail!("{name} must not be empty");
            }
            for mu in list {
                if !mu.is_finite() || *mu <= 0.0 || *mu > 1.0 {
                    bail!("{name} entries must lie in (0, 1], got {mu}");
                }
            }
        }
        Ok(())
    }

    pub fn require_annotations(&self) -> Result<()> {
        if !self.paths.annotations.is_file() {
            bail!(
                "annotations file not found: {}",
                self.paths.annotations.display()
            );
        }
        Ok(())
    }

    pub fn require_embeddings_dir(&self) -> Result<()> {
        if !self.paths.embeddings_dir.is_dir() {
            bail!(
                "embeddings directory not found: {}",
                self.paths.embeddings_dir.display()
            );
        }
        Ok(())
    }

    pub fn ensure_output_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.paths.output_dir).with_context(|| {
            format!(
                "cannot create output directory {}",
                self.paths.output_dir.display()
            )
        })
    }

    pub fn ensure_parent(path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("cannot create directory {}", parent.display()))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmr_core::perturb::NoiseKind;

    #[test]
    fn defaults_match_the_shipped_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.supervision.tau, 0.8);
        assert_eq!(cfg.fusion.a, 1.0);
        assert_eq!(cfg.fusion.b, 1.0);
        assert_eq!(cfg.llm.model_id, "llama3-8b");
        assert_eq!(cfg.llm.temperature, 0.0);
        assert_eq!(cfg.metrics.r1_thresholds, vec![0.5, 0.7]);
        assert_eq!(cfg.metrics.map_thresholds.len(), 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_sections_round_trip() {
        let text = r#"
seed = 7
jobs = 2

[paths]
annotations = "a.jsonl"
embeddings_dir = "emb"
cache = "cache.jsonl"
output_dir = "out"

[llm]
model_id = "qwen"
temperature = 0.5

[supervision]
strategy = "gauss"
tau = 0.9
gauss_sigma = 2.0

[fusion]
a = 0.5
b = 1.5

[noise]
kind = "gaussian"
sigma = 0.1
seed = 11

[metrics]
r1_thresholds = [0.5]
map_thresholds = [0.5, 0.75]
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.llm.model_id, "qwen");
        assert_eq!(cfg.supervision.tau, 0.9);
        assert_eq!(cfg.fusion.a, 0.5);
        assert_eq!(cfg.noise.kind, NoiseKind::Gaussian { sigma: 0.1 });
        assert_eq!(cfg.noise.seed, 11);
        cfg.validate().unwrap();

        let rendered = toml::to_string(&cfg).unwrap();
        let reparsed: RunConfig = toml::from_str(&rendered).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.supervision.tau = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.fusion.a = 0.0;
        cfg.fusion.b = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.metrics.map_thresholds = vec![1.5];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.noise.kind = NoiseKind::Uniform { lo: 1.0, hi: 0.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("typo_key = 1\n").is_err());
    }
}
