//! Boundary-annotation perturbation harness: seeded, reproducible noise on
//! segment endpoints, scaled by the segment length.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Segment, VideoRecord};

/// Identity of the pseudo-random generator, recorded in run provenance.
pub const RNG_ALGORITHM: &str = "chacha8";

const MAX_REDRAWS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("gaussian sigma must be positive and finite (got {0})")]
    InvalidSigma(f64),
    #[error("uniform range must satisfy lo < hi with finite bounds (got [{lo}, {hi}])")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("duration {duration} does not cover the segment end {end}")]
    DurationTooShort { duration: f64, end: f64 },
}

/// Noise distribution applied to both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl NoiseKind {
    pub fn validate(&self) -> Result<(), NoiseError> {
        match *self {
            NoiseKind::None => Ok(()),
            NoiseKind::Gaussian { sigma } => {
                if sigma.is_finite() && sigma > 0.0 {
                    Ok(())
                } else {
                    Err(NoiseError::InvalidSigma(sigma))
                }
            }
            NoiseKind::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(NoiseError::InvalidRange { lo, hi })
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            NoiseKind::None => "none".to_string(),
            NoiseKind::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            NoiseKind::Uniform { lo, hi } => format!("uniform({lo}, {hi})"),
        }
    }
}

/// Full perturbation setting: distribution plus the seed of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::None,
            seed: 42,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), NoiseError> {
        self.kind.validate()
    }
}

fn draw<R: Rng>(kind: &NoiseKind, rng: &mut R) -> f64 {
    match *kind {
        NoiseKind::None => 0.0,
        NoiseKind::Gaussian { sigma } => Normal::new(0.0, sigma)
            .expect("sigma validated positive")
            .sample(rng),
        NoiseKind::Uniform { lo, hi } => Uniform::new(lo, hi).sample(rng),
    }
}

/// Perturbs one segment with an explicit generator. Both endpoints move by
/// `length * draw`, are clamped into `[0, duration]`, and inverted results
/// are redrawn up to 16 times before falling back to the original segment.
pub fn perturb_annotation_with_rng<R: Rng>(
    segment: &Segment,
    kind: &NoiseKind,
    duration: f64,
    rng: &mut R,
) -> Result<Segment, NoiseError> {
    kind.validate()?;
    if duration < segment.end() {
        return Err(NoiseError::DurationTooShort {
            duration,
            end: segment.end(),
        });
    }
    if matches!(kind, NoiseKind::None) {
        return Ok(*segment);
    }
    let length = segment.length();
    for _ in 0..MAX_REDRAWS {
        let x = draw(kind, rng);
        let y = draw(kind, rng);
        let start = (segment.start() + length * x).clamp(0.0, duration);
        let end = (segment.end() + length * y).clamp(0.0, duration);
        if start < end {
            return Ok(Segment::new(start, end).expect("clamped non-inverted segment is valid"));
        }
    }
    Ok(*segment)
}

/// Perturbs one segment with a generator freshly seeded from the noise spec.
pub fn perturb_annotation(
    segment: &Segment,
    spec: &NoiseSpec,
    duration: f64,
) -> Result<Segment, NoiseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    perturb_annotation_with_rng(segment, &spec.kind, duration, &mut rng)
}

/// Perturbs every record's annotation. Each record draws from its own
/// substream of the seeded generator, so results are deterministic per
/// (seed, record order) and safe to parallelize.
pub fn perturb_dataset(
    records: &[VideoRecord],
    spec: &NoiseSpec,
) -> Result<Vec<VideoRecord>, NoiseError> {
    spec.validate()?;
    records
        .iter()
        .enumerate()
        .map(|(index, record)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64);
            let annotation = perturb_annotation_with_rng(
                record.annotation(),
                &spec.kind,
                record.duration_sec(),
                &mut rng,
            )?;
            Ok(record
                .with_annotation(annotation)
                .expect("clamped segment within [0, duration] keeps record valid"))
        })
        .collect()
}
