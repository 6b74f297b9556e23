//! Boundary probability modeling: pseudo-boundary generation from combined
//! semantic-similarity / temporal-distance scores, and conversion of rigid
//! boundary annotations into per-frame probability scores. Includes the
//! selectable ablation strategies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{SupervisionTarget, VideoRecord};
use crate::matrix::{dot, norm, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SupervisionError {
    #[error("invalid supervision config: {0}")]
    Config(String),
    #[error("frame count mismatch: annotation implies {expected} rows, embeddings have {found}")]
    FrameCount { expected: usize, found: usize },
    #[error("dimension mismatch: {context} has {found} columns, expected {expected}")]
    Dim {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("anchor frame {anchor} out of range for {frames} frames")]
    AnchorRange { anchor: usize, frames: usize },
    #[error(
        "inconsistent assembly: s'={s_prime}, e'={e_prime}, frames={frames}, \
         prefix len {prefix}, suffix len {suffix}"
    )]
    Assembly {
        s_prime: usize,
        e_prime: usize,
        frames: usize,
        prefix: usize,
        suffix: usize,
    },
}

/// Supervision strategy. `Paper` is the full similarity-plus-distance
/// pipeline; the others are the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Paper,
    Gauss,
    DistanceOnly,
    SimilarityOnly,
    OriginalQuery,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Paper => "paper",
            Strategy::Gauss => "gauss",
            Strategy::DistanceOnly => "distance_only",
            Strategy::SimilarityOnly => "similarity_only",
            Strategy::OriginalQuery => "original_query",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisionConfig {
    pub strategy: Strategy,
    /// Score threshold below which frames are zeroed out before
    /// normalization. Must be positive.
    pub tau: f64,
    /// Standard deviation of the smoothing ramp, used only by `gauss`.
    pub gauss_sigma: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Paper,
            tau: 0.8,
            gauss_sigma: 1.0,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(SupervisionError::Config(format!(
                "tau must be positive (got {})",
                self.tau
            )));
        }
        if self.strategy == Strategy::Gauss
            && (!self.gauss_sigma.is_finite() || self.gauss_sigma <= 0.0)
        {
            return Err(SupervisionError::Config(format!(
                "gauss_sigma must be positive (got {})",
                self.gauss_sigma
            )));
        }
        Ok(())
    }
}

/// Per-frame start/end boundary scores (similarity minus normalized distance).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryScores<T> {
    pub start_scores: Vec<T>,
    pub end_scores: Vec<T>,
}

/// Token-level embeddings of the expanded and original queries.
#[derive(Debug, Clone)]
pub struct QueryEmbeddings<T> {
    pub start: Matrix<T>,
    pub original: Matrix<T>,
    pub end: Matrix<T>,
}

impl<T: Real> QueryEmbeddings<T> {
    fn check_dim(&self, expected: usize) -> Result<(), SupervisionError> {
        for (context, m) in [
            ("start query embeddings", &self.start),
            ("original query embeddings", &self.original),
            ("end query embeddings", &self.end),
        ] {
            if m.dim() != expected {
                return Err(SupervisionError::Dim {
                    context,
                    expected,
                    found: m.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Cosine similarity clamped to `[-1, 1]`. A zero-norm input is degenerate
/// and maps to 0 with a warning.
pub fn cosine_sim<T: Real>(x: &[T], y: &[T]) -> T {
    assert_eq!(x.len(), y.len(), "cosine_sim requires equal dimensions");
    let nx = norm(x);
    let ny = norm(y);
    if nx == T::zero() || ny == T::zero() {
        log::warn!("cosine_sim on zero-norm embedding, returning 0");
        return T::zero();
    }
    let cos = dot(x, y) / (nx * ny);
    cos.min(T::one()).max(-T::one())
}

/// Arithmetic mean of the token rows.
pub fn pool_query<T: Real>(tokens: &Matrix<T>) -> Vec<T> {
    let inv = T::from_f(1.0 / tokens.rows() as f64);
    let mut pooled = vec![T::zero(); tokens.dim()];
    for row in tokens.iter_rows() {
        for (p, &v) in pooled.iter_mut().zip(row.iter()) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p *= inv;
    }
    pooled
}

#[derive(Clone, Copy)]
struct Terms {
    sim: bool,
    dis: bool,
}

impl Terms {
    const BOTH: Terms = Terms {
        sim: true,
        dis: true,
    };

    fn for_strategy(strategy: Strategy) -> Terms {
        match strategy {
            Strategy::DistanceOnly => Terms {
                sim: false,
                dis: true,
            },
            Strategy::SimilarityOnly => Terms {
                sim: true,
                dis: false,
            },
            _ => Terms::BOTH,
        }
    }
}

/// Scores every frame against one boundary anchor.
fn anchor_scores<T: Real>(f_v: &Matrix<T>, pooled: &[T], anchor: usize, terms: Terms) -> Vec<T> {
    let frames = f_v.rows();
    let inv_t = 1.0 / frames as f64;
    (0..frames)
        .map(|i| {
            let mut score = T::zero();
            if terms.sim {
                score += cosine_sim(f_v.row(i), pooled);
            }
            if terms.dis {
                score -= T::from_f(anchor.abs_diff(i) as f64 * inv_t);
            }
            score
        })
        .collect()
}

fn check_scoring_inputs<T: Real>(
    f_v: &Matrix<T>,
    pooled: &[T],
    context: &'static str,
) -> Result<(), SupervisionError> {
    if pooled.len() != f_v.dim() {
        return Err(SupervisionError::Dim {
            context,
            expected: f_v.dim(),
            found: pooled.len(),
        });
    }
    Ok(())
}

/// Combined similarity/distance scores of every frame against the annotated
/// boundary anchors.
pub fn compute_boundary_scores<T: Real>(
    f_v: &Matrix<T>,
    f_s_pooled: &[T],
    f_e_pooled: &[T],
    anchor_s: usize,
    anchor_e: usize,
) -> Result<BoundaryScores<T>, SupervisionError> {
    check_scoring_inputs(f_v, f_s_pooled, "pooled start query")?;
    check_scoring_inputs(f_v, f_e_pooled, "pooled end query")?;
    let frames = f_v.rows();
    for anchor in [anchor_s, anchor_e] {
        if anchor >= frames {
            return Err(SupervisionError::AnchorRange { anchor, frames });
        }
    }
    Ok(BoundaryScores {
        start_scores: anchor_scores(f_v, f_s_pooled, anchor_s, Terms::BOTH),
        end_scores: anchor_scores(f_v, f_e_pooled, anchor_e, Terms::BOTH),
    })
}

/// Picks the score-maximizing frames: earliest index on start ties, latest on
/// end ties. If the raw argmaxes cross (`s' > e'`), falls back to the
/// annotated frame indices.
pub fn select_pseudo_boundaries<T: Real>(
    scores: &BoundaryScores<T>,
    annotated: (usize, usize),
) -> (usize, usize) {
    let mut s_prime = 0;
    for (i, &score) in scores.start_scores.iter().enumerate() {
        if score > scores.start_scores[s_prime] {
            s_prime = i;
        }
    }
    let mut e_prime = 0;
    for (i, &score) in scores.end_scores.iter().enumerate() {
        if score >= scores.end_scores[e_prime] {
            e_prime = i;
        }
    }
    if s_prime > e_prime {
        annotated
    } else {
        (s_prime, e_prime)
    }
}

/// Zeroes scores below `tau`, then min-max normalizes the survivors so the
/// best maps to 1 and the worst survivor to 0. A lone survivor (or an
/// all-equal survivor set) maps to 1.
fn threshold_normalize<T: Real>(scores: &[T], tau: T) -> Vec<T> {
    let mut max = None::<T>;
    let mut min = None::<T>;
    for &s in scores {
        if s >= tau {
            max = Some(max.map_or(s, |m: T| m.max(s)));
            min = Some(min.map_or(s, |m: T| m.min(s)));
        }
    }
    let (Some(max), Some(min)) = (max, min) else {
        return vec![T::zero(); scores.len()];
    };
    let range = max - min;
    scores
        .iter()
        .map(|&s| {
            if s < tau {
                T::zero()
            } else if range == T::zero() {
                T::one()
            } else {
                (s - min) / range
            }
        })
        .collect()
}

fn side_probs<T: Real>(
    f_v: &Matrix<T>,
    pooled: &[T],
    boundary: usize,
    tau: T,
    terms: Terms,
    before: bool,
) -> Result<Vec<T>, SupervisionError> {
    check_scoring_inputs(f_v, pooled, "pooled query")?;
    if tau <= T::zero() {
        return Err(SupervisionError::Config(
            "tau must be positive".to_string(),
        ));
    }
    let frames = f_v.rows();
    if boundary >= frames {
        return Err(SupervisionError::AnchorRange {
            anchor: boundary,
            frames,
        });
    }
    let inv_t = 1.0 / frames as f64;
    let indices: Vec<usize> = if before {
        (0..boundary).collect()
    } else {
        (boundary + 1..frames).collect()
    };
    let scores: Vec<T> = indices
        .iter()
        .map(|&i| {
            let mut score = T::zero();
            if terms.sim {
                score += cosine_sim(f_v.row(i), pooled);
            }
            if terms.dis {
                score -= T::from_f(boundary.abs_diff(i) as f64 * inv_t);
            }
            score
        })
        .collect();
    Ok(threshold_normalize(&scores, tau))
}

/// Probability of each frame `i < s'` being the start boundary.
pub fn probability_before_start<T: Real>(
    f_v: &Matrix<T>,
    f_s_pooled: &[T],
    s_prime: usize,
    tau: T,
) -> Result<Vec<T>, SupervisionError> {
    side_probs(f_v, f_s_pooled, s_prime, tau, Terms::BOTH, true)
}

/// Probability of each frame `i > e'` being the end boundary.
pub fn probability_after_end<T: Real>(
    f_v: &Matrix<T>,
    f_e_pooled: &[T],
    e_prime: usize,
    tau: T,
) -> Result<Vec<T>, SupervisionError> {
    side_probs(f_v, f_e_pooled, e_prime, tau, Terms::BOTH, false)
}

/// Stitches the prefix probabilities, the certain region, and the suffix
/// probabilities into the full per-frame vector.
pub fn assemble_probability<T: Real>(
    p_s: &[T],
    p_e: &[T],
    s_prime: usize,
    e_prime: usize,
    frames: usize,
) -> Result<Vec<T>, SupervisionError> {
    let consistent = s_prime <= e_prime
        && e_prime < frames
        && p_s.len() == s_prime
        && p_e.len() == frames - 1 - e_prime;
    if !consistent {
        return Err(SupervisionError::Assembly {
            s_prime,
            e_prime,
            frames,
            prefix: p_s.len(),
            suffix: p_e.len(),
        });
    }
    let mut probs = Vec::with_capacity(frames);
    probs.extend_from_slice(p_s);
    probs.extend(std::iter::repeat_n(T::one(), e_prime - s_prime + 1));
    probs.extend_from_slice(p_e);
    Ok(probs)
}

fn gauss_probs(frames: usize, a_s: usize, a_e: usize, sigma: f64) -> Vec<f64> {
    let two_sigma_sq = 2.0 * sigma * sigma;
    (0..frames)
        .map(|i| {
            if i < a_s {
                (-((a_s - i) as f64).powi(2) / two_sigma_sq).exp()
            } else if i > a_e {
                (-((i - a_e) as f64).powi(2) / two_sigma_sq).exp()
            } else {
                1.0
            }
        })
        .collect()
}

/// Runs the configured strategy end to end for one record and returns the
/// supervision target.
pub fn generate_supervision<T: Real>(
    record: &VideoRecord,
    f_v: &Matrix<T>,
    queries: &QueryEmbeddings<T>,
    cfg: &SupervisionConfig,
) -> Result<SupervisionTarget, SupervisionError> {
    cfg.validate()?;
    let frames = record.num_frames();
    if f_v.rows() != frames {
        return Err(SupervisionError::FrameCount {
            expected: frames,
            found: f_v.rows(),
        });
    }
    queries.check_dim(f_v.dim())?;
    let anchor_s = record.start_frame();
    let anchor_e = record.end_frame();

    let (s_prime, e_prime, probs) = match cfg.strategy {
        Strategy::Gauss => (
            anchor_s,
            anchor_e,
            gauss_probs(frames, anchor_s, anchor_e, cfg.gauss_sigma),
        ),
        strategy => {
            let terms = Terms::for_strategy(strategy);
            let (pooled_s, pooled_e) = if strategy == Strategy::OriginalQuery {
                let pooled = pool_query(&queries.original);
                (pooled.clone(), pooled)
            } else {
                (pool_query(&queries.start), pool_query(&queries.end))
            };
            let scores = BoundaryScores {
                start_scores: anchor_scores(f_v, &pooled_s, anchor_s, terms),
                end_scores: anchor_scores(f_v, &pooled_e, anchor_e, terms),
            };
            let (s_prime, e_prime) = select_pseudo_boundaries(&scores, (anchor_s, anchor_e));
            let tau = T::from_f(cfg.tau);
            let p_s = side_probs(f_v, &pooled_s, s_prime, tau, terms, true)?;
            let p_e = side_probs(f_v, &pooled_e, e_prime, tau, terms, false)?;
            let probs = assemble_probability(&p_s, &p_e, s_prime, e_prime, frames)?;
            (s_prime, e_prime, probs.iter().map(|p| p.to_f()).collect())
        }
    };

    Ok(SupervisionTarget {
        video_id: record.video_id().to_string(),
        s_prime,
        e_prime,
        probs,
    })
}
