//! Query-guided temporal feature enhancement: single-head scaled dot-product
//! cross attention with identity projections, the local and global branches,
//! and their weighted fusion.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{load_embeddings, EmbeddingIoError};
use crate::matrix::{dot, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {context} has {found} columns, expected {expected}")]
    Dim {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("keys have {keys} rows but values have {values}")]
    KeyValueRows { keys: usize, values: usize },
    #[error("shape mismatch when fusing: {expected_rows}x{expected_dim} vs {rows}x{dim}")]
    Shape {
        expected_rows: usize,
        expected_dim: usize,
        rows: usize,
        dim: usize,
    },
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("projection load failed: {0}")]
    Projection(#[from] EmbeddingIoError),
    #[error("projection matrix '{context}' maps {found} inputs, expected {expected}")]
    ProjectionShape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Weights of the global (`a`) and local (`b`) branches plus an optional
/// attention scale override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub a: f64,
    pub b: f64,
    /// Attention logit scale; `None` means `1 / sqrt(D)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attn_scale: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            attn_scale: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(FusionError::Config(format!(
                "branch weights must be finite (a={}, b={})",
                self.a, self.b
            )));
        }
        if self.a == 0.0 && self.b == 0.0 {
            return Err(FusionError::Config(
                "branch weights must not both be zero".to_string(),
            ));
        }
        if let Some(scale) = self.attn_scale {
            if !scale.is_finite() {
                return Err(FusionError::Config(format!(
                    "attention scale must be finite (got {scale})"
                )));
            }
        }
        Ok(())
    }

    pub fn scale_for<T: Real>(&self, dim: usize) -> T {
        T::from_f(self.attn_scale.unwrap_or(1.0 / (dim as f64).sqrt()))
    }
}

fn check_attention_shapes<T: Real>(
    queries: &Matrix<T>,
    keys: &Matrix<T>,
    values: &Matrix<T>,
) -> Result<(), FusionError> {
    if keys.dim() != queries.dim() {
        return Err(FusionError::Dim {
            context: "keys",
            expected: queries.dim(),
            found: keys.dim(),
        });
    }
    if values.dim() != queries.dim() {
        return Err(FusionError::Dim {
            context: "values",
            expected: queries.dim(),
            found: values.dim(),
        });
    }
    if keys.rows() != values.rows() {
        return Err(FusionError::KeyValueRows {
            keys: keys.rows(),
            values: values.rows(),
        });
    }
    Ok(())
}

/// Row-wise softmax attention weights, computed with max subtraction.
pub fn attention_weights<T: Real>(
    queries: &Matrix<T>,
    keys: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>, FusionError> {
    if keys.dim() != queries.dim() {
        return Err(FusionError::Dim {
            context: "keys",
            expected: queries.dim(),
            found: keys.dim(),
        });
    }
    let mut data = Vec::with_capacity(queries.rows() * keys.rows());
    for q in queries.iter_rows() {
        let logits: Vec<T> = keys.iter_rows().map(|k| scale * dot(q, k)).collect();
        let max = logits
            .iter()
            .copied()
            .fold(T::neg_infinity(), |m, v| m.max(v));
        let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / sum));
    }
    Matrix::from_vec(queries.rows(), keys.rows(), data)
        .map_err(|_| FusionError::Config("attention weights must be finite".to_string()))
}

/// Scaled dot-product attention: row `i` of the output is
/// `softmax(scale * q_i K^T) V`.
pub fn cross_attention<T: Real>(
    queries: &Matrix<T>,
    keys: &Matrix<T>,
    values: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>, FusionError> {
    check_attention_shapes(queries, keys, values)?;
    let weights = attention_weights(queries, keys, scale)?;
    let mut data = vec![T::zero(); queries.rows() * values.dim()];
    for (i, w_row) in weights.iter_rows().enumerate() {
        let out = &mut data[i * values.dim()..(i + 1) * values.dim()];
        for (w, v_row) in w_row.iter().zip(values.iter_rows()) {
            for (o, &v) in out.iter_mut().zip(v_row.iter()) {
                *o += *w * v;
            }
        }
    }
    Matrix::from_vec(queries.rows(), values.dim(), data)
        .map_err(|_| FusionError::Config("attention output must be finite".to_string()))
}

/// Per-stage outputs of the local branch: start-, query-, and end-enhanced
/// video features.
pub type LocalBranches<T> = (Matrix<T>, Matrix<T>, Matrix<T>);

/// Enhances the video feature against each query part separately, with the
/// frames as attention queries and the token matrix as key and value.
pub fn local_branch<T: Real>(
    f_v: &Matrix<T>,
    f_s: &Matrix<T>,
    f_q: &Matrix<T>,
    f_e: &Matrix<T>,
    scale: T,
) -> Result<LocalBranches<T>, FusionError> {
    Ok((
        cross_attention(f_v, f_s, f_s, scale)?,
        cross_attention(f_v, f_q, f_q, scale)?,
        cross_attention(f_v, f_e, f_e, scale)?,
    ))
}

/// Enhances the video feature against the row-wise concatenation of the
/// start, original, and end query tokens.
pub fn global_branch<T: Real>(
    f_v: &Matrix<T>,
    f_s: &Matrix<T>,
    f_q: &Matrix<T>,
    f_e: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>, FusionError> {
    let concat = Matrix::concat_rows(&[f_s, f_q, f_e]).map_err(|_| FusionError::Dim {
        context: "concatenated query tokens",
        expected: f_v.dim(),
        found: f_s.dim().max(f_q.dim()).max(f_e.dim()),
    })?;
    cross_attention(f_v, &concat, &concat, scale)
}

/// Weighted combination `a * global + b * (start + query + end)`, elementwise.
pub fn fuse<T: Real>(
    global: &Matrix<T>,
    start: &Matrix<T>,
    query: &Matrix<T>,
    end: &Matrix<T>,
    cfg: &FusionConfig,
) -> Result<Matrix<T>, FusionError> {
    cfg.validate()?;
    for part in [start, query, end] {
        if part.rows() != global.rows() || part.dim() != global.dim() {
            return Err(FusionError::Shape {
                expected_rows: global.rows(),
                expected_dim: global.dim(),
                rows: part.rows(),
                dim: part.dim(),
            });
        }
    }
    let a = T::from_f(cfg.a);
    let b = T::from_f(cfg.b);
    let data = global
        .as_slice()
        .iter()
        .zip(start.as_slice())
        .zip(query.as_slice())
        .zip(end.as_slice())
        .map(|(((&g, &s), &q), &e)| a * g + b * (s + q + e))
        .collect();
    Matrix::from_vec(global.rows(), global.dim(), data)
        .map_err(|_| FusionError::Config("fused output must be finite".to_string()))
}

/// Runs both branches and the weighted fusion, returning the enhanced video
/// feature.
pub fn enhance<T: Real>(
    f_v: &Matrix<T>,
    f_s: &Matrix<T>,
    f_q: &Matrix<T>,
    f_e: &Matrix<T>,
    cfg: &FusionConfig,
) -> Result<Matrix<T>, FusionError> {
    let scale = cfg.scale_for::<T>(f_v.dim());
    let (local_s, local_q, local_e) = local_branch(f_v, f_s, f_q, f_e, scale)?;
    let global = global_branch(f_v, f_s, f_q, f_e, scale)?;
    fuse(&global, &local_s, &local_q, &local_e, cfg)
}

/// Optional learned projections applied before attention. Matrices use the
/// binary embedding format; `None` means identity.
#[derive(Debug, Clone, Default)]
pub struct Projections<T> {
    pub query: Option<Matrix<T>>,
    pub key: Option<Matrix<T>>,
    pub value: Option<Matrix<T>>,
}

impl<T: Real> Projections<T> {
    pub fn identity() -> Self {
        Self {
            query: None,
            key: None,
            value: None,
        }
    }

    pub fn load(
        query: Option<&Path>,
        key: Option<&Path>,
        value: Option<&Path>,
    ) -> Result<Self, FusionError> {
        let read = |p: Option<&Path>| -> Result<Option<Matrix<T>>, FusionError> {
            p.map(load_embeddings).transpose().map_err(Into::into)
        };
        Ok(Self {
            query: read(query)?,
            key: read(key)?,
            value: read(value)?,
        })
    }

    fn apply(
        matrix: &Matrix<T>,
        proj: &Option<Matrix<T>>,
        context: &'static str,
    ) -> Result<Matrix<T>, FusionError> {
        match proj {
            None => Ok(matrix.clone()),
            Some(w) => {
                if w.rows() != matrix.dim() {
                    return Err(FusionError::ProjectionShape {
                        context,
                        expected: matrix.dim(),
                        found: w.rows(),
                    });
                }
                matrix
                    .matmul(w)
                    .map_err(|_| FusionError::Config("projection output must be finite".into()))
            }
        }
    }
}

/// `enhance` with the projection hook applied to the attention inputs.
pub fn enhance_projected<T: Real>(
    f_v: &Matrix<T>,
    f_s: &Matrix<T>,
    f_q: &Matrix<T>,
    f_e: &Matrix<T>,
    cfg: &FusionConfig,
    projections: &Projections<T>,
) -> Result<Matrix<T>, FusionError> {
    let f_v = Projections::apply(f_v, &projections.query, "query projection")?;
    let f_s = Projections::apply(f_s, &projections.key, "key projection")?;
    let f_q = Projections::apply(f_q, &projections.key, "key projection")?;
    let f_e = Projections::apply(f_e, &projections.key, "key projection")?;
    enhance(&f_v, &f_s, &f_q, &f_e, cfg)
}
