//! Composable loss terms: 1-D generalized IoU, moment localization loss,
//! hinge saliency loss, soft-target boundary cross-entropy, a deterministic
//! toy boundary head, loss composition, and finite-difference gradient
//! checking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Segment;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::supervision::{cosine_sim, pool_query};

/// Clamp applied to probabilities before logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LossError {
    #[error("moment width must be positive")]
    NonpositiveWidth,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("saliency index {index} out of range for {len} clips")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("dimension mismatch: {context} has {found} columns, expected {expected}")]
    Dim {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("non-finite evaluation during gradient check")]
    NonFinite,
}

/// Loss term weights plus the saliency margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_iou: f64,
    pub lambda_saliency: f64,
    pub lambda_cls: f64,
    pub margin_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_iou: 1.0,
            lambda_saliency: 1.0,
            lambda_cls: 1.0,
            margin_delta: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, w) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_iou", self.lambda_iou),
            ("lambda_saliency", self.lambda_saliency),
            ("lambda_cls", self.lambda_cls),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::Weights(format!(
                    "{name} must be finite and nonnegative (got {w})"
                )));
            }
        }
        if !self.margin_delta.is_finite() {
            return Err(LossError::Weights(format!(
                "margin_delta must be finite (got {})",
                self.margin_delta
            )));
        }
        Ok(())
    }
}

/// Parameters of the toy boundary head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyHeadParams {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for ToyHeadParams {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            beta: 0.0,
        }
    }
}

/// Normalized (center, width) form of a temporal moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment<T> {
    pub center: T,
    pub width: T,
}

impl<T: Real> Moment<T> {
    /// Converts a segment in seconds into duration-normalized (center, width).
    pub fn from_segment(segment: &Segment, duration: f64) -> Self {
        let start = segment.start() / duration;
        let end = segment.end() / duration;
        Self {
            center: T::from_f((start + end) / 2.0),
            width: T::from_f(end - start),
        }
    }

    /// Back to (start, end) in normalized coordinates.
    pub fn to_span(self) -> (T, T) {
        let half = self.width / T::from_f(2.0);
        (self.center - half, self.center + half)
    }
}

/// 1-D generalized IoU over (center, width) moments: `IoU - (hull - union) / hull`.
pub fn giou_1d<T: Real>(m: &Moment<T>, m_hat: &Moment<T>) -> Result<T, LossError> {
    if m.width <= T::zero() || m_hat.width <= T::zero() {
        return Err(LossError::NonpositiveWidth);
    }
    let (s1, e1) = m.to_span();
    let (s2, e2) = m_hat.to_span();
    let inter = (e1.min(e2) - s1.max(s2)).max(T::zero());
    let union = m.width + m_hat.width - inter;
    let hull = e1.max(e2) - s1.min(s2);
    let iou = inter / union;
    Ok(iou - (hull - union) / hull)
}

/// Moment localization loss: weighted L1 distance over (center, width) plus
/// the generalized IoU term.
pub fn moment_loss<T: Real>(
    m: &Moment<T>,
    m_hat: &Moment<T>,
    weights: &LossWeights,
) -> Result<T, LossError> {
    weights.validate()?;
    let l1 = (m.center - m_hat.center).abs() + (m.width - m_hat.width).abs();
    let giou = giou_1d(m, m_hat)?;
    Ok(T::from_f(weights.lambda_l1) * l1 + T::from_f(weights.lambda_iou) * (T::one() - giou))
}

/// Hinge ranking loss over the two clip pairs.
pub fn saliency_loss<T: Real>(
    scores: &[T],
    t_high: usize,
    t_low: usize,
    t_in: usize,
    t_out: usize,
    delta: T,
) -> Result<T, LossError> {
    for index in [t_high, t_low, t_in, t_out] {
        if index >= scores.len() {
            return Err(LossError::IndexOutOfRange {
                index,
                len: scores.len(),
            });
        }
    }
    let pair = |neg: usize, pos: usize| (delta + scores[neg] - scores[pos]).max(T::zero());
    Ok(pair(t_low, t_high) + pair(t_out, t_in))
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Deterministic boundary head: per-frame logistic of the scaled cosine
/// between the enhanced frame and the pooled enhanced query.
pub fn toy_boundary_head<T: Real>(
    f_v_prime: &Matrix<T>,
    f_q_prime: &Matrix<T>,
    params: &ToyHeadParams,
) -> Result<Vec<T>, LossError> {
    if f_v_prime.dim() != f_q_prime.dim() {
        return Err(LossError::Dim {
            context: "query feature",
            expected: f_v_prime.dim(),
            found: f_q_prime.dim(),
        });
    }
    let pooled = pool_query(f_q_prime);
    let gamma = T::from_f(params.gamma);
    let beta = T::from_f(params.beta);
    Ok(f_v_prime
        .iter_rows()
        .map(|row| sigmoid(gamma * cosine_sim(row, &pooled) + beta))
        .collect())
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Per-frame binary cross-entropy with soft targets, summed over frames.
/// Predictions are clamped to `[eps, 1 - eps]` before the logarithms.
pub fn boundary_loss<T: Real>(p: &[T], p_hat: &[T]) -> Result<T, LossError> {
    if p.len() != p_hat.len() {
        return Err(LossError::LengthMismatch {
            left: p.len(),
            right: p_hat.len(),
        });
    }
    let one = T::one();
    Ok(p
        .iter()
        .zip(p_hat.iter())
        .map(|(&target, &pred)| {
            let pred = clamp_prob(pred);
            -(target * pred.ln() + (one - target) * (one - pred).ln())
        })
        .sum())
}

/// Analytic gradient of [`boundary_loss`] with respect to the predictions.
/// Zero where the clamp is active, matching the implemented loss.
pub fn boundary_loss_grad<T: Real>(p: &[T], p_hat: &[T]) -> Result<Vec<T>, LossError> {
    if p.len() != p_hat.len() {
        return Err(LossError::LengthMismatch {
            left: p.len(),
            right: p_hat.len(),
        });
    }
    let eps = T::from_f(PROB_EPS);
    let one = T::one();
    Ok(p
        .iter()
        .zip(p_hat.iter())
        .map(|(&target, &pred)| {
            if pred < eps || pred > one - eps {
                T::zero()
            } else {
                -target / pred + (one - target) / (one - pred)
            }
        })
        .collect())
}

/// Analytic gradient of `boundary_loss(target, toy_boundary_head(...))` with
/// respect to `(gamma, beta)`.
pub fn toy_head_boundary_grad<T: Real>(
    f_v_prime: &Matrix<T>,
    f_q_prime: &Matrix<T>,
    params: &ToyHeadParams,
    target: &[T],
) -> Result<(T, T), LossError> {
    if target.len() != f_v_prime.rows() {
        return Err(LossError::LengthMismatch {
            left: target.len(),
            right: f_v_prime.rows(),
        });
    }
    if f_v_prime.dim() != f_q_prime.dim() {
        return Err(LossError::Dim {
            context: "query feature",
            expected: f_v_prime.dim(),
            found: f_q_prime.dim(),
        });
    }
    let pooled = pool_query(f_q_prime);
    let gamma = T::from_f(params.gamma);
    let beta = T::from_f(params.beta);
    let eps = T::from_f(PROB_EPS);
    let one = T::one();
    let mut d_gamma = T::zero();
    let mut d_beta = T::zero();
    for (row, &p) in f_v_prime.iter_rows().zip(target.iter()) {
        let cos = cosine_sim(row, &pooled);
        let pred = sigmoid(gamma * cos + beta);
        // dL/dz = p_hat - p when the clamp is inactive; zero otherwise.
        let dz = if pred < eps || pred > one - eps {
            T::zero()
        } else {
            pred - p
        };
        d_gamma += dz * cos;
        d_beta += dz;
    }
    Ok((d_gamma, d_beta))
}

/// One already-paired moment prediction for the base-model loss composition.
#[derive(Debug, Clone, Copy)]
pub enum MomentAssignment<T> {
    Foreground {
        target: Moment<T>,
        pred: Moment<T>,
        /// Predicted probability of the true (foreground) class.
        class_prob: T,
    },
    Background {
        /// Predicted probability of the background class.
        class_prob: T,
    },
}

/// Base-model loss: weighted saliency term plus, per paired moment, the
/// classification term and (for foreground pairs) the moment loss.
pub fn origin_loss<T: Real>(
    saliency: T,
    assignments: &[MomentAssignment<T>],
    weights: &LossWeights,
) -> Result<T, LossError> {
    weights.validate()?;
    let lambda_cls = T::from_f(weights.lambda_cls);
    let mut total = T::from_f(weights.lambda_saliency) * saliency;
    for assignment in assignments {
        match assignment {
            MomentAssignment::Foreground {
                target,
                pred,
                class_prob,
            } => {
                total += -lambda_cls * clamp_prob(*class_prob).ln();
                total += moment_loss(target, pred, weights)?;
            }
            MomentAssignment::Background { class_prob } => {
                total += -lambda_cls * clamp_prob(*class_prob).ln();
            }
        }
    }
    Ok(total)
}

/// Total training loss: boundary term plus the base model's original loss.
pub fn total_loss<T: Real>(bound: T, origin: T) -> T {
    bound + origin
}

/// Compares an analytic gradient against central differences and returns the
/// maximum per-coordinate relative error (absolute floor `1e-8`).
pub fn grad_check<T, F, G>(f: F, analytic: G, x: &[T], h: T) -> Result<T, LossError>
where
    T: Real,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    let grad = analytic(x);
    if grad.len() != x.len() {
        return Err(LossError::LengthMismatch {
            left: grad.len(),
            right: x.len(),
        });
    }
    let floor = T::from_f(1e-8);
    let two_h = h + h;
    let mut max_rel = T::zero();
    let mut point = x.to_vec();
    for k in 0..x.len() {
        point[k] = x[k] + h;
        let f_plus = f(&point);
        point[k] = x[k] - h;
        let f_minus = f(&point);
        point[k] = x[k];
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(LossError::NonFinite);
        }
        let fd = (f_plus - f_minus) / two_h;
        let denom = fd.abs().max(grad[k].abs()).max(floor);
        max_rel = max_rel.max((fd - grad[k]).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn moment(start: f64, end: f64) -> Moment<f64> {
        Moment {
            center: (start + end) / 2.0,
            width: end - start,
        }
    }

    #[test]
    fn moment_converts_to_and_from_segments() {
        let segment = crate::data::Segment::new(2.0, 6.0).unwrap();
        let m: Moment<f64> = Moment::from_segment(&segment, 10.0);
        assert_abs_diff_eq!(m.center, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(m.width, 0.4, epsilon = 1e-12);
        let (start, end) = m.to_span();
        assert_abs_diff_eq!(start, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(end, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn giou_examples() {
        let same = moment(0.2, 0.6);
        assert_abs_diff_eq!(giou_1d(&same, &same).unwrap(), 1.0, epsilon = 1e-12);

        // IoU 0, hull 1.0, union 0.4 -> gIoU = -0.6.
        let a = moment(0.0, 0.2);
        let b = moment(0.8, 1.0);
        assert_abs_diff_eq!(giou_1d(&a, &b).unwrap(), -0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(
            giou_1d(&a, &b).unwrap(),
            giou_1d(&b, &a).unwrap(),
            epsilon = 1e-15
        );

        // Touching halves cover the hull exactly: IoU 0, penalty 0.
        let left = moment(0.0, 0.5);
        let right = moment(0.5, 1.0);
        assert_abs_diff_eq!(giou_1d(&left, &right).unwrap(), 0.0, epsilon = 1e-12);

        assert_eq!(
            giou_1d(
                &Moment {
                    center: 0.5,
                    width: 0.0
                },
                &same
            ),
            Err(LossError::NonpositiveWidth)
        );
    }

    #[test]
    fn moment_loss_examples() {
        let w = LossWeights::default();
        let m = moment(0.1, 0.5);
        assert_abs_diff_eq!(moment_loss(&m, &m, &w).unwrap(), 0.0, epsilon = 1e-12);

        let m_hat = moment(0.2, 0.7);
        let gated = LossWeights {
            lambda_l1: 0.0,
            ..Default::default()
        };
        let expected = 1.0 - giou_1d(&m, &m_hat).unwrap();
        assert_abs_diff_eq!(
            moment_loss(&m, &m_hat, &gated).unwrap(),
            expected,
            epsilon = 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = rng.gen_range(0.0..0.5);
            let b = rng.gen_range(a + 0.05..1.0);
            let c = rng.gen_range(0.0..0.5);
            let d = rng.gen_range(c + 0.05..1.0);
            let (m, m_hat) = (moment(a, b), moment(c, d));
            let l1 = (m.center - m_hat.center).abs() + (m.width - m_hat.width).abs();
            let oracle = w.lambda_l1 * l1 + w.lambda_iou * (1.0 - giou_1d(&m, &m_hat).unwrap());
            let value = moment_loss(&m, &m_hat, &w).unwrap();
            assert!(value >= 0.0 && value.is_finite());
            assert_abs_diff_eq!(value, oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn saliency_hinge_arithmetic() {
        let satisfied = vec![0.1, 0.9, 0.8, 0.0];
        assert_eq!(
            saliency_loss(&satisfied, 1, 0, 2, 3, 0.2).unwrap(),
            0.0,
            "satisfied margins give zero loss"
        );

        let flat = vec![0.5; 4];
        assert_abs_diff_eq!(
            saliency_loss(&flat, 0, 1, 2, 3, 0.2).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert_eq!(saliency_loss(&flat, 0, 1, 2, 3, 0.0).unwrap(), 0.0);

        assert_eq!(
            saliency_loss(&flat, 0, 1, 2, 9, 0.2),
            Err(LossError::IndexOutOfRange { index: 9, len: 4 })
        );
    }

    #[test]
    fn toy_head_logistic_values() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let constant = toy_boundary_head(
            &q,
            &q,
            &ToyHeadParams {
                gamma: 0.0,
                beta: 0.0,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(constant[0], 0.5, epsilon = 1e-12);

        let frames = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let p = toy_boundary_head(
            &frames,
            &q,
            &ToyHeadParams {
                gamma: 4.0,
                beta: 0.0,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(p[0], 0.9820137900379085, epsilon = 1e-10);
        assert_abs_diff_eq!(p[1], 0.017986209962091562, epsilon = 1e-10);
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_loss_analytic_values() {
        let p = vec![0.5; 4];
        assert_abs_diff_eq!(
            boundary_loss(&p, &p).unwrap(),
            4.0 * (2.0f64).ln(),
            epsilon = 1e-12
        );

        let ones = vec![1.0; 4];
        let near = vec![1.0 - PROB_EPS; 4];
        assert!(boundary_loss(&ones, &near).unwrap() <= 4.0 * 2.0 * PROB_EPS);

        assert_eq!(
            boundary_loss(&ones, &[0.5]),
            Err(LossError::LengthMismatch { left: 4, right: 1 })
        );
    }

    #[test]
    fn boundary_loss_is_minimized_at_the_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let p: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..0.95)).collect();
            let base = boundary_loss(&p, &p).unwrap();
            for k in 0..p.len() {
                for delta in [-0.01, 0.01] {
                    let mut perturbed = p.clone();
                    perturbed[k] += delta;
                    assert!(boundary_loss(&p, &perturbed).unwrap() > base);
                }
            }
        }
    }

    #[test]
    fn origin_and_total_compose() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.25, 0.0), 1.25);

        let m = moment(0.2, 0.6);
        let perfect = origin_loss(
            0.0,
            &[MomentAssignment::Foreground {
                target: m,
                pred: m,
                class_prob: 1.0,
            }],
            &w,
        )
        .unwrap();
        assert_abs_diff_eq!(perfect, 0.0, epsilon = 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let sal = rng.gen_range(0.0..1.0);
            let cls: f64 = rng.gen_range(0.1..1.0);
            let pred = moment(rng.gen_range(0.0..0.4), rng.gen_range(0.5..1.0));
            let value = origin_loss(
                sal,
                &[
                    MomentAssignment::Foreground {
                        target: m,
                        pred,
                        class_prob: cls,
                    },
                    MomentAssignment::Background { class_prob: cls },
                ],
                &w,
            )
            .unwrap();
            let oracle = w.lambda_saliency * sal
                + 2.0 * (-w.lambda_cls * cls.ln())
                + moment_loss(&m, &pred, &w).unwrap();
            assert_abs_diff_eq!(value, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn grad_check_is_tight_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rel = grad_check(
            |v| v.iter().map(|a| a * a).sum(),
            |v| v.iter().map(|a| 2.0 * a).collect(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn grad_check_flags_non_finite_evaluations() {
        let x = vec![0.0f64];
        let err = grad_check(|v| v[0].ln(), |_| vec![f64::INFINITY], &x, 1e-6).unwrap_err();
        assert_eq!(err, LossError::NonFinite);
    }

    #[test]
    fn boundary_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p_hat: Vec<f64> = (0..5).map(|_| rng.gen_range(0.05..0.95)).collect();
            let rel = grad_check(
                |v| boundary_loss(&p, v).unwrap(),
                |v| boundary_loss_grad(&p, v).unwrap(),
                &p_hat,
                1e-6,
            )
            .unwrap();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn toy_head_parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let f_v = Matrix::from_rows(&rows).unwrap();
            let f_q = Matrix::from_rows(&[
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>()
            ])
            .unwrap();
            let target: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            let point = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0)];
            let rel = grad_check(
                |v| {
                    let params = ToyHeadParams {
                        gamma: v[0],
                        beta: v[1],
                    };
                    let p_hat = toy_boundary_head(&f_v, &f_q, &params).unwrap();
                    boundary_loss(&target, &p_hat).unwrap()
                },
                |v| {
                    let params = ToyHeadParams {
                        gamma: v[0],
                        beta: v[1],
                    };
                    let (dg, db) =
                        toy_head_boundary_grad(&f_v, &f_q, &params, &target).unwrap();
                    vec![dg, db]
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }
}
