//! Multi-activity cross-entropy loss over primary and secondary action
//! heads.
//!
//! ```text
//! L = (1/T) sum_t [ 1/(N_t N_p) sum_i CE(y_p, p_p) + lambda_w / (N_t N_s) sum_i CE(y_s, p_s) ]
//! CE(y, p) = -log(max(p[y], 1e-12))
//! ```
//!
//! Both terms carry positive weight. Frames with no detections contribute
//! zero but still count toward `T`.

use super::model::softmax;
use super::TemporalError;

pub const LOG_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAMBDA_W: f64 = 0.5;
const SIMPLEX_TOL: f64 = 1e-6;

/// One frame: `N_t` rows per head plus target class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRows {
    pub primary: Vec<Vec<f64>>,
    pub secondary: Vec<Vec<f64>>,
    pub primary_target: Vec<usize>,
    pub secondary_target: Vec<usize>,
}

impl FrameRows {
    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty()
    }
}

/// Frames whose rows are probability distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub frames: Vec<FrameRows>,
    pub lambda_w: f64,
}

/// Frames whose rows are unnormalized logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    pub frames: Vec<FrameRows>,
    pub lambda_w: f64,
}

fn check_shapes(frames: &[FrameRows]) -> Result<(usize, usize), TemporalError> {
    let mut dims: Option<(usize, usize)> = None;
    for (t, f) in frames.iter().enumerate() {
        let n = f.primary.len();
        if f.secondary.len() != n || f.primary_target.len() != n || f.secondary_target.len() != n {
            return Err(TemporalError::Loss(format!("frame {t}: row counts differ")));
        }
        for i in 0..n {
            let d = (f.primary[i].len(), f.secondary[i].len());
            if *dims.get_or_insert(d) != d || d.0 == 0 || d.1 == 0 {
                return Err(TemporalError::Loss(format!("frame {t} row {i}: inconsistent class count")));
            }
            if f.primary_target[i] >= d.0 || f.secondary_target[i] >= d.1 {
                return Err(TemporalError::Loss(format!("frame {t} row {i}: target out of range")));
            }
        }
    }
    Ok(dims.unwrap_or((1, 1)))
}

impl LossBatch {
    pub fn validate(&self) -> Result<(), TemporalError> {
        check_shapes(&self.frames)?;
        for (t, f) in self.frames.iter().enumerate() {
            for row in f.primary.iter().chain(&f.secondary) {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(TemporalError::Loss(format!("frame {t}: row is not a distribution")));
                }
            }
        }
        if !(self.lambda_w >= 0.0) {
            return Err(TemporalError::Loss("lambda_w must be non-negative".into()));
        }
        Ok(())
    }
}

impl LogitBatch {
    pub fn to_probabilities(&self) -> Result<LossBatch, TemporalError> {
        check_shapes(&self.frames)?;
        let sm = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| softmax(r)).collect();
        Ok(LossBatch {
            frames: self
                .frames
                .iter()
                .map(|f| FrameRows {
                    primary: sm(&f.primary),
                    secondary: sm(&f.secondary),
                    primary_target: f.primary_target.clone(),
                    secondary_target: f.secondary_target.clone(),
                })
                .collect(),
            lambda_w: self.lambda_w,
        })
    }
}

fn ce(row: &[f64], target: usize) -> f64 {
    -row[target].max(LOG_FLOOR).ln()
}

pub fn multi_activity_loss(batch: &LossBatch) -> Result<f64, TemporalError> {
    batch.validate()?;
    let t = batch.frames.len();
    if t == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for f in batch.frames.iter().filter(|f| !f.is_empty()) {
        let n = f.len() as f64;
        let (np, ns) = (f.primary[0].len() as f64, f.secondary[0].len() as f64);
        let lp: f64 = f.primary.iter().zip(&f.primary_target).map(|(r, &y)| ce(r, y)).sum();
        let ls: f64 = f.secondary.iter().zip(&f.secondary_target).map(|(r, &y)| ce(r, y)).sum();
        total += lp / (n * np) + batch.lambda_w * ls / (n * ns);
    }
    Ok(total / t as f64)
}

/// Gradient of the loss with respect to each logit row; mirrors the layout
/// of the batch (`primary_target`/`secondary_target` copied through).
pub type LogitGradient = Vec<FrameRows>;

/// Analytic gradient through the softmax: `(p - onehot) * weight` with
/// weight `1/(T N_t N_p)` for primary rows and `lambda_w/(T N_t N_s)` for
/// secondary rows. Exact while no target probability falls under the log
/// floor.
pub fn loss_gradient(batch: &LossBatch) -> Result<LogitGradient, TemporalError> {
    batch.validate()?;
    let t = batch.frames.len() as f64;
    let grad_rows = |rows: &[Vec<f64>], targets: &[usize], weight: f64| -> Vec<Vec<f64>> {
        rows.iter()
            .zip(targets)
            .map(|(r, &y)| {
                r.iter().enumerate().map(|(k, &p)| (p - if k == y { 1.0 } else { 0.0 }) * weight).collect()
            })
            .collect()
    };
    Ok(batch
        .frames
        .iter()
        .map(|f| {
            if f.is_empty() {
                return f.clone();
            }
            let n = f.len() as f64;
            let (np, ns) = (f.primary[0].len() as f64, f.secondary[0].len() as f64);
            FrameRows {
                primary: grad_rows(&f.primary, &f.primary_target, 1.0 / (t * n * np)),
                secondary: grad_rows(&f.secondary, &f.secondary_target, batch.lambda_w / (t * n * ns)),
                primary_target: f.primary_target.clone(),
                secondary_target: f.secondary_target.clone(),
            }
        })
        .collect())
}

pub fn loss_from_logits(batch: &LogitBatch) -> Result<f64, TemporalError> {
    multi_activity_loss(&batch.to_probabilities()?)
}

pub fn gradient_from_logits(batch: &LogitBatch) -> Result<LogitGradient, TemporalError> {
    loss_gradient(&batch.to_probabilities()?)
}

/// Mean binary cross-entropy of sigmoid probabilities against 0/1 labels,
/// with the same log floor.
pub fn binary_cross_entropy(probs: &[f64], labels: &[bool]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| if y { -p.max(LOG_FLOOR).ln() } else { -(1.0 - p).max(LOG_FLOOR).ln() })
        .sum();
    s / probs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn uniform_2x2(lambda_w: f64) -> LossBatch {
        LossBatch {
            frames: vec![FrameRows {
                primary: vec![vec![0.5, 0.5]],
                secondary: vec![vec![0.5, 0.5]],
                primary_target: vec![0],
                secondary_target: vec![1],
            }],
            lambda_w,
        }
    }

    #[test]
    fn uniform_hand_value() {
        let l = multi_activity_loss(&uniform_2x2(0.5)).unwrap();
        assert!((l - 0.519861).abs() < 1e-6);
        let exact = std::f64::consts::LN_2 / 2.0 * 1.5;
        assert!((l - exact).abs() < 1e-15);
        let g = loss_gradient(&uniform_2x2(0.5)).unwrap();
        assert_eq!(g[0].primary[0][0], -0.25);
        assert_eq!(g[0].primary[0][1], 0.25);
    }

    #[test]
    fn perfect_predictions_give_zero() {
        let b = LossBatch {
            frames: vec![FrameRows {
                primary: vec![vec![0.0, 1.0, 0.0]],
                secondary: vec![vec![1.0, 0.0]],
                primary_target: vec![1],
                secondary_target: vec![0],
            }],
            lambda_w: 0.5,
        };
        assert_eq!(multi_activity_loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let mut b = uniform_2x2(0.5);
        b.frames[0].primary[0] = vec![0.0, 1.0];
        let l = multi_activity_loss(&b).unwrap();
        assert!(l.is_finite());
        assert!((l - (-(1e-12f64).ln() / 2.0 + 0.5 * std::f64::consts::LN_2 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn lambda_scales_secondary_only() {
        let l1 = multi_activity_loss(&uniform_2x2(0.5)).unwrap();
        let l2 = multi_activity_loss(&uniform_2x2(1.0)).unwrap();
        let primary = std::f64::consts::LN_2 / 2.0;
        assert!(((l2 - primary) - 2.0 * (l1 - primary)).abs() < 1e-15);
    }

    #[test]
    fn saturated_gradient_is_small() {
        let b = LogitBatch {
            frames: vec![FrameRows {
                primary: vec![vec![10.0, 0.0, 0.0]],
                secondary: vec![vec![0.0, 12.0]],
                primary_target: vec![0],
                secondary_target: vec![1],
            }],
            lambda_w: 0.5,
        };
        let g = gradient_from_logits(&b).unwrap();
        for row in g[0].primary.iter().chain(&g[0].secondary) {
            assert!(row.iter().all(|v| v.abs() < 1e-3));
        }
    }

    #[test]
    fn invalid_batches_are_rejected() {
        let mut b = uniform_2x2(0.5);
        b.frames[0].primary[0] = vec![0.7, 0.7];
        assert!(multi_activity_loss(&b).is_err());
        let mut b = uniform_2x2(0.5);
        b.frames[0].primary_target[0] = 2;
        assert!(multi_activity_loss(&b).is_err());
    }

    #[test]
    fn finite_differences_on_random_batch() {
        let mut rng = SplitMix64::new(4);
        let mut frames = Vec::new();
        for _ in 0..3 {
            let n = rng.range_usize(1, 4);
            frames.push(FrameRows {
                primary: (0..n).map(|_| (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect()).collect(),
                secondary: (0..n).map(|_| (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect()).collect(),
                primary_target: (0..n).map(|_| rng.below(4) as usize).collect(),
                secondary_target: (0..n).map(|_| rng.below(5) as usize).collect(),
            });
        }
        let batch = LogitBatch { frames, lambda_w: 0.5 };
        let g = gradient_from_logits(&batch).unwrap();
        let h = 1e-5;
        for t in 0..batch.frames.len() {
            for i in 0..batch.frames[t].len() {
                for k in 0..4 {
                    let mut up = batch.clone();
                    up.frames[t].primary[i][k] += h;
                    let mut dn = batch.clone();
                    dn.frames[t].primary[i][k] -= h;
                    let fd = (loss_from_logits(&up).unwrap() - loss_from_logits(&dn).unwrap()) / (2.0 * h);
                    assert!((fd - g[t].primary[i][k]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn bce_values() {
        assert!((binary_cross_entropy(&[0.5, 0.5], &[true, false]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(binary_cross_entropy(&[1.0, 0.0], &[true, false]).abs() < 1e-15);
    }
}
