//! Multi-similarity metric-learning loss.
//!
//! For anchor `i` with positives `P_i` and negatives `N_i` (the anchor
//! itself excluded) and similarity `S_ik = <e_i, e_k>`:
//!
//! ```text
//! L = 1/m * sum_i [ 1/alpha * ln(1 + sum_{k in P_i} exp(-alpha (S_ik - lambda)))
//!                 + 1/beta  * ln(1 + sum_{k in N_i} exp( beta  (S_ik - lambda))) ]
//! ```
//!
//! Evaluated in double precision regardless of the embedding scalar type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Pair-mining margin. `None` keeps every pair.
    pub mining_margin: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 50.0,
            lambda: 0.5,
            mining_margin: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.lambda > 0.0) {
            return Err(LossError::Config("alpha, beta and lambda must be positive".into()));
        }
        if matches!(self.mining_margin, Some(m) if !(m >= 0.0)) {
            return Err(LossError::Config("mining margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid loss config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// dL/de_i for every embedding.
    pub grads: Vec<Vec<T>>,
}

/// `ln(1 + sum exp(a_k))` and the weights `exp(a_k) / (1 + sum exp(a))`.
fn soft_plus_sum(a: &[f64]) -> (f64, Vec<f64>) {
    let m = a.iter().copied().fold(0.0f64, f64::max);
    let base = (-m).exp();
    let ex: Vec<f64> = a.iter().map(|&x| (x - m).exp()).collect();
    let denom = base + ex.iter().sum::<f64>();
    (m + denom.ln(), ex.into_iter().map(|x| x / denom).collect())
}

pub fn ms_loss<T: Scalar>(
    embeddings: &[Vec<T>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossOutput<T>, LossError> {
    cfg.validate()?;
    let m = embeddings.len();
    if labels.len() != m {
        return Err(LossError::Shape(format!("{m} embeddings but {} labels", labels.len())));
    }
    if m == 0 {
        return Err(LossError::DegenerateBatch("empty batch".into()));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(LossError::Shape("embeddings differ in dimension".into()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(LossError::DegenerateBatch("a single class has no negatives".into()));
    }
    let has_pair = distinct
        .iter()
        .any(|c| labels.iter().filter(|&&l| l == *c).count() >= 2);
    if !has_pair {
        return Err(LossError::DegenerateBatch("no class has two samples".into()));
    }

    let e: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|v| v.iter().map(|x| x.as_f64()).collect())
        .collect();
    let sim = |i: usize, k: usize| -> f64 { e[i].iter().zip(&e[k]).map(|(a, b)| a * b).sum() };
    let s: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|k| sim(i, k)).collect()).collect();

    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut ds = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        let mut pos: Vec<usize> = (0..m).filter(|&k| k != i && labels[k] == labels[i]).collect();
        let mut neg: Vec<usize> = (0..m).filter(|&k| labels[k] != labels[i]).collect();
        if let Some(eps) = cfg.mining_margin {
            if !pos.is_empty() && !neg.is_empty() {
                let min_pos = pos.iter().map(|&k| s[i][k]).fold(f64::INFINITY, f64::min);
                let max_neg = neg.iter().map(|&k| s[i][k]).fold(f64::NEG_INFINITY, f64::max);
                neg.retain(|&k| s[i][k] + eps > min_pos);
                pos.retain(|&k| s[i][k] - eps < max_neg);
            }
        }
        if !pos.is_empty() {
            let a: Vec<f64> = pos.iter().map(|&k| -cfg.alpha * (s[i][k] - cfg.lambda)).collect();
            let (lse, w) = soft_plus_sum(&a);
            loss += inv_m * lse / cfg.alpha;
            for (&k, wk) in pos.iter().zip(w) {
                ds[i][k] -= inv_m * wk;
            }
        }
        if !neg.is_empty() {
            let b: Vec<f64> = neg.iter().map(|&k| cfg.beta * (s[i][k] - cfg.lambda)).collect();
            let (lse, w) = soft_plus_sum(&b);
            loss += inv_m * lse / cfg.beta;
            for (&k, wk) in neg.iter().zip(w) {
                ds[i][k] += inv_m * wk;
            }
        }
    }

    let mut g = vec![vec![0.0f64; dim]; m];
    for i in 0..m {
        for k in 0..m {
            let d = ds[i][k];
            if d == 0.0 {
                continue;
            }
            for j in 0..dim {
                g[i][j] += d * e[k][j];
                g[k][j] += d * e[i][j];
            }
        }
    }
    Ok(LossOutput {
        loss,
        grads: g
            .into_iter()
            .map(|row| row.into_iter().map(T::of).collect())
            .collect(),
    })
}
