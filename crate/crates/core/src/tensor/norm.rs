use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPSILON: f32 = 1e-5;
/// Weight of the previous running value in the exponential update.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) struct BnForward {
    pub y: Vec<f32>,
    pub x_hat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Normalizes `x`, viewed as `[m, c]` rows, per channel.
pub(crate) fn bn_forward(
    x: &[f32],
    c: usize,
    gamma: &[f32],
    beta: &[f32],
    stats: &mut RunningStats,
    mode: BatchNormMode,
) -> Result<BnForward> {
    let m = x.len() / c;
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim(
            "batch_norm",
            format!(
                "running stats hold {} channels, input has C={c}",
                stats.mean.len()
            ),
        ));
    }
    let (mean, inv_std): (Vec<f32>, Vec<f32>) = match mode {
        BatchNormMode::Train => {
            if m < 2 {
                return Err(Error::DegenerateStatistics {
                    op: "batch_norm",
                    detail: format!("train mode needs at least 2 values per channel, got {m}"),
                });
            }
            let mut sum = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
            let mut sq = vec![0.0f64; c];
            for row in x.chunks_exact(c) {
                for ((s, &v), &mu) in sq.iter_mut().zip(row).zip(&mean) {
                    let d = v as f64 - mu;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / m as f64).collect();
            let unbiased = m as f64 / (m as f64 - 1.0);
            for ch in 0..c {
                stats.mean[ch] =
                    BN_MOMENTUM * stats.mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch] as f32;
                stats.var[ch] =
                    BN_MOMENTUM * stats.var[ch] + (1.0 - BN_MOMENTUM) * (var[ch] * unbiased) as f32;
            }
            (
                mean.iter().map(|&v| v as f32).collect(),
                var.iter()
                    .map(|&v| (1.0 / (v + BN_EPSILON as f64).sqrt()) as f32)
                    .collect(),
            )
        }
        BatchNormMode::Eval => (
            stats.mean.clone(),
            stats
                .var
                .iter()
                .map(|&v| 1.0 / (v + BN_EPSILON).sqrt())
                .collect(),
        ),
    };
    let mut x_hat = vec![0.0f32; x.len()];
    let mut y = vec![0.0f32; x.len()];
    for ((xr, hr), yr) in x
        .chunks_exact(c)
        .zip(x_hat.chunks_exact_mut(c))
        .zip(y.chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (xr[ch] - mean[ch]) * inv_std[ch];
            hr[ch] = h;
            yr[ch] = gamma[ch] * h + beta[ch];
        }
    }
    Ok(BnForward { y, x_hat, inv_std })
}

pub(crate) struct BnBackward {
    pub dx: Vec<f32>,
    pub dgamma: Vec<f32>,
    pub dbeta: Vec<f32>,
}

pub(crate) fn bn_backward(
    dy: &[f32],
    x_hat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    mode: BatchNormMode,
) -> BnBackward {
    let c = gamma.len();
    let m = dy.len() / c;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (gr, hr) in dy.chunks_exact(c).zip(x_hat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += gr[ch] as f64;
            dgamma[ch] += (gr[ch] * hr[ch]) as f64;
        }
    }
    let mut dx = vec![0.0f32; dy.len()];
    match mode {
        BatchNormMode::Train => {
            let mf = m as f64;
            for ((dr, gr), hr) in dx
                .chunks_exact_mut(c)
                .zip(dy.chunks_exact(c))
                .zip(x_hat.chunks_exact(c))
            {
                for ch in 0..c {
                    // dx = g*inv_std/m * (m*dy - sum(dy) - x_hat*sum(dy*x_hat))
                    let v = mf * gr[ch] as f64 - dbeta[ch] - hr[ch] as f64 * dgamma[ch];
                    dr[ch] = (gamma[ch] as f64 * inv_std[ch] as f64 * v / mf) as f32;
                }
            }
        }
        BatchNormMode::Eval => {
            for (dr, gr) in dx.chunks_exact_mut(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    dr[ch] = gr[ch] * gamma[ch] * inv_std[ch];
                }
            }
        }
    }
    BnBackward {
        dx,
        dgamma: dgamma.into_iter().map(|v| v as f32).collect(),
        dbeta: dbeta.into_iter().map(|v| v as f32).collect(),
    }
}
