//! Student-t clustering layer, target distribution, losses, K-means
//! initialization and the joint training loop.

mod kmeans;
mod train;

pub use kmeans::{kmeans, kmeans_with_rng, wcss, KMeansResult};
pub use train::{
    label_change_fraction, train, ClusterState, HistoryRecord, TrainOutcome, Trainer,
    TrainingConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{student_t_kernel, Tensor};

/// Degrees of freedom of the Student-t kernel.
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "matrix",
                format!(
                    "{rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("matrix", "rows differ in length"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Views a rank-2 tensor as a matrix.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [r, c] => Ok(Matrix {
                rows: r,
                cols: c,
                data: t.data().iter().map(|&v| v as f64).collect(),
            }),
            ref s => Err(Error::dim(
                "matrix",
                format!("expected a rank-2 tensor, got {s:?}"),
            )),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.rows, self.cols],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape matches data")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Rows `idx` in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `q_ij = (1 + |z_i - u_j|^2 / alpha)^(-(alpha+1)/2)`, normalized per row.
pub fn soft_assign(z: &Matrix, centers: &Matrix, alpha: f64) -> Result<Matrix> {
    if centers.rows == 0 {
        return Err(Error::Config(
            "soft assignment needs at least one center".into(),
        ));
    }
    if z.cols != centers.cols {
        return Err(Error::dim(
            "soft_assign",
            format!("embeddings have {} dims, centers {}", z.cols, centers.cols),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !z.data.iter().chain(&centers.data).all(|v| v.is_finite()) {
        return Err(Error::Input(
            "soft_assign: non-finite embedding or center".into(),
        ));
    }
    let (q, _) = student_t_kernel(&z.data, &centers.data, z.cols, alpha);
    Matrix::new(z.rows, centers.rows, q)
}

/// `p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j')` with cluster
/// frequencies `f_j = sum_i q_ij`.
pub fn target_distribution(q: &Matrix) -> Result<Matrix> {
    let k = q.cols;
    let mut freq = vec![0.0f64; k];
    for i in 0..q.rows {
        freq.iter_mut().zip(q.row(i)).for_each(|(f, v)| *f += v);
    }
    if let Some(j) = freq.iter().position(|&f| f <= 0.0) {
        return Err(Error::DegenerateCluster { cluster: j });
    }
    let mut p = Matrix::zeros(q.rows, k);
    for i in 0..q.rows {
        let row = p.row_mut(i);
        for ((pv, qv), f) in row.iter_mut().zip(q.row(i)).zip(&freq) {
            *pv = qv * qv / f;
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    Ok(p)
}

/// Index of the largest entry of every row (first one on ties).
pub fn hard_labels(q: &Matrix) -> Vec<usize> {
    (0..q.rows)
        .map(|i| {
            let row = q.row(i);
            (0..q.cols).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// `(1/N) sum_i |x_rec_i - x_i|^2` over the leading axis.
pub fn reconstruction_loss(x: &Tensor, x_rec: &Tensor) -> Result<f64> {
    if x.shape() != x_rec.shape() || x.shape().is_empty() {
        return Err(Error::dim(
            "reconstruction_loss",
            format!(
                "input {:?} vs reconstruction {:?}",
                x.shape(),
                x_rec.shape()
            ),
        ));
    }
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::Input("reconstruction_loss: empty batch".into()));
    }
    let total: f64 = x
        .data()
        .iter()
        .zip(x_rec.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(total / n as f64)
}

/// `KL(P || Q) = sum_ij p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0`. Rounding
/// can leave the sum a few ulps below zero when `P == Q`; it is clamped.
pub fn clustering_loss(p: &Matrix, q: &Matrix) -> Result<f64> {
    if (p.rows, p.cols) != (q.rows, q.cols) {
        return Err(Error::dim(
            "clustering_loss",
            format!("P is {}x{}, Q is {}x{}", p.rows, p.cols, q.rows, q.cols),
        ));
    }
    let mut total = 0.0;
    for (idx, (&pv, &qv)) in p.data.iter().zip(&q.data).enumerate() {
        if pv > 0.0 {
            if qv <= 0.0 {
                return Err(Error::InfiniteDivergence {
                    row: idx / p.cols,
                    col: idx % p.cols,
                });
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total.max(0.0))
}

pub fn joint_loss(l_r: f64, l_c: f64, beta: f64) -> f64 {
    l_r + beta * l_c
}
