use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Safety cap on Lloyd iterations per restart. Lloyd's algorithm terminates
/// on its own; the cap only guards against pathological floating-point
/// cycling.
const MAX_LLOYD_ITERS: usize = 1000;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub centers: Matrix,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares of the returned solution.
    pub wcss: f64,
    /// Lloyd iterations of the winning restart.
    pub iterations: usize,
    /// WCSS after every assignment step of the winning restart.
    pub wcss_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn wcss(z: &Matrix, centers: &Matrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(z.row(i), centers.row(l)))
        .sum()
}

fn plus_plus_seeds<R: Rng + ?Sized>(z: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = z.rows();
    let mut centers = Matrix::zeros(k, z.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(z.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(z.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), centers.row(c)));
        }
    }
    centers
}

/// Nearest center per point; a point keeps its current label on ties.
fn assign(z: &Matrix, centers: &Matrix, prev: Option<&[usize]>) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            let zi = z.row(i);
            let start = prev.map_or(0, |p| p[i]);
            let mut best = (start, sq_dist(zi, centers.row(start)));
            for j in 0..centers.rows() {
                let d = sq_dist(zi, centers.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

fn means(z: &Matrix, labels: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut centers = Matrix::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        centers
            .row_mut(l)
            .iter_mut()
            .zip(z.row(i))
            .for_each(|(c, v)| *c += v);
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            centers.row_mut(j).iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    (centers, counts)
}

/// Means of `labels`, re-seeding every empty cluster to the point farthest
/// from its own center (which then forms that cluster).
fn update(z: &Matrix, labels: &mut [usize], k: usize) -> Matrix {
    loop {
        let (mut centers, counts) = means(z, labels, k);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return centers;
        };
        let far = (0..z.rows())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(z.row(a), centers.row(labels[a]));
                let db = sq_dist(z.row(b), centers.row(labels[b]));
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("n >= k leaves a cluster with two or more points");
        centers.row_mut(empty).copy_from_slice(z.row(far));
        labels[far] = empty;
    }
}

fn lloyd<R: Rng + ?Sized>(z: &Matrix, k: usize, rng: &mut R) -> KMeansResult {
    let seeds = plus_plus_seeds(z, k, rng);
    let mut labels = assign(z, &seeds, None);
    let mut trace = vec![wcss(z, &seeds, &labels)];
    let mut iterations = 0;
    let centers = loop {
        let centers = update(z, &mut labels, k);
        iterations += 1;
        let next = assign(z, &centers, Some(&labels));
        trace.push(wcss(z, &centers, &next));
        if next == labels || iterations >= MAX_LLOYD_ITERS {
            labels = next;
            break update(z, &mut labels, k);
        }
        labels = next;
    };
    KMeansResult {
        wcss: wcss(z, &centers, &labels),
        centers,
        labels,
        iterations,
        wcss_trace: trace,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the best of `restarts` runs by
/// WCSS is returned.
pub fn kmeans_with_rng<R: Rng + ?Sized>(
    z: &Matrix,
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    if k == 0 || restarts == 0 {
        return Err(Error::Config(
            "k-means needs k >= 1 and restarts >= 1".into(),
        ));
    }
    if z.rows() < k {
        return Err(Error::Input(format!(
            "k-means with k={k} needs at least {k} points, got {}",
            z.rows()
        )));
    }
    if !z.data().iter().all(|v| v.is_finite()) {
        return Err(Error::Input("k-means: non-finite embedding".into()));
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(z, k, rng);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

pub fn kmeans(z: &Matrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with_rng(z, k, restarts, &mut ChaCha8Rng::seed_from_u64(seed))
}
