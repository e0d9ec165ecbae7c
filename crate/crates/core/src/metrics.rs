//! External clustering metrics: normalized mutual information and
//! clustering accuracy under the best cluster-to-class mapping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts `n_ij` of clips in predicted cluster `i` with true class `j`.
/// Labels are re-indexed densely in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub clusters: Vec<String>,
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

fn dense<L: Ord + ToString>(labels: &[L]) -> (Vec<String>, Vec<usize>) {
    let mut ids: BTreeMap<&L, usize> = labels.iter().map(|l| (l, 0)).collect();
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    let names = ids.keys().map(|l| l.to_string()).collect();
    (names, labels.iter().map(|l| ids[l]).collect())
}

impl ContingencyTable {
    pub fn new<A, B>(pred: &[A], truth: &[B]) -> Result<Self>
    where
        A: Ord + ToString,
        B: Ord + ToString,
    {
        if pred.len() != truth.len() {
            return Err(Error::Input(format!(
                "{} predicted labels vs {} true labels",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Input("no labels to compare".into()));
        }
        let (clusters, p) = dense(pred);
        let (classes, t) = dense(truth);
        let mut counts = vec![vec![0u64; classes.len()]; clusters.len()];
        for (&i, &j) in p.iter().zip(&t) {
            counts[i][j] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..classes.len())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Ok(ContingencyTable {
            clusters,
            classes,
            counts,
            row_sums,
            col_sums,
            total: pred.len() as u64,
        })
    }

    /// Normalized mutual information with natural logarithms, clamped to
    /// [0, 1]. When either partition has a single group the denominator
    /// vanishes: two single-group partitions score 1, otherwise 0.
    pub fn nmi(&self) -> f64 {
        let n = self.total as f64;
        let mut mi = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c * (n * c / (self.row_sums[i] as f64 * self.col_sums[j] as f64)).ln();
                }
            }
        }
        let h = |sums: &[u64]| -> f64 {
            sums.iter()
                .filter(|&&s| s > 0)
                .map(|&s| s as f64 * (n / s as f64).ln())
                .sum()
        };
        let (hc, hg) = (h(&self.row_sums), h(&self.col_sums));
        let denom = (hc * hg).sqrt();
        if denom == 0.0 {
            return if self.clusters.len() == 1 && self.classes.len() == 1 {
                1.0
            } else {
                0.0
            };
        }
        (mi / denom).clamp(0.0, 1.0)
    }

    /// Best one-to-one cluster-to-class mapping and the number of clips it
    /// labels correctly. Unmatched clusters map to `None`.
    pub fn best_mapping(&self) -> (Vec<Option<usize>>, u64) {
        let size = self.clusters.len().max(self.classes.len());
        let mut cost = vec![vec![0.0f64; size]; size];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                cost[i][j] = -(c as f64);
            }
        }
        let (assign, _) = hungarian_assign(&cost).expect("square by construction");
        let mut correct = 0;
        let mapping = (0..self.clusters.len())
            .map(|i| {
                let j = assign[i];
                (j < self.classes.len()).then(|| {
                    correct += self.counts[i][j];
                    j
                })
            })
            .collect();
        (mapping, correct)
    }

    pub fn accuracy(&self) -> f64 {
        self.best_mapping().1 as f64 / self.total as f64
    }
}

pub fn nmi<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Ord + ToString,
    B: Ord + ToString,
{
    Ok(ContingencyTable::new(pred, truth)?.nmi())
}

pub fn clustering_accuracy<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Ord + ToString,
    B: Ord + ToString,
{
    Ok(ContingencyTable::new(pred, truth)?.accuracy())
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials, O(n^3)). Returns `row -> column` and the cost.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Input("assignment cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("assignment cost matrix must be finite".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual start column
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    Ok((assign, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_identities() {
        let t =
            ContingencyTable::new(&[1, 1, 2, 3, 3, 3], &["a", "b", "b", "a", "a", "c"]).unwrap();
        assert_eq!(t.counts, vec![vec![1, 1, 0], vec![0, 1, 0], vec![2, 0, 1]]);
        assert_eq!(t.row_sums, vec![2, 1, 3]);
        assert_eq!(t.col_sums, vec![3, 2, 1]);
        assert_eq!(t.total, 6);
    }

    #[test]
    fn hand_examples() {
        assert_eq!(nmi(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3, 7, 7], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(
            clustering_accuracy(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(),
            1.0
        );
        assert_eq!(
            clustering_accuracy(&[1, 1, 1, 1], &[1, 1, 2, 2]).unwrap(),
            0.5
        );
        assert_eq!(
            clustering_accuracy(&[1, 2, 2, 2], &[1, 1, 2, 2]).unwrap(),
            0.75
        );
    }

    #[test]
    fn mismatched_or_empty_inputs_are_errors() {
        assert!(matches!(nmi(&[1, 2], &[1]), Err(Error::Input(_))));
        assert!(matches!(
            clustering_accuracy::<u8, u8>(&[], &[]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn hungarian_simple_cases() {
        let id = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ];
        assert_eq!(hungarian_assign(&id).unwrap(), (vec![0, 1, 2], 0.0));
        let c = vec![vec![2.5; 4]; 4];
        assert_eq!(hungarian_assign(&c).unwrap().1, 10.0);
        assert!(hungarian_assign(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn more_clusters_than_classes_leaves_some_unmapped() {
        let t = ContingencyTable::new(&[0, 0, 1, 2], &["x", "x", "y", "y"]).unwrap();
        let (map, correct) = t.best_mapping();
        assert_eq!(correct, 3);
        assert_eq!(map.iter().filter(|m| m.is_none()).count(), 1);
    }
}
