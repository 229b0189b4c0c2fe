//! Average silhouette width and the adjusted Rand index.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{ClusterError, Result};
use crate::objective::Data;

/// Labels compacted to `0..k` in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn compact<T: Eq + std::hash::Hash + Clone>(labels: &[T]) -> Self {
        let mut map: HashMap<T, usize> = HashMap::new();
        let labels = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self { labels, k: map.len() }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Mean silhouette width with Euclidean distances.
///
/// With `subsample = Some(m)` and `m < N`, s(i) is evaluated for a seeded
/// uniform sample of `m` points, each still measured against the full data.
pub fn silhouette(x: &DMatrix<f64>, labels: &[usize], subsample: Option<usize>, seed: u64) -> Result<f64> {
    silhouette_data(&Data::new(x), labels, subsample, seed)
}

pub(crate) fn silhouette_data(data: &Data, labels: &[usize], subsample: Option<usize>, seed: u64) -> Result<f64> {
    if labels.len() != data.n {
        return Err(ClusterError::DimensionMismatch { expected: data.n, got: labels.len() });
    }
    let part = Partition::compact(labels);
    if part.k < 2 {
        return Err(ClusterError::UndefinedMetric(format!("silhouette needs at least 2 clusters, got {}", part.k)));
    }
    let sizes = part.sizes();
    let n = data.n;
    let points: Vec<usize> = match subsample {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let widths: Vec<f64> = points
        .par_iter()
        .map(|&i| {
            let mut sums = vec![0.0; part.k];
            let xi = data.row(i);
            for j in 0..n {
                if j != i {
                    let d2: f64 = xi.iter().zip(data.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    sums[part.labels[j]] += d2.sqrt();
                }
            }
            point_silhouette(part.labels[i], &sums, &sizes)
        })
        .collect();
    Ok(widths.iter().sum::<f64>() / widths.len() as f64)
}

/// `sums[c]` is the total distance from the point to members of cluster c.
fn point_silhouette(own: usize, sums: &[f64], sizes: &[usize]) -> f64 {
    if sizes[own] <= 1 {
        return 0.0;
    }
    let a = sums[own] / (sizes[own] - 1) as f64;
    let b = (0..sizes.len())
        .filter(|&c| c != own && sizes[c] > 0)
        .map(|c| sums[c] / sizes[c] as f64)
        .fold(f64::INFINITY, f64::min);
    let denom = a.max(b);
    if denom > 0.0 {
        (b - a) / denom
    } else {
        0.0
    }
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index.
pub fn ari<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash + Clone,
    B: Eq + std::hash::Hash + Clone,
{
    if a.len() != b.len() {
        return Err(ClusterError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let pa = Partition::compact(a);
    let pb = Partition::compact(b);
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (x, y) in pa.labels.iter().zip(&pb.labels) {
        *table.entry((*x, *y)).or_insert(0) += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = pa.sizes().into_iter().map(|c| comb2(c as u64)).sum();
    let sum_b: f64 = pb.sizes().into_iter().map(|c| comb2(c as u64)).sum();
    let total = comb2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separated_clusters_score_high() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(40, 2, |i, _| if i < 20 { 0.0 } else { 100.0 } + rng.random_range(-0.5..0.5));
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert!(silhouette(&x, &labels, None, 0).unwrap() > 0.9);
    }

    #[test]
    fn duplicated_cluster_is_non_positive() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        assert!(silhouette(&x, &labels, None, 0).unwrap() <= 0.0);
    }

    #[test]
    fn single_cluster_undefined() {
        let x = DMatrix::from_element(4, 1, 0.0);
        assert!(matches!(silhouette(&x, &[0, 0, 0, 0], None, 0), Err(ClusterError::UndefinedMetric(_))));
    }

    #[test]
    fn full_size_subsample_equals_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let exact = silhouette(&x, &labels, None, 0).unwrap();
        assert_eq!(silhouette(&x, &labels, Some(60), 9).unwrap(), exact);
        assert_eq!(silhouette(&x, &labels, Some(600), 9).unwrap(), exact);
        let sub = silhouette(&x, &labels, Some(30), 9).unwrap();
        assert!((-1.0..=1.0).contains(&sub));
    }

    #[test]
    fn ari_basic_cases() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
        let relabeled = ["x", "x", "z", "z", "y", "y"];
        assert!((ari(&a, &relabeled).unwrap() - 1.0).abs() < 1e-15);
        assert!(ari(&a, &[0, 1]).is_err());
    }

    #[test]
    fn ari_symmetric_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
            let perm = [2usize, 0, 3, 1];
            let ap: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
            let v = ari(&a, &b).unwrap();
            assert!((v - ari(&b, &a).unwrap()).abs() < 1e-14);
            assert!((v - ari(&ap, &b).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn partition_compacts_in_first_seen_order() {
        let p = Partition::compact(&[7, 7, 3, 9, 3]);
        assert_eq!(p.labels, vec![0, 0, 1, 2, 1]);
        assert_eq!(p.k, 3);
        assert_eq!(p.sizes(), vec![2, 2, 1]);
    }
}
