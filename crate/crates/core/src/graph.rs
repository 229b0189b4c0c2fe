//! kNN graph construction and Louvain community detection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::objective::Data;

/// Undirected weighted graph in adjacency-list form. Kept symmetric; the
/// kNN constructor never emits self-loops, aggregated graphs may carry them.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    /// `adj[i]` holds `(j, w)` sorted by `j`.
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl SparseGraph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, w) in edges {
            *maps[i].entry(j).or_insert(0.0) += w;
            if i != j {
                *maps[j].entry(i).or_insert(0.0) += w;
            }
        }
        Self { adj: maps.into_iter().map(|m| m.into_iter().collect()).collect() }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search_by_key(&j, |e| e.0).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Weighted degree; a self-loop of weight w counts 2w.
    fn strength(&self, i: usize) -> f64 {
        self.adj[i].iter().map(|&(j, w)| if j == i { 2.0 * w } else { w }).sum()
    }

    fn total_weight(&self) -> f64 {
        (0..self.n()).map(|i| self.strength(i)).sum::<f64>() / 2.0
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|i| {
            self.adj[i].iter().all(|&(j, w)| {
                self.adj[j].binary_search_by_key(&i, |e| e.0).is_ok_and(|p| self.adj[j][p].1 == w)
            })
        })
    }
}

/// Indices of the `k` nearest neighbours of every point (self excluded;
/// distance ties go to the smaller index).
pub fn knn_indices(data: &Data, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = data.n;
    if k == 0 || k >= n {
        return Err(invalid(format!("kNN needs 1 <= k < N (k = {k}, N = {n})")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = xi.iter().zip(data.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
            cand.sort_by(cmp);
            cand.into_iter().map(|c| c.1).collect()
        })
        .collect())
}

/// Symmetric kNN graph, union-symmetrized, unit weights.
pub fn knn_graph(data: &Data, k: usize) -> Result<SparseGraph> {
    let nn = knn_indices(data, k)?;
    let n = data.n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, list) in nn.iter().enumerate() {
        for &j in list {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    Ok(SparseGraph {
        adj: adj
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v.into_iter().map(|j| (j, 1.0)).collect()
            })
            .collect(),
    })
}

/// Newman–Girvan modularity (resolution 1) of a labelling.
pub fn modularity(g: &SparseGraph, labels: &[usize]) -> f64 {
    let m2 = 2.0 * g.total_weight();
    if m2 == 0.0 {
        return 0.0;
    }
    let nc = labels.iter().max().map_or(0, |v| v + 1);
    let mut internal = vec![0.0; nc];
    let mut tot = vec![0.0; nc];
    for i in 0..g.n() {
        tot[labels[i]] += g.strength(i);
        for &(j, w) in &g.adj[i] {
            if labels[i] == labels[j] {
                internal[labels[i]] += if i == j { 2.0 * w } else { w };
            }
        }
    }
    (0..nc).map(|c| internal[c] / m2 - (tot[c] / m2).powi(2)).sum()
}

/// Outcome of [`louvain`], including the modularity after every pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LouvainResult {
    pub labels: Vec<usize>,
    pub pass_modularity: Vec<f64>,
}

impl LouvainResult {
    pub fn n_communities(&self) -> usize {
        self.labels.iter().max().map_or(0, |v| v + 1)
    }
}

/// Two-phase Louvain (local moving + aggregation) with a seeded node order.
/// Returned labels are compacted in order of first appearance.
pub fn louvain(g: &SparseGraph, seed: u64) -> Result<LouvainResult> {
    if g.n() == 0 {
        return Err(invalid("louvain on an empty graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..g.n()).collect();
    let mut level = g.clone();
    let mut pass_modularity = vec![modularity(g, &membership)];
    loop {
        let (local, moved) = local_moving(&level, &mut rng);
        if !moved {
            break;
        }
        let (local, nc) = compact(&local);
        for m in membership.iter_mut() {
            *m = local[*m];
        }
        pass_modularity.push(modularity(g, &membership));
        if nc == level.n() {
            break;
        }
        level = aggregate(&level, &local, nc);
    }
    let (labels, _) = compact(&membership);
    Ok(LouvainResult { labels, pass_modularity })
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn local_moving(g: &SparseGraph, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = g.n();
    let m2 = 2.0 * g.total_weight();
    let mut comm: Vec<usize> = (0..n).collect();
    if m2 == 0.0 {
        return (comm, false);
    }
    let strength: Vec<f64> = (0..n).map(|i| g.strength(i)).collect();
    let mut tot = strength.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut any_move = false;
    let mut links: Vec<f64> = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        let mut improved = false;
        for &i in &order {
            let ci = comm[i];
            for &(j, w) in &g.adj[i] {
                if j == i {
                    continue;
                }
                let cj = comm[j];
                if links[cj] == 0.0 {
                    touched.push(cj);
                }
                links[cj] += w;
            }
            let ki = strength[i];
            tot[ci] -= ki;
            // gain of joining c relative to isolation: links_c - tot_c k_i / 2m
            let mut best = ci;
            let mut best_gain = links[ci] - tot[ci] * ki / m2;
            for &c in &touched {
                let gain = links[c] - tot[c] * ki / m2;
                if gain > best_gain + 1e-12 {
                    best = c;
                    best_gain = gain;
                }
            }
            tot[best] += ki;
            if best != ci {
                comm[i] = best;
                improved = true;
                any_move = true;
            }
            for &c in &touched {
                links[c] = 0.0;
            }
            touched.clear();
        }
        if !improved {
            break;
        }
    }
    (comm, any_move)
}

fn aggregate(g: &SparseGraph, comm: &[usize], nc: usize) -> SparseGraph {
    let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); nc];
    for i in 0..g.n() {
        for &(j, w) in &g.adj[i] {
            let (a, b) = (comm[i], comm[j]);
            // each undirected edge is seen from both ends; self-loops once
            let contrib = if i == j { w } else { 0.5 * w };
            *maps[a].entry(b).or_insert(0.0) += contrib;
            if a != b {
                *maps[b].entry(a).or_insert(0.0) += contrib;
            }
        }
    }
    SparseGraph { adj: maps.into_iter().map(|m| m.into_iter().collect()).collect() }
}
