//! Starting models: kNN graph + Louvain communities (default), Latin
//! hypercube nodes, or k-means centroids. Each scheme builds `n_starts`
//! candidates and keeps the one whose MAP labels have the best silhouette.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{precision_factor, GaussianComponent, UniformComponent};
use crate::error::{invalid, ClusterError, Result};
use crate::graph::{knn_graph, louvain};
use crate::metrics::silhouette_data;
use crate::model::{ClusterParams, DataRange, Model};
use crate::objective::{map_labels, posterior_data, Data};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Graph,
    Lhs,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub scheme: Scheme,
    /// Neighbour count for `Graph`, initial cluster count otherwise.
    pub k: usize,
    pub n_starts: usize,
    pub omega0: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Graph, k: 25, n_starts: 10, omega0: 0.7, seed: 0 }
    }
}

impl InitConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_starts == 0 {
            return Err(invalid("k and n_starts must be at least 1"));
        }
        if !(self.omega0 > 0.0 && self.omega0 < 1.0) {
            return Err(invalid("omega0 must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// A scored candidate start.
#[derive(Debug, Clone)]
pub struct Start {
    pub model: Model,
    pub asw: f64,
}

/// Independent RNG stream for one start.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn initialize(x: &DMatrix<f64>, cfg: &InitConfig) -> Result<Model> {
    let data = Data::new(x);
    Ok(initialize_data(&data, &DataRange::of(x), cfg, default_subsample(data.n))?.model)
}

pub fn graph_init(x: &DMatrix<f64>, cfg: &InitConfig) -> Result<Model> {
    initialize(x, &InitConfig { scheme: Scheme::Graph, ..cfg.clone() })
}

pub fn lhs_init(x: &DMatrix<f64>, cfg: &InitConfig) -> Result<Model> {
    initialize(x, &InitConfig { scheme: Scheme::Lhs, ..cfg.clone() })
}

pub fn kmeans_init(x: &DMatrix<f64>, cfg: &InitConfig) -> Result<Model> {
    initialize(x, &InitConfig { scheme: Scheme::Kmeans, ..cfg.clone() })
}

pub(crate) fn default_subsample(n: usize) -> Option<usize> {
    (n > 10_000).then_some(5_000)
}

pub(crate) fn initialize_data(
    data: &Data,
    range: &DataRange,
    cfg: &InitConfig,
    asw_subsample: Option<usize>,
) -> Result<Start> {
    cfg.validate()?;
    if data.n < 2 {
        return Err(invalid("initialization needs at least two points"));
    }
    let graph = match cfg.scheme {
        Scheme::Graph => Some(knn_graph(data, cfg.k)?),
        _ => None,
    };
    if cfg.scheme != Scheme::Graph && cfg.k > data.n {
        return Err(invalid(format!("k = {} exceeds the number of points {}", cfg.k, data.n)));
    }
    let global_cov = covariance(data, &(0..data.n).collect::<Vec<_>>());
    let starts: Vec<Result<Start>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(cfg.seed, s as u64);
            let alpha = (s + 1) as f64 / cfg.n_starts as f64;
            let (centers, assign) = match cfg.scheme {
                Scheme::Graph => {
                    let comm = louvain(graph.as_ref().expect("graph built"), rng.random())?;
                    let k = comm.n_communities();
                    let groups = group(&comm.labels, k);
                    let centers = groups.iter().map(|g| mean(data, g)).collect();
                    (centers, groups)
                }
                Scheme::Lhs => {
                    let centers = lhs_nodes(range, cfg.k, &mut rng);
                    let assign = group(&nearest(data, &centers), cfg.k);
                    (centers, assign)
                }
                Scheme::Kmeans => {
                    let (centers, labels) = kmeans(data, cfg.k, 10, &mut rng)?;
                    (centers, group(&labels, cfg.k))
                }
            };
            let model = build_model(data, range, &global_cov, &centers, &assign, alpha, cfg.omega0, &mut rng)?;
            let asw = start_score(data, &model, asw_subsample, cfg.seed);
            Ok(Start { model, asw })
        })
        .collect();
    let mut best: Option<Start> = None;
    let mut errors = Vec::new();
    for s in starts {
        match s {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.asw > b.asw) {
                    best = Some(s);
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    best.ok_or(ClusterError::AllCellsFailed(errors))
}

/// Silhouette of the MAP labels; `-inf` when fewer than two clusters are used.
fn start_score(data: &Data, model: &Model, subsample: Option<usize>, seed: u64) -> f64 {
    let labels = map_labels(&posterior_data(data, model));
    silhouette_data(data, &labels, subsample, seed).unwrap_or(f64::NEG_INFINITY)
}

fn group(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut g = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        g[l].push(i);
    }
    g
}

fn mean(data: &Data, idx: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(data.d);
    for &i in idx {
        for (j, v) in data.row(i).iter().enumerate() {
            m[j] += v;
        }
    }
    m / idx.len().max(1) as f64
}

/// Unbiased sample covariance of the indexed rows (needs at least two).
pub(crate) fn covariance(data: &Data, idx: &[usize]) -> DMatrix<f64> {
    let m = mean(data, idx);
    let mut c = DMatrix::zeros(data.d, data.d);
    for &i in idx {
        let r = DVector::from_column_slice(data.row(i)) - &m;
        c += &r * r.transpose();
    }
    c / (idx.len() as f64 - 1.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(data: &Data, centers: &[DVector<f64>]) -> Vec<usize> {
    (0..data.n)
        .map(|i| {
            let x = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, m) in centers.iter().enumerate() {
                let d = sq_dist(x, m.as_slice());
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn build_model(
    data: &Data,
    range: &DataRange,
    global_cov: &DMatrix<f64>,
    centers: &[DVector<f64>],
    groups: &[Vec<usize>],
    alpha: f64,
    omega0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let k = centers.len();
    let logit = (1.0 / k as f64).ln();
    let mut clusters = Vec::with_capacity(k);
    for (mu, members) in centers.iter().zip(groups) {
        let cov = if members.len() < 2 {
            global_cov.clone()
        } else {
            global_cov * (1.0 - alpha) + covariance(data, members) * alpha
        };
        let chol = precision_factor(&cov)?;
        let gaussian = GaussianComponent::new(mu.clone(), chol)?;
        let sd = DVector::from_iterator(data.d, (0..data.d).map(|j| cov[(j, j)].max(0.0).sqrt()));
        let uniform = place_box(mu, &sd, range, rng)?;
        clusters.push(ClusterParams { logit, omega: omega0, gaussian, uniform });
    }
    Model::new(clusters)
}

/// Random box containing `mu` with a 10% margin, inside the optimizer bounds.
fn place_box(mu: &DVector<f64>, sd: &DVector<f64>, range: &DataRange, rng: &mut ChaCha8Rng) -> Result<UniformComponent> {
    let d = mu.len();
    let mut lower = DVector::zeros(d);
    let mut upper = DVector::zeros(d);
    for j in 0..d {
        let r = range.range(j);
        let scale = sd[j].max(0.01 * r);
        let w = (rng.random_range(0.5..=1.5) * scale).clamp(range.width_floor(j), r);
        let lo_bound = range.min[j] - 0.1 * r;
        let a_min = (mu[j] - 0.9 * w).max(lo_bound);
        let a_max = (mu[j] - 0.1 * w).max(a_min);
        let a = if a_max > a_min { rng.random_range(a_min..=a_max) } else { a_min };
        lower[j] = a;
        upper[j] = a + w;
    }
    UniformComponent::new(lower, upper)
}

/// `k` Latin hypercube nodes over the data bounding box.
pub fn lhs_nodes(range: &DataRange, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let d = range.min.len();
    let mut nodes = vec![DVector::zeros(d); k];
    let mut strata: Vec<usize> = (0..k).collect();
    for j in 0..d {
        strata.shuffle(rng);
        let span = range.max[j] - range.min[j];
        for (node, &s) in nodes.iter_mut().zip(&strata) {
            node[j] = range.min[j] + (s as f64 + rng.random::<f64>()) / k as f64 * span;
        }
    }
    nodes
}

/// k-means++ seeding: the first center uniformly, then proportional to D².
pub(crate) fn kmeans_pp(data: &Data, k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut centers = vec![DVector::from_column_slice(data.row(rng.random_range(0..data.n)))];
    let mut d2: Vec<f64> = (0..data.n).map(|i| sq_dist(data.row(i), centers[0].as_slice())).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..data.n)
        };
        let c = DVector::from_column_slice(data.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(data.row(i), c.as_slice()));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds; best within-cluster sum of
/// squares over `restarts` runs. Runs that empty a cluster are redrawn.
pub fn kmeans(data: &Data, k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<DVector<f64>>, Vec<usize>)> {
    if k == 0 || k > data.n {
        return Err(invalid(format!("k-means with k = {k} on {} points", data.n)));
    }
    let mut best: Option<(f64, Vec<DVector<f64>>, Vec<usize>)> = None;
    let mut completed = 0;
    let mut attempts = 0;
    while completed < restarts.max(1) && attempts < 10 * restarts.max(1) {
        attempts += 1;
        let Some((centers, labels)) = lloyd(data, kmeans_pp(data, k, rng)) else {
            continue;
        };
        completed += 1;
        let sse: f64 = (0..data.n).map(|i| sq_dist(data.row(i), centers[labels[i]].as_slice())).sum();
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, centers, labels));
        }
    }
    best.map(|(_, c, l)| (c, l))
        .ok_or_else(|| invalid("k-means produced an empty cluster in every run"))
}

fn lloyd(data: &Data, mut centers: Vec<DVector<f64>>) -> Option<(Vec<DVector<f64>>, Vec<usize>)> {
    let k = centers.len();
    let mut labels = nearest(data, &centers);
    for _ in 0..300 {
        let groups = group(&labels, k);
        if groups.iter().any(Vec::is_empty) {
            return None;
        }
        centers = groups.iter().map(|g| mean(data, g)).collect();
        let next = nearest(data, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    Some((centers, labels))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn blobs(means: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = means.len() * per;
        let mut x = DMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for (c, m) in means.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                for j in 0..2 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[(r, j)] = m[j] + sd * z;
                }
                labels.push(c);
            }
        }
        (x, labels)
    }

    const THREE: [[f64; 2]; 3] = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];

    fn assert_valid(m: &Model, range: &DataRange) {
        let b = range.bounds(m.k());
        assert!(b.contains(&m.pack()));
        for c in &m.clusters {
            assert!(c.uniform.contains(c.gaussian.mu.as_slice()));
        }
    }

    fn close_to_some(mu: &DVector<f64>, tol: f64) -> bool {
        THREE.iter().any(|t| ((mu[0] - t[0]).powi(2) + (mu[1] - t[1]).powi(2)).sqrt() < tol)
    }

    #[test]
    fn graph_init_finds_three_blobs() {
        let (x, _) = blobs(&THREE, 40, 0.5, 1);
        let cfg = InitConfig { k: 15, n_starts: 4, seed: 3, ..Default::default() };
        let m = graph_init(&x, &cfg).unwrap();
        assert_eq!(m.k(), 3);
        for c in &m.clusters {
            assert!(close_to_some(&c.gaussian.mu, 0.5));
        }
        assert_valid(&m, &DataRange::of(&x));
        let p = m.proportions();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(m.clusters.iter().all(|c| c.omega == 0.7));
    }

    #[test]
    fn single_start_uses_community_covariance() {
        let (x, _) = blobs(&THREE, 40, 0.5, 2);
        let data = Data::new(&x);
        let cfg = InitConfig { k: 10, n_starts: 1, seed: 1, ..Default::default() };
        let m = graph_init(&x, &cfg).unwrap();
        let labels = map_labels(&posterior_data(&data, &m));
        let g = louvain(&knn_graph(&data, 10).unwrap(), stream_rng(1, 0).random()).unwrap();
        assert_eq!(g.n_communities(), m.k());
        for (k, c) in m.clusters.iter().enumerate() {
            let members: Vec<usize> = (0..data.n).filter(|&i| g.labels[i] == k).collect();
            let cov = covariance(&data, &members);
            assert!((c.gaussian.covariance() - cov).abs().max() < 1e-8);
        }
        assert_eq!(labels.len(), data.n);
    }

    #[test]
    fn initialization_is_deterministic() {
        let (x, _) = blobs(&THREE, 30, 1.0, 4);
        for scheme in [Scheme::Graph, Scheme::Lhs, Scheme::Kmeans] {
            let cfg = InitConfig { scheme, k: 5, n_starts: 3, seed: 11, ..Default::default() };
            assert_eq!(initialize(&x, &cfg).unwrap(), initialize(&x, &cfg).unwrap());
        }
    }

    #[test]
    fn lhs_nodes_occupy_distinct_strata() {
        let range = DataRange { min: vec![0.0, -2.0], max: vec![4.0, 2.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nodes = lhs_nodes(&range, 4, &mut rng);
        for j in 0..2 {
            let mut strata: Vec<usize> = nodes
                .iter()
                .map(|n| ((n[j] - range.min[j]) / (range.max[j] - range.min[j]) * 4.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn lhs_init_is_valid() {
        let (x, _) = blobs(&THREE, 30, 1.0, 6);
        let m = lhs_init(&x, &InitConfig { k: 6, n_starts: 3, ..Default::default() }).unwrap();
        assert_eq!(m.k(), 6);
        assert_valid(&m, &DataRange::of(&x));
    }

    #[test]
    fn kmeans_recovers_blob_means() {
        let (x, _) = blobs(&THREE, 50, 0.7, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (centers, labels) = kmeans(&Data::new(&x), 3, 10, &mut rng).unwrap();
        assert!(centers.iter().all(|c| close_to_some(c, 0.5)));
        assert_eq!(labels.len(), 150);
        let m = kmeans_init(&x, &InitConfig { k: 3, n_starts: 2, ..Default::default() }).unwrap();
        assert!(m.clusters.iter().all(|c| close_to_some(&c.gaussian.mu, 0.5)));
        assert_valid(&m, &DataRange::of(&x));
    }

    #[test]
    fn kmeans_single_cluster_is_data_mean() {
        let (x, _) = blobs(&THREE, 20, 1.0, 9);
        let m = kmeans_init(&x, &InitConfig { k: 1, n_starts: 1, ..Default::default() }).unwrap();
        let mean = x.row_mean().transpose();
        assert!((&m.clusters[0].gaussian.mu - mean).abs().max() < 1e-12);
    }

    #[test]
    fn bad_config_rejected() {
        let (x, _) = blobs(&THREE, 5, 1.0, 9);
        assert!(initialize(&x, &InitConfig { k: 0, ..Default::default() }).is_err());
        assert!(initialize(&x, &InitConfig { k: 15, ..Default::default() }).is_err());
        assert!(initialize(&x, &InitConfig { scheme: Scheme::Kmeans, k: 16, ..Default::default() }).is_err());
    }
}
