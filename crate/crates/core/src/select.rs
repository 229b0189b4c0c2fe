//! Order-reduction building blocks: cluster uncertainty, responsibility
//! similarity, and moment-matched merging.

use nalgebra::DMatrix;

use crate::density::{precision_factor, GaussianComponent, UniformComponent};
use crate::error::{invalid, Result};
use crate::model::{ClusterParams, Model};
use crate::objective::Responsibilities;

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Σ_i p_ik ln p_ik over all points (≤ 0).
pub fn cluster_entropy(resp: &Responsibilities, k: usize) -> f64 {
    resp.p.column(k).iter().map(|&p| xlogx(p)).sum()
}

/// Mean of p_ik ln p_ik over the points whose MAP label is `k`; 0 for a
/// cluster without members. More negative means more uncertain.
pub fn cluster_uncertainty(resp: &Responsibilities, labels: &[usize], k: usize) -> f64 {
    let (sum, count) = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == k)
        .fold((0.0, 0usize), |(s, c), (i, _)| (s + xlogx(resp.p[(i, k)]), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Cluster indices, most uncertain first; ties keep index order.
pub fn uncertainty_order(resp: &Responsibilities, labels: &[usize]) -> Vec<usize> {
    let scores: Vec<f64> = (0..resp.k()).map(|k| cluster_uncertainty(resp, labels, k)).collect();
    let mut order: Vec<usize> = (0..resp.k()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Cosine similarity of two responsibility columns; 0 if either is all zero.
pub fn merge_similarity(resp: &Responsibilities, i: usize, k: usize) -> f64 {
    let a = resp.p.column(i);
    let b = resp.p.column(k);
    let denom = a.norm() * b.norm();
    if denom > 0.0 {
        a.dot(&b) / denom
    } else {
        0.0
    }
}

/// The partner most similar to `i` (lowest index on ties).
pub fn merge_partner(resp: &Responsibilities, i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for k in (0..resp.k()).filter(|&k| k != i) {
        let s = merge_similarity(resp, i, k);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((k, s));
        }
    }
    best.map(|(k, _)| k)
}

/// Replaces clusters `i` and `k` by one moment-matched cluster stored at the
/// smaller index. Logits become ln τ so the proportions are exact.
pub fn merge_params(m: &Model, i: usize, k: usize) -> Result<Model> {
    if i == k || i >= m.k() || k >= m.k() {
        return Err(invalid(format!("cannot merge clusters {i} and {k} of {}", m.k())));
    }
    let tau = m.proportions();
    let (ci, ck) = (&m.clusters[i], &m.clusters[k]);
    let (ti, tk) = (tau[i], tau[k]);
    let t = ti + tk;
    let (wi, wk) = (ti / t, tk / t);
    let (mui, muk) = (&ci.gaussian.mu, &ck.gaussian.mu);
    let mu = mui * wi + muk * wk;
    let second = |c: &ClusterParams| -> DMatrix<f64> {
        let mu = &c.gaussian.mu;
        c.gaussian.covariance() + mu * mu.transpose()
    };
    let cov = second(ci) * wi + second(ck) * wk - &mu * mu.transpose();
    let chol = precision_factor(&cov)?;
    let merged = ClusterParams {
        logit: t.ln(),
        omega: ci.omega * wi + ck.omega * wk,
        gaussian: GaussianComponent::new(mu, chol)?,
        uniform: UniformComponent::new(
            &ci.uniform.lower * wi + &ck.uniform.lower * wk,
            &ci.uniform.upper * wi + &ck.uniform.upper * wk,
        )?,
    };
    let (keep, drop) = (i.min(k), i.max(k));
    let clusters = m
        .clusters
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != drop)
        .map(|(j, c)| {
            if j == keep {
                merged.clone()
            } else {
                ClusterParams { logit: tau[j].ln(), ..c.clone() }
            }
        })
        .collect();
    Model::new(clusters)
}

/// Drops cluster `k` and renormalizes the surviving logits.
pub fn drop_cluster(m: &Model, k: usize) -> Result<Model> {
    if m.k() < 2 || k >= m.k() {
        return Err(invalid(format!("cannot drop cluster {k} of {}", m.k())));
    }
    let mut out = Model::new(m.clusters.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, c)| c.clone()).collect())?;
    out.normalize_logits();
    Ok(out)
}
