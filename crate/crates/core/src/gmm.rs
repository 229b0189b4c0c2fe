//! Full-covariance Gaussian mixture fitted by EM, with BIC and ICL order
//! selection. Larger criterion values are better.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::log_sum_exp;
use crate::error::{invalid, ClusterError, Result};
use crate::init::{kmeans_pp, stream_rng};
use crate::objective::Data;

const MAX_ITERS: usize = 500;
const REL_TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub n_params: usize,
    /// Log-likelihood after every EM iteration of the retained restart.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Bic,
    Icl,
}

pub fn n_params(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

struct Component {
    chol: DMatrix<f64>,
    log_norm: f64,
}

fn factor(cov: &DMatrix<f64>) -> Option<Component> {
    let chol = cov.clone().cholesky()?.unpack();
    let d = cov.nrows();
    let log_det: f64 = (0..d).map(|j| chol[(j, j)].ln()).sum::<f64>() * 2.0;
    log_det.is_finite().then(|| Component { chol, log_norm: -0.5 * (d as f64 * LN_2PI + log_det) })
}

fn log_pdf(x: &[f64], mu: &DVector<f64>, c: &Component, z: &mut [f64]) -> f64 {
    let mut q = 0.0;
    for r in 0..x.len() {
        let mut s = x[r] - mu[r];
        for j in 0..r {
            s -= c.chol[(r, j)] * z[j];
        }
        z[r] = s / c.chol[(r, r)];
        q += z[r] * z[r];
    }
    c.log_norm - 0.5 * q
}

/// Posterior membership probabilities and the total log-likelihood.
fn e_step(data: &Data, weights: &[f64], means: &[DVector<f64>], comps: &[Component]) -> (DMatrix<f64>, f64) {
    let k = weights.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut resp = DMatrix::zeros(data.n, k);
    let mut loglik = 0.0;
    let mut buf = vec![0.0; k];
    let mut z = vec![0.0; data.d];
    for i in 0..data.n {
        let x = data.row(i);
        for c in 0..k {
            buf[c] = log_w[c] + log_pdf(x, &means[c], &comps[c], &mut z);
        }
        let lse = log_sum_exp(&buf);
        loglik += lse;
        for c in 0..k {
            resp[(i, c)] = (buf[c] - lse).exp();
        }
    }
    (resp, loglik)
}

fn m_step(data: &Data, resp: &DMatrix<f64>, ridge: f64) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let (n, k, d) = (data.n, resp.ncols(), data.d);
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let mut r = vec![0.0; d];
    for c in 0..k {
        let col = resp.column(c);
        let nk: f64 = col.sum();
        let mut mu = DVector::zeros(d);
        for i in 0..n {
            let w = col[i];
            for (j, v) in data.row(i).iter().enumerate() {
                mu[j] += w * v;
            }
        }
        mu /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let w = col[i];
            for (j, v) in data.row(i).iter().enumerate() {
                r[j] = v - mu[j];
            }
            for a in 0..d {
                let wa = w * r[a];
                for b in 0..=a {
                    cov[(a, b)] += wa * r[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov /= nk;
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        weights.push(nk / n as f64);
        means.push(mu);
        covs.push(cov);
    }
    (weights, means, covs)
}

fn run_em(data: &Data, init: &DMatrix<f64>, ridge: f64) -> Option<GmmFit> {
    let k = init.ncols();
    let mut resp = init.clone();
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut params;
    loop {
        let (w, m, c) = m_step(data, &resp, ridge);
        if w.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let comps: Option<Vec<Component>> = c.iter().map(factor).collect();
        let comps = comps?;
        let (r, ll) = e_step(data, &w, &m, &comps);
        if !ll.is_finite() {
            return None;
        }
        params = (w, m, c);
        trace.push(ll);
        resp = r;
        if (ll - prev).abs() < REL_TOL * ll.abs() || trace.len() >= MAX_ITERS {
            break;
        }
        prev = ll;
    }
    let loglik = *trace.last()?;
    Some(GmmFit {
        weights: params.0,
        means: params.1,
        covariances: params.2,
        loglik,
        n_params: n_params(k, data.d),
        trace,
    })
}

/// Best-of-`n_restarts` EM fit, each restart seeded by k-means++ centres and
/// a nearest-centre hard assignment.
pub fn gmm_em(x: &DMatrix<f64>, k: usize, n_restarts: usize, seed: u64) -> Result<GmmFit> {
    gmm_em_data(&Data::new(x), k, n_restarts, seed)
}

pub(crate) fn gmm_em_data(data: &Data, k: usize, n_restarts: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 || k > data.n {
        return Err(invalid(format!("cannot fit {k} components to {} points", data.n)));
    }
    let all: Vec<usize> = (0..data.n).collect();
    let total_var = crate::init::covariance(data, &all).trace();
    let ridge = RIDGE * total_var.max(f64::MIN_POSITIVE) / data.d as f64;
    let restarts = n_restarts.max(1);
    let fits: Vec<Option<GmmFit>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            for _ in 0..10 {
                let centers = kmeans_pp(data, k, &mut rng);
                let mut init = DMatrix::zeros(data.n, k);
                for i in 0..data.n {
                    let x = data.row(i);
                    let best = (0..k)
                        .map(|c| (c, centers[c].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                        .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
                    init[(i, best.0)] = 1.0;
                }
                if let Some(fit) = run_em(data, &init, ridge) {
                    return Some(fit);
                }
            }
            None
        })
        .collect();
    let mut best: Option<GmmFit> = None;
    for f in fits.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| f.loglik > b.loglik) {
            best = Some(f);
        }
    }
    best.ok_or_else(|| ClusterError::NumericalFailure {
        message: format!("every EM restart degenerated for K = {k}"),
        iterate: None,
    })
}

pub fn posterior(fit: &GmmFit, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let comps: Option<Vec<Component>> = fit.covariances.iter().map(factor).collect();
    let comps = comps.ok_or_else(|| invalid("covariance is not positive definite"))?;
    Ok(e_step(&Data::new(x), &fit.weights, &fit.means, &comps).0)
}

/// 2·loglik − ρ·ln N.
pub fn bic(fit: &GmmFit, n: usize) -> f64 {
    2.0 * fit.loglik - fit.n_params as f64 * (n as f64).ln()
}

/// BIC plus twice the log posterior of each point's MAP component.
pub fn icl(fit: &GmmFit, x: &DMatrix<f64>, n: usize) -> Result<f64> {
    let p = posterior(fit, x)?;
    let mut penalty = 0.0;
    for i in 0..p.nrows() {
        let top = p.row(i).max();
        if top > 0.0 {
            penalty += top.ln();
        }
    }
    Ok(bic(fit, n) + 2.0 * penalty)
}

/// Fits every K in `ks` and returns the criterion maximizer (smallest K on ties).
pub fn select_k(x: &DMatrix<f64>, ks: &[usize], criterion: Criterion, seed: u64) -> Result<(usize, GmmFit)> {
    let scored = score_k(x, ks, seed)?;
    let mut best: Option<(usize, f64, GmmFit)> = None;
    for (k, b, i, fit) in scored {
        let v = match criterion {
            Criterion::Bic => b,
            Criterion::Icl => i,
        };
        if best.as_ref().is_none_or(|bb| v > bb.1) {
            best = Some((k, v, fit));
        }
    }
    let (k, _, fit) = best.ok_or_else(|| invalid("empty K range"))?;
    Ok((k, fit))
}

/// (K, BIC, ICL, fit) for every K, in the order given.
pub fn score_k(x: &DMatrix<f64>, ks: &[usize], seed: u64) -> Result<Vec<(usize, f64, f64, GmmFit)>> {
    let n = x.nrows();
    let data = Data::new(x);
    ks.par_iter()
        .map(|&k| {
            let fit = gmm_em_data(&data, k, 10, seed)?;
            let b = bic(&fit, n);
            let i = icl(&fit, x, n)?;
            Ok((k, b, i, fit))
        })
        .collect()
}
