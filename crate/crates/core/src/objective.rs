//! Conditional model, regularized mutual-information objective and its
//! analytic gradient.
//!
//! For a parameter θ that only enters cluster k's density, the chain rule
//! through the posterior collapses to
//!
//! ```text
//! ∂I/∂θ = Σ_i p_ki · ∂ln q_ki/∂θ · (G_ki - Σ_c p_ci G_ci),   G_ci = ln(p_ci / p̂_c) / N
//! ```
//!
//! where `q_ki = τ_k f_k(x_i)`. The logits follow the same pattern with
//! `∂ln q_ci/∂π_k = δ_ck - τ_k`; the `τ_k` part cancels because the bracket has
//! zero posterior mean.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::density::{gaussian_logpdf_raw, log_sum_exp, mix_log};
use crate::error::{ClusterError, Result};
use crate::model::{params_per_cluster, Hyper, Model};

/// Responsibilities below this are floored before taking logs.
pub const RESP_FLOOR: f64 = 1e-300;
const CHUNK: usize = 1024;

/// N×K row-stochastic matrix of posterior cluster probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub p: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        for i in 0..p.nrows() {
            let row = p.row(i);
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(ClusterError::InvalidArgument(format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self { p })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn k(&self) -> usize {
        self.p.ncols()
    }

    /// p̂_k = (1/N) Σ_i p_ik.
    pub fn marginal(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.k()).map(|k| self.p.column(k).sum() / n).collect()
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn map_labels(resp: &Responsibilities) -> Vec<usize> {
    (0..resp.n())
        .map(|i| {
            let row = resp.p.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Row-major copy of the data matrix, the layout every hot loop wants.
#[derive(Debug, Clone)]
pub struct Data {
    values: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl Data {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut values = Vec::with_capacity(n * d);
        for i in 0..n {
            values.extend(x.row(i).iter());
        }
        Self { values, n, d }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.max(RESP_FLOOR).ln()
    } else {
        0.0
    }
}

/// H(p̂) - (1/N) Σ_i H(p_i), with 0·ln 0 = 0.
pub fn mutual_information(resp: &Responsibilities) -> f64 {
    let n = resp.n() as f64;
    let cond: f64 = resp.p.iter().map(|&v| xlogx(v)).sum::<f64>() / n;
    let marg: f64 = resp.marginal().into_iter().map(xlogx).sum();
    cond - marg
}

/// R1 = -λ1 Σ_k ln τ_k.
pub fn r1(m: &Model, lambda1: f64) -> f64 {
    let logits = m.logits();
    let lse = log_sum_exp(&logits);
    -lambda1 * logits.iter().map(|p| p - lse).sum::<f64>()
}

/// R2 = λ2 Σ_k (c_k - μ_k)ᵀ L_k L_kᵀ (c_k - μ_k), with c_k the box centre.
pub fn r2(m: &Model, lambda2: f64) -> f64 {
    if lambda2 == 0.0 {
        return 0.0;
    }
    lambda2
        * m.clusters
            .iter()
            .map(|c| {
                let disp = c.uniform.center() - &c.gaussian.mu;
                (c.gaussian.chol.transpose() * disp).norm_squared()
            })
            .sum::<f64>()
}

struct ClusterCache {
    log_tau: f64,
    omega: f64,
    log_det: f64,
    log_unif: f64,
}

fn caches(m: &Model) -> Vec<ClusterCache> {
    let logits = m.logits();
    let lse = log_sum_exp(&logits);
    m.clusters
        .iter()
        .zip(&logits)
        .map(|(c, l)| ClusterCache {
            log_tau: l - lse,
            omega: c.omega,
            log_det: c.gaussian.log_det_chol(),
            log_unif: -c.uniform.log_volume(),
        })
        .collect()
}

/// Per-point, per-cluster quantities from the forward pass.
struct Forward {
    k: usize,
    /// p_ik, row-major N×K
    p: Vec<f64>,
    /// ln p_ik floored at ln(RESP_FLOOR)
    lnp: Vec<f64>,
    /// share of f_k(x_i) coming from the Gaussian part
    gauss_share: Vec<f64>,
    inside: Vec<bool>,
    /// rows where every density underflowed and the uniform row was used
    degenerate: Vec<bool>,
}

fn forward(data: &Data, m: &Model) -> Forward {
    let k = m.k();
    let cache = caches(m);
    let n = data.n;
    let mut p = vec![0.0; n * k];
    let mut lnp = vec![0.0; n * k];
    let mut share = vec![0.0; n * k];
    let mut inside = vec![false; n * k];
    let mut degenerate = vec![false; n];
    let ln_floor = RESP_FLOOR.ln();

    p.par_chunks_mut(CHUNK * k)
        .zip(lnp.par_chunks_mut(CHUNK * k))
        .zip(share.par_chunks_mut(CHUNK * k))
        .zip(inside.par_chunks_mut(CHUNK * k))
        .zip(degenerate.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(chunk, ((((p, lnp), share), inside), degen))| {
            let mut logq = vec![0.0; k];
            for (local, deg) in degen.iter_mut().enumerate() {
                let i = chunk * CHUNK + local;
                let x = data.row(i);
                for (c, (cl, cc)) in m.clusters.iter().zip(&cache).enumerate() {
                    let lg = gaussian_logpdf_raw(x, cl.gaussian.mu.as_slice(), &cl.gaussian.chol, cc.log_det);
                    let ins = x
                        .iter()
                        .zip(cl.uniform.lower.iter().zip(cl.uniform.upper.iter()))
                        .all(|(v, (a, b))| *a <= *v && *v <= *b);
                    let lu = if ins { cc.log_unif } else { f64::NEG_INFINITY };
                    let lf = mix_log(cc.omega, lg, lu);
                    let idx = local * k + c;
                    share[idx] = if lf > f64::NEG_INFINITY { (cc.omega.ln() + lg - lf).exp().min(1.0) } else { 0.0 };
                    inside[idx] = ins;
                    logq[c] = cc.log_tau + lf;
                }
                let lse = log_sum_exp(&logq);
                if lse == f64::NEG_INFINITY || lse.is_nan() {
                    *deg = true;
                    for c in 0..k {
                        p[local * k + c] = 1.0 / k as f64;
                        lnp[local * k + c] = -(k as f64).ln();
                    }
                } else {
                    for c in 0..k {
                        let l = logq[c] - lse;
                        p[local * k + c] = l.exp();
                        lnp[local * k + c] = l.max(ln_floor);
                    }
                }
            }
        });
    Forward { k, p, lnp, gauss_share: share, inside, degenerate }
}

/// Posterior probabilities p(y_ik | x_i) of the mixture-of-mixtures model.
pub fn posterior(x: &DMatrix<f64>, m: &Model) -> Result<Responsibilities> {
    check_dims(x, m)?;
    Ok(posterior_data(&Data::new(x), m))
}

pub(crate) fn posterior_data(data: &Data, m: &Model) -> Responsibilities {
    let fw = forward(data, m);
    Responsibilities { p: DMatrix::from_row_slice(data.n, fw.k, &fw.p) }
}

fn check_dims(x: &DMatrix<f64>, m: &Model) -> Result<()> {
    if x.ncols() != m.dim {
        return Err(ClusterError::DimensionMismatch { expected: m.dim, got: x.ncols() });
    }
    if x.nrows() == 0 {
        return Err(ClusterError::InvalidArgument("no observations".into()));
    }
    Ok(())
}

/// F = I - R1 - R2.
pub fn objective(x: &DMatrix<f64>, m: &Model, h: Hyper) -> Result<f64> {
    check_dims(x, m)?;
    Ok(Problem::new(x, h).value(m))
}

/// ∂F in the [`Model::pack`] layout.
pub fn gradient(x: &DMatrix<f64>, m: &Model, h: Hyper) -> Result<Vec<f64>> {
    check_dims(x, m)?;
    Ok(Problem::new(x, h).value_and_gradient(m).1)
}

/// Data and penalty weights bound together for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: Data,
    pub hyper: Hyper,
}

#[derive(Clone)]
struct Acc {
    logit: f64,
    omega: f64,
    mu: Vec<f64>,
    share_sum: f64,
    scatter: DMatrix<f64>,
    width: Vec<f64>,
}

impl Acc {
    fn new(d: usize) -> Self {
        Self { logit: 0.0, omega: 0.0, mu: vec![0.0; d], share_sum: 0.0, scatter: DMatrix::zeros(d, d), width: vec![0.0; d] }
    }

    fn add(&mut self, o: &Acc) {
        self.logit += o.logit;
        self.omega += o.omega;
        self.share_sum += o.share_sum;
        for (a, b) in self.mu.iter_mut().zip(&o.mu) {
            *a += b;
        }
        for (a, b) in self.width.iter_mut().zip(&o.width) {
            *a += b;
        }
        self.scatter += &o.scatter;
    }
}

impl Problem {
    pub fn new(x: &DMatrix<f64>, hyper: Hyper) -> Self {
        Self { data: Data::new(x), hyper }
    }

    pub fn from_data(data: Data, hyper: Hyper) -> Self {
        Self { data, hyper }
    }

    fn mi_from_forward(&self, fw: &Forward) -> (f64, Vec<f64>) {
        let n = self.data.n;
        let k = fw.k;
        let mut marg = vec![0.0; k];
        let mut cond = 0.0;
        for i in 0..n {
            for c in 0..k {
                let p = fw.p[i * k + c];
                marg[c] += p;
                cond += p * fw.lnp[i * k + c];
            }
        }
        for v in marg.iter_mut() {
            *v /= n as f64;
        }
        let mi = cond / n as f64 - marg.iter().map(|&v| xlogx(v)).sum::<f64>();
        (mi, marg)
    }

    pub fn value(&self, m: &Model) -> f64 {
        let fw = forward(&self.data, m);
        let (mi, _) = self.mi_from_forward(&fw);
        mi - r1(m, self.hyper.lambda1) - r2(m, self.hyper.lambda2)
    }

    pub fn value_and_gradient(&self, m: &Model) -> (f64, Vec<f64>) {
        let n = self.data.n;
        let d = self.data.d;
        let k = m.k();
        let fw = forward(&self.data, m);
        let (mi, marg) = self.mi_from_forward(&fw);
        let value = mi - r1(m, self.hyper.lambda1) - r2(m, self.hyper.lambda2);
        let ln_marg: Vec<f64> = marg.iter().map(|v| v.max(RESP_FLOOR).ln()).collect();
        let inv_n = 1.0 / n as f64;

        let partials: Vec<Vec<Acc>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let mut acc = vec![Acc::new(d); k];
                let mut g = vec![0.0; k];
                let mut diff = vec![0.0; d];
                for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                    if fw.degenerate[i] {
                        continue;
                    }
                    let row = &fw.p[i * k..(i + 1) * k];
                    let mut mean_g = 0.0;
                    for c in 0..k {
                        g[c] = (fw.lnp[i * k + c] - ln_marg[c]) * inv_n;
                        mean_g += row[c] * g[c];
                    }
                    let x = self.data.row(i);
                    for (c, (a, cl)) in acc.iter_mut().zip(&m.clusters).enumerate() {
                        let weight = row[c] * (g[c] - mean_g);
                        if weight == 0.0 {
                            continue;
                        }
                        a.logit += weight;
                        let r = fw.gauss_share[i * k + c];
                        let omega = cl.omega;
                        a.omega += weight * (r / omega - (1.0 - r) / (1.0 - omega));
                        let wr = weight * r;
                        if wr != 0.0 {
                            a.share_sum += wr;
                            for j in 0..d {
                                diff[j] = x[j] - cl.gaussian.mu[j];
                                a.mu[j] += wr * diff[j];
                            }
                            for col in 0..d {
                                for row_ in col..d {
                                    a.scatter[(row_, col)] += wr * diff[row_] * diff[col];
                                }
                            }
                        }
                        if fw.inside[i * k + c] {
                            let wu = weight * (1.0 - r);
                            for j in 0..d {
                                a.width[j] -= wu / (cl.uniform.upper[j] - cl.uniform.lower[j]);
                            }
                        }
                    }
                }
                acc
            })
            .collect();

        let mut total = vec![Acc::new(d); k];
        for part in &partials {
            for (t, p) in total.iter_mut().zip(part) {
                t.add(p);
            }
        }

        let tau = m.proportions();
        let per = params_per_cluster(d);
        let mut grad = vec![0.0; k * per];
        let (l1, l2) = (self.hyper.lambda1, self.hyper.lambda2);
        for (c, (cl, acc)) in m.clusters.iter().zip(total.iter_mut()).enumerate() {
            let out = &mut grad[c * per..(c + 1) * per];
            let chol = &cl.gaussian.chol;
            let prec = chol * chol.transpose();
            // mirror the lower-triangular scatter accumulation
            for col in 0..d {
                for row in 0..col {
                    acc.scatter[(row, col)] = acc.scatter[(col, row)];
                }
            }
            let disp = cl.uniform.center() - &cl.gaussian.mu;
            let prec_disp = &prec * &disp;

            out[0] = acc.logit + l1 * (1.0 - k as f64 * tau[c]);
            out[1] = acc.omega;
            let mu_acc = nalgebra::DVector::from_column_slice(&acc.mu);
            let g_mu = &prec * mu_acc + &prec_disp * (2.0 * l2);
            out[2..2 + d].copy_from_slice(g_mu.as_slice());

            // ∂/∂L: Σ w r [diag(1/L_jj) - (x-μ)(x-μ)ᵀ L] - 2λ2 δ δᵀ L, lower triangle only
            let scatter_l = &acc.scatter * chol;
            let disp_l = (&disp * disp.transpose()) * chol;
            let mut idx = 2 + d;
            for r in 0..d {
                for col in 0..=r {
                    let mut v = -scatter_l[(r, col)] - 2.0 * l2 * disp_l[(r, col)];
                    if r == col {
                        v += acc.share_sum / chol[(r, r)];
                    }
                    out[idx] = v;
                    idx += 1;
                }
            }
            // box: a moves with fixed width, so only R2 acts on it; w carries the density term
            for j in 0..d {
                out[idx + j] = -2.0 * l2 * prec_disp[j];
                out[idx + d + j] = acc.width[j] - l2 * prec_disp[j];
            }
        }
        (value, grad)
    }
}
