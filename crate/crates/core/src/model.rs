//! Parameter containers for the conditional model and their flat packing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{
    softmax_unchecked, GaussianComponent, UniformComponent, DIAG_FLOOR, OMEGA_HI, OMEGA_LO,
    WIDTH_FLOOR_FRACTION,
};
use crate::error::{invalid, ClusterError, Result};
use crate::optim::Bounds;

/// One outer cluster: softmax logit, inner weight, Gaussian and uniform parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub logit: f64,
    pub omega: f64,
    pub gaussian: GaussianComponent,
    pub uniform: UniformComponent,
}

/// Ordered collection of clusters sharing a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub clusters: Vec<ClusterParams>,
    pub dim: usize,
}

/// Penalty weights for the mixing-proportion and box-centering terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Hyper {
    pub const ZERO: Hyper = Hyper { lambda1: 0.0, lambda2: 0.0 };

    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
            return Err(invalid("penalty weights must be nonnegative"));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

pub fn params_per_cluster(d: usize) -> usize {
    2 + 3 * d + d * (d + 1) / 2
}

impl Model {
    pub fn new(clusters: Vec<ClusterParams>) -> Result<Self> {
        let first = clusters.first().ok_or_else(|| invalid("a model needs at least one cluster"))?;
        let dim = first.gaussian.dim();
        for c in &clusters {
            if c.gaussian.dim() != dim || c.uniform.lower.len() != dim {
                return Err(ClusterError::DimensionMismatch { expected: dim, got: c.gaussian.dim() });
            }
        }
        Ok(Self { clusters, dim })
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn logits(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.logit).collect()
    }

    /// Mixing proportions τ = softmax(π).
    pub fn proportions(&self) -> Vec<f64> {
        softmax_unchecked(&self.logits())
    }

    /// Rewrites the logits as `ln τ` so they sum-exp to one.
    pub fn normalize_logits(&mut self) {
        let tau = self.proportions();
        for (c, t) in self.clusters.iter_mut().zip(tau) {
            c.logit = t.ln();
        }
    }

    pub fn n_params(&self) -> usize {
        self.k() * params_per_cluster(self.dim)
    }

    /// Flat layout per cluster: `[π, ω, μ(D), tril(L) row-major, a(D), w(D)]` with `w = b - a`.
    pub fn pack(&self) -> Vec<f64> {
        let d = self.dim;
        let mut v = Vec::with_capacity(self.n_params());
        for c in &self.clusters {
            v.push(c.logit);
            v.push(c.omega);
            v.extend(c.gaussian.mu.iter());
            for r in 0..d {
                for col in 0..=r {
                    v.push(c.gaussian.chol[(r, col)]);
                }
            }
            v.extend(c.uniform.lower.iter());
            for j in 0..d {
                v.push(c.uniform.upper[j] - c.uniform.lower[j]);
            }
        }
        v
    }

    /// Inverse of [`Model::pack`]. Only the layout is checked; values are taken
    /// as given so optimizer iterates round-trip exactly.
    pub fn unpack(v: &[f64], k: usize, d: usize) -> Result<Self> {
        let per = params_per_cluster(d);
        if k == 0 || v.len() != k * per {
            return Err(ClusterError::DimensionMismatch { expected: k * per, got: v.len() });
        }
        let clusters = v
            .chunks_exact(per)
            .map(|p| {
                let mut it = p.iter().copied();
                let logit = it.next().unwrap();
                let omega = it.next().unwrap();
                let mu = DVector::from_iterator(d, it.by_ref().take(d));
                let mut chol = DMatrix::zeros(d, d);
                for r in 0..d {
                    for col in 0..=r {
                        chol[(r, col)] = it.next().unwrap();
                    }
                }
                let lower = DVector::from_iterator(d, it.by_ref().take(d));
                let width = DVector::from_iterator(d, it.by_ref().take(d));
                ClusterParams {
                    logit,
                    omega,
                    gaussian: GaussianComponent { mu, chol },
                    uniform: UniformComponent { upper: &lower + width, lower },
                }
            })
            .collect();
        Ok(Self { clusters, dim: d })
    }
}

/// Per-dimension extent of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DataRange {
    pub fn of(x: &DMatrix<f64>) -> Self {
        let d = x.ncols();
        let min = (0..d).map(|j| x.column(j).min()).collect();
        let max = (0..d).map(|j| x.column(j).max()).collect();
        Self { min, max }
    }

    pub fn range(&self, j: usize) -> f64 {
        (self.max[j] - self.min[j]).max(f64::MIN_POSITIVE)
    }

    pub fn width_floor(&self, j: usize) -> f64 {
        WIDTH_FLOOR_FRACTION * self.range(j)
    }

    /// Box constraints on the flat parameter vector of a `k`-cluster model.
    pub fn bounds(&self, k: usize) -> Bounds {
        let d = self.min.len();
        let per = params_per_cluster(d);
        let mut lower = Vec::with_capacity(k * per);
        let mut upper = Vec::with_capacity(k * per);
        for _ in 0..k {
            // logit
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
            lower.push(OMEGA_LO);
            upper.push(OMEGA_HI);
            for _ in 0..d {
                lower.push(f64::NEG_INFINITY);
                upper.push(f64::INFINITY);
            }
            for r in 0..d {
                for c in 0..=r {
                    lower.push(if r == c { DIAG_FLOOR } else { f64::NEG_INFINITY });
                    upper.push(f64::INFINITY);
                }
            }
            for j in 0..d {
                lower.push(self.min[j] - 0.1 * self.range(j));
                upper.push(self.max[j] + 0.1 * self.range(j));
            }
            for j in 0..d {
                lower.push(self.width_floor(j));
                upper.push(1.2 * self.range(j));
            }
        }
        Bounds { lower, upper }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn arb_model(k: usize, d: usize) -> impl Strategy<Value = Model> {
        let per = params_per_cluster(d);
        proptest::collection::vec(-3.0f64..3.0, k * per).prop_map(move |mut v| {
            for c in 0..k {
                let base = c * per;
                v[base + 1] = 0.01 + (v[base + 1] + 3.0) / 6.0 * 0.98;
                let mut idx = base + 2 + d;
                for r in 0..d {
                    for col in 0..=r {
                        if r == col {
                            v[idx] = v[idx].abs() + 0.1;
                        }
                        idx += 1;
                    }
                }
                for j in 0..d {
                    v[base + per - d + j] = v[base + per - d + j].abs() + 0.05;
                }
            }
            Model::unpack(&v, k, d).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(m in (1usize..4, 1usize..4).prop_flat_map(|(k, d)| arb_model(k, d))) {
            let v = m.pack();
            prop_assert_eq!(v.len(), m.k() * (2 + 2 * m.dim + m.dim + m.dim * (m.dim + 1) / 2));
            let back = Model::unpack(&v, m.k(), m.dim).unwrap();
            prop_assert_eq!(back.pack(), v);
            for (a, b) in back.clusters.iter().zip(&m.clusters) {
                prop_assert_eq!(a.logit.to_bits(), b.logit.to_bits());
                prop_assert_eq!(&a.gaussian, &b.gaussian);
                prop_assert_eq!(&a.uniform.lower, &b.uniform.lower);
                // b is reconstructed as a + (b - a); exact up to one rounding
                for j in 0..m.dim {
                    prop_assert!((a.uniform.upper[j] - b.uniform.upper[j]).abs() <= 1e-15 * b.uniform.upper[j].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn unpack_length_mismatch() {
        assert!(Model::unpack(&[0.0; 7], 1, 2).is_err());
        assert!(Model::unpack(&[], 0, 2).is_err());
    }

    #[test]
    fn bounds_layout() {
        let r = DataRange { min: vec![0.0, -1.0], max: vec![10.0, 1.0] };
        let b = r.bounds(2);
        assert_eq!(b.lower.len(), 2 * params_per_cluster(2));
        assert_eq!(b.lower[1], OMEGA_LO);
        assert_eq!(b.upper[1], OMEGA_HI);
        // L diag entries at offsets 4 and 6 for D=2
        assert_eq!(b.lower[4], DIAG_FLOOR);
        assert_eq!(b.lower[5], f64::NEG_INFINITY);
        assert_eq!(b.lower[6], DIAG_FLOOR);
        assert_eq!(b.lower[7], -1.0);
        assert_eq!(b.upper[9], 12.0);
        assert!((b.upper[10] - 2.4).abs() < 1e-15);
    }
}
