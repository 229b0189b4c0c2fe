//! Seeded two-dimensional simulation families. All constants are fixed here
//! so replicates are reproducible from `(seed, replicate)` alone.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::init::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gu6,
    Cross,
    Mixg,
    Outlier,
    Fig1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSpec {
    pub family: Family,
    pub seed: u64,
    pub replicate: u64,
}

/// A simulated dataset plus an optional second labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: LabeledDataset,
    /// Coarser "intuitive" labels where they differ from the generative ones.
    pub intuitive: Option<Vec<usize>>,
}

impl SimSpec {
    pub fn generate(&self) -> Simulated {
        let mut rng = stream_rng(self.seed, self.replicate);
        match self.family {
            Family::Gu6 => plain(gu6(&mut rng), "gu6"),
            Family::Cross => plain(cross(&mut rng), "cross"),
            Family::Mixg => mixg(&mut rng),
            Family::Outlier => plain(outlier(&mut rng), "outlier"),
            Family::Fig1 => fig1(&mut rng),
        }
    }
}

pub fn gen_gu6(seed: u64) -> LabeledDataset {
    SimSpec { family: Family::Gu6, seed, replicate: 0 }.generate().data
}

pub fn gen_cross(seed: u64) -> LabeledDataset {
    SimSpec { family: Family::Cross, seed, replicate: 0 }.generate().data
}

pub fn gen_mixg(seed: u64) -> Simulated {
    SimSpec { family: Family::Mixg, seed, replicate: 0 }.generate()
}

pub fn gen_outlier(seed: u64) -> LabeledDataset {
    SimSpec { family: Family::Outlier, seed, replicate: 0 }.generate().data
}

pub fn gen_fig1(seed: u64) -> Simulated {
    SimSpec { family: Family::Fig1, seed, replicate: 0 }.generate()
}

struct Gaussian2 {
    mean: [f64; 2],
    /// Lower Cholesky factor of the covariance, row-major `[l11, l21, l22]`.
    chol: [f64; 3],
}

impl Gaussian2 {
    fn iso(mean: [f64; 2], sd: f64) -> Self {
        Self { mean, chol: [sd, 0.0, sd] }
    }

    /// Elongated along `angle` with the given major and minor standard deviations.
    fn rotated(mean: [f64; 2], major: f64, minor: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let s11 = major * major * c * c + minor * minor * s * s;
        let s12 = (major * major - minor * minor) * s * c;
        let s22 = major * major * s * s + minor * minor * c * c;
        let l11 = s11.sqrt();
        let l21 = s12 / l11;
        Self { mean, chol: [l11, l21, (s22 - l21 * l21).sqrt()] }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        [self.mean[0] + self.chol[0] * z1, self.mean[1] + self.chol[1] * z1 + self.chol[2] * z2]
    }
}

#[derive(Default)]
struct Builder {
    rows: Vec<[f64; 2]>,
    labels: Vec<usize>,
}

impl Builder {
    fn push(&mut self, p: [f64; 2], label: usize) {
        self.rows.push(p);
        self.labels.push(label);
    }

    fn draw(&mut self, g: &Gaussian2, n: usize, label: usize, rng: &mut ChaCha8Rng) {
        for _ in 0..n {
            let p = g.sample(rng);
            self.push(p, label);
        }
    }

    fn finish(self, name: &str) -> LabeledDataset {
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        LabeledDataset {
            name: name.to_string(),
            x: DMatrix::from_row_slice(self.rows.len(), 2, &flat),
            true_labels: Some(self.labels),
            standardizer: None,
        }
    }
}

fn plain(data: LabeledDataset, _: &str) -> Simulated {
    Simulated { data, intuitive: None }
}

/// Six Gaussian-plus-uniform components on a hexagon, 1150 points.
pub const GU6_N: usize = 1150;
const GU6_RADIUS: f64 = 8.0;
const GU6_SD: f64 = 1.0;
const GU6_HALF_BOX: f64 = 3.0;
const GU6_OMEGA: f64 = 0.7;

fn gu6(rng: &mut ChaCha8Rng) -> LabeledDataset {
    let centers: Vec<[f64; 2]> = (0..6)
        .map(|j| {
            let t = std::f64::consts::PI / 3.0 * j as f64;
            [GU6_RADIUS * t.cos(), GU6_RADIUS * t.sin()]
        })
        .collect();
    let mut b = Builder::default();
    for _ in 0..GU6_N {
        let c = rng.random_range(0..6);
        let m = centers[c];
        let p = if rng.random::<f64>() < GU6_OMEGA {
            Gaussian2::iso(m, GU6_SD).sample(rng)
        } else {
            [
                m[0] + rng.random_range(-GU6_HALF_BOX..GU6_HALF_BOX),
                m[1] + rng.random_range(-GU6_HALF_BOX..GU6_HALF_BOX),
            ]
        };
        b.push(p, c);
    }
    b.finish("gu6")
}

/// Two crosses (each a pair of elongated Gaussians at ±45°) and two round
/// Gaussians. Labels are the four visible shapes.
const CROSS_PER_ARM: usize = 100;
const CROSS_PER_BLOB: usize = 100;
const CROSS_MAJOR: f64 = 2.0;
const CROSS_MINOR: f64 = 0.6;
const CROSS_BLOB_SD: f64 = 1.0;
const CROSS_CENTERS: [[f64; 2]; 4] = [[0.0, 0.0], [20.0, 0.0], [0.0, 18.0], [20.0, 18.0]];

fn cross(rng: &mut ChaCha8Rng) -> LabeledDataset {
    let q = std::f64::consts::FRAC_PI_4;
    let mut b = Builder::default();
    for (label, &c) in CROSS_CENTERS[..2].iter().enumerate() {
        b.draw(&Gaussian2::rotated(c, CROSS_MAJOR, CROSS_MINOR, q), CROSS_PER_ARM, label, rng);
        b.draw(&Gaussian2::rotated(c, CROSS_MAJOR, CROSS_MINOR, -q), CROSS_PER_ARM, label, rng);
    }
    for (label, &c) in CROSS_CENTERS[2..].iter().enumerate() {
        b.draw(&Gaussian2::iso(c, CROSS_BLOB_SD), CROSS_PER_BLOB, label + 2, rng);
    }
    b.finish("cross")
}

/// 210 points from four Gaussians, two of them close enough to read as one.
const MIXG_SIZES: [usize; 4] = [60, 60, 45, 45];
const MIXG_MEANS: [[f64; 2]; 4] = [[0.0, 0.0], [8.0, 0.0], [4.0, 7.0], [7.6, 7.0]];
const MIXG_SD: f64 = 1.0;

fn mixg(rng: &mut ChaCha8Rng) -> Simulated {
    let mut b = Builder::default();
    for (c, (&n, &m)) in MIXG_SIZES.iter().zip(&MIXG_MEANS).enumerate() {
        b.draw(&Gaussian2::iso(m, MIXG_SD), n, c, rng);
    }
    let intuitive = b.labels.iter().map(|&l| l.min(2)).collect();
    Simulated { data: b.finish("mixg"), intuitive: Some(intuitive) }
}

/// 300 points from three Gaussians plus 50 uniform over their bounding box;
/// each uniform point takes the label of the nearest Gaussian mean.
const OUTLIER_MEANS: [[f64; 2]; 3] = [[0.0, 0.0], [9.0, 0.0], [4.5, 8.0]];
const OUTLIER_PER: usize = 100;
const OUTLIER_SD: f64 = 0.7;
const OUTLIER_NOISE: usize = 50;

fn outlier(rng: &mut ChaCha8Rng) -> LabeledDataset {
    let mut b = Builder::default();
    for (c, &m) in OUTLIER_MEANS.iter().enumerate() {
        b.draw(&Gaussian2::iso(m, OUTLIER_SD), OUTLIER_PER, c, rng);
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in &b.rows {
        for j in 0..2 {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    for _ in 0..OUTLIER_NOISE {
        let p = [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])];
        let nearest = (0..3)
            .min_by(|&a, &c| dist2(p, OUTLIER_MEANS[a]).total_cmp(&dist2(p, OUTLIER_MEANS[c])))
            .expect("three means");
        b.push(p, nearest);
    }
    b.finish("outlier")
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Four Gaussians of which two overlap: the likelihood supports four
/// components while the classification view sees three.
const FIG1_SIZES: [usize; 4] = [150, 150, 150, 150];
const FIG1_MEANS: [[f64; 2]; 4] = [[0.0, 0.0], [8.0, 0.0], [4.0, 7.0], [7.2, 7.0]];
const FIG1_SD: f64 = 1.0;

fn fig1(rng: &mut ChaCha8Rng) -> Simulated {
    let mut b = Builder::default();
    for (c, (&n, &m)) in FIG1_SIZES.iter().zip(&FIG1_MEANS).enumerate() {
        b.draw(&Gaussian2::iso(m, FIG1_SD), n, c, rng);
    }
    let intuitive = b.labels.iter().map(|&l| l.min(2)).collect();
    Simulated { data: b.finish("fig1"), intuitive: Some(intuitive) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn distinct(l: &[usize]) -> usize {
        l.iter().collect::<BTreeSet<_>>().len()
    }

    #[test]
    fn shapes_and_label_counts() {
        let g = gen_gu6(1);
        assert_eq!(g.x.shape(), (1150, 2));
        assert_eq!(distinct(g.true_labels.as_ref().unwrap()), 6);
        let c = gen_cross(1);
        assert_eq!(distinct(c.true_labels.as_ref().unwrap()), 4);
        let m = gen_mixg(1);
        assert_eq!(m.data.n(), 210);
        assert_eq!(distinct(m.data.true_labels.as_ref().unwrap()), 4);
        assert_eq!(distinct(m.intuitive.as_ref().unwrap()), 3);
        let o = gen_outlier(1);
        assert_eq!(o.n(), 350);
        assert_eq!(distinct(o.true_labels.as_ref().unwrap()), 3);
    }

    #[test]
    fn gu6_shares_are_balanced() {
        let g = gen_gu6(2);
        let mut counts = [0usize; 6];
        for &l in g.true_labels.as_ref().unwrap() {
            counts[l] += 1;
        }
        // Binomial(1150, 1/6) sd is about 12.6.
        assert!(counts.iter().all(|&c| (c as f64 - 1150.0 / 6.0).abs() < 60.0));
    }

    #[test]
    fn generators_are_deterministic() {
        for family in [Family::Gu6, Family::Cross, Family::Mixg, Family::Outlier, Family::Fig1] {
            let a = SimSpec { family, seed: 5, replicate: 2 }.generate();
            let b = SimSpec { family, seed: 5, replicate: 2 }.generate();
            let c = SimSpec { family, seed: 5, replicate: 3 }.generate();
            assert_eq!(a, b);
            assert_ne!(a.data.x, c.data.x);
        }
    }

    #[test]
    fn rotated_covariance_is_exact() {
        let g = Gaussian2::rotated([0.0, 0.0], 3.0, 0.5, 0.3);
        let l = DMatrix::from_row_slice(2, 2, &[g.chol[0], 0.0, g.chol[1], g.chol[2]]);
        let cov = &l * l.transpose();
        let ev = cov.symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        assert!((hi - 9.0).abs() < 1e-12 && (lo - 0.25).abs() < 1e-12);
    }
}
