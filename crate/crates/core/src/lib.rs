//! Turtle-shell clustering: discriminative clustering by maximizing a
//! regularized mutual-information objective whose conditional model is a
//! mixture of Gaussian/uniform mixtures, with automatic order selection.
//!
//! The usual entry point is [`fit`], which runs graph-based initialization,
//! bound-constrained quasi-Newton estimation over a penalty grid, small-cluster
//! removal and entropy-guided merging, and picks the result with the best
//! average silhouette width.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod data;
pub mod density;
pub mod error;
pub mod export;
pub mod fit;
pub mod gmm;
pub mod graph;
pub mod init;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod select;
pub mod sim;

pub use density::{GaussianComponent, UniformComponent};
pub use error::{ClusterError, Result};
pub use fit::{fit, FitConfig, FitResult};
pub use model::{ClusterParams, DataRange, Hyper, Model};
pub use objective::{Problem, Responsibilities};
pub use optim::{Bounds, OptTrace, OptimizerConfig};
