//! Nonparametric different-feature selection.
//!
//! Given samples from two distributions P and Q over the same features, find
//! the features whose removal makes P and Q agree. Pairwise two-dimensional
//! differences are summarized by a matrix of projected Kolmogorov-Smirnov
//! statistics, and the selection is a sparsest-k-subgraph problem over it.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod ks;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod solvers;
pub mod synth;
pub mod theory;

pub use data::{Dataset, Sample1D};
pub use error::{Error, Result};
pub use eval::auroc;
pub use matrix::{build_ks_matrix, AnglePolicy, EmpiricalKsMatrix};
pub use nalgebra;
pub use pipeline::{select, Method, SelectOptions, Selection};
pub use synth::{GroundTruth, PerturbationKind, PerturbationSpec};
