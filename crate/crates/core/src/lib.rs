//! H-coloring Markov random fields: sampling, exact enumeration and
//! maximum pseudo-likelihood estimation from a single configuration.

pub mod eigen;
pub mod experiments;
pub mod error;
pub mod graph;
pub mod model;
pub mod parallel;
pub mod pseudolikelihood;
pub mod sampler;

pub use error::{Error, Result};
pub use graph::{generate, Graph, GraphKind};
pub use model::{Configuration, ConstraintGraph, Model, ModelParams, Preset};
pub use parallel::Execution;
pub use pseudolikelihood::{mpl_fit, mpl_hardcore, Degeneracy, EstimateReport, FitOptions, PLState};
pub use sampler::{enumerate_exact, find_valid_configuration, sample, Chain, ExactSummary};
