//! Binary matrix completion from positive, negative and unlabeled entries.

pub mod data;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod observation;
pub mod qpf;
pub mod risk;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::{
    DenseMatrix, Label, SamplingDistribution, Sign, SignMatrix, TernaryObservation,
};
pub use qpf::Qpf;
pub use risk::{EntryLossKind, Risk, RiskWeights};
pub use solver::{solve, FactorPair, SolveReport, SolverConfig};
