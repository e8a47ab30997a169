//! Surrogate modelling of a six-species gene-regulatory ODE circuit.
//!
//! The pipeline generates forward-Euler ground truth over randomized
//! parameters, pairs downsampled states with the state `N` samples ahead,
//! trains a single-cell LSTM with a linear read-out to predict the later
//! state, and times that prediction against stepping the solver.

pub mod activation;
pub mod bench;
pub mod circuit;
pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod euler;
pub mod lstm;
pub mod optim;
pub mod pipeline;
pub mod plotdata;
pub mod seed;
pub mod trainer;

pub use circuit::{rhs, ParameterSet, StateVector};
pub use error::{Error, Result};
pub use euler::{advance, integrate, SolverConfig, Trajectory};
pub use lstm::{CellState, LstmDims, LstmModel};
