//! Regime-switching Lévy market models, f-divergence minimal martingale
//! measures and the optimal HARA strategies they induce, with Monte Carlo
//! verification of the analytic identities.

pub mod chain;
pub mod cli;
pub mod levy;
pub mod mc;
pub mod mmm;
pub mod numerics;
pub mod pathsim;
pub mod rng;
pub mod strategies;
pub mod verify;
