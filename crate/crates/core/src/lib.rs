//! Bayesian optimization of long-term outcomes from short- and long-running
//! online experiments.
//!
//! The crate provides exact GP regression ([`gp`]), an ICM multi-task GP
//! ([`multitask`]), a time-of-day aware GP ([`temporal`]), the target-aware
//! ensemble GP ([`tagp`]), a log-space Monte-Carlo noisy-EI acquisition
//! ([`acquisition`]), synthetic benchmark problems ([`benchmarks`]) and the
//! parallel long-run/short-run experiment simulator ([`harness`]).

pub mod acquisition;
pub mod benchmarks;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod multitask;
pub mod optim;
pub mod qmc;
pub mod report;
pub mod seeds;
pub mod surrogate;
pub mod tagp;
pub mod temporal;

pub use error::{Error, Result};
