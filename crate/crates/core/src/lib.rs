//! Simulation and verification toolkit for supercritical superprocesses
//! decomposed along their skeleton.
//!
//! The crate is layered bottom-up:
//!
//! * [`domain`], [`spatial`], [`motion`]: the state space, closed-form
//!   coefficient functions and the diffusion with its finite-difference
//!   generator;
//! * [`mechanism`]: branching mechanisms, the martingale function `w`, the
//!   tilted mechanism and the skeleton's offspring law;
//! * [`solver`]: the semilinear evolution equations behind every Laplace
//!   functional;
//! * [`engine`]: Monte Carlo for the superprocess, the skeleton and the
//!   dressed skeleton;
//! * [`verify`]: estimators and hypothesis tests tying simulation to the
//!   solver;
//! * [`config`], [`commands`]: run configuration and the CLI commands.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod domain;
pub mod engine;
pub mod error;
pub mod measure;
pub mod mechanism;
pub mod motion;
pub mod solver;
pub mod spatial;
pub mod tridiag;
pub mod verify;

pub use domain::{DomainMode, DomainSpec, Grid};
pub use error::{Error, Result};
pub use measure::AtomicMeasure;
pub use mechanism::{
    build_offspring_law, find_w_star, tilt, validate_w, BranchingMechanism, JumpAtom,
    MartingaleFunction, OffspringLaw,
};
pub use motion::Motion;
pub use spatial::{FnSpec, SpatialFn};
