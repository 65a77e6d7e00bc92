//! Plug-and-play image restoration with kernel denoisers, solved as one
//! linear system.
//!
//! A kernel denoiser `W = D⁻¹K` built from a guide image is the scaled
//! proximal operator of a convex quadratic regularizer. Minimizing the data
//! loss plus that regularizer therefore reduces to the linear system
//! `C z = Fᵀ y` with `C = FᵀF W + ρ D (I − W)`, whose solution gives the
//! restored image `W z`. This crate provides the matrix-free operators,
//! Krylov and quasi-Newton solvers for that system, the iterative PnP
//! baselines that minimize the same objective, and a dense oracle that
//! checks the underlying identities on small instances.

pub mod config;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod harness;
pub mod image;
pub mod io;
pub mod metrics;
pub mod operator;
pub mod oracle;
pub mod pipeline;
pub mod pnp;
pub mod solvers;
pub mod system;
pub mod vecops;

pub use denoiser::{KernelConfig, KernelDenoiser, KernelVariant, SpatialProfile};
pub use error::{Error, Result};
pub use forward::{Boundary, ForwardModel};
pub use image::{Image, PixelIndexMap};
pub use operator::{LinearOperator, WorkCount, WorkCounter};
pub use solvers::{SolveReport, SolverConfig, SolverMethod};
pub use system::{SystemForm, SystemOperator};
