//! Monte Carlo engine for globally perturbed random walks
//! `T_n = S_{n-1} + eta_n`, where `S` is a random walk with steps `xi_k`
//! and `(xi_n, eta_n)` are i.i.d. pairs with arbitrary dependence inside a
//! pair.
//!
//! * [`increments`]: marginal laws, joint models, tail classes and the
//!   closed forms derived from them.
//! * [`walk`]: first passage time, number of visits and last exit time at a
//!   grid of levels, with certified stopping.
//! * [`limit`]: Poisson random measures, record processes and the limit
//!   laws of the rescaled functionals.
//! * [`verify`]: KS tests, LLN diagnostics and Gaussian fdd checks.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod increments;
pub mod limit;
pub mod rng;
pub mod special;
pub mod verify;
pub mod walk;

pub use error::{EngineError, GridError, LimitError, ModelError, PolicyError, QuadratureError, VerifyError};
pub use increments::{
    DependenceSpec, HypothesisFlags, JointIncrementModel, MarginalSpec, Moment, TailClass, TailDescriptor, TailSide,
};
pub use limit::{AtomSet, LimitLaw};
pub use rng::{Stream, UniformSource};
pub use verify::{FddReport, KsReport, LlnMode, LlnReport, SampleMatrix, SandwichAudit};
pub use walk::{HorizonPolicy, LevelGrid, PathFunctionals, PathSimulator};
