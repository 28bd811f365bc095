//! Density steering for linear time-varying systems.
//!
//! * [`linsys`]: transition matrices, controllability Gramians and
//!   minimum-energy point-to-point control.
//! * [`gauss_bridge`]: closed-form Gaussian Schrödinger bridges and their
//!   zero-noise optimal-transport limit.
//! * [`omt`]: optimal mass transport with prior dynamics for general 1-D
//!   marginals via coordinate reduction.
//! * [`sinkhorn`]: discrete Schrödinger bridges for the linear-system kernel
//!   solved by log-domain Fortet/Sinkhorn iteration.
//! * [`sampler`]: Euler–Maruyama path ensembles.
//! * [`io`]: CSV emitters shared by the command-line front end.

pub mod error;
pub mod gauss_bridge;
pub mod io;
pub mod linalg;
pub mod linsys;
pub mod omt;
pub mod sampler;
pub mod sinkhorn;

pub use error::{Error, Result};

pub use gauss_bridge::{BridgePolicy, GaussianState, MomentFlow};
pub use linsys::{LinearSystem, MatrixFn, SystemSpec, TransitionTable};
pub use omt::{DiscreteCoupling, GridDensity, TransportMap1D};
pub use sinkhorn::{KernelMatrix, PotentialPair};
pub use sampler::PathEnsemble;


