//! Optimal distributions of residents and services in an urban region.
//!
//! Residents are an absolutely continuous probability μ = u·ℒⁿ, services an
//! atomic probability ν = Σ aᵢ δ_{xᵢ}. The crate minimises
//!
//! ```text
//! T_p(μ, ν) + ∫ f(u) dx + Σ g(aᵢ)
//! ```
//!
//! where T_p is the Monge–Kantorovich cost for |x − y|^p, f a convex penalty on
//! crowding and g a subadditive cost of running a service pole.
//!
//! * [`transport`]: exact discrete optimal transport (network simplex),
//!   potentials and c-transforms.
//! * [`semidiscrete`]: the resident distribution for fixed services, built from
//!   dual weights so that u = k(maxᵢ(cᵢ − |x − xᵢ|^p) ∨ 0).
//! * [`subcity`]: the energy E(m) of one service pole together with its
//!   ball-shaped catchment, and its derivatives.
//! * [`planner`]: number and sizes of poles in ℝⁿ, and an alternating
//!   heuristic for bounded boxes.
//! * [`oracle`]: brute-force ground truth on tiny grids.
//! * [`cli`]: configuration and batch runs behind the `planner` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod functionals;
pub mod measures;
pub mod oracle;
pub mod par;
pub mod planner;
pub mod quadrature;
pub mod semidiscrete;
pub mod subcity;
pub mod transport;

pub use error::{Error, Result};
pub use functionals::{ConcentrationFamily, FunctionFamily};
pub use measures::{Atom, AtomicMeasure, Domain, Grid, GridDensity, WeightedPointCloud};
