//! Quasistationary distributions and the ergodic control problems attached
//! to them, for uniformly elliptic diffusions killed on leaving a box.
//!
//! The pipeline is:
//!
//! 1. [`geometry`]: the box domain and its uniform tensor grid.
//! 2. [`coefficients`]: drift/diffusion models and the derived adjoint
//!    coefficients `beta`, `c` and their density-weighted versions.
//! 3. [`discretize`]: finite-difference matrices for the generator and the
//!    weighted adjoint with Dirichlet rows eliminated.
//! 4. [`eigen`]: principal Dirichlet eigenpairs by inverse iteration and the
//!    normalized quasistationary solution.
//! 5. [`hjb`]: log-transformed potentials, HJB residuals and the optimal
//!    feedback drifts of the two controlled processes.
//! 6. [`simulate`]: Euler-Maruyama for the killed and controlled processes.
//! 7. [`estimate`]: Monte Carlo estimators confronted with the deterministic
//!    predictions.

pub mod coefficients;
pub mod discretize;
pub mod eigen;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod hjb;
pub mod linalg;
pub mod simulate;

pub use error::{Error, Result};
pub use geometry::{BoxDomain, Grid, Matrix, Point, MAX_DIM};
