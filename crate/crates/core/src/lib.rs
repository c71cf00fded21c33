//! Game-theoretically optimal deceptive signaling for Gaussian information.
//!
//! A sender committed to a signaling policy discloses a Gauss-Markov state to a
//! receiver whose quadratic objective is misaligned with the sender's. The
//! sender's problem reduces to a linear semidefinite program over the
//! covariances of the receiver's posterior estimate, chained across stages:
//!
//! ```text
//! minimize   sum_k Tr{H_k V_k}
//! subject to Sigma_k >= H_k >= A H_{k-1} A'
//! ```
//!
//! From any feasible plan `H_{1:k}` a linear-plus-noise signaling rule is
//! synthesized that attains exactly those posterior covariances. Variants
//! cover LQG control games (via a Riccati reduction to communication form),
//! unknown receiver types (worst-case over a finite type set), and noisy
//! sender measurements (lifting to the measurement history). A Monte-Carlo
//! simulator verifies every analytic prediction.

pub mod comm;
pub mod control;
pub mod error;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod posterior;
pub mod robust;
pub mod sdp;
pub mod sim;

pub use error::{Error, Result};
pub use model::{
    ChainModel, ControlledModel, GaussMarkovModel, ObjectiveKind, PosteriorPlan,
    QuadraticObjective,
};
pub use posterior::SignalingRule;

/// Library version, embedded in machine reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
