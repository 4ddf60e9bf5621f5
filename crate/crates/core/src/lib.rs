//! Chance-constrained trajectory optimization (CCTO).
//!
//! iLQG with time-variant linear-Gaussian dynamics fitted from sampled
//! rollouts, linear state/action limits treated as chance constraints and
//! relaxed with Boole's inequality, and a dense QP over the stacked
//! feedforward sequence that keeps the nominal trajectory inside the
//! feasible region with high probability.
//!
//! Module map:
//!
//! - [`dynamics_fit`]: mean trajectory and per-step ridge regression.
//! - [`ilqg`]: quadratic reward, backward pass, sampled forward pass.
//! - [`chance`]: half-plane constraints, risk allocation, margins, `erf_inv`.
//! - [`augmented`]: stacked closed-loop system, belief, QP objective and rows.
//! - [`qp`]: dense active-set QP solver with an L1 slack fallback.
//! - [`env`]: cart-pole, Furuta pendulum and linear-Gaussian plants.
//! - [`optimizer`]: the CCTO outer loop and the plain iLQG baseline.
//! - [`harness`]: experiment configuration, studies, reports, self-test.

pub mod augmented;
pub mod chance;
pub mod dynamics_fit;
pub mod env;
pub mod error;
pub mod harness;
pub mod ilqg;
pub mod linalg;
pub mod optimizer;
mod par;
pub mod qp;
pub mod rng;
pub mod trajectory;

pub use error::{CctoError, Result};
pub use trajectory::{Rollout, TrajectoryBatch};
