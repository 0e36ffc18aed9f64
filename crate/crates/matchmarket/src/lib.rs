//! Two-sided matching markets as a continuous-action game, with
//! decentralized, uncoordinated learners that drive the market to a stable
//! matching.
//!
//! The crate has three layers:
//!
//! - **Game math** ([`market`], [`equilibrium`], [`monotone`]): preferences,
//!   payoffs and gradients, stability predicates, deferred acceptance, the
//!   ordinal potential, equilibrium certificates with brute-force oracles,
//!   decentralized rounding of mixed equilibria, and the regularized
//!   waiting-list game with its monotone structure. Generic over the scalar
//!   type via [`scalar::Real`] (`f32` or `f64`).
//! - **Learners** ([`exp`], [`baseline`]): the exponential-weight learner
//!   with its stepsize/mixing schedules and importance-weighted estimates,
//!   the episodic sample-experimentation learner, the UCB gap oracle, and
//!   complete-information best-response dynamics.
//! - **Simulation** ([`sim`]): the round process (proposals, acceptance by
//!   rank, rewards, feedback isolation), market generators, metrics, seeded
//!   replications, CSV/JSON output, and the local-convergence probe.
//!
//! The aliases at the crate root fix the scalar to `f64`, which is what the
//! learners and the simulator use.

pub mod baseline;
pub mod equilibrium;
pub mod exp;
pub mod feedback;
pub mod market;
pub mod monotone;
pub mod scalar;
pub mod sim;

/// `f64` market instance.
pub type Market = market::Market<f64>;
/// `f64` mixed strategy profile.
pub type MixedProfile = market::MixedProfile<f64>;
/// `f64` cardinal encoding of women's rankings.
pub type WomanCardinal = market::WomanCardinal<f64>;
/// `f64` equilibrium certificate.
pub type NeCertificate = equilibrium::NeCertificate<f64>;
/// `f64` regularized waiting-list game.
pub type RegularizedGame = monotone::RegularizedGame<f64>;
/// `f64` per-woman quadratic form.
pub type QMatrix = monotone::QMatrix<f64>;

pub use feedback::ManFeedback;
pub use market::{Matching, PureProfile};
