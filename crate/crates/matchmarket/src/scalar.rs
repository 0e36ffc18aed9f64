//! Scalar abstraction for the game arithmetic: `f32` or `f64`.
//!
//! The market model, equilibrium certificates, and the monotone-game
//! machinery are generic over [`Real`]; the crate root exposes `f64`
//! aliases which the learners and the simulator build on.

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + core::iter::Sum + core::fmt::Debug + core::fmt::Display + 'static
{
    /// Absolute tolerance for simplex membership and equality checks.
    ///
    /// All game quantities are O(1), so a fixed absolute tolerance near the
    /// scalar's precision floor is appropriate.
    fn simplex_tol() -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("finite f64 converts to any Real")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("small usize converts to any Real")
    }
}

impl Real for f32 {
    fn simplex_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn simplex_tol() -> Self {
        1e-12
    }
}
