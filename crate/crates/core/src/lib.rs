//! Steady subsonic compressible potential flow through infinitely long
//! nozzles with an obstacle inside.
//!
//! The crate discretizes the truncated variational problem for the velocity
//! potential on a structured hexahedral mesh, minimizes the convex energy by
//! damped Newton with conjugate-gradient inner solves, and verifies the
//! expected qualitative behavior of the computed flows: flux conservation,
//! the subsonic bound, and far-field convergence rates toward the uniform
//! state.

pub mod assembly;
pub mod diagnostics;
pub mod gas;
pub mod geometry;
pub mod mesh;
pub mod solver;
