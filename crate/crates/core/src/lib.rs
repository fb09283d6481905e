//! Constrained online control of linear dynamical systems.
//!
//! The crate simulates discrete-time linear plants under adversarial
//! disturbances, runs disturbance-action controllers on top of a strongly
//! stable base gain, and tunes the controller weights online with constrained
//! convex solvers that trade cumulative cost against adversarial and static
//! constraint violations. A metrics layer provides regret/violation
//! accounting against a brute-force offline linear baseline.
//!
//! All numeric code is generic over the scalar type (see [`scalar::Real`]);
//! the aliases at the crate root pin the common `f64` instantiations.

pub mod dac;
pub mod linalg;
pub mod linsys;
pub mod scalar;

pub use scalar::Real;

/// `f64` plant.
pub type LinearSystem64 = linsys::LinearSystem<f64>;
