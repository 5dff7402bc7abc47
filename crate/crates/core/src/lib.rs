//! Explicit-rate flow control for ABR virtual circuits: the ERICA switch
//! algorithm family, a max-min fair allocation oracle, and a deterministic
//! cell-level simulator to check one against the other.
//!
//! The allocation math in [`ratealloc`] and [`maxmin`] is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix it to `f64`, which is
//! what the simulator uses.

pub mod maxmin;
pub mod metrics;
pub mod ratealloc;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use scalar::Scalar;

pub type Measurement = ratealloc::IntervalMeasurement<f64>;
pub type Observation = ratealloc::VcObservation<f64>;
pub type Allocator = ratealloc::AllocatorState<f64>;
pub type Decision = ratealloc::ErDecision<f64>;
pub type FairShareFixedPoint = ratealloc::FixedPoint<f64>;
pub type Problem = maxmin::AllocationProblem<f64>;
pub type Allocation = maxmin::AllocationResult<f64>;
