//! Exact-arithmetic laboratory for extremal GCD/LCM problems on integer sets.
//!
//! Sets live in dyadic windows `[X, 2X]`. The crate counts tuples with a
//! large gcd or a small lcm exactly (fast Möbius-inversion counters checked
//! against brute force), builds the extremal constructions, evaluates the
//! upper bounds, and probes the concentration and large-sieve machinery.

pub mod error;
pub mod exact;
pub mod kernel;
pub mod set_model;
pub mod counting;
pub mod constructions;
pub mod bounds;
pub mod concentration;
pub mod sieve;
pub mod io;
pub mod experiments;

pub use error::{Error, Result};
pub use exact::ExactInt;
