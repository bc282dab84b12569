//! Resilience checking for strongly well-structured transition systems.
//!
//! States live in a well-quasi-order; upward-closed sets are kept as finite
//! bases and saturated backwards until they cover the reachable bad states.

pub mod constraints;
pub mod engine;
pub mod gts;
pub mod joint;
pub mod order;
pub mod petri;
