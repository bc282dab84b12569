//! Model documents and command implementations for the `resil` checker.

pub mod commands;
pub mod compile;
pub mod model;
