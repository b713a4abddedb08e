//! Data-driven absolute stabilization of Lurie systems.
//!
//! Controllers are synthesized from a single finite experiment (input, state,
//! successor-or-derivative and nonlinearity samples) by solving linear matrix
//! inequality feasibility programs. Every certificate can be re-checked from
//! data alone with the [`verify`] module.

pub mod constraints;
pub mod error;
pub mod io;
pub mod matcore;
pub mod plant;
pub mod scenarios;
pub mod sdpcore;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
