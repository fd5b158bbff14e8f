//! Floquet-engineered chiral state transfer in a qubit, resonator and
//! two-magnon hybrid system, with NOON-state generation on top.
//!
//! Units: energies and rates in multiples of the qubit-magnon coupling `g`,
//! times in `1/g`.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod floquet;
pub mod operators;
pub mod protocol;

pub use error::{Error, Result};
