//! Soliton hierarchies attached to compact matrix Lie algebras, the
//! development map onto Adjoint orbits, and the induced curve flows.

pub mod devmap;
pub mod error;
pub mod fixtures;
pub mod gridcalc;
pub mod hierarchy;
pub mod liecore;
pub mod solitons;
pub mod symspace;
pub mod verify;

pub use error::{LieError, Result};
