//! U(1)-symmetric matrix product state Born machines for binary optimisation
//! under integer equality constraints `A·x = b`.

pub mod bitstring;
pub mod block;
pub mod builder;
pub mod charge;
pub mod constraints;
mod dense;
pub mod error;
pub mod geo;
pub mod mps;
pub mod oracle;
pub mod sample;
pub mod train;

pub use bitstring::Bitstring;
pub use block::{BlockTensor, Truncation};
pub use charge::{Charge, ChargedIndex, Direction};
pub use constraints::{ConstraintSystem, SeedSet};
pub use error::{Error, Result};
pub use mps::SymMps;
