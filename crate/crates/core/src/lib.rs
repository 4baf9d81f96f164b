//! Exact eigenstates and qubit dynamics of the quantum Rabi model.

pub mod cli;
pub mod dynamics;
pub mod eigenbasis;
pub mod error;
pub mod numerics;
pub mod oracle;
pub mod spectrum;

pub use eigenbasis::{EigenstateRep, Representation, TruncationReport};
pub use error::{Error, Result};
pub use numerics::PrecisionContext;
pub use spectrum::{find_spectrum, g_function, k_sequence, ModelParams, Parity, SpectralPoint, Spectrum};
