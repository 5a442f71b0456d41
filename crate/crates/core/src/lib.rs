//! Fractional-moment localization laboratory for discretized random
//! Schrödinger operators.

pub mod birman_schwinger;
pub mod correlators;
pub mod criterion;
pub mod error;
pub mod harness;
pub mod hilbert;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod quadrature;
pub mod resolvent;
pub mod rng;
pub mod spectra;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use model::{
    blow_up_decompose, build_hamiltonian, sample_disorder, Background, BlowUpDecomposition, Boundary, BumpProfile,
    Distribution, Gauge, Geometry, Mode, Model, ModelSpec, OperatorHandle, Realization, Site,
};
pub use num_complex::Complex64;
