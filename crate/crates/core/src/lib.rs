//! Graph transformers with a spectral auxiliary token.
//!
//! The pipeline: a molecular-style graph is coarse-grained into a clique
//! tree, Laplacian spectra of both the graph and the tree are computed, the
//! eigenvalues feed a kernel-attention block that initializes an auxiliary
//! transformer token, and a message-passing + transformer stack predicts
//! graph-level targets. Everything runs on a self-contained reverse-mode
//! autodiff tape.
//!
//! Numeric modules are generic over the [`scalar::Scalar`] type; the crate
//! root exports the `f64` aliases the model pipeline uses.

pub mod checkpoint;
pub mod coarse;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::Graph;

/// Default scalar type of the model pipeline.
pub type Scalar64 = f64;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type SymmetricMatrix = graph::SymmetricMatrix<f64>;
pub type Spectrum = spectral::Spectrum<f64>;
pub type SpectrumVector = spectral::SpectrumVector<f64>;
pub type SpectralTokenParams = spectral::SpectralTokenParams<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
