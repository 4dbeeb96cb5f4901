//! Laplacian spectra and the spectral auxiliary token.

mod eigen;
mod token;

pub use eigen::{sym_eigh, Spectrum, DEFAULT_EIGH_TOL};
pub use token::{
    build_spectrum_vector, init_spectral_token, kernel_features, mexican_hat_peak,
    spectral_attention, spectral_kernel, spectral_token_vector, KernelKind, SpectralTokenParams,
    SpectrumVector,
};
