//! Kernel featurization of Laplacian eigenvalues and the spectral token:
//! eigenvalues pass through a bank of kernels with learnable time constants,
//! a softmax attention scores each eigenvalue, and the attention-weighted
//! value embeddings initialize the auxiliary token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::eigen::Spectrum;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{NodeId, Tape};

/// Kernel applied to scaled eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    MexicanHat,
    Heat,
    Gaussian,
}

/// Value of the Mexican-hat kernel at zero argument: `2 / (sqrt(3) pi^(1/4))`.
pub fn mexican_hat_peak<S: Scalar>() -> S {
    let c = 2.0 / (3.0f64.sqrt() * std::f64::consts::PI.powf(0.25));
    S::from_f64_lossy(c)
}

/// Evaluate one kernel at `x = theta * lambda`.
pub fn spectral_kernel<S: Scalar>(lambda: S, theta: S, kind: KernelKind) -> S {
    let x = theta * lambda;
    match kind {
        KernelKind::MexicanHat => {
            let x2 = x * x;
            mexican_hat_peak::<S>() * (S::one() - x2) * (-x2 / S::from_f64_lossy(2.0)).exp()
        }
        KernelKind::Heat => (-x).exp(),
        KernelKind::Gaussian => (-(x * x) / S::from_f64_lossy(2.0)).exp(),
    }
}

/// Retained eigenvalues, tree segment first then graph segment, each
/// truncated to its count or zero-padded when the spectrum is smaller.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumVector<S> {
    values: Vec<S>,
    k_tree: usize,
    k_graph: usize,
}

impl<S: Scalar> SpectrumVector<S> {
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn k_tree(&self) -> usize {
        self.k_tree
    }

    pub fn k_graph(&self) -> usize {
        self.k_graph
    }
}

/// Concatenate the leading `k_tree` tree eigenvalues with the leading
/// `k_graph` graph eigenvalues. A `k_tree` of zero drops the tree segment
/// (the node-token model variant uses the graph spectrum alone).
pub fn build_spectrum_vector<S: Scalar>(
    spec_tree: &Spectrum<S>,
    spec_graph: &Spectrum<S>,
    k_tree: usize,
    k_graph: usize,
) -> SpectrumVector<S> {
    let mut values = Vec::with_capacity(k_tree + k_graph);
    values.extend(truncate_or_pad(spec_tree.eigenvalues(), k_tree));
    values.extend(truncate_or_pad(spec_graph.eigenvalues(), k_graph));
    SpectrumVector {
        values,
        k_tree,
        k_graph,
    }
}

fn truncate_or_pad<S: Scalar>(values: &[S], k: usize) -> Vec<S> {
    let mut out: Vec<S> = values.iter().copied().take(k).collect();
    out.resize(k, S::zero());
    out
}

/// Learnable weights of the spectral token: a vector of kernel time
/// constants, the attention logit head, and the value-embedding head.
#[derive(Debug, Clone)]
pub struct SpectralTokenParams<S> {
    /// Time constants, length `t`.
    pub thetas: Vec<S>,
    /// Logit head mapping kernel features to attention scores, `t x 1`.
    pub w1: Vec<S>,
    /// Value-embedding head, `t x d`.
    pub w2: Vec<S>,
    pub d: usize,
    pub kernel: KernelKind,
}

impl<S: Scalar> SpectralTokenParams<S> {
    /// Seeded initialization: time constants log-uniform in `[0.5, 4]`,
    /// both heads uniform in `+-1/sqrt(t)`.
    pub fn init(t: usize, d: usize, kernel: KernelKind, rng: &mut impl Rng) -> Self {
        let lo = 0.5f64.ln();
        let hi = 4.0f64.ln();
        let thetas = (0..t)
            .map(|_| S::from_f64_lossy(rng.random_range(lo..hi).exp()))
            .collect();
        let bound = 1.0 / (t as f64).sqrt();
        let mut uniform = |len: usize| -> Vec<S> {
            (0..len)
                .map(|_| S::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect()
        };
        let w1 = uniform(t);
        let w2 = uniform(t * d);
        SpectralTokenParams {
            thetas,
            w1,
            w2,
            d,
            kernel,
        }
    }

    pub fn t(&self) -> usize {
        self.thetas.len()
    }
}

/// Kernel feature matrix `[k x t]` on the tape: entry `(i, j)` is the kernel
/// at `thetas[j] * lambda[i]`, differentiable in the time constants.
pub fn kernel_features<S: Scalar>(
    tape: &mut Tape<S>,
    sv: &SpectrumVector<S>,
    thetas: NodeId,
    kind: KernelKind,
) -> Result<NodeId> {
    let k = sv.len();
    let t = tape.tensor(thetas).numel();
    let lam_col = tape.constant(sv.values().to_vec(), vec![k, 1])?;
    let theta_row = tape.reshape(thetas, vec![1, t])?;
    let x = tape.matmul(lam_col, theta_row)?;
    let half_neg = S::from_f64_lossy(-0.5);
    match kind {
        KernelKind::MexicanHat => {
            let x2 = tape.mul(x, x)?;
            let envelope = {
                let scaled = tape.scale(x2, half_neg);
                tape.exp(scaled)
            };
            let ones = tape.constant(vec![S::one(); k * t], vec![k, t])?;
            let neg_x2 = tape.scale(x2, -S::one());
            let poly = tape.add(ones, neg_x2)?;
            let product = tape.mul(poly, envelope)?;
            Ok(tape.scale(product, mexican_hat_peak::<S>()))
        }
        KernelKind::Heat => {
            let neg = tape.scale(x, -S::one());
            Ok(tape.exp(neg))
        }
        KernelKind::Gaussian => {
            let x2 = tape.mul(x, x)?;
            let scaled = tape.scale(x2, half_neg);
            Ok(tape.exp(scaled))
        }
    }
}

/// Attention scores over the eigenvalue positions: softmax of the logit
/// head applied to the kernel features. Returns a `[k x 1]` column.
pub fn spectral_attention<S: Scalar>(
    tape: &mut Tape<S>,
    features: NodeId,
    w1: NodeId,
) -> Result<NodeId> {
    let logits = tape.matmul(features, w1)?;
    tape.softmax(logits, 0)
}

/// The spectral token `[1 x d]`: value embeddings of every eigenvalue,
/// pooled by the attention scores.
pub fn init_spectral_token<S: Scalar>(
    tape: &mut Tape<S>,
    sv: &SpectrumVector<S>,
    thetas: NodeId,
    w1: NodeId,
    w2: NodeId,
    kind: KernelKind,
) -> Result<NodeId> {
    let features = kernel_features(tape, sv, thetas, kind)?;
    let scores = spectral_attention(tape, features, w1)?;
    let values = tape.matmul(features, w2)?;
    let scores_row = tape.transpose(scores)?;
    tape.matmul(scores_row, values)
}

/// Non-tape convenience: evaluate the token for fixed parameters.
pub fn spectral_token_vector<S: Scalar>(
    sv: &SpectrumVector<S>,
    params: &SpectralTokenParams<S>,
) -> Result<Vec<S>> {
    let t = params.t();
    let mut tape = Tape::new();
    let thetas = tape.constant(params.thetas.clone(), vec![t])?;
    let w1 = tape.constant(params.w1.clone(), vec![t, 1])?;
    let w2 = tape.constant(params.w2.clone(), vec![t, params.d])?;
    let z0 = init_spectral_token(&mut tape, sv, thetas, w1, w2, params.kernel)?;
    Ok(tape.data(z0).to_vec())
}
