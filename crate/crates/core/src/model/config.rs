//! Model hyperparameters. Defaults mirror the small-molecule regression
//! recipe (see the config reference in the README).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::KernelKind;

/// Node attribute vocabulary size understood by the embedding tables.
pub const NODE_VOCAB: usize = 8;
/// Edge attribute vocabulary size.
pub const EDGE_VOCAB: usize = 4;
/// Clique attribute vocabulary size; larger ring codes clamp to the top bucket.
pub const CLIQUE_VOCAB: usize = 16;
/// Degrees clamp to this bucket for the degree positional embedding.
pub const DEGREE_CLAMP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Coarse-grained clique-tree tokens with expand/compress message passing.
    SubformerSpec,
    /// Graph-node tokens, message passing only.
    GraphtransSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpType {
    Gine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpeMode {
    /// One fully-connected layer per eigenvector branch.
    Linear,
    /// Sign-invariant encoder: rho(phi(v) + phi(-v)).
    Signnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub mp_layers: usize,
    pub mp_hidden: usize,
    pub mp_type: MpType,
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub activation: Activation,
    pub use_epe: bool,
    pub epe_mode: EpeMode,
    pub pe_dim: usize,
    pub k_tree: usize,
    pub k_graph: usize,
    pub t_kernels: usize,
    pub kernel: KernelKind,
    pub readout_hidden: usize,
    pub n_tasks: usize,
    pub task_kind: TaskKind,
    /// Replace the spectral token with a frozen random vector (ablation).
    pub ablate_spectral_token: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SubformerSpec,
            mp_layers: 2,
            mp_hidden: 64,
            mp_type: MpType::Gine,
            d_model: 128,
            ffn_hidden: 128,
            n_layers: 3,
            n_heads: 8,
            dropout: 0.1,
            activation: Activation::Relu,
            use_epe: true,
            epe_mode: EpeMode::Linear,
            pe_dim: 10,
            k_tree: 16,
            k_graph: 16,
            t_kernels: 16,
            kernel: KernelKind::MexicanHat,
            readout_hidden: 192,
            n_tasks: 1,
            task_kind: TaskKind::Regression,
            ablate_spectral_token: false,
        }
    }
}

impl ModelConfig {
    /// Eigenvalues retained for the tree segment; the node-token variant
    /// uses the graph spectrum alone.
    pub fn effective_k_tree(&self) -> usize {
        match self.variant {
            Variant::SubformerSpec => self.k_tree,
            Variant::GraphtransSpec => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("model.{}: {}", key, msg)));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(
                "d_model",
                format!("{} not divisible by n_heads {}", self.d_model, self.n_heads),
            );
        }
        if self.n_heads == 0 {
            return fail("n_heads", "must be positive".to_string());
        }
        if self.mp_hidden == 0 {
            return fail("mp_hidden", "must be positive".to_string());
        }
        if self.k_graph == 0 {
            return fail("k_graph", "must be at least 1".to_string());
        }
        if self.variant == Variant::SubformerSpec && self.k_tree == 0 {
            return fail("k_tree", "must be at least 1 for subformer_spec".to_string());
        }
        if self.t_kernels == 0 {
            return fail("t_kernels", "must be at least 1".to_string());
        }
        if self.use_epe && self.pe_dim == 0 {
            return fail("pe_dim", "must be at least 1 when use_epe is on".to_string());
        }
        if self.readout_hidden == 0 {
            return fail("readout_hidden", "must be positive".to_string());
        }
        if self.n_tasks == 0 {
            return fail("n_tasks", "must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
