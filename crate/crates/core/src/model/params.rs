//! Learnable weights, their seeded initialization, and tape binding.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{
    Activation, EpeMode, ModelConfig, Variant, CLIQUE_VOCAB, DEGREE_CLAMP, EDGE_VOCAB, NODE_VOCAB,
};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// One named weight buffer. Non-trainable tensors (the frozen ablation
/// token) are bound as constants and skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All model weights in a fixed, named order.
#[derive(Debug, Clone)]
pub struct ModelParams {
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

/// Tape handles for one binding of the parameters, aligned with
/// [`ModelParams::tensors`].
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn id(&self, params: &ModelParams, name: &str) -> NodeId {
        self.ids[params.index_of(name)]
    }
}

struct Builder {
    rng: ChaCha8Rng,
    tensors: Vec<ParamTensor>,
}

impl Builder {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape: vec![rows, cols],
            data,
            trainable: true,
        });
    }

    /// Linear weight with the usual 1/sqrt(fan_in) range.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        self.uniform(name, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
    }

    fn fill(&mut self, name: &str, shape: Vec<usize>, value: f64, trainable: bool) {
        let numel = shape.iter().product();
        self.tensors.push(ParamTensor {
            name: name.to_string(),
            shape,
            data: vec![value; numel],
            trainable,
        });
    }

    fn bias(&mut self, name: &str, len: usize) {
        self.fill(name, vec![len], 0.0, true);
    }
}

impl ModelParams {
    /// Seeded initialization for a validated config.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            tensors: Vec::new(),
        };
        let h = config.mp_hidden;
        let d = config.d_model;
        let p = config.pe_dim;
        let t = config.t_kernels;
        let subformer = config.variant == Variant::SubformerSpec;

        b.linear("embed.node", NODE_VOCAB, h);
        if subformer {
            b.linear("embed.clique", CLIQUE_VOCAB, h);
        }

        for l in 0..config.mp_layers {
            b.linear(&format!("mp.{l}.edge_embed"), EDGE_VOCAB, h);
            b.fill(&format!("mp.{l}.eps"), vec![1], 0.0, true);
            b.linear(&format!("mp.{l}.mlp.w1"), h, h);
            b.bias(&format!("mp.{l}.mlp.b1"), h);
            b.linear(&format!("mp.{l}.mlp.w2"), h, h);
            b.bias(&format!("mp.{l}.mlp.b2"), h);
            if subformer {
                b.linear(&format!("expand.{l}.w"), h, h);
                b.linear(&format!("expand.{l}.ffl.w"), h, h);
                b.bias(&format!("expand.{l}.ffl.b"), h);
                b.linear(&format!("compress.{l}.w"), h, h);
                b.linear(&format!("compress.{l}.ffl.w"), h, h);
                b.bias(&format!("compress.{l}.ffl.b"), h);
            }
        }

        b.linear("dpe.table", DEGREE_CLAMP + 1, p);

        if config.use_epe {
            for branch in ["tree", "graph"] {
                match config.epe_mode {
                    EpeMode::Linear => {
                        b.linear(&format!("epe.{branch}.w"), p, p);
                        b.bias(&format!("epe.{branch}.b"), p);
                    }
                    EpeMode::Signnet => {
                        // phi maps a scalar eigenvector entry to p channels;
                        // rho maps the per-node concatenation back to p.
                        b.linear(&format!("epe.{branch}.phi.w1"), 1, p);
                        b.bias(&format!("epe.{branch}.phi.b1"), p);
                        b.linear(&format!("epe.{branch}.phi.w2"), p, p);
                        b.bias(&format!("epe.{branch}.phi.b2"), p);
                        b.linear(&format!("epe.{branch}.rho.w1"), p * p, p);
                        b.bias(&format!("epe.{branch}.rho.b1"), p);
                        b.linear(&format!("epe.{branch}.rho.w2"), p, p);
                        b.bias(&format!("epe.{branch}.rho.b2"), p);
                    }
                }
            }
        }

        b.linear("assemble.dpe.w", h + p, d);
        b.bias("assemble.dpe.b", d);
        if config.use_epe {
            b.linear("assemble.epe.w", d + 2 * p, d);
            b.bias("assemble.epe.b", d);
        }

        // Spectral token: time constants log-uniform in [0.5, 4], both
        // heads uniform in 1/sqrt(t).
        let thetas: Vec<f64> = (0..t)
            .map(|_| b.rng.random_range(0.5f64.ln()..4.0f64.ln()).exp())
            .collect();
        b.tensors.push(ParamTensor {
            name: "spectral.thetas".to_string(),
            shape: vec![t],
            data: thetas,
            trainable: true,
        });
        b.uniform("spectral.w1", t, 1, 1.0 / (t as f64).sqrt());
        b.uniform("spectral.w2", t, d, 1.0 / (t as f64).sqrt());

        if config.ablate_spectral_token {
            let bound = 1.0 / (d as f64).sqrt();
            let data = (0..d).map(|_| b.rng.random_range(-bound..bound)).collect();
            b.tensors.push(ParamTensor {
                name: "token.frozen".to_string(),
                shape: vec![1, d],
                data,
                trainable: false,
            });
        }

        let dh = d / config.n_heads;
        for l in 0..config.n_layers {
            b.fill(&format!("enc.{l}.ln1.g"), vec![d], 1.0, true);
            b.bias(&format!("enc.{l}.ln1.b"), d);
            for head in 0..config.n_heads {
                b.linear(&format!("enc.{l}.attn.{head}.wq"), d, dh);
                b.linear(&format!("enc.{l}.attn.{head}.wk"), d, dh);
                b.linear(&format!("enc.{l}.attn.{head}.wv"), d, dh);
            }
            b.linear(&format!("enc.{l}.attn.wo"), d, d);
            b.bias(&format!("enc.{l}.attn.bo"), d);
            b.fill(&format!("enc.{l}.ln2.g"), vec![d], 1.0, true);
            b.bias(&format!("enc.{l}.ln2.b"), d);
            b.linear(&format!("enc.{l}.ffn.w1"), d, config.ffn_hidden);
            b.bias(&format!("enc.{l}.ffn.b1"), config.ffn_hidden);
            b.linear(&format!("enc.{l}.ffn.w2"), config.ffn_hidden, d);
            b.bias(&format!("enc.{l}.ffn.b2"), d);
        }

        let r = config.readout_hidden;
        b.linear("readout.w1", d, r);
        b.bias("readout.b1", r);
        b.linear("readout.w2", r, r);
        b.bias("readout.b2", r);
        b.linear("readout.w3", r, config.n_tasks);
        b.bias("readout.b3", config.n_tasks);

        Ok(Self::from_tensor_list(b.tensors))
    }

    fn from_tensor_list(tensors: Vec<ParamTensor>) -> Self {
        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        ModelParams { tensors, index }
    }

    /// Rebuild from checkpoint tensors, checking names and shapes against a
    /// fresh initialization for the same config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<ParamTensor>) -> Result<Self> {
        let template = Self::init(config, 0)?;
        if template.tensors.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                template.tensors.len(),
                tensors.len()
            )));
        }
        for (want, got) in template.tensors.iter().zip(&tensors) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: expected {} {:?}, found {} {:?}",
                    want.name, want.shape, got.name, got.shape
                )));
            }
            if got.data.len() != got.numel() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has {} values for shape {:?}",
                    got.name,
                    got.data.len(),
                    got.shape
                )));
            }
            if got.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} contains non-finite values",
                    got.name
                )));
            }
        }
        Ok(Self::from_tensor_list(tensors))
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &ParamTensor {
        &self.tensors[self.index_of(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamTensor {
        let i = self.index_of(name);
        &mut self.tensors[i]
    }

    /// Register every tensor on the tape: trainable ones as leaves,
    /// frozen ones as constants.
    pub fn bind(&self, tape: &mut Tape<f64>) -> Result<BoundParams> {
        self.bind_with_override(tape, None)
    }

    /// Like [`bind`](Self::bind), but tensor `idx` reuses an existing node
    /// (the gradient-check harness owns that leaf).
    pub fn bind_with_override(
        &self,
        tape: &mut Tape<f64>,
        override_id: Option<(usize, NodeId)>,
    ) -> Result<BoundParams> {
        let mut ids = Vec::with_capacity(self.tensors.len());
        for (i, tensor) in self.tensors.iter().enumerate() {
            if let Some((idx, node)) = override_id {
                if idx == i {
                    ids.push(node);
                    continue;
                }
            }
            let id = if tensor.trainable {
                tape.leaf(tensor.data.clone(), tensor.shape.clone())?
            } else {
                tape.constant(tensor.data.clone(), tensor.shape.clone())?
            };
            ids.push(id);
        }
        Ok(BoundParams { ids })
    }

    /// Gradients read back from a bound tape, aligned with `tensors()`;
    /// zero where the tape saw no gradient.
    pub fn grads_from(&self, tape: &Tape<f64>, bound: &BoundParams) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                tape.grad(bound.ids[i])
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect()
    }
}

/// Activation dispatch shared by the forward pass.
pub(crate) fn apply_activation(
    tape: &mut Tape<f64>,
    x: NodeId,
    activation: Activation,
) -> NodeId {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}
