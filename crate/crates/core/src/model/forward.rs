//! The end-to-end forward pass: embeddings, message passing with
//! expand/compress over the clique tree, positional encodings, the spectral
//! token, the transformer encoder, and the readout head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{
    EpeMode, ModelConfig, Variant, CLIQUE_VOCAB, DEGREE_CLAMP, EDGE_VOCAB, NODE_VOCAB,
};
use super::params::{apply_activation, BoundParams, ModelParams};
use crate::coarse::{decompose, CoarseGraph};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{
    build_spectrum_vector, init_spectral_token, sym_eigh, Spectrum, SpectrumVector,
    DEFAULT_EIGH_TOL,
};
use crate::tensor::{NodeId, Tape};

/// Everything about one graph that does not depend on the weights:
/// decomposition, spectra, one-hot encodings, and structural matrices.
/// Prepared once per graph and reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Graph,
    /// Clique tree; absent for the node-token variant.
    pub coarse: Option<CoarseGraph>,
    pub spec_graph: Spectrum<f64>,
    pub spec_tree: Spectrum<f64>,
    /// Retained eigenvalues feeding the spectral token.
    pub spectrum_vector: SpectrumVector<f64>,
    /// Token-side eigenvector block `[tokens x pe_dim]`, when EPE is on.
    pub epe_tree: Option<Vec<f64>>,
    /// Graph eigenvectors lifted to the tokens, `[tokens x pe_dim]`.
    pub epe_graph: Option<Vec<f64>>,
    node_onehot: Vec<f64>,
    clique_onehot: Vec<f64>,
    edge_onehot: Vec<f64>,
    gather: Vec<f64>,
    scatter: Vec<f64>,
    assign: Vec<f64>,
    assign_t: Vec<f64>,
    dpe_onehot: Vec<f64>,
    tokens: usize,
}

impl PreparedGraph {
    pub fn new(graph: Graph, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = graph.n();
        let subformer = config.variant == Variant::SubformerSpec;

        let coarse = subformer.then(|| decompose(&graph));
        let tokens = coarse.as_ref().map_or(n, |cg| cg.m());

        let spec_graph = sym_eigh(&graph.normalized_laplacian(), DEFAULT_EIGH_TOL)?;
        let spec_tree = match &coarse {
            Some(cg) => sym_eigh(&cg.coarse_laplacian(), DEFAULT_EIGH_TOL)?,
            None => spec_graph.clone(),
        };
        let spectrum_vector = build_spectrum_vector(
            &spec_tree,
            &spec_graph,
            config.effective_k_tree(),
            config.k_graph,
        );

        let node_onehot = onehot(graph.node_attrs(), n, NODE_VOCAB, false, "node")?;
        let clique_onehot = match &coarse {
            Some(cg) => onehot(cg.clique_attrs(), cg.m(), CLIQUE_VOCAB, true, "clique")?,
            None => Vec::new(),
        };

        // Each undirected edge contributes two directed messages.
        let e2 = graph.edges().len() * 2;
        let mut edge_codes = Vec::with_capacity(e2);
        let mut gather = vec![0.0; e2 * n];
        let mut scatter = vec![0.0; n * e2];
        for (eid, &(u, v)) in graph.edges().iter().enumerate() {
            let code = graph.edge_attrs()[eid];
            for (d, (src, dst)) in [(u, v), (v, u)].into_iter().enumerate() {
                let row = 2 * eid + d;
                edge_codes.push(code);
                gather[row * n + src] = 1.0;
                scatter[dst * e2 + row] = 1.0;
            }
        }
        let edge_onehot = onehot(&edge_codes, e2, EDGE_VOCAB, false, "edge")?;

        let (assign, assign_t) = match &coarse {
            Some(cg) => {
                let s: Vec<f64> = cg.assignment_matrix();
                let st = crate::tensor::transpose_raw(&s, cg.m(), n);
                (s, st)
            }
            None => (Vec::new(), Vec::new()),
        };

        let degrees = match &coarse {
            Some(cg) => cg.tree_degrees(),
            None => graph.degrees(),
        };
        let clamped: Vec<u32> = degrees
            .iter()
            .map(|&d| d.min(DEGREE_CLAMP) as u32)
            .collect();
        let dpe_onehot = onehot(&clamped, tokens, DEGREE_CLAMP + 1, false, "degree")?;

        let (epe_tree, epe_graph) = if config.use_epe {
            let p = config.pe_dim;
            let tree_block = eigenvector_block(&spec_tree, p);
            let graph_block = eigenvector_block(&spec_graph, p);
            let lifted = match &coarse {
                Some(cg) => crate::tensor::matmul_raw(&assign, &graph_block, cg.m(), n, p),
                None => graph_block,
            };
            (Some(tree_block), Some(lifted))
        } else {
            (None, None)
        };

        Ok(PreparedGraph {
            graph,
            coarse,
            spec_graph,
            spec_tree,
            spectrum_vector,
            epe_tree,
            epe_graph,
            node_onehot,
            clique_onehot,
            edge_onehot,
            gather,
            scatter,
            assign,
            assign_t,
            dpe_onehot,
            tokens,
        })
    }

    /// Token rows before the auxiliary token is prepended.
    pub fn token_count(&self) -> usize {
        self.tokens
    }
}

fn onehot(codes: &[u32], rows: usize, vocab: usize, clamp: bool, what: &str) -> Result<Vec<f64>> {
    debug_assert_eq!(codes.len(), rows);
    let mut out = vec![0.0; rows * vocab];
    for (r, &code) in codes.iter().enumerate() {
        let mut c = code as usize;
        if c >= vocab {
            if clamp {
                c = vocab - 1;
            } else {
                return Err(Error::Vocab(format!(
                    "{} code {} outside vocabulary of {}",
                    what, code, vocab
                )));
            }
        }
        out[r * vocab + c] = 1.0;
    }
    Ok(out)
}

/// First `p` eigenvector columns (ascending eigenvalue order), zero-padded
/// when the matrix is smaller.
fn eigenvector_block(spec: &Spectrum<f64>, p: usize) -> Vec<f64> {
    let dim = spec.dim();
    let vecs = spec.eigenvectors();
    let mut out = vec![0.0; dim * p];
    for r in 0..dim {
        for c in 0..p.min(dim) {
            out[r * p + c] = vecs[r * dim + c];
        }
    }
    out
}

/// Per-call dropout streams derived from one seed, so a forward pass is
/// reproducible no matter how samples are scheduled.
pub struct DropoutRng {
    seed: u64,
    counter: u64,
}

impl DropoutRng {
    pub fn new(seed: u64) -> Self {
        DropoutRng { seed, counter: 0 }
    }

    /// A stream for one forward pass of one sample.
    pub fn for_sample(seed: u64, epoch: u64, sample: u64) -> Self {
        DropoutRng {
            seed: splitmix(seed ^ splitmix(epoch) ^ splitmix(sample.wrapping_add(0x9e37))),
            counter: 0,
        }
    }

    fn next_stream(&mut self) -> ChaCha8Rng {
        let s = splitmix(self.seed ^ splitmix(self.counter));
        self.counter += 1;
        ChaCha8Rng::seed_from_u64(s)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct Fwd<'a> {
    params: &'a ModelParams,
    bound: &'a BoundParams,
    config: &'a ModelConfig,
    train: bool,
}

impl<'a> Fwd<'a> {
    fn id(&self, name: &str) -> NodeId {
        self.bound.id(self.params, name)
    }

    /// Linear layer `x W + b`.
    fn linear(&self, tape: &mut Tape<f64>, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
        let xw = tape.matmul(x, self.id(w))?;
        tape.add_row(xw, self.id(b))
    }

    /// Feed-forward layer on tree features: linear plus leaky activation.
    fn ffl(&self, tape: &mut Tape<f64>, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
        let y = self.linear(tape, x, w, b)?;
        Ok(tape.leaky_relu(y))
    }

    fn dropout(&self, tape: &mut Tape<f64>, x: NodeId, rng: &mut DropoutRng) -> NodeId {
        tape.dropout(x, self.config.dropout, self.train, &mut rng.next_stream())
    }
}

/// One message-passing layer with edge features: each node sums
/// `relu(x_src + edge_emb)` over incoming messages, adds `(1 + eps) x`,
/// and feeds the result through a two-layer MLP.
fn gine_layer(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    x: NodeId,
    edge_onehot: NodeId,
    gather: NodeId,
    scatter: NodeId,
    layer: usize,
) -> Result<NodeId> {
    let src = tape.matmul(gather, x)?;
    let table = fwd.id(&format!("mp.{layer}.edge_embed"));
    let eemb = tape.matmul(edge_onehot, table)?;
    let raw = tape.add(src, eemb)?;
    let msg = tape.relu(raw);
    let agg = tape.matmul(scatter, msg)?;

    let eps = fwd.id(&format!("mp.{layer}.eps"));
    let eps_x = tape.mul_scalar(x, eps)?;
    let self_term = tape.add(x, eps_x)?;
    let pre = tape.add(self_term, agg)?;

    let h1 = fwd.linear(tape, pre, &format!("mp.{layer}.mlp.w1"), &format!("mp.{layer}.mlp.b1"))?;
    let h1 = tape.relu(h1);
    fwd.linear(tape, h1, &format!("mp.{layer}.mlp.w2"), &format!("mp.{layer}.mlp.b2"))
}

/// Lift tree features onto graph nodes through the assignment matrix and
/// add them residually: `x + FFL(S^T z W)`.
fn expand_tree_to_graph(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    x: NodeId,
    z: NodeId,
    assign_t: NodeId,
    layer: usize,
) -> Result<NodeId> {
    let lifted = tape.matmul(assign_t, z)?;
    let mixed = tape.matmul(lifted, fwd.id(&format!("expand.{layer}.w")))?;
    let f = fwd.ffl(
        tape,
        mixed,
        &format!("expand.{layer}.ffl.w"),
        &format!("expand.{layer}.ffl.b"),
    )?;
    tape.add(x, f)
}

/// Pool node features back onto the tree: `z + FFL(S x W)`.
fn compress_graph_to_tree(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    z: NodeId,
    x: NodeId,
    assign: NodeId,
    layer: usize,
) -> Result<NodeId> {
    let pooled = tape.matmul(assign, x)?;
    let mixed = tape.matmul(pooled, fwd.id(&format!("compress.{layer}.w")))?;
    let f = fwd.ffl(
        tape,
        mixed,
        &format!("compress.{layer}.ffl.w"),
        &format!("compress.{layer}.ffl.b"),
    )?;
    tape.add(z, f)
}

/// Sign-invariant eigenvector encoder: per-entry `phi(v) + phi(-v)` through
/// a small MLP, re-grouped per token, then a second MLP. Flipping the sign
/// of any eigenvector column leaves the output bit-identical.
fn signnet_branch(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    block: NodeId,
    rows: usize,
    p: usize,
    branch: &str,
) -> Result<NodeId> {
    let flat = tape.reshape(block, vec![rows * p, 1])?;
    let neg = tape.scale(flat, -1.0);

    let phi = |tape: &mut Tape<f64>, input: NodeId| -> Result<NodeId> {
        let a = fwd.linear(
            tape,
            input,
            &format!("epe.{branch}.phi.w1"),
            &format!("epe.{branch}.phi.b1"),
        )?;
        let a = tape.gelu(a);
        fwd.linear(
            tape,
            a,
            &format!("epe.{branch}.phi.w2"),
            &format!("epe.{branch}.phi.b2"),
        )
    };
    let pos_f = phi(tape, flat)?;
    let neg_f = phi(tape, neg)?;
    let even = tape.add(pos_f, neg_f)?;
    let grouped = tape.reshape(even, vec![rows, p * p])?;

    let a = fwd.linear(
        tape,
        grouped,
        &format!("epe.{branch}.rho.w1"),
        &format!("epe.{branch}.rho.b1"),
    )?;
    let a = tape.gelu(a);
    fwd.linear(
        tape,
        a,
        &format!("epe.{branch}.rho.w2"),
        &format!("epe.{branch}.rho.b2"),
    )
}

/// Eigenvector positional encoding: the tree branch and the lifted graph
/// branch each pass through a learnable map and concatenate.
fn build_epe(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    prepared: &PreparedGraph,
) -> Result<NodeId> {
    let rows = prepared.token_count();
    let p = fwd.config.pe_dim;
    let tree = tape.constant(
        prepared.epe_tree.clone().expect("EPE block prepared"),
        vec![rows, p],
    )?;
    let graph = tape.constant(
        prepared.epe_graph.clone().expect("EPE block prepared"),
        vec![rows, p],
    )?;
    let (u1, u2) = match fwd.config.epe_mode {
        EpeMode::Linear => (
            fwd.linear(tape, tree, "epe.tree.w", "epe.tree.b")?,
            fwd.linear(tape, graph, "epe.graph.w", "epe.graph.b")?,
        ),
        EpeMode::Signnet => (
            signnet_branch(tape, fwd, tree, rows, p, "tree")?,
            signnet_branch(tape, fwd, graph, rows, p, "graph")?,
        ),
    };
    tape.concat_cols(&[u1, u2])
}

/// Degree positional embedding lookup.
fn build_dpe(tape: &mut Tape<f64>, fwd: &Fwd, prepared: &PreparedGraph) -> Result<NodeId> {
    let rows = prepared.token_count();
    let onehot = tape.constant(prepared.dpe_onehot.clone(), vec![rows, DEGREE_CLAMP + 1])?;
    tape.matmul(onehot, fwd.id("dpe.table"))
}

/// Concatenate token features with the positional encodings, project to
/// model width, and prepend the auxiliary token.
fn assemble_tokens(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    body: NodeId,
    dpe: NodeId,
    epe: Option<NodeId>,
    aux: NodeId,
) -> Result<NodeId> {
    let with_dpe = tape.concat_cols(&[body, dpe])?;
    let mut tokens = fwd.ffl(tape, with_dpe, "assemble.dpe.w", "assemble.dpe.b")?;
    if let Some(u) = epe {
        let with_epe = tape.concat_cols(&[tokens, u])?;
        tokens = fwd.ffl(tape, with_epe, "assemble.epe.w", "assemble.epe.b")?;
    }
    tape.concat_rows(&[aux, tokens])
}

/// Pre-norm transformer encoder: `tokens += MHA(LN(tokens))` then
/// `tokens += FFN(LN(tokens))`, with full bidirectional attention.
fn transformer_encoder(
    tape: &mut Tape<f64>,
    fwd: &Fwd,
    mut tokens: NodeId,
    rng: &mut DropoutRng,
) -> Result<NodeId> {
    let d = fwd.config.d_model;
    let heads = fwd.config.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    for l in 0..fwd.config.n_layers {
        let normed = tape.layer_norm(
            tokens,
            fwd.id(&format!("enc.{l}.ln1.g")),
            fwd.id(&format!("enc.{l}.ln1.b")),
        )?;
        let mut head_outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let q = tape.matmul(normed, fwd.id(&format!("enc.{l}.attn.{head}.wq")))?;
            let k = tape.matmul(normed, fwd.id(&format!("enc.{l}.attn.{head}.wk")))?;
            let v = tape.matmul(normed, fwd.id(&format!("enc.{l}.attn.{head}.wv")))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            head_outs.push(tape.matmul(attn, v)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let proj = fwd.linear(tape, merged, &format!("enc.{l}.attn.wo"), &format!("enc.{l}.attn.bo"))?;
        let proj = fwd.dropout(tape, proj, rng);
        tokens = tape.add(tokens, proj)?;

        let normed = tape.layer_norm(
            tokens,
            fwd.id(&format!("enc.{l}.ln2.g")),
            fwd.id(&format!("enc.{l}.ln2.b")),
        )?;
        let f = fwd.linear(tape, normed, &format!("enc.{l}.ffn.w1"), &format!("enc.{l}.ffn.b1"))?;
        let f = apply_activation(tape, f, fwd.config.activation);
        let f = fwd.dropout(tape, f, rng);
        let f = fwd.linear(tape, f, &format!("enc.{l}.ffn.w2"), &format!("enc.{l}.ffn.b2"))?;
        tokens = tape.add(tokens, f)?;
    }
    Ok(tokens)
}

/// Three-layer MLP over the auxiliary token only.
fn readout(tape: &mut Tape<f64>, fwd: &Fwd, tokens: NodeId) -> Result<NodeId> {
    let aux = tape.select_row(tokens, 0)?;
    let h = fwd.linear(tape, aux, "readout.w1", "readout.b1")?;
    let h = apply_activation(tape, h, fwd.config.activation);
    let h = fwd.linear(tape, h, "readout.w2", "readout.b2")?;
    let h = apply_activation(tape, h, fwd.config.activation);
    fwd.linear(tape, h, "readout.w3", "readout.b3")
}

/// Full forward pass to a `[1 x n_tasks]` prediction.
pub fn forward(
    tape: &mut Tape<f64>,
    prepared: &PreparedGraph,
    params: &ModelParams,
    config: &ModelConfig,
    train: bool,
    rng: &mut DropoutRng,
) -> Result<NodeId> {
    let bound = params.bind(tape)?;
    forward_bound(tape, prepared, params, &bound, config, train, rng)
}

/// Forward pass over an existing parameter binding (used by the
/// gradient-check harness to substitute one tensor).
pub fn forward_bound(
    tape: &mut Tape<f64>,
    prepared: &PreparedGraph,
    params: &ModelParams,
    bound: &BoundParams,
    config: &ModelConfig,
    train: bool,
    rng: &mut DropoutRng,
) -> Result<NodeId> {
    let fwd = Fwd {
        params,
        bound,
        config,
        train,
    };
    let n = prepared.graph.n();
    let e2 = prepared.graph.edges().len() * 2;

    let node_onehot = tape.constant(prepared.node_onehot.clone(), vec![n, NODE_VOCAB])?;
    let edge_onehot = tape.constant(prepared.edge_onehot.clone(), vec![e2, EDGE_VOCAB])?;
    let gather = tape.constant(prepared.gather.clone(), vec![e2, n])?;
    let scatter = tape.constant(prepared.scatter.clone(), vec![n, e2])?;

    let mut x = tape.matmul(node_onehot, fwd.id("embed.node"))?;

    let body = match config.variant {
        Variant::SubformerSpec => {
            let cg = prepared
                .coarse
                .as_ref()
                .expect("subformer_spec graph prepared with coarse tree");
            let m = cg.m();
            let clique_onehot =
                tape.constant(prepared.clique_onehot.clone(), vec![m, CLIQUE_VOCAB])?;
            let assign = tape.constant(prepared.assign.clone(), vec![m, n])?;
            let assign_t = tape.constant(prepared.assign_t.clone(), vec![n, m])?;
            let mut z = tape.matmul(clique_onehot, fwd.id("embed.clique"))?;
            for l in 0..config.mp_layers {
                let x_mp = gine_layer(tape, &fwd, x, edge_onehot, gather, scatter, l)?;
                x = expand_tree_to_graph(tape, &fwd, x_mp, z, assign_t, l)?;
                z = compress_graph_to_tree(tape, &fwd, z, x, assign, l)?;
            }
            z
        }
        Variant::GraphtransSpec => {
            for l in 0..config.mp_layers {
                x = gine_layer(tape, &fwd, x, edge_onehot, gather, scatter, l)?;
            }
            x
        }
    };

    let dpe = build_dpe(tape, &fwd, prepared)?;
    let epe = if config.use_epe {
        Some(build_epe(tape, &fwd, prepared)?)
    } else {
        None
    };

    let aux = if config.ablate_spectral_token {
        fwd.id("token.frozen")
    } else {
        init_spectral_token(
            tape,
            &prepared.spectrum_vector,
            fwd.id("spectral.thetas"),
            fwd.id("spectral.w1"),
            fwd.id("spectral.w2"),
            config.kernel,
        )?
    };

    let tokens = assemble_tokens(tape, &fwd, body, dpe, epe, aux)?;
    let encoded = transformer_encoder(tape, &fwd, tokens, rng)?;
    readout(tape, &fwd, encoded)
}
