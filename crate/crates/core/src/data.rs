//! Dataset files, deterministic synthetic graph generation, and splits.
//!
//! A dataset is UTF-8, one JSON record per line:
//! `{"nodes":[codes],"edges":[[u,v,code],...],"targets":[float|null,...]}`.
//! Null targets read back as NaN (missing task label).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{sym_eigh, DEFAULT_EIGH_TOL};

/// Node codes of generated graphs lie in `[0, 8)`.
pub const GEN_NODE_VOCAB: u32 = 8;
/// Edge codes of generated graphs lie in `[0, 4)`.
pub const GEN_EDGE_VOCAB: u32 = 4;
/// Largest graph the generator will produce.
pub const GEN_MAX_SIZE: usize = 64;
/// Probability of an extra ring-forming edge per eligible node.
pub const GEN_RING_PROB: f64 = 0.3;

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    nodes: Vec<u32>,
    edges: Vec<(usize, usize, u32)>,
    targets: Vec<Option<f64>>,
}

/// One graph as a dataset line.
pub fn serialize_graph(g: &Graph) -> String {
    let record = Record {
        nodes: g.node_attrs().to_vec(),
        edges: g
            .edges()
            .iter()
            .zip(g.edge_attrs())
            .map(|(&(u, v), &c)| (u, v, c))
            .collect(),
        targets: g
            .targets()
            .iter()
            .map(|&t| if t.is_nan() { None } else { Some(t) })
            .collect(),
    };
    serde_json::to_string(&record).expect("graph record serializes")
}

/// Parse one dataset line; `line_no` is 1-based and lands in errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<Graph> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let n = record.nodes.len();
    let mut edges = Vec::with_capacity(record.edges.len());
    let mut edge_attrs = Vec::with_capacity(record.edges.len());
    for (u, v, c) in record.edges {
        edges.push((u, v));
        edge_attrs.push(c);
    }
    let targets = record
        .targets
        .into_iter()
        .map(|t| t.unwrap_or(f64::NAN))
        .collect();
    Graph::new(n, edges, record.nodes, edge_attrs, targets).map_err(|e| Error::Validation {
        line: line_no,
        msg: e.to_string(),
    })
}

pub fn parse_reader<R: BufRead>(reader: R) -> Result<Vec<Graph>> {
    let mut graphs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_line(&line, idx + 1)?);
    }
    Ok(graphs)
}

pub fn parse_dataset(path: &Path) -> Result<Vec<Graph>> {
    let file = std::fs::File::open(path)?;
    parse_reader(BufReader::new(file))
}

pub fn write_dataset(path: &Path, graphs: &[Graph]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for g in graphs {
        writeln!(file, "{}", serialize_graph(g))?;
    }
    file.flush()?;
    Ok(())
}

/// The regression target of generated graphs: the sum of the three
/// smallest nonzero normalized-Laplacian eigenvalues (fewer if the
/// spectrum has fewer, zero for a spectrum with none).
pub fn spectral_target(g: &Graph) -> f64 {
    let spec = sym_eigh::<f64>(&g.normalized_laplacian(), DEFAULT_EIGH_TOL)
        .expect("Laplacian of a valid graph is finite");
    spec.eigenvalues()
        .iter()
        .filter(|&&v| v > 1e-8)
        .take(3)
        .sum()
}

/// Deterministic molecule-like graphs: a random tree, extra ring-forming
/// edges with probability 0.3 per eligible node, random attribute codes,
/// and a spectral regression target.
pub fn generate_synthetic(
    n_graphs: usize,
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Result<Vec<Graph>> {
    if min_size < 1 || max_size > GEN_MAX_SIZE || min_size > max_size {
        return Err(Error::Contract(format!(
            "size range [{}, {}] outside [1, {}]",
            min_size, max_size, GEN_MAX_SIZE
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let n = rng.random_range(min_size..=max_size);
        let node_attrs: Vec<u32> = (0..n).map(|_| rng.random_range(0..GEN_NODE_VOCAB)).collect();
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for i in 1..n {
            edges.push((rng.random_range(0..i), i));
        }
        for i in 2..n {
            if rng.random::<f64>() < GEN_RING_PROB {
                let j = rng.random_range(0..i);
                let key = (j.min(i), j.max(i));
                if !edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == key) {
                    edges.push(key);
                }
            }
        }
        let edge_attrs: Vec<u32> = (0..edges.len())
            .map(|_| rng.random_range(0..GEN_EDGE_VOCAB))
            .collect();
        let g = Graph::new(n, edges, node_attrs, edge_attrs, vec![])?;
        let target = spectral_target(&g);
        let g = Graph::new(
            g.n(),
            g.edges().to_vec(),
            g.node_attrs().to_vec(),
            g.edge_attrs().to_vec(),
            vec![target],
        )?;
        graphs.push(g);
    }
    Ok(graphs)
}

/// Ratio split with a seeded shuffle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Shuffle with the split seed, then slice contiguously; remainder graphs
/// go to train. A split requested with a positive ratio must be non-empty.
pub fn split(dataset: Vec<Graph>, spec: &SplitSpec) -> Result<(Vec<Graph>, Vec<Graph>, Vec<Graph>)> {
    let total: f64 = spec.ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "split ratios {:?} sum to {}, expected 1",
            spec.ratios, total
        )));
    }
    if spec.ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Contract("split ratios must be non-negative".to_string()));
    }
    let n = dataset.len();
    let n_valid = (spec.ratios[1] * n as f64).floor() as usize;
    let n_test = (spec.ratios[2] * n as f64).floor() as usize;
    let n_train = n - n_valid - n_test;
    for (name, ratio, count) in [
        ("train", spec.ratios[0], n_train),
        ("valid", spec.ratios[1], n_valid),
        ("test", spec.ratios[2], n_test),
    ] {
        if ratio > 0.0 && count == 0 {
            return Err(Error::Contract(format!(
                "{} split is empty for {} graphs at ratios {:?}",
                name, n, spec.ratios
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<Graph>> = dataset.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Graph> {
        ids.iter()
            .map(|&i| slots[i].take().expect("each index used once"))
            .collect()
    };
    let train = take(&order[..n_train]);
    let valid = take(&order[n_train..n_train + n_valid]);
    let test = take(&order[n_train + n_valid..]);
    Ok((train, valid, test))
}
