//! Undirected graphs with integer attribute codes and their normalized
//! Laplacians.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sparse undirected graph. Node and edge attributes are integer codes;
/// `targets` holds the task labels for the whole graph (NaN = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    node_attrs: Vec<u32>,
    edge_attrs: Vec<u32>,
    targets: Vec<f64>,
}

impl Graph {
    /// Build a graph, rejecting self-loops, duplicate undirected edges and
    /// out-of-range endpoints.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        node_attrs: Vec<u32>,
        edge_attrs: Vec<u32>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if node_attrs.len() != n {
            return Err(Error::Contract(format!(
                "{} node attributes for {} nodes",
                node_attrs.len(),
                n
            )));
        }
        if edge_attrs.len() != edges.len() {
            return Err(Error::Contract(format!(
                "{} edge attributes for {} edges",
                edge_attrs.len(),
                edges.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::Contract(format!("self-loop at node {}", u)));
            }
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    u, v, n
                )));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::Contract(format!(
                    "duplicate undirected edge ({}, {})",
                    key.0, key.1
                )));
            }
        }
        Ok(Graph {
            n,
            edges,
            node_attrs,
            edge_attrs,
            targets,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_attrs(&self) -> &[u32] {
        &self.node_attrs
    }

    pub fn edge_attrs(&self) -> &[u32] {
        &self.edge_attrs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Number of incident edges per node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Neighbor lists in ascending node order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Normalized Laplacian `I - D^{-1/2} A D^{-1/2}`. Rows and columns of
    /// isolated nodes are all zero, so their spectrum contribution is the
    /// eigenvalue 0.
    pub fn normalized_laplacian<S: Scalar>(&self) -> SymmetricMatrix<S> {
        let deg = self.degrees();
        let inv_sqrt: Vec<S> = deg
            .iter()
            .map(|&d| {
                if d == 0 {
                    S::zero()
                } else {
                    S::from_usize_lossy(d).sqrt().recip()
                }
            })
            .collect();
        let mut lap = SymmetricMatrix::zeros(self.n);
        for (i, &d) in deg.iter().enumerate() {
            if d > 0 {
                lap.set(i, i, S::one());
            }
        }
        for &(u, v) in &self.edges {
            lap.set(u, v, -(inv_sqrt[u] * inv_sqrt[v]));
        }
        lap
    }

    /// Relabel nodes: node `i` becomes `perm[i]`. `perm` must be a
    /// permutation of `0..n`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::Contract("permutation length mismatch".to_string()));
        }
        let mut check = vec![false; self.n];
        for &p in perm {
            if p >= self.n || check[p] {
                return Err(Error::Contract("not a permutation".to_string()));
            }
            check[p] = true;
        }
        let mut node_attrs = vec![0; self.n];
        for (i, &a) in self.node_attrs.iter().enumerate() {
            node_attrs[perm[i]] = a;
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        Graph::new(
            self.n,
            edges,
            node_attrs,
            self.edge_attrs.clone(),
            self.targets.clone(),
        )
    }
}

/// Dense symmetric matrix stored row-major; writes mirror across the
/// diagonal so symmetry is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> SymmetricMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix {
            dim,
            data: vec![S::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `P A P^T` for the node relabeling `i -> perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SymmetricMatrix<S> {
        let mut out = SymmetricMatrix::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.data[perm[i] * self.dim + perm[j]] = self.data[i * self.dim + j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(3, vec![(0, 1), (1, 2)], vec![0; 3], vec![0; 2], vec![0.0]).unwrap()
    }

    #[test]
    fn degrees_single_node() {
        let g = Graph::new(1, vec![], vec![0], vec![], vec![]).unwrap();
        assert_eq!(g.degrees(), vec![0]);
    }

    #[test]
    fn degrees_path() {
        assert_eq!(path3().degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn degrees_complete_k4() {
        let edges = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let g = Graph::new(4, edges, vec![0; 4], vec![0; 6], vec![]).unwrap();
        assert_eq!(g.degrees(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn laplacian_k2() {
        let g = Graph::new(2, vec![(0, 1)], vec![0; 2], vec![0], vec![]).unwrap();
        let lap = g.normalized_laplacian::<f64>();
        assert_eq!(lap.get(0, 0), 1.0);
        assert_eq!(lap.get(1, 1), 1.0);
        assert_eq!(lap.get(0, 1), -1.0);
        assert_eq!(lap.get(1, 0), -1.0);
    }

    #[test]
    fn laplacian_isolated_node_is_zero_row() {
        let g = Graph::new(1, vec![], vec![0], vec![], vec![]).unwrap();
        let lap = g.normalized_laplacian::<f64>();
        assert_eq!(lap.get(0, 0), 0.0);
    }

    #[test]
    fn rejects_self_loop() {
        let err = Graph::new(2, vec![(1, 1)], vec![0; 2], vec![0], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_duplicate_edge() {
        let err = Graph::new(2, vec![(0, 1), (1, 0)], vec![0; 2], vec![0, 0], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let err = Graph::new(2, vec![(0, 2)], vec![0; 2], vec![0], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn permuted_laplacian_is_similarity_transform() {
        let g = path3();
        let perm = vec![2, 0, 1];
        let pg = g.permuted(&perm).unwrap();
        let lap: SymmetricMatrix<f64> = g.normalized_laplacian();
        let plap: SymmetricMatrix<f64> = pg.normalized_laplacian();
        assert_eq!(lap.permuted(&perm), plap);
    }
}
