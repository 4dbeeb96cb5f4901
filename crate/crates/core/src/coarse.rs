//! Coarse-graining of molecular-style graphs into a clique tree.
//!
//! Cliques come from three rules: cycles of a minimum cycle basis (merged
//! when they share more than one node), leftover edges, and isolated nodes.
//! Cliques sharing nodes are linked and a maximum-weight spanning forest of
//! those links becomes the tree.

use crate::error::{Error, Result};
use crate::graph::{Graph, SymmetricMatrix};
use crate::scalar::Scalar;

/// Clique attribute code for a leftover-edge clique.
pub const CLIQUE_ATTR_EDGE: u32 = 0;
/// Clique attribute code for an isolated-node clique.
pub const CLIQUE_ATTR_SINGLETON: u32 = 1;
/// Ring cliques get `2 + k` where `k` is the number of merged base cycles.
pub const CLIQUE_ATTR_RING_BASE: u32 = 2;

/// The clique tree of a graph plus the 0/1 assignment of graph nodes to
/// cliques.
#[derive(Debug, Clone)]
pub struct CoarseGraph {
    n: usize,
    cliques: Vec<Vec<usize>>,
    clique_attrs: Vec<u32>,
    tree_edges: Vec<(usize, usize)>,
}

impl CoarseGraph {
    /// Number of cliques.
    pub fn m(&self) -> usize {
        self.cliques.len()
    }

    /// Node count of the source graph.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Node-index sets, each sorted ascending.
    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    pub fn clique_attrs(&self) -> &[u32] {
        &self.clique_attrs
    }

    pub fn tree_edges(&self) -> &[(usize, usize)] {
        &self.tree_edges
    }

    /// Dense `m x n` assignment matrix: entry `(j, i)` is one iff node `i`
    /// belongs to clique `j`.
    pub fn assignment_matrix<S: Scalar>(&self) -> Vec<S> {
        let m = self.m();
        let mut s = vec![S::zero(); m * self.n];
        for (j, clique) in self.cliques.iter().enumerate() {
            for &i in clique {
                s[j * self.n + i] = S::one();
            }
        }
        s
    }

    /// Degree of each clique in the tree.
    pub fn tree_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m()];
        for &(a, b) in &self.tree_edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// The tree as a graph over cliques (attributes carried over).
    pub fn as_tree_graph(&self) -> Graph {
        Graph::new(
            self.m(),
            self.tree_edges.clone(),
            self.clique_attrs.clone(),
            vec![0; self.tree_edges.len()],
            vec![],
        )
        .expect("clique tree is a valid graph by construction")
    }

    /// Normalized Laplacian of the clique tree.
    pub fn coarse_laplacian<S: Scalar>(&self) -> SymmetricMatrix<S> {
        self.as_tree_graph().normalized_laplacian()
    }
}

/// Decompose a graph into its coarse-grained clique tree.
pub fn decompose(g: &Graph) -> CoarseGraph {
    let cycles = minimum_cycle_basis(g);

    // Merge base cycles sharing more than one node into ring cliques.
    let mut dsu = Dsu::new(cycles.len());
    for i in 0..cycles.len() {
        for j in i + 1..cycles.len() {
            if shared_count(&cycles[i].nodes, &cycles[j].nodes) >= 2 {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for i in 0..cycles.len() {
        groups.entry(dsu.find(i)).or_default().push(i);
    }
    let mut ring_groups: Vec<Vec<usize>> = groups.into_values().collect();
    ring_groups.sort_by_key(|group| group[0]);

    let mut cliques: Vec<Vec<usize>> = Vec::new();
    let mut clique_attrs: Vec<u32> = Vec::new();
    for group in &ring_groups {
        let mut nodes: Vec<usize> = group
            .iter()
            .flat_map(|&c| cycles[c].nodes.iter().copied())
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        cliques.push(nodes);
        clique_attrs.push(CLIQUE_ATTR_RING_BASE + group.len() as u32);
    }

    // Edges not inside any ring clique become two-node cliques.
    let ring_count = cliques.len();
    for &(u, v) in g.edges() {
        let covered = cliques[..ring_count]
            .iter()
            .any(|c| c.binary_search(&u).is_ok() && c.binary_search(&v).is_ok());
        if !covered {
            cliques.push(vec![u.min(v), u.max(v)]);
            clique_attrs.push(CLIQUE_ATTR_EDGE);
        }
    }

    // Isolated nodes become singleton cliques.
    for (i, &d) in g.degrees().iter().enumerate() {
        if d == 0 {
            cliques.push(vec![i]);
            clique_attrs.push(CLIQUE_ATTR_SINGLETON);
        }
    }

    let tree_edges = spanning_forest(&cliques, g.n());

    CoarseGraph {
        n: g.n(),
        cliques,
        clique_attrs,
        tree_edges,
    }
}

fn shared_count(a: &[usize], b: &[usize]) -> usize {
    // Both sorted.
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Maximum-weight spanning forest of the clique graph, where cliques are
/// linked iff they share nodes and the weight is the shared-node count.
/// Ties break toward the lowest clique-index pair.
fn spanning_forest(cliques: &[Vec<usize>], n: usize) -> Vec<(usize, usize)> {
    let mut node_cliques: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, clique) in cliques.iter().enumerate() {
        for &i in clique {
            node_cliques[i].push(j);
        }
    }
    let mut weights: std::collections::BTreeMap<(usize, usize), usize> =
        std::collections::BTreeMap::new();
    for members in &node_cliques {
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                *weights.entry((members[a], members[b])).or_insert(0) += 1;
            }
        }
    }
    let mut candidates: Vec<(usize, usize, usize)> = weights
        .into_iter()
        .map(|((a, b), w)| (a, b, w))
        .collect();
    candidates.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));

    let mut dsu = Dsu::new(cliques.len());
    let mut edges = Vec::new();
    for (a, b, _w) in candidates {
        if dsu.union(a, b) {
            edges.push((a, b));
        }
    }
    edges
}

/// A simple cycle: sorted edge indices plus the sorted node set.
#[derive(Debug, Clone)]
struct Cycle {
    edges: Vec<usize>,
    nodes: Vec<usize>,
}

/// Minimum cycle basis via Horton's candidate set: for every root and every
/// edge, the cycle made of the two BFS shortest paths plus the edge; the
/// shortest independent candidates (over GF(2) edge space) form the basis.
fn minimum_cycle_basis(g: &Graph) -> Vec<Cycle> {
    let n = g.n();
    let m = g.edges().len();
    if m == 0 {
        return Vec::new();
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (eid, &(u, v)) in g.edges().iter().enumerate() {
        adj[u].push((v, eid));
        adj[v].push((u, eid));
    }
    for list in &mut adj {
        list.sort_unstable();
    }

    let components = count_components(&adj, n);
    let mu = m + components - n;
    if mu == 0 {
        return Vec::new();
    }

    // Collect candidate cycles, deduplicated by edge set.
    let mut seen = std::collections::HashSet::new();
    let mut candidates: Vec<Cycle> = Vec::new();
    let mut dist = vec![usize::MAX; n];
    let mut parent_edge = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        bfs(&adj, root, &mut dist, &mut parent, &mut parent_edge);
        for (eid, &(x, y)) in g.edges().iter().enumerate() {
            if dist[x] == usize::MAX || dist[y] == usize::MAX {
                continue;
            }
            let (px, ex) = walk_to_root(x, &parent, &parent_edge);
            let (py, ey) = walk_to_root(y, &parent, &parent_edge);
            // The two paths must meet only at the root, and the closing
            // edge must not lie on either path.
            if !disjoint_except_root(&px, &py, root) || ex.contains(&eid) || ey.contains(&eid) {
                continue;
            }
            let mut edges: Vec<usize> = ex.iter().chain(ey.iter()).copied().collect();
            edges.push(eid);
            edges.sort_unstable();
            if !seen.insert(edges.clone()) {
                continue;
            }
            let mut nodes: Vec<usize> = px.iter().chain(py.iter()).copied().collect();
            nodes.sort_unstable();
            nodes.dedup();
            candidates.push(Cycle { edges, nodes });
        }
    }

    candidates.sort_by(|a, b| a.edges.len().cmp(&b.edges.len()).then(a.edges.cmp(&b.edges)));

    // Greedy GF(2) independence over the edge space.
    let words = m.div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new(); // (leading bit, reduced row)
    let mut accepted = Vec::new();
    for cand in candidates {
        if accepted.len() == mu {
            break;
        }
        let mut bits = vec![0u64; words];
        for &e in &cand.edges {
            bits[e / 64] ^= 1 << (e % 64);
        }
        for (lead, row) in &basis {
            if bits[lead / 64] >> (lead % 64) & 1 == 1 {
                for (b, r) in bits.iter_mut().zip(row) {
                    *b ^= r;
                }
            }
        }
        if let Some(lead) = leading_bit(&bits) {
            basis.push((lead, bits));
            basis.sort_by_key(|&(lead, _)| lead);
            accepted.push(cand);
        }
    }
    debug_assert_eq!(accepted.len(), mu, "cycle basis incomplete");
    accepted
}

fn bfs(
    adj: &[Vec<(usize, usize)>],
    root: usize,
    dist: &mut [usize],
    parent: &mut [usize],
    parent_edge: &mut [usize],
) {
    dist.fill(usize::MAX);
    parent.fill(usize::MAX);
    parent_edge.fill(usize::MAX);
    dist[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &(v, eid) in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                parent[v] = u;
                parent_edge[v] = eid;
                queue.push_back(v);
            }
        }
    }
}

fn walk_to_root(mut v: usize, parent: &[usize], parent_edge: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut nodes = vec![v];
    let mut edges = Vec::new();
    while parent[v] != usize::MAX {
        edges.push(parent_edge[v]);
        v = parent[v];
        nodes.push(v);
    }
    (nodes, edges)
}

fn disjoint_except_root(a: &[usize], b: &[usize], root: usize) -> bool {
    let set: std::collections::HashSet<usize> = a.iter().copied().collect();
    b.iter().all(|&v| v == root || !set.contains(&v))
}

fn leading_bit(bits: &[u64]) -> Option<usize> {
    for (w, &word) in bits.iter().enumerate() {
        if word != 0 {
            return Some(w * 64 + word.trailing_zeros() as usize);
        }
    }
    None
}

fn count_components(adj: &[Vec<(usize, usize)>], n: usize) -> usize {
    let mut seen = vec![false; n];
    let mut count = 0;
    for start in 0..n {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when the sets were distinct.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        // Keep the smaller root as representative for determinism.
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// Check that `edges` over `m` nodes form a forest.
pub fn is_forest(m: usize, edges: &[(usize, usize)]) -> bool {
    let mut dsu = Dsu::new(m);
    edges.iter().all(|&(a, b)| dsu.union(a, b))
}

/// Validate the structural invariants of a decomposition against its source.
pub fn validate(cg: &CoarseGraph) -> Result<()> {
    let mut covered = vec![false; cg.n()];
    for clique in cg.cliques() {
        for &i in clique {
            covered[i] = true;
        }
    }
    if covered.iter().any(|&c| !c) {
        return Err(Error::Contract(
            "coarse graph leaves nodes unassigned".to_string(),
        ));
    }
    if !is_forest(cg.m(), cg.tree_edges()) {
        return Err(Error::Contract("clique tree contains a cycle".to_string()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle_graph(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, edges, vec![0; n], vec![0; n], vec![]).unwrap()
    }

    #[test]
    fn six_ring_is_one_clique() {
        let cg = decompose(&cycle_graph(6));
        assert_eq!(cg.m(), 1);
        assert_eq!(cg.cliques()[0], vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cg.clique_attrs()[0], CLIQUE_ATTR_RING_BASE + 1);
        assert!(cg.tree_edges().is_empty());
        let s = cg.assignment_matrix::<f64>();
        assert_eq!(s, vec![1.0; 6]);
    }

    #[test]
    fn path_is_two_edge_cliques() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], vec![0; 3], vec![0; 2], vec![]).unwrap();
        let cg = decompose(&g);
        assert_eq!(cg.m(), 2);
        assert_eq!(cg.cliques(), &[vec![0, 1], vec![1, 2]]);
        assert_eq!(cg.tree_edges(), &[(0, 1)]);
        // Middle node belongs to both cliques.
        let s = cg.assignment_matrix::<f64>();
        assert_eq!(s[1], 1.0);
        assert_eq!(s[3 + 1], 1.0);
    }

    #[test]
    fn isolated_node_is_singleton() {
        let g = Graph::new(1, vec![], vec![0], vec![], vec![]).unwrap();
        let cg = decompose(&g);
        assert_eq!(cg.m(), 1);
        assert_eq!(cg.clique_attrs(), &[CLIQUE_ATTR_SINGLETON]);
    }

    #[test]
    fn fused_rings_merge() {
        // Two triangles sharing an edge: nodes 0-1-2 and 1-2-3.
        let g = Graph::new(
            4,
            vec![(0, 1), (1, 2), (0, 2), (1, 3), (2, 3)],
            vec![0; 4],
            vec![0; 5],
            vec![],
        )
        .unwrap();
        let cg = decompose(&g);
        assert_eq!(cg.m(), 1);
        assert_eq!(cg.cliques()[0], vec![0, 1, 2, 3]);
        assert_eq!(cg.clique_attrs()[0], CLIQUE_ATTR_RING_BASE + 2);
    }

    #[test]
    fn ring_with_tail() {
        // Triangle 0-1-2 with a pendant edge 2-3.
        let g = Graph::new(
            4,
            vec![(0, 1), (1, 2), (0, 2), (2, 3)],
            vec![0; 4],
            vec![0; 4],
            vec![],
        )
        .unwrap();
        let cg = decompose(&g);
        assert_eq!(cg.m(), 2);
        assert_eq!(cg.cliques()[0], vec![0, 1, 2]);
        assert_eq!(cg.cliques()[1], vec![2, 3]);
        assert_eq!(cg.tree_edges(), &[(0, 1)]);
    }

    #[test]
    fn coarse_laplacian_matches_tree_shape() {
        // Path of three nodes -> two cliques with one link: K2 Laplacian.
        let g = Graph::new(3, vec![(0, 1), (1, 2)], vec![0; 3], vec![0; 2], vec![]).unwrap();
        let lap = decompose(&g).coarse_laplacian::<f64>();
        assert_eq!(lap.get(0, 1), -1.0);
        assert_eq!(lap.get(0, 0), 1.0);
    }

    #[test]
    fn acyclic_clique_count() {
        // A star: 4 edges, no rings, no isolated nodes -> 4 cliques.
        let g = Graph::new(
            5,
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
            vec![0; 5],
            vec![0; 4],
            vec![],
        )
        .unwrap();
        let cg = decompose(&g);
        assert_eq!(cg.m(), 4);
        assert_eq!(cg.tree_edges().len(), 3);
        assert!(is_forest(cg.m(), cg.tree_edges()));
    }
}
