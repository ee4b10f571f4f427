//! Interaction graphs: representation, statistics, generators and the
//! neighborhood-disjoint subset construction.

use std::collections::VecDeque;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite simple undirected graph on vertices `0..n`.
///
/// Adjacency lists are sorted and free of duplicates and self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

/// On-disk form: `{"n": <int>, "edges": [[u, v], ...]}` with `u < v`,
/// sorted lexicographically.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicate
    /// edges and out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("graph must have at least one vertex".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Input(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            if u == v {
                return Err(Error::Input(format!("self-loop at vertex {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            let before = list.len();
            list.dedup();
            if list.len() != before {
                return Err(Error::Input(format!("duplicate edge at vertex {u}")));
            }
        }
        Ok(Self { adjacency })
    }

    /// Graph with `n` vertices and no edges.
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, &[])
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Vertices at distance exactly 1 or 2 from `v`, sorted.
    pub fn two_neighborhood(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &x in &self.adjacency[v] {
            out.push(x);
            out.extend(self.adjacency[x].iter().copied().filter(|&y| y != v));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Connected components, each sorted, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `vertices`, relabelled `0..vertices.len()` in the
    /// given order.
    pub fn induced(&self, vertices: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.n()];
        for (i, &v) in vertices.iter().enumerate() {
            index[v] = i;
        }
        let mut edges = Vec::new();
        for (i, &v) in vertices.iter().enumerate() {
            for &w in &self.adjacency[v] {
                let j = index[w];
                if j != usize::MAX && i < j {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(vertices.len(), &edges)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            n: self.n(),
            edges: self.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::from_edges(file.n, &edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }
}

/// Generator families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphKind {
    Empty { n: usize },
    Path { n: usize },
    Cycle { n: usize },
    Grid { rows: usize, cols: usize },
    Complete { n: usize },
    /// Center is vertex 0, leaves are `1..=leaves`.
    Star { leaves: usize },
    RandomRegular { n: usize, d: usize },
    /// Each pair joined independently with probability `c / n`.
    ErdosRenyi { n: usize, c: f64 },
    DisjointUnion { parts: Vec<GraphKind> },
    /// `triangles` disjoint triangles on `0..3·triangles`, followed by a path
    /// on `path_len` vertices.
    TrianglesPlusPath { triangles: usize, path_len: usize },
    /// Clique on `u_1..u_{q-1}` (vertices `0..q-1`) joined completely to an
    /// independent set `w_1..w_n` (vertices `q-1..q-1+n`).
    CliqueBipartite { q: usize, n: usize },
}

/// Generates a graph of the given kind; identical seeds give identical graphs.
pub fn generate(kind: &GraphKind, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with(kind, &mut rng, seed)
}

fn generate_with(kind: &GraphKind, rng: &mut ChaCha8Rng, seed: u64) -> Result<Graph> {
    match *kind {
        GraphKind::Empty { n } => Graph::empty(n),
        GraphKind::Path { n } => {
            let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            Graph::from_edges(n, &edges)
        }
        GraphKind::Cycle { n } => {
            if n < 3 {
                return Err(Error::Parameter(format!("cycle needs n >= 3, got {n}")));
            }
            let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            Graph::from_edges(n, &edges)
        }
        GraphKind::Grid { rows, cols } => {
            let id = |r: usize, c: usize| r * cols + c;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    if c + 1 < cols {
                        edges.push((id(r, c), id(r, c + 1)));
                    }
                    if r + 1 < rows {
                        edges.push((id(r, c), id(r + 1, c)));
                    }
                }
            }
            Graph::from_edges(rows * cols, &edges)
        }
        GraphKind::Complete { n } => {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    edges.push((u, v));
                }
            }
            Graph::from_edges(n, &edges)
        }
        GraphKind::Star { leaves } => {
            let edges: Vec<_> = (1..=leaves).map(|v| (0, v)).collect();
            Graph::from_edges(leaves + 1, &edges)
        }
        GraphKind::RandomRegular { n, d } => random_regular(n, d, rng),
        GraphKind::ErdosRenyi { n, c } => {
            if !(c.is_finite() && c >= 0.0 && c <= n as f64) {
                return Err(Error::Parameter(format!("erdos_renyi needs 0 <= c <= n, got c = {c}")));
            }
            let p = c / n as f64;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            Graph::from_edges(n, &edges)
        }
        GraphKind::DisjointUnion { ref parts } => {
            if parts.is_empty() {
                return Err(Error::Parameter("disjoint_union needs at least one part".into()));
            }
            let mut edges = Vec::new();
            let mut offset = 0;
            for (i, part) in parts.iter().enumerate() {
                let mut part_rng = ChaCha8Rng::seed_from_u64(seed);
                part_rng.set_stream(i as u64 + 1);
                let g = generate_with(part, &mut part_rng, seed.wrapping_add(i as u64 + 1))?;
                edges.extend(g.edges().into_iter().map(|(u, v)| (u + offset, v + offset)));
                offset += g.n();
            }
            Graph::from_edges(offset, &edges)
        }
        GraphKind::TrianglesPlusPath { triangles, path_len } => {
            let mut edges = Vec::new();
            for t in 0..triangles {
                let b = 3 * t;
                edges.extend([(b, b + 1), (b + 1, b + 2), (b, b + 2)]);
            }
            let start = 3 * triangles;
            edges.extend((1..path_len).map(|i| (start + i - 1, start + i)));
            Graph::from_edges(start + path_len, &edges)
        }
        GraphKind::CliqueBipartite { q, n } => {
            if q < 2 {
                return Err(Error::Parameter(format!("clique_bipartite needs q >= 2, got {q}")));
            }
            let k = q - 1;
            let mut edges = Vec::new();
            for i in 0..k {
                for j in i + 1..k {
                    edges.push((i, j));
                }
                for w in 0..n {
                    edges.push((i, k + w));
                }
            }
            Graph::from_edges(k + n, &edges)
        }
    }
}

/// Uniform random d-regular simple graph by the pairing model with restarts.
fn random_regular(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    if !(n * d).is_multiple_of(2) {
        return Err(Error::Parameter(format!("random_regular needs n*d even, got n = {n}, d = {d}")));
    }
    if d >= n && d > 0 {
        return Err(Error::Parameter(format!("random_regular needs d < n, got n = {n}, d = {d}")));
    }
    const MAX_ATTEMPTS: usize = 100_000;
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    'attempt: for _ in 0..MAX_ATTEMPTS {
        stubs.shuffle(rng);
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::with_capacity(d); n];
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (pair[0], pair[1]);
            if u == v || adjacency[u].contains(&v) {
                continue 'attempt;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let edges: Vec<_> = stubs.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        return Graph::from_edges(n, &edges);
    }
    Err(Error::Parameter(format!(
        "random_regular({n}, {d}): pairing model failed {MAX_ATTEMPTS} times"
    )))
}

/// Exact degree statistics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeStats {
    pub avg_degree: Ratio<u64>,
    pub avg_two_neighborhood: Ratio<u64>,
    pub max_degree: usize,
    pub isolated_count: usize,
}

impl Serialize for DegreeStats {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let value = |r: &Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
        let mut st = s.serialize_struct("DegreeStats", 6)?;
        st.serialize_field("avg_degree", &self.avg_degree.to_string())?;
        st.serialize_field("avg_degree_value", &value(&self.avg_degree))?;
        st.serialize_field("avg_two_neighborhood", &self.avg_two_neighborhood.to_string())?;
        st.serialize_field("avg_two_neighborhood_value", &value(&self.avg_two_neighborhood))?;
        st.serialize_field("max_degree", &self.max_degree)?;
        st.serialize_field("isolated_count", &self.isolated_count)?;
        st.end()
    }
}

impl DegreeStats {
    pub fn avg_two_neighborhood_f64(&self) -> f64 {
        *self.avg_two_neighborhood.numer() as f64 / *self.avg_two_neighborhood.denom() as f64
    }
}

pub fn degree_stats(g: &Graph) -> DegreeStats {
    let n = g.n() as u64;
    let degree_sum: u64 = (0..g.n()).map(|u| g.degree(u) as u64).sum();
    let two_sum: u64 = (0..g.n()).map(|v| g.two_neighborhood(v).len() as u64).sum();
    DegreeStats {
        avg_degree: Ratio::new(degree_sum, n),
        avg_two_neighborhood: Ratio::new(two_sum, n),
        max_degree: (0..g.n()).map(|u| g.degree(u)).max().unwrap_or(0),
        isolated_count: (0..g.n()).filter(|&u| g.degree(u) == 0).count(),
    }
}

/// How [`neighborhood_disjoint_subset`] searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisjointStrategy {
    /// Permutation scan (up to 64 permutations, stopping once the size bound
    /// holds), compared against the greedy pass; the larger set wins.
    RandomPermutation,
    /// Single deterministic pass in order of increasing degree.
    Greedy,
}

const MAX_PERMUTATIONS: usize = 64;

/// Size guaranteed whenever `|w| >= n/2`: `n / (4 (1 + avg d_2))`.
pub fn disjoint_subset_bound(g: &Graph) -> f64 {
    let stats = degree_stats(g);
    g.n() as f64 / (4.0 * (1.0 + stats.avg_two_neighborhood_f64()))
}

/// True when the open neighborhoods of distinct members of `set` are pairwise
/// disjoint.
pub fn is_neighborhood_disjoint(g: &Graph, set: &[usize]) -> bool {
    let mut owner = vec![usize::MAX; g.n()];
    for &v in set {
        for &x in g.neighbors(v) {
            if owner[x] != usize::MAX && owner[x] != v {
                return false;
            }
            owner[x] = v;
        }
    }
    true
}

/// Finds `A ⊆ w` whose members have pairwise disjoint neighborhoods.
/// Output is sorted.
pub fn neighborhood_disjoint_subset(
    g: &Graph,
    w: &[usize],
    seed: u64,
    strategy: DisjointStrategy,
) -> Vec<usize> {
    let mut in_w = vec![false; g.n()];
    for &v in w {
        in_w[v] = true;
    }
    let greedy = greedy_disjoint(g, &in_w);
    if strategy == DisjointStrategy::Greedy {
        return greedy;
    }

    let bound = disjoint_subset_bound(g);
    let two_hoods: Vec<Vec<usize>> = (0..g.n()).map(|v| g.two_neighborhood(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..g.n()).collect();
    let mut rank = vec![0usize; g.n()];
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..MAX_PERMUTATIONS {
        order.shuffle(&mut rng);
        for (i, &v) in order.iter().enumerate() {
            rank[v] = i;
        }
        let kept: Vec<usize> = (0..g.n())
            .filter(|&v| in_w[v] && two_hoods[v].iter().all(|&x| rank[v] < rank[x]))
            .collect();
        if kept.len() > best.len() {
            best = kept;
        }
        if best.len() as f64 >= bound {
            break;
        }
    }
    if greedy.len() > best.len() {
        greedy
    } else {
        best
    }
}

fn greedy_disjoint(g: &Graph, in_w: &[bool]) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..g.n()).filter(|&v| in_w[v]).collect();
    candidates.sort_by_key(|&v| g.degree(v));
    let mut covered = vec![false; g.n()];
    let mut out = Vec::new();
    for v in candidates {
        if g.neighbors(v).iter().all(|&x| !covered[x]) {
            for &x in g.neighbors(v) {
                covered[x] = true;
            }
            out.push(v);
        }
    }
    out.sort_unstable();
    out
}
