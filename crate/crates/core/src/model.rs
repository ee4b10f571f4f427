//! Constraint graphs, H-coloring models and their sufficient statistics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest supported palette; colors are packed into a `u64` bitmask.
pub const MAX_COLORS: usize = 64;

/// A subset of the palette `0..q`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColorSet(u64);

impl ColorSet {
    pub const EMPTY: ColorSet = ColorSet(0);

    pub fn full(q: usize) -> Self {
        if q >= 64 {
            ColorSet(u64::MAX)
        } else {
            ColorSet((1u64 << q) - 1)
        }
    }

    pub fn singleton(s: usize) -> Self {
        ColorSet(1u64 << s)
    }

    pub fn from_bits(bits: u64) -> Self {
        ColorSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, s: usize) -> bool {
        s < 64 && self.0 & (1u64 << s) != 0
    }

    pub fn insert(&mut self, s: usize) {
        self.0 |= 1u64 << s;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersect(self, other: ColorSet) -> ColorSet {
        ColorSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(s)
            }
        })
    }
}

impl fmt::Debug for ColorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<usize> for ColorSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut set = ColorSet::EMPTY;
        for s in iter {
            set.insert(s);
        }
        set
    }
}

/// The color-adjacency graph H on `0..q`; self-loops allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstraintGraph {
    q: usize,
    neighbors: Vec<ColorSet>,
}

/// On-disk form: `{"q": <int>, "edges": [[s, t], ...]}` with `s <= t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintGraphFile {
    pub q: usize,
    pub edges: Vec<[usize; 2]>,
}

impl ConstraintGraph {
    pub fn new(q: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if !(2..=MAX_COLORS).contains(&q) {
            return Err(Error::Parameter(format!("q must be in 2..={MAX_COLORS}, got {q}")));
        }
        let mut neighbors = vec![ColorSet::EMPTY; q];
        for &(s, t) in edges {
            if s >= q || t >= q {
                return Err(Error::Input(format!("color edge ({s}, {t}) out of range for q = {q}")));
            }
            neighbors[s].insert(t);
            neighbors[t].insert(s);
        }
        Ok(Self { q, neighbors })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// 𝒩_H(s), including `s` itself when H has a self-loop there.
    pub fn neighbors(&self, s: usize) -> ColorSet {
        self.neighbors[s]
    }

    pub fn adjacent(&self, s: usize, t: usize) -> bool {
        self.neighbors[s].contains(t)
    }

    /// Edges `(s, t)` with `s <= t`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.q {
            out.extend(self.neighbors[s].iter().filter(|&t| t >= s).map(|t| (s, t)));
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let mut reached = ColorSet::singleton(0);
        loop {
            let next = reached
                .iter()
                .fold(reached, |acc, s| ColorSet(acc.0 | self.neighbors[s].0));
            if next == reached {
                return reached == ColorSet::full(self.q);
            }
            reached = next;
        }
    }

    /// True for K_q⁺: every pair adjacent and every color self-looped.
    pub fn is_unconstrained(&self) -> bool {
        self.neighbors.iter().all(|&set| set == ColorSet::full(self.q))
    }

    pub fn to_file(&self) -> ConstraintGraphFile {
        ConstraintGraphFile {
            q: self.q,
            edges: self.edges().into_iter().map(|(s, t)| [s, t]).collect(),
        }
    }

    pub fn from_file(file: &ConstraintGraphFile) -> Result<Self> {
        for e in &file.edges {
            if e[0] > e[1] {
                return Err(Error::Input(format!("color edge [{}, {}] must have s <= t", e[0], e[1])));
            }
        }
        let edges: Vec<_> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(file.q, &edges)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("constraint graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConstraintGraphFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }
}

/// Named constraint graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    /// Colors {0, 1}; 0 looped, 0–1 adjacent.
    Hardcore,
    /// Colors `0..=q`, `(s, t)` adjacent iff `s + t <= q`.
    MultistateHardcore { q: usize },
    /// Colors {0, 1, 2}; every color looped, 1 and 2 not adjacent.
    WidomRowlinson,
    /// K_q without loops.
    ProperColoring { q: usize },
    /// K_3 on {0, 1, 2} plus the pendant edge 2–3, so 𝒩_H(3) = {2}.
    CounterexampleH,
}

impl Preset {
    pub fn build(self) -> Result<ConstraintGraph> {
        match self {
            Preset::Hardcore => ConstraintGraph::new(2, &[(0, 0), (0, 1)]),
            Preset::MultistateHardcore { q } => {
                let mut edges = Vec::new();
                for s in 0..=q {
                    for t in s..=q {
                        if s + t <= q {
                            edges.push((s, t));
                        }
                    }
                }
                ConstraintGraph::new(q + 1, &edges)
            }
            Preset::WidomRowlinson => {
                ConstraintGraph::new(3, &[(0, 0), (0, 1), (0, 2), (1, 1), (2, 2)])
            }
            Preset::ProperColoring { q } => {
                let mut edges = Vec::new();
                for s in 0..q {
                    for t in s + 1..q {
                        edges.push((s, t));
                    }
                }
                ConstraintGraph::new(q, &edges)
            }
            Preset::CounterexampleH => {
                ConstraintGraph::new(4, &[(0, 1), (0, 2), (1, 2), (2, 3)])
            }
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// Parses `hardcore`, `widom_rowlinson`, `counterexample_h`,
    /// `proper_coloring:<q>` and `multistate_hardcore:<q>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((name, arg)) => (name, Some(arg)),
            None => (s, None),
        };
        let parse_q = || -> Result<usize> {
            arg.ok_or_else(|| Error::Parameter(format!("preset {name} needs a size, e.g. {name}:3")))?
                .parse()
                .map_err(|_| Error::Parameter(format!("bad preset size in {s:?}")))
        };
        match name {
            "hardcore" => Ok(Preset::Hardcore),
            "widom_rowlinson" => Ok(Preset::WidomRowlinson),
            "counterexample_h" => Ok(Preset::CounterexampleH),
            "proper_coloring" => Ok(Preset::ProperColoring { q: parse_q()? }),
            "multistate_hardcore" => Ok(Preset::MultistateHardcore { q: parse_q()? }),
            _ => Err(Error::Parameter(format!("unknown preset {s:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::Hardcore => f.write_str("hardcore"),
            Preset::WidomRowlinson => f.write_str("widom_rowlinson"),
            Preset::CounterexampleH => f.write_str("counterexample_h"),
            Preset::ProperColoring { q } => write!(f, "proper_coloring:{q}"),
            Preset::MultistateHardcore { q } => write!(f, "multistate_hardcore:{q}"),
        }
    }
}

pub fn preset(p: Preset) -> Result<ConstraintGraph> {
    p.build()
}

/// Activities β_1..β_{q-1}; β_0 = 0 is implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    beta: Vec<f64>,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { beta })
    }

    /// Hardcore parameter β = log λ.
    pub fn hardcore(beta: f64) -> Result<Self> {
        Self::new(vec![beta])
    }

    pub fn zeros(q: usize) -> Self {
        Self { beta: vec![0.0; q - 1] }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// `(0, β_1, .., β_{q-1})`.
    pub fn with_reference(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.beta.iter().copied()).collect()
    }
}

/// A color per vertex. Validity is a separate predicate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    colors: Vec<u8>,
}

impl Configuration {
    pub fn new(colors: Vec<u8>) -> Self {
        Self { colors }
    }

    pub fn uniform(n: usize, color: u8) -> Self {
        Self { colors: vec![color; n] }
    }

    pub fn from_slice(colors: &[usize]) -> Self {
        Self { colors: colors.iter().map(|&c| c as u8).collect() }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn get(&self, u: usize) -> usize {
        self.colors[u] as usize
    }

    pub fn set(&mut self, u: usize, color: usize) {
        self.colors[u] = color as u8;
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<usize> = serde_json::from_str(text)?;
        if let Some(&c) = raw.iter().find(|&&c| c >= MAX_COLORS) {
            return Err(Error::Input(format!("color {c} exceeds the supported palette")));
        }
        Ok(Self::from_slice(&raw))
    }
}

/// Graph, constraint graph and activities together.
#[derive(Clone, Debug)]
pub struct Model {
    graph: Graph,
    h: ConstraintGraph,
    params: ModelParams,
}

impl Model {
    /// Rejects K_q⁺, disconnected H and parameter vectors of the wrong length.
    pub fn new(graph: Graph, h: ConstraintGraph, params: ModelParams) -> Result<Self> {
        check_constraint_graph(&h)?;
        if params.beta().len() != h.q() - 1 {
            return Err(Error::Parameter(format!(
                "expected {} activity values for q = {}, got {}",
                h.q() - 1,
                h.q(),
                params.beta().len()
            )));
        }
        Ok(Self { graph, h, params })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn h(&self) -> &ConstraintGraph {
        &self.h
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn q(&self) -> usize {
        self.h.q()
    }

    pub fn with_params(&self, params: ModelParams) -> Result<Self> {
        Model::new(self.graph.clone(), self.h.clone(), params)
    }
}

/// The standing assumptions on H: connected and not K_q⁺.
pub fn check_constraint_graph(h: &ConstraintGraph) -> Result<()> {
    if h.is_unconstrained() {
        return Err(Error::Unconstrained);
    }
    if !h.is_connected() {
        return Err(Error::DisconnectedConstraint);
    }
    Ok(())
}

fn check_shape(cfg: &Configuration, g: &Graph, q: usize) -> Result<()> {
    if cfg.len() != g.n() {
        return Err(Error::LengthMismatch { expected: g.n(), got: cfg.len() });
    }
    if let Some(vertex) = cfg.colors().iter().position(|&c| c as usize >= q) {
        return Err(Error::ColorOutOfRange { vertex, color: cfg.get(vertex), q });
    }
    Ok(())
}

/// First edge whose endpoint colors are not adjacent in H.
pub fn first_violation(cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> Option<(usize, usize)> {
    g.edges()
        .into_iter()
        .find(|&(u, v)| !h.adjacent(cfg.get(u), cfg.get(v)))
}

pub fn is_valid(cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> Result<bool> {
    check_shape(cfg, g, h.q())?;
    Ok(first_violation(cfg, g, h).is_none())
}

/// Errors unless `cfg` is a valid H-coloring of `g`.
pub fn ensure_valid(cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> Result<()> {
    check_shape(cfg, g, h.q())?;
    match first_violation(cfg, g, h) {
        Some((u, v)) => Err(Error::InvalidConfiguration(u, v)),
        None => Ok(()),
    }
}

/// c_s(σ) for every color s.
pub fn color_counts(cfg: &Configuration, q: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; q];
    for (vertex, &c) in cfg.colors().iter().enumerate() {
        let c = c as usize;
        if c >= q {
            return Err(Error::ColorOutOfRange { vertex, color: c, q });
        }
        counts[c] += 1;
    }
    Ok(counts)
}

/// Colors `s` with σ_{𝒩(u)} ⊆ 𝒩_H(s): recoloring `u` to any of them keeps
/// the rest of the configuration consistent.
pub fn allowed_colors(u: usize, cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> ColorSet {
    // H is symmetric, so {s : t ∈ 𝒩_H(s)} = 𝒩_H(t).
    g.neighbors(u)
        .iter()
        .fold(ColorSet::full(h.q()), |acc, &v| acc.intersect(h.neighbors(cfg.get(v))))
}

/// u_r(σ): number of vertices at which color r is allowed, for every r
/// (vertices already colored r included).
pub fn unconstrained_counts(cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> Result<Vec<usize>> {
    ensure_valid(cfg, g, h)?;
    let mut counts = vec![0usize; h.q()];
    for u in 0..g.n() {
        for s in allowed_colors(u, cfg, g, h).iter() {
            counts[s] += 1;
        }
    }
    Ok(counts)
}

/// The hardcore statistic u^N(σ): vertices colored 0 whose neighbors are all
/// 0. Equals u_1 − c_1.
pub fn hardcore_free_zeros(cfg: &Configuration, g: &Graph) -> usize {
    (0..g.n())
        .filter(|&u| cfg.get(u) == 0 && g.neighbors(u).iter().all(|&v| cfg.get(v) == 0))
        .count()
}
