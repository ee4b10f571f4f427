//! Log pseudo-likelihood, its derivatives, the closed-form hardcore
//! estimate and a fixed-step gradient ascent fitter.
//!
//! Everything here is normalized by n. Vertices are grouped by their
//! allowed-color mask, since θ(u, ·) depends on u only through that mask;
//! each evaluation costs O(groups · q) rather than O(n · q).
//!
//! Parameters `b` carry q − 1 entries for colors 1..q; color 0 is the
//! reference with b₀ = 0. Entries may be ±∞ once a color has been flagged
//! degenerate, and θ is then taken in the limit.

use std::collections::BTreeMap;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::eigen::SymMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{allowed_colors, color_counts, ensure_valid, ColorSet, Configuration, ConstraintGraph, Preset};

/// Coordinates whose iterate leaves [−40, 40] are frozen at ±∞.
pub const FREEZE_THRESHOLD: f64 = 40.0;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Degeneracy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "-inf")]
    NegInf,
    #[serde(rename = "+inf")]
    PosInf,
    /// The data say nothing about this color relative to the reference.
    #[serde(rename = "unidentified")]
    Unidentified,
}

impl Degeneracy {
    pub fn is_degenerate(self) -> bool {
        self != Degeneracy::None
    }

    fn value(self) -> Option<f64> {
        match self {
            Degeneracy::NegInf => Some(f64::NEG_INFINITY),
            Degeneracy::PosInf => Some(f64::INFINITY),
            _ => None,
        }
    }
}

/// Vertices sharing one allowed mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskGroup {
    pub allowed: ColorSet,
    pub size: usize,
    /// How many of them carry each color.
    pub by_color: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PLState {
    q: usize,
    n: usize,
    allowed: Vec<ColorSet>,
    counts: Vec<usize>,
    unconstrained: Vec<usize>,
    groups: Vec<MaskGroup>,
}

impl PLState {
    pub fn new(cfg: &Configuration, g: &Graph, h: &ConstraintGraph) -> Result<Self> {
        ensure_valid(cfg, g, h)?;
        let q = h.q();
        let allowed: Vec<ColorSet> = (0..g.n()).map(|u| allowed_colors(u, cfg, g, h)).collect();
        let counts = color_counts(cfg, q)?;
        let mut unconstrained = vec![0usize; q];
        let mut grouped: BTreeMap<u64, MaskGroup> = BTreeMap::new();
        for (u, &mask) in allowed.iter().enumerate() {
            debug_assert!(mask.contains(cfg.get(u)));
            for s in mask.iter() {
                unconstrained[s] += 1;
            }
            let group = grouped.entry(mask.bits()).or_insert_with(|| MaskGroup {
                allowed: mask,
                size: 0,
                by_color: vec![0; q],
            });
            group.size += 1;
            group.by_color[cfg.get(u)] += 1;
        }
        Ok(Self {
            q,
            n: g.n(),
            allowed,
            counts,
            unconstrained,
            groups: grouped.into_values().collect(),
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, u: usize) -> ColorSet {
        self.allowed[u]
    }

    /// c_s for every color.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// u_s for every color.
    pub fn unconstrained(&self) -> &[usize] {
        &self.unconstrained
    }

    pub fn groups(&self) -> &[MaskGroup] {
        &self.groups
    }

    /// u_r / n for r = 1..q.
    pub fn rainbow_fractions(&self) -> Vec<f64> {
        self.unconstrained[1..].iter().map(|&u| u as f64 / self.n as f64).collect()
    }

    fn full(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.q - 1, "parameter vector has wrong length");
        std::iter::once(0.0).chain(b.iter().copied()).collect()
    }

    /// M/n at b.
    pub fn log_pl(&self, b: &[f64]) -> f64 {
        let full = self.full(b);
        let mut theta = vec![0.0; self.q];
        let mut total = 0.0;
        for group in &self.groups {
            let log_norm = log_normalizer(group.allowed, &full);
            if let Some(lz) = log_norm {
                for (s, &k) in group.by_color.iter().enumerate() {
                    if k > 0 {
                        total += k as f64 * (full[s] - lz);
                    }
                }
            } else {
                restricted_theta(group.allowed, &full, &mut theta);
                for (s, &k) in group.by_color.iter().enumerate() {
                    if k > 0 {
                        total += k as f64 * theta[s].ln();
                    }
                }
            }
        }
        total / self.n as f64
    }

    /// L(b): component r − 1 is c_r/n − (1/n) Σ_u θ(u, r).
    pub fn gradient(&self, b: &[f64]) -> Vec<f64> {
        let full = self.full(b);
        let mut expected = vec![0.0; self.q];
        let mut theta = vec![0.0; self.q];
        for group in &self.groups {
            restricted_theta(group.allowed, &full, &mut theta);
            for s in group.allowed.iter() {
                expected[s] += group.size as f64 * theta[s];
            }
        }
        let n = self.n as f64;
        (1..self.q).map(|r| (self.counts[r] as f64 - expected[r]) / n).collect()
    }

    /// −∇L(b), the average multinomial covariance over colors 1..q.
    pub fn neg_hessian(&self, b: &[f64]) -> SymMatrix {
        let full = self.full(b);
        let d = self.q - 1;
        let mut m = SymMatrix::zeros(d);
        let mut theta = vec![0.0; self.q];
        for group in &self.groups {
            restricted_theta(group.allowed, &full, &mut theta);
            let w = group.size as f64;
            for r in group.allowed.iter().filter(|&r| r > 0) {
                m.add(r - 1, r - 1, w * theta[r]);
                for s in group.allowed.iter().filter(|&s| s > 0) {
                    m.add(r - 1, s - 1, -w * theta[r] * theta[s]);
                }
            }
        }
        m.scale(1.0 / self.n as f64);
        m
    }

    pub fn hessian(&self, b: &[f64]) -> SymMatrix {
        let mut m = self.neg_hessian(b);
        m.scale(-1.0);
        m
    }

    pub fn min_eigenvalue_neg_hessian(&self, b: &[f64]) -> f64 {
        self.neg_hessian(b).min_eigenvalue()
    }

    /// Flags the colors whose estimate is not a finite number.
    ///
    /// Along a direction d (with d₀ = 0) the slope of a vertex term tends to
    /// d_{σ_u} − max_{s ∈ A_u} d_s, so d is a recession direction exactly
    /// when d_s ≤ d_{σ_u} for every allowed s. Writing that as an edge
    /// s → σ_u, colors strongly connected to 0 are identified, colors that
    /// reach 0 are pushed to −∞, colors reachable from 0 to +∞, and the
    /// rest are free relative to 0.
    pub fn classify(&self) -> Vec<Degeneracy> {
        // reach[s]: colors t with s ⇝ t, i.e. d_s ≤ d_t on the cone.
        let mut reach: Vec<u64> = (0..self.q).map(|s| 1u64 << s).collect();
        for group in &self.groups {
            for (c, &k) in group.by_color.iter().enumerate() {
                if k > 0 {
                    for s in group.allowed.iter() {
                        reach[s] |= 1u64 << c;
                    }
                }
            }
        }
        for k in 0..self.q {
            for s in 0..self.q {
                if reach[s] >> k & 1 == 1 {
                    reach[s] |= reach[k];
                }
            }
        }
        (1..self.q)
            .map(|r| match (reach[0] >> r & 1 == 1, reach[r] & 1 == 1) {
                (true, true) => Degeneracy::None,
                (false, true) => Degeneracy::NegInf,
                (true, false) => Degeneracy::PosInf,
                (false, false) => Degeneracy::Unidentified,
            })
            .collect()
    }

    fn flags_to_b(flags: &[Degeneracy], b: &mut [f64]) {
        for (x, f) in b.iter_mut().zip(flags) {
            if let Some(v) = f.value() {
                *x = v;
            }
        }
    }

    fn active_norm(grad: &[f64], flags: &[Degeneracy]) -> f64 {
        grad.iter()
            .zip(flags)
            .filter(|(_, f)| **f == Degeneracy::None)
            .map(|(g, _)| g.abs())
            .fold(0.0, f64::max)
    }

    fn report(&self, beta_hat: Vec<f64>, degenerate: Vec<Degeneracy>, iterations: usize, converged: bool) -> EstimateReport {
        let grad = self.gradient(&beta_hat);
        EstimateReport {
            final_gradient_norm: Self::active_norm(&grad, &degenerate),
            min_eigenvalue_neg_hessian_at_fit: self.min_eigenvalue_neg_hessian(&beta_hat).max(0.0),
            rainbow_fractions: self.rainbow_fractions(),
            beta_hat,
            degenerate,
            iterations,
            converged,
        }
    }

    /// Fixed-step gradient ascent on M/n.
    pub fn fit(&self, options: &FitOptions) -> Result<EstimateReport> {
        let d = self.q - 1;
        let mut b = match &options.init {
            Some(init) => {
                if init.len() != d {
                    return Err(Error::LengthMismatch { expected: d, got: init.len() });
                }
                init.clone()
            }
            None => vec![0.0; d],
        };
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        if !(options.step.is_finite() && options.step > 0.0) {
            return Err(Error::Parameter(format!("step must be positive, got {}", options.step)));
        }
        if !(options.tol.is_finite() && options.tol >= 0.0) {
            return Err(Error::Parameter(format!("tol must be nonnegative, got {}", options.tol)));
        }
        let mut flags = self.classify();
        Self::flags_to_b(&flags, &mut b);

        let mut iterations = 0;
        loop {
            let grad = self.gradient(&b);
            if Self::active_norm(&grad, &flags) <= options.tol {
                return Ok(self.report(b, flags, iterations, true));
            }
            if iterations >= options.max_iter {
                return Ok(self.report(b, flags, iterations, false));
            }
            for r in 0..d {
                if flags[r] != Degeneracy::None {
                    continue;
                }
                b[r] += options.step * grad[r];
                // Safety net; the classification above should leave
                // nothing to freeze.
                if b[r] < -FREEZE_THRESHOLD {
                    flags[r] = Degeneracy::NegInf;
                } else if b[r] > FREEZE_THRESHOLD {
                    flags[r] = Degeneracy::PosInf;
                }
            }
            Self::flags_to_b(&flags, &mut b);
            iterations += 1;
        }
    }
}

/// log Σ_{s ∈ allowed} e^{b_s}, or `None` if some allowed entry is infinite
/// or every allowed entry is −∞.
fn log_normalizer(allowed: ColorSet, full: &[f64]) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    for s in allowed.iter() {
        if !full[s].is_finite() {
            return None;
        }
        max = max.max(full[s]);
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = allowed.iter().map(|s| (full[s] - max).exp()).sum();
    Some(max + sum.ln())
}

/// Colors with θ > 0 in the limit: the +∞ colors if any are allowed,
/// otherwise the finite ones, otherwise everything allowed.
fn limit_support(allowed: ColorSet, full: &[f64]) -> ColorSet {
    let pos: ColorSet = allowed.iter().filter(|&s| full[s] == f64::INFINITY).collect();
    if !pos.is_empty() {
        return pos;
    }
    let finite: ColorSet = allowed.iter().filter(|&s| full[s].is_finite()).collect();
    if !finite.is_empty() {
        return finite;
    }
    allowed
}

/// θ(·) = softmax of `full` over `allowed`, limit-aware; written into `out`.
fn restricted_theta(allowed: ColorSet, full: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let support = limit_support(allowed, full);
    let all_finite = support.iter().all(|s| full[s].is_finite());
    if !all_finite {
        let p = 1.0 / support.len() as f64;
        for s in support.iter() {
            out[s] = p;
        }
        return;
    }
    let max = support.iter().map(|s| full[s]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in support.iter() {
        let w = (full[s] - max).exp();
        out[s] = w;
        total += w;
    }
    for s in support.iter() {
        out[s] /= total;
    }
}

/// Multinomial covariance diag(θ) − θθᵀ over colors 1..q, for a single
/// vertex with allowed set `allowed` at parameters `b`.
pub fn vertex_covariance(allowed: ColorSet, b: &[f64]) -> SymMatrix {
    let full: Vec<f64> = std::iter::once(0.0).chain(b.iter().copied()).collect();
    let mut theta = vec![0.0; full.len()];
    restricted_theta(allowed, &full, &mut theta);
    let d = full.len() - 1;
    let mut m = SymMatrix::zeros(d);
    for r in 0..d {
        for s in 0..d {
            let diag = if r == s { theta[r + 1] } else { 0.0 };
            m.set(r, s, diag - theta[r + 1] * theta[s + 1]);
        }
    }
    m
}

/// θ(u, ·) over all q colors.
pub fn vertex_theta(allowed: ColorSet, b: &[f64]) -> Vec<f64> {
    let full: Vec<f64> = std::iter::once(0.0).chain(b.iter().copied()).collect();
    let mut theta = vec![0.0; full.len()];
    restricted_theta(allowed, &full, &mut theta);
    theta
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Zero vector when `None`.
    pub init: Option<Vec<f64>>,
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { init: None, step: 1.0, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    /// One entry per color 1..q; ±∞ where flagged.
    pub beta_hat: Vec<f64>,
    pub degenerate: Vec<Degeneracy>,
    pub iterations: usize,
    /// Sup-norm of the gradient over the unflagged coordinates.
    pub final_gradient_norm: f64,
    pub min_eigenvalue_neg_hessian_at_fit: f64,
    pub rainbow_fractions: Vec<f64>,
    /// False only when the iteration budget ran out.
    pub converged: bool,
}

impl EstimateReport {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate.iter().any(|d| d.is_degenerate())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl Serialize for EstimateReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let finite_or_null = |x: f64| if x.is_finite() { Some(x) } else { None };
        let beta: Vec<Option<f64>> = self.beta_hat.iter().map(|&x| finite_or_null(x)).collect();
        let mut st = serializer.serialize_struct("EstimateReport", 6)?;
        st.serialize_field("beta_hat", &beta)?;
        st.serialize_field("degenerate", &self.degenerate)?;
        st.serialize_field("iterations", &self.iterations)?;
        st.serialize_field("grad_norm", &finite_or_null(self.final_gradient_norm))?;
        st.serialize_field("lambda_min", &finite_or_null(self.min_eigenvalue_neg_hessian_at_fit))?;
        st.serialize_field("rainbow_fractions", &self.rainbow_fractions)?;
        st.end()
    }
}

pub fn log_pl(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, b: &[f64]) -> Result<f64> {
    let state = PLState::new(cfg, g, h)?;
    check_len(&state, b)?;
    Ok(state.log_pl(b))
}

pub fn pl_gradient(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, b: &[f64]) -> Result<Vec<f64>> {
    let state = PLState::new(cfg, g, h)?;
    check_len(&state, b)?;
    Ok(state.gradient(b))
}

pub fn pl_hessian(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, b: &[f64]) -> Result<SymMatrix> {
    let state = PLState::new(cfg, g, h)?;
    check_len(&state, b)?;
    Ok(state.hessian(b))
}

pub fn min_eigenvalue_neg_hessian(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, b: &[f64]) -> Result<f64> {
    let state = PLState::new(cfg, g, h)?;
    check_len(&state, b)?;
    Ok(state.min_eigenvalue_neg_hessian(b))
}

fn check_len(state: &PLState, b: &[f64]) -> Result<()> {
    if b.len() != state.q() - 1 {
        return Err(Error::LengthMismatch { expected: state.q() - 1, got: b.len() });
    }
    Ok(())
}

pub fn mpl_fit(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, options: &FitOptions) -> Result<EstimateReport> {
    PLState::new(cfg, g, h)?.fit(options)
}

/// β̂ = log(c/u^N) with c the number of occupied vertices and u^N the
/// number of empty vertices with no occupied neighbor.
pub fn mpl_hardcore(cfg: &Configuration, g: &Graph) -> Result<EstimateReport> {
    let h = Preset::Hardcore.build()?;
    let state = PLState::new(cfg, g, &h)?;
    let occupied = state.counts()[1];
    // u₁ counts occupied vertices too; u^N is the free empty ones.
    let free_empty = state.unconstrained()[1] - occupied;
    let (beta, flag) = match (occupied, free_empty) {
        (0, _) => (f64::NEG_INFINITY, Degeneracy::NegInf),
        (_, 0) => (f64::INFINITY, Degeneracy::PosInf),
        (c, u) => ((c as f64).ln() - (u as f64).ln(), Degeneracy::None),
    };
    Ok(state.report(vec![beta], vec![flag], 0, true))
}
