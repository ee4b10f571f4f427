//! Single-site heat-bath Glauber dynamics, a backtracking initializer and
//! exact enumeration for small instances.
//!
//! Single-site dynamics is not irreducible for every hard-constraint model:
//! the six proper 3-colorings of a triangle are each frozen, for example.
//! [`is_irreducible`] checks this on enumerable state spaces, and any
//! distributional claim should be paired with that check.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{
    allowed_colors, color_counts, ensure_valid, ColorSet, Configuration, ConstraintGraph, Model,
};
use crate::parallel::{map_indexed, Execution};

/// Default node-expansion budget for [`find_valid_configuration`].
pub const DEFAULT_SEARCH_BUDGET: u64 = 10_000_000;
/// Default search-node cap for [`enumerate_exact`].
pub const DEFAULT_STATE_CAP: u64 = 20_000_000;

/// `200 · ⌈ln(n + 1)⌉` sweeps.
pub fn default_burn_in(n: usize) -> usize {
    200 * ((n as f64 + 1.0).ln().ceil() as usize)
}

/// Independent generator for replicate `index` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Softmax of `beta` restricted to `allowed`, in the log domain.
fn restricted_softmax(allowed: ColorSet, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; beta.len()];
    let max = allowed.iter().map(|s| beta[s]).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return out;
    }
    let mut total = 0.0;
    for s in allowed.iter() {
        let w = (beta[s] - max).exp();
        out[s] = w;
        total += w;
    }
    for p in &mut out {
        *p /= total;
    }
    out
}

/// P(σ_u = r | σ_{-u}) for every color r.
pub fn conditional_distribution(u: usize, cfg: &Configuration, model: &Model) -> Result<Vec<f64>> {
    ensure_valid(cfg, model.graph(), model.h())?;
    let allowed = allowed_colors(u, cfg, model.graph(), model.h());
    Ok(restricted_softmax(allowed, &model.params().with_reference()))
}

/// A Glauber chain over a shared model. `current` is valid at all times.
#[derive(Clone, Debug)]
pub struct Chain<'m> {
    model: &'m Model,
    current: Configuration,
    rng: ChaCha8Rng,
    sweeps_done: u64,
    beta: Vec<f64>,
    // exp(β_s − max β); the inverse-CDF fast path
    weights: Vec<f64>,
}

impl<'m> Chain<'m> {
    pub fn new(model: &'m Model, start: Configuration, rng: ChaCha8Rng) -> Result<Self> {
        ensure_valid(&start, model.graph(), model.h())?;
        let beta = model.params().with_reference();
        let max = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = beta.iter().map(|b| (b - max).exp()).collect();
        Ok(Self { model, current: start, rng, sweeps_done: 0, beta, weights })
    }

    /// Chain started from [`find_valid_configuration`] with a seeded generator.
    pub fn seeded(model: &'m Model, seed: u64) -> Result<Self> {
        Self::from_rng(model, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(model: &'m Model, mut rng: ChaCha8Rng) -> Result<Self> {
        let start =
            find_valid_configuration_with(model.graph(), model.h(), &mut rng, DEFAULT_SEARCH_BUDGET)?;
        Self::new(model, start, rng)
    }

    pub fn current(&self) -> &Configuration {
        &self.current
    }

    pub fn into_configuration(self) -> Configuration {
        self.current
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweeps_done
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// Resamples vertex `u` from its conditional law, using `uniform ∈ [0, 1)`
    /// for the inverse CDF.
    pub fn update_site(&mut self, u: usize, uniform: f64) {
        let allowed = allowed_colors(u, &self.current, self.model.graph(), self.model.h());
        let color = self.pick(allowed, uniform);
        self.current.set(u, color);
    }

    fn pick(&self, allowed: ColorSet, uniform: f64) -> usize {
        let total: f64 = allowed.iter().map(|s| self.weights[s]).sum();
        if total > 0.0 && total.is_finite() {
            let target = uniform * total;
            let mut acc = 0.0;
            let mut last = 0;
            for s in allowed.iter() {
                acc += self.weights[s];
                last = s;
                if target < acc {
                    return s;
                }
            }
            return last;
        }
        // every allowed weight underflowed; renormalize over the allowed set
        let probs = restricted_softmax(allowed, &self.beta);
        let mut acc = 0.0;
        let mut last = 0;
        for s in allowed.iter() {
            acc += probs[s];
            last = s;
            if uniform < acc {
                return s;
            }
        }
        last
    }

    /// One update at a uniformly chosen vertex.
    pub fn step(&mut self) {
        let n = self.model.graph().n();
        let u = self.rng.gen_range(0..n);
        let allowed = allowed_colors(u, &self.current, self.model.graph(), self.model.h());
        if allowed.len() == 1 {
            // σ_u is always allowed, so the update is forced
            return;
        }
        let uniform: f64 = self.rng.gen();
        let color = self.pick(allowed, uniform);
        self.current.set(u, color);
    }

    /// `n` single-site updates.
    pub fn sweep(&mut self) {
        for _ in 0..self.model.graph().n() {
            self.step();
        }
        self.sweeps_done += 1;
    }

    pub fn run(&mut self, sweeps: usize) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }
}

pub fn glauber_sweep(chain: &mut Chain<'_>) {
    chain.sweep();
}

/// Draws one configuration after `burn_in` sweeps (default
/// [`default_burn_in`]).
pub fn sample(model: &Model, burn_in: Option<usize>, seed: u64) -> Result<Configuration> {
    let mut chain = Chain::seeded(model, seed)?;
    chain.run(burn_in.unwrap_or_else(|| default_burn_in(model.graph().n())));
    Ok(chain.into_configuration())
}

/// Vertices of each component in BFS order from its highest-degree vertex.
fn search_order(g: &Graph) -> Vec<Vec<usize>> {
    g.components()
        .into_iter()
        .map(|comp| {
            let root = *comp.iter().max_by_key(|&&v| (g.degree(v), usize::MAX - v)).unwrap();
            let mut seen = vec![false; g.n()];
            let mut order = Vec::with_capacity(comp.len());
            let mut queue = VecDeque::from([root]);
            seen[root] = true;
            while let Some(u) = queue.pop_front() {
                order.push(u);
                for &v in g.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            order
        })
        .collect()
}

/// Colors compatible with the already-assigned neighbors of `v`.
fn candidates(v: usize, colors: &[Option<u8>], g: &Graph, h: &ConstraintGraph) -> ColorSet {
    g.neighbors(v).iter().fold(ColorSet::full(h.q()), |acc, &w| match colors[w] {
        Some(c) => acc.intersect(h.neighbors(c as usize)),
        None => acc,
    })
}

/// Finds a valid H-coloring. Constant colorings are tried first (so the
/// hardcore model always starts from all-zero), then a seeded backtracking
/// search per connected component.
pub fn find_valid_configuration(
    g: &Graph,
    h: &ConstraintGraph,
    seed: u64,
    budget: u64,
) -> Result<Configuration> {
    find_valid_configuration_with(g, h, &mut ChaCha8Rng::seed_from_u64(seed), budget)
}

pub fn find_valid_configuration_with<R: Rng>(
    g: &Graph,
    h: &ConstraintGraph,
    rng: &mut R,
    budget: u64,
) -> Result<Configuration> {
    for s in 0..h.q() {
        if g.edge_count() == 0 || h.adjacent(s, s) {
            return Ok(Configuration::uniform(g.n(), s as u8));
        }
    }
    let mut colors: Vec<Option<u8>> = vec![None; g.n()];
    let mut expansions = 0u64;
    for order in search_order(g) {
        // frame: remaining candidate colors for order[depth]
        let mut stack: Vec<Vec<u8>> = Vec::with_capacity(order.len());
        let mut depth = 0usize;
        let mut fresh = true;
        loop {
            if depth == order.len() {
                break;
            }
            let v = order[depth];
            if fresh {
                expansions += 1;
                if expansions > budget {
                    return Err(Error::UnknownFeasibility(budget));
                }
                let mut options: Vec<u8> =
                    candidates(v, &colors, g, h).iter().map(|s| s as u8).collect();
                options.shuffle(rng);
                stack.push(options);
            }
            match stack.last_mut().and_then(Vec::pop) {
                Some(c) => {
                    colors[v] = Some(c);
                    depth += 1;
                    fresh = true;
                }
                None => {
                    colors[v] = None;
                    stack.pop();
                    if depth == 0 {
                        return Err(Error::Infeasible);
                    }
                    depth -= 1;
                    colors[order[depth]] = None;
                    fresh = false;
                }
            }
        }
    }
    Ok(Configuration::new(colors.into_iter().map(|c| c.expect("all vertices assigned")).collect()))
}

/// Exact law of a small model.
#[derive(Clone, Debug, Serialize)]
pub struct ExactSummary {
    /// F(β) = log Z.
    pub log_partition: f64,
    /// E[c_s] for every color s, including the reference color 0.
    pub expected_counts: Vec<f64>,
    /// E[u_s] for every color s.
    pub expected_unconstrained: Vec<f64>,
    pub state_count: usize,
    /// Valid configurations with their probabilities, in enumeration order.
    #[serde(skip)]
    pub states: Vec<(Configuration, f64)>,
}

impl ExactSummary {
    pub fn probabilities(&self) -> HashMap<&Configuration, f64> {
        self.states.iter().map(|(c, p)| (c, *p)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serialization cannot fail")
    }
}

/// Enumerates every valid configuration by backtracking over partial
/// colorings. `state_cap` bounds the number of search nodes visited.
pub fn enumerate_exact(model: &Model, state_cap: u64) -> Result<ExactSummary> {
    let g = model.graph();
    let h = model.h();
    let q = h.q();
    let beta = model.params().with_reference();
    let order: Vec<usize> = search_order(g).into_iter().flatten().collect();
    let n = order.len();

    let mut colors: Vec<Option<u8>> = vec![None; n];
    let mut raw: Vec<(Configuration, f64)> = Vec::new();
    let mut stack: Vec<Vec<u8>> = Vec::with_capacity(n);
    let mut visited = 0u64;
    let mut depth = 0usize;
    let mut fresh = true;
    loop {
        if depth == n {
            let cfg = Configuration::new(colors.iter().map(|c| c.unwrap()).collect());
            let log_weight: f64 = cfg.colors().iter().map(|&c| beta[c as usize]).sum();
            raw.push((cfg, log_weight));
            depth -= 1;
            colors[order[depth]] = None;
            fresh = false;
            continue;
        }
        let v = order[depth];
        if fresh {
            visited += 1;
            if visited > state_cap {
                return Err(Error::CapExceeded(state_cap));
            }
            let mut options: Vec<u8> = candidates(v, &colors, g, h).iter().map(|s| s as u8).collect();
            options.reverse();
            stack.push(options);
        }
        match stack.last_mut().and_then(Vec::pop) {
            Some(c) => {
                colors[v] = Some(c);
                depth += 1;
                fresh = true;
            }
            None => {
                colors[v] = None;
                stack.pop();
                if depth == 0 {
                    break;
                }
                depth -= 1;
                colors[order[depth]] = None;
                fresh = false;
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::Infeasible);
    }

    let max = raw.iter().map(|(_, w)| *w).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = raw.iter().map(|(_, w)| (w - max).exp()).sum();
    let log_partition = max + total.ln();
    let mut expected_counts = vec![0.0; q];
    let mut expected_unconstrained = vec![0.0; q];
    let mut states = Vec::with_capacity(raw.len());
    for (cfg, w) in raw {
        let p = (w - log_partition).exp();
        let counts = color_counts(&cfg, q)?;
        for (e, c) in expected_counts.iter_mut().zip(counts) {
            *e += p * c as f64;
        }
        for u in 0..n {
            for s in allowed_colors(u, &cfg, g, h).iter() {
                expected_unconstrained[s] += p;
            }
        }
        states.push((cfg, p));
    }
    Ok(ExactSummary {
        log_partition,
        expected_counts,
        expected_unconstrained,
        state_count: states.len(),
        states,
    })
}

/// Largest `|P(σ)K(σ→τ) − P(τ)K(τ→σ)|` over pairs differing at one vertex,
/// where K is the random-site heat-bath kernel.
pub fn detailed_balance_gap(model: &Model, exact: &ExactSummary) -> Result<f64> {
    let n = model.graph().n();
    let prob = exact.probabilities();
    let mut worst: f64 = 0.0;
    for (sigma, p_sigma) in &exact.states {
        for u in 0..n {
            let forward = conditional_distribution(u, sigma, model)?;
            for (t, &p_forward) in forward.iter().enumerate() {
                if t == sigma.get(u) || p_forward == 0.0 {
                    continue;
                }
                let mut tau = sigma.clone();
                tau.set(u, t);
                let p_tau = *prob.get(&tau).ok_or_else(|| {
                    Error::Input("kernel reached a configuration missing from the enumeration".into())
                })?;
                let backward = conditional_distribution(u, &tau, model)?;
                let lhs = p_sigma * p_forward / n as f64;
                let rhs = p_tau * backward[sigma.get(u)] / n as f64;
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}

/// Whether single-site moves connect every valid configuration.
pub fn is_irreducible(model: &Model, exact: &ExactSummary) -> bool {
    let g = model.graph();
    let index: HashMap<&Configuration, usize> =
        exact.states.iter().enumerate().map(|(i, (c, _))| (c, i)).collect();
    let mut seen = vec![false; exact.states.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        let sigma = &exact.states[i].0;
        for u in 0..g.n() {
            for t in allowed_colors(u, sigma, g, model.h()).iter() {
                if t == sigma.get(u) {
                    continue;
                }
                let mut tau = sigma.clone();
                tau.set(u, t);
                if let Some(&j) = index.get(&tau) {
                    if !seen[j] {
                        seen[j] = true;
                        reached += 1;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    reached == exact.states.len()
}

/// Total-variation distance between the empirical law of `replicates`
/// independent chains run for `sweeps` sweeps and the exact law.
pub fn tv_distance_empirical(
    model: &Model,
    sweeps: usize,
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let exact = enumerate_exact(model, DEFAULT_STATE_CAP)?;
    let draws = map_indexed(replicates, exec, |i| -> Result<Configuration> {
        let mut chain = Chain::from_rng(model, replicate_rng(seed, i))?;
        chain.run(sweeps);
        Ok(chain.into_configuration())
    });
    let mut counts: HashMap<Configuration, usize> = HashMap::new();
    for d in draws {
        *counts.entry(d?).or_default() += 1;
    }
    let r = replicates as f64;
    let mut tv = 0.0;
    for (cfg, p) in &exact.states {
        let emp = counts.remove(cfg).unwrap_or(0) as f64 / r;
        tv += (emp - p).abs();
    }
    // anything left was never enumerated (zero exact mass)
    tv += counts.values().map(|&c| c as f64 / r).sum::<f64>();
    Ok(tv / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate, GraphKind};
    use crate::model::{is_valid, ModelParams, Preset};

    fn model(kind: GraphKind, p: Preset, beta: Vec<f64>) -> Model {
        Model::new(generate(&kind, 0).unwrap(), p.build().unwrap(), ModelParams::new(beta).unwrap()).unwrap()
    }

    #[test]
    fn conditional_examples() {
        let beta: f64 = 0.8;
        let m = model(GraphKind::Complete { n: 2 }, Preset::Hardcore, vec![beta]);
        let p = conditional_distribution(0, &Configuration::uniform(2, 0), &m).unwrap();
        assert!((p[1] - beta.exp() / (beta.exp() + 1.0)).abs() < 1e-15);

        let m = model(GraphKind::Complete { n: 3 }, Preset::ProperColoring { q: 3 }, vec![0.3, -1.0]);
        let p = conditional_distribution(0, &Configuration::from_slice(&[0, 1, 2]), &m).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);

        let (b1, b2) = (0.4_f64, -0.7);
        let m = model(GraphKind::Complete { n: 2 }, Preset::WidomRowlinson, vec![b1, b2]);
        let p = conditional_distribution(1, &Configuration::from_slice(&[1, 0]), &m).unwrap();
        assert!((p[1] - b1.exp() / (1.0 + b1.exp())).abs() < 1e-15);
        assert_eq!(p[2], 0.0);

        assert!(conditional_distribution(0, &Configuration::from_slice(&[1, 1]), &model(
            GraphKind::Complete { n: 2 },
            Preset::Hardcore,
            vec![0.0]
        ))
        .is_err());
    }

    #[test]
    fn conditional_survives_huge_activities() {
        let m = model(GraphKind::Complete { n: 2 }, Preset::Hardcore, vec![900.0]);
        let p = conditional_distribution(0, &Configuration::uniform(2, 0), &m).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        let mut chain = Chain::new(&m, Configuration::from_slice(&[0, 1]), ChaCha8Rng::seed_from_u64(0)).unwrap();
        chain.update_site(0, 0.5);
        assert_eq!(chain.current().get(0), 0);
    }

    #[test]
    fn initializer() {
        let hc = Preset::Hardcore.build().unwrap();
        let g = generate(&GraphKind::Grid { rows: 4, cols: 5 }, 0).unwrap();
        assert_eq!(find_valid_configuration(&g, &hc, 9, 100).unwrap(), Configuration::uniform(20, 0));

        let tri = generate(&GraphKind::Complete { n: 3 }, 0).unwrap();
        let k2 = Preset::ProperColoring { q: 2 }.build().unwrap();
        assert!(matches!(find_valid_configuration(&tri, &k2, 0, 1000), Err(Error::Infeasible)));

        let c6 = generate(&GraphKind::Cycle { n: 6 }, 0).unwrap();
        let k3 = Preset::ProperColoring { q: 3 }.build().unwrap();
        let cfg = find_valid_configuration(&c6, &k3, 5, 1000).unwrap();
        assert!(is_valid(&cfg, &c6, &k3).unwrap());
        assert_eq!(cfg, find_valid_configuration(&c6, &k3, 5, 1000).unwrap());

        let k5 = generate(&GraphKind::Complete { n: 9 }, 0).unwrap();
        let k4 = Preset::ProperColoring { q: 8 }.build().unwrap();
        assert!(matches!(find_valid_configuration(&k5, &k4, 0, 50), Err(Error::UnknownFeasibility(50))));
    }

    #[test]
    fn forced_update() {
        let m = model(GraphKind::Complete { n: 2 }, Preset::Hardcore, vec![0.0]);
        let mut chain = Chain::new(&m, Configuration::uniform(2, 0), ChaCha8Rng::seed_from_u64(0)).unwrap();
        chain.update_site(0, 0.99);
        assert_eq!(chain.current(), &Configuration::from_slice(&[1, 0]));
        chain.update_site(1, 0.99);
        assert_eq!(chain.current(), &Configuration::from_slice(&[1, 0]));
    }

    #[test]
    fn zero_sweeps_and_determinism() {
        let m = model(GraphKind::Cycle { n: 12 }, Preset::WidomRowlinson, vec![0.2, -0.1]);
        let mut chain = Chain::seeded(&m, 3).unwrap();
        let start = chain.current().clone();
        chain.run(0);
        assert_eq!(chain.current(), &start);
        assert_eq!(chain.sweeps_done(), 0);
        let a = sample(&m, Some(50), 17).unwrap();
        let b = sample(&m, Some(50), 17).unwrap();
        assert_eq!(a, b);
        assert!(is_valid(&a, m.graph(), m.h()).unwrap());
    }

    #[test]
    fn chain_stays_valid() {
        let m = model(GraphKind::Grid { rows: 4, cols: 4 }, Preset::ProperColoring { q: 4 }, vec![0.5, 0.0, -0.5]);
        let mut chain = Chain::seeded(&m, 1).unwrap();
        for _ in 0..200 {
            chain.step();
            assert!(is_valid(chain.current(), m.graph(), m.h()).unwrap());
        }
        chain.sweep();
        assert_eq!(chain.sweeps_done(), 1);
    }

    #[test]
    fn exact_examples() {
        let m = model(GraphKind::Complete { n: 2 }, Preset::Hardcore, vec![0.0]);
        let e = enumerate_exact(&m, 1000).unwrap();
        assert!((e.log_partition - 3f64.ln()).abs() < 1e-14);
        assert!((e.expected_counts[1] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(e.state_count, 3);

        let m = model(GraphKind::Path { n: 3 }, Preset::Hardcore, vec![0.0]);
        assert!((enumerate_exact(&m, 1000).unwrap().log_partition - 5f64.ln()).abs() < 1e-14);

        let m = model(GraphKind::Path { n: 3 }, Preset::Hardcore, vec![2f64.ln()]);
        let e = enumerate_exact(&m, 1000).unwrap();
        let p = e.probabilities()[&Configuration::from_slice(&[1, 0, 1])];
        assert!((p - 4.0 / 11.0).abs() < 1e-14);

        let m = model(GraphKind::Complete { n: 3 }, Preset::ProperColoring { q: 3 }, vec![0.0, 0.0]);
        let e = enumerate_exact(&m, 1000).unwrap();
        assert!((e.log_partition - 6f64.ln()).abs() < 1e-14);
        assert!(e.states.iter().all(|(_, p)| (p - 1.0 / 6.0).abs() < 1e-15));
        assert!(!is_irreducible(&m, &e));

        let big = model(GraphKind::Path { n: 20 }, Preset::Hardcore, vec![0.0]);
        assert!(matches!(enumerate_exact(&big, 100), Err(Error::CapExceeded(100))));
    }

    #[test]
    fn uniform_on_hardcore_edge() {
        let m = model(GraphKind::Complete { n: 2 }, Preset::Hardcore, vec![0.0]);
        let e = enumerate_exact(&m, 100).unwrap();
        for (_, p) in &e.states {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(is_irreducible(&m, &e));
        assert!(detailed_balance_gap(&m, &e).unwrap() < 1e-15);
    }

    #[test]
    fn tv_from_fixed_start_is_large() {
        let m = model(GraphKind::Path { n: 3 }, Preset::Hardcore, vec![0.0]);
        let tv = tv_distance_empirical(&m, 0, 200, 1, Execution::Sequential).unwrap();
        // all mass on the empty set, whose exact probability is 1/5
        assert!((tv - 0.8).abs() < 1e-12);
    }

    #[test]
    fn default_burn_in_values() {
        assert_eq!(default_burn_in(2), 400);
        assert_eq!(default_burn_in(4096), 1800);
    }
}
