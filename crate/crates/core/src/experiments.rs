//! Consistency and concentration experiments, exact KL divergences and
//! the rainbow diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{generate, Graph, GraphKind};
use crate::model::{unconstrained_counts, Configuration, ConstraintGraph, Model, ModelParams, Preset};
use crate::parallel::{map_indexed, Execution};
use crate::pseudolikelihood::{mpl_hardcore, EstimateReport, FitOptions, PLState};
use crate::sampler::{default_burn_in, enumerate_exact, replicate_rng, Chain};

/// Graph sequences indexed by vertex count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphFamily {
    Path,
    Cycle,
    RandomRegular { d: usize },
    ErdosRenyi { c: f64 },
    /// Requires n to be a perfect square.
    SquareGrid,
}

impl GraphFamily {
    pub fn kind(&self, n: usize) -> Result<GraphKind> {
        Ok(match *self {
            GraphFamily::Path => GraphKind::Path { n },
            GraphFamily::Cycle => GraphKind::Cycle { n },
            GraphFamily::RandomRegular { d } => GraphKind::RandomRegular { n, d },
            GraphFamily::ErdosRenyi { c } => GraphKind::ErdosRenyi { n, c },
            GraphFamily::SquareGrid => {
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(Error::Parameter(format!("square_grid needs a square n, got {n}")));
                }
                GraphKind::Grid { rows: side, cols: side }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            GraphFamily::Path => "path".into(),
            GraphFamily::Cycle => "cycle".into(),
            GraphFamily::RandomRegular { d } => format!("random_regular_{d}"),
            GraphFamily::ErdosRenyi { c } => format!("erdos_renyi_{c}"),
            GraphFamily::SquareGrid => "square_grid".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    /// Sweeps before the sample is taken; [`default_burn_in`] when absent.
    #[serde(default)]
    pub burn_in: Option<usize>,
}

impl SamplerSettings {
    pub fn burn_in_for(&self, n: usize) -> usize {
        self.burn_in.unwrap_or_else(|| default_burn_in(n))
    }
}

/// Seed for everything at graph size `n` (splitmix64 finalizer).
pub fn size_seed(seed: u64, n: usize) -> u64 {
    let mut z = seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Instantiates the family at size `n`. The graph uses stream 0 of
/// `size_seed(seed, n)`; replicate chains use the later streams.
pub fn family_model(family: &GraphFamily, h: Preset, beta: &[f64], n: usize, seed: u64) -> Result<Model> {
    let graph = generate(&family.kind(n)?, size_seed(seed, n))?;
    Model::new(graph, h.build()?, ModelParams::new(beta.to_vec())?)
}

fn draw(model: &Model, n: usize, index: usize, settings: &SamplerSettings, seed: u64) -> Result<Configuration> {
    let mut chain = Chain::from_rng(model, replicate_rng(size_seed(seed, n), index))?;
    chain.run(settings.burn_in_for(n));
    Ok(chain.into_configuration())
}

/// Closed form for hardcore, gradient ascent otherwise.
pub fn estimate(cfg: &Configuration, model: &Model, hardcore: bool) -> Result<EstimateReport> {
    if hardcore {
        mpl_hardcore(cfg, model.graph())
    } else {
        PLState::new(cfg, model.graph(), model.h())?.fit(&FitOptions::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub graph_kind: String,
    pub h_name: String,
    pub beta_true: Vec<f64>,
    pub replicate_count: usize,
    /// Flagged or non-converged fits; excluded from the quantiles.
    pub degenerate_count: usize,
    /// Median of √n·‖β̂ − β‖₂; `None` when every fit was degenerate.
    pub median_scaled_error: Option<f64>,
    pub q90_scaled_error: Option<f64>,
    pub seed: u64,
}

pub const CONSISTENCY_HEADER: [&str; 9] = [
    "n",
    "graph_kind",
    "h_name",
    "beta_true",
    "replicate_count",
    "degenerate_count",
    "median_scaled_error",
    "q90_scaled_error",
    "seed",
];

/// What one replicate saw, kept for the curvature check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub beta_hat: Vec<f64>,
    pub degenerate: bool,
    pub scaled_error: Option<f64>,
    /// min_r u_r/n over r = 1..q.
    pub min_rainbow_fraction: f64,
    /// λ_min of −∇L at the true parameters.
    pub lambda_min_at_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyRun {
    pub rows: Vec<ConsistencyRow>,
    pub replicates: Vec<ReplicateRecord>,
}

/// One row per n: each replicate draws a configuration by Glauber dynamics
/// and fits the pseudo-likelihood estimate to it.
#[allow(clippy::too_many_arguments)]
pub fn consistency_experiment(
    family: &GraphFamily,
    h: Preset,
    beta_true: &[f64],
    n_list: &[usize],
    replicates: usize,
    settings: &SamplerSettings,
    seed: u64,
    exec: Execution,
) -> Result<ConsistencyRun> {
    let mut run = ConsistencyRun { rows: Vec::new(), replicates: Vec::new() };
    if replicates == 0 {
        return Ok(run);
    }
    let hardcore = h == Preset::Hardcore;
    for &n in n_list {
        let model = family_model(family, h, beta_true, n, seed)?;
        let records = map_indexed(replicates, exec, |i| -> Result<ReplicateRecord> {
            let cfg = draw(&model, n, i, settings, seed)?;
            let report = estimate(&cfg, &model, hardcore)?;
            let state = PLState::new(&cfg, model.graph(), model.h())?;
            let degenerate = report.is_degenerate() || !report.converged;
            let scaled_error = (!degenerate).then(|| {
                let sq: f64 = report.beta_hat.iter().zip(beta_true).map(|(a, b)| (a - b).powi(2)).sum();
                (n as f64).sqrt() * sq.sqrt()
            });
            Ok(ReplicateRecord {
                n,
                replicate: i,
                beta_hat: report.beta_hat,
                degenerate,
                scaled_error,
                min_rainbow_fraction: state.rainbow_fractions().into_iter().fold(f64::INFINITY, f64::min),
                lambda_min_at_truth: state.min_eigenvalue_neg_hessian(beta_true),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut errors: Vec<f64> = records.iter().filter_map(|r| r.scaled_error).collect();
        errors.sort_by(f64::total_cmp);
        run.rows.push(ConsistencyRow {
            n,
            graph_kind: family.name(),
            h_name: h.to_string(),
            beta_true: beta_true.to_vec(),
            replicate_count: replicates,
            degenerate_count: records.iter().filter(|r| r.degenerate).count(),
            median_scaled_error: quantile(&errors, 0.5),
            q90_scaled_error: quantile(&errors, 0.9),
            seed,
        });
        run.replicates.extend(records);
    }
    Ok(run)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with [`CONSISTENCY_HEADER`]; vectors are `;`-separated.
pub fn consistency_csv(rows: &[ConsistencyRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONSISTENCY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.graph_kind.clone(),
            r.h_name.clone(),
            join(&r.beta_true),
            r.replicate_count.to_string(),
            r.degenerate_count.to_string(),
            opt(r.median_scaled_error),
            opt(r.q90_scaled_error),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub replicates: usize,
    /// Mean of n·‖L_σ(β)‖₂².
    pub mean: f64,
    pub std_error: f64,
}

pub const CONCENTRATION_HEADER: [&str; 4] = ["n", "replicates", "mean_n_grad_sq", "std_error"];

fn scaled_sq_gradient(cfg: &Configuration, model: &Model) -> Result<f64> {
    let state = PLState::new(cfg, model.graph(), model.h())?;
    let grad = state.gradient(model.params().beta());
    Ok(model.graph().n() as f64 * grad.iter().map(|x| x * x).sum::<f64>())
}

/// Per-n Monte Carlo mean of n·‖L_σ(β)‖² at the true β.
#[allow(clippy::too_many_arguments)]
pub fn gradient_concentration(
    family: &GraphFamily,
    h: Preset,
    beta: &[f64],
    n_list: &[usize],
    replicates: usize,
    settings: &SamplerSettings,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ConcentrationRow>> {
    let mut rows = Vec::with_capacity(n_list.len());
    if replicates == 0 {
        return Ok(rows);
    }
    for &n in n_list {
        let model = family_model(family, h, beta, n, seed)?;
        let values = map_indexed(replicates, exec, |i| {
            let cfg = draw(&model, n, i, settings, seed)?;
            scaled_sq_gradient(&cfg, &model)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let r = values.len() as f64;
        let mean = values.iter().sum::<f64>() / r;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        rows.push(ConcentrationRow { n, replicates, mean, std_error: (var / r).sqrt() });
    }
    Ok(rows)
}

pub fn concentration_csv(rows: &[ConcentrationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONCENTRATION_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.n.to_string(), r.replicates.to_string(), r.mean.to_string(), r.std_error.to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// E[n·‖L_σ(β)‖²] under the exact law.
pub fn exact_scaled_sq_gradient(model: &Model, state_cap: u64) -> Result<f64> {
    let exact = enumerate_exact(model, state_cap)?;
    let mut total = 0.0;
    for (cfg, p) in &exact.states {
        total += p * scaled_sq_gradient(cfg, model)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KLMethod {
    BruteForce,
    /// Sum of per-component divergences; both laws factorize over the
    /// connected components of the graph.
    ComponentFactorized,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KLResult {
    pub n_parameter: usize,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub kl: f64,
    pub method: KLMethod,
}

/// F(b) − F(a) − (b − a)ᵀ E_a[c] for one enumerable model.
fn kl_single(g: &Graph, h: &ConstraintGraph, a: &[f64], b: &[f64], cap: u64) -> Result<f64> {
    let ma = Model::new(g.clone(), h.clone(), ModelParams::new(a.to_vec())?)?;
    let ea = enumerate_exact(&ma, cap)?;
    if a == b {
        return Ok(0.0);
    }
    let mb = ma.with_params(ModelParams::new(b.to_vec())?)?;
    let eb = enumerate_exact(&mb, cap)?;
    let linear: f64 = a.iter().zip(b).zip(&ea.expected_counts[1..]).map(|((x, y), c)| (y - x) * c).sum();
    Ok(eb.log_partition - ea.log_partition - linear)
}

/// D(P_a ‖ P_b) by exact enumeration. `n_parameter` is the vertex count.
pub fn kl_exact(
    g: &Graph,
    h: &ConstraintGraph,
    a: &[f64],
    b: &[f64],
    state_cap: u64,
    method: KLMethod,
) -> Result<KLResult> {
    let kl = match method {
        KLMethod::BruteForce => kl_single(g, h, a, b, state_cap)?,
        KLMethod::ComponentFactorized => {
            let mut total = 0.0;
            for comp in g.components() {
                total += kl_single(&g.induced(&comp)?, h, a, b, state_cap)?;
            }
            total
        }
    };
    Ok(KLResult { n_parameter: g.n(), theta: a.to_vec(), theta_prime: b.to_vec(), kl, method })
}

/// Weights of the q coloring classes of clique_bipartite(q, n) under proper
/// q-coloring: class `a` gives every independent-set vertex color `a` and
/// the clique the remaining q − 1 colors in (q − 1)! ways. Returns the log
/// of each class's total weight.
fn clique_bipartite_class_logs(q: usize, n: usize, beta: &[f64]) -> Vec<f64> {
    assert_eq!(beta.len(), q - 1, "parameter vector has wrong length");
    let full: Vec<f64> = std::iter::once(0.0).chain(beta.iter().copied()).collect();
    let total: f64 = full.iter().sum();
    let log_fact: f64 = (1..q).map(|k| (k as f64).ln()).sum();
    full.iter().map(|&ba| log_fact + total - ba + n as f64 * ba).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// log Z = log((q−1)! Σ_a exp(n β_a + Σ_{s≠a} β_s)).
pub fn clique_bipartite_log_partition(q: usize, n: usize, beta: &[f64]) -> f64 {
    log_sum_exp(&clique_bipartite_class_logs(q, n, beta))
}

/// E[c_s] for all q colors.
pub fn clique_bipartite_expected_counts(q: usize, n: usize, beta: &[f64]) -> Vec<f64> {
    let logs = clique_bipartite_class_logs(q, n, beta);
    let lz = log_sum_exp(&logs);
    let mut out = vec![0.0; q];
    for (a, l) in logs.iter().enumerate() {
        let w = (l - lz).exp();
        for (s, o) in out.iter_mut().enumerate() {
            *o += w * if s == a { n as f64 } else { 1.0 };
        }
    }
    out
}

pub fn clique_bipartite_kl(q: usize, n: usize, a: &[f64], b: &[f64]) -> f64 {
    let ec = clique_bipartite_expected_counts(q, n, a);
    let linear: f64 = a.iter().zip(b).zip(&ec[1..]).map(|((x, y), c)| (y - x) * c).sum();
    clique_bipartite_log_partition(q, n, b) - clique_bipartite_log_partition(q, n, a) - linear
}

/// λ_min(−∇L) lower bound (εJ)²/4 under the rainbow condition at level ε,
/// with J = min_{r≥1} e^{β_r} / Σ_s e^{β_s}.
pub fn rainbow_j(beta: &[f64]) -> f64 {
    let full: Vec<f64> = std::iter::once(0.0).chain(beta.iter().copied()).collect();
    let lz = log_sum_exp(&full);
    beta.iter().map(|b| (b - lz).exp()).fold(f64::INFINITY, f64::min)
}

pub fn rainbow_curvature_bound(eps: f64, beta: &[f64]) -> f64 {
    (eps * rainbow_j(beta)).powi(2) / 4.0
}

pub const DEFAULT_EPS_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RainbowCheck {
    /// u_r/n for r = 1..q.
    pub fractions: Vec<f64>,
    pub eps: Vec<f64>,
    /// `satisfied[i][j]`: fraction of color i + 1 exceeds `eps[j]`.
    pub satisfied: Vec<Vec<bool>>,
}

impl RainbowCheck {
    pub fn min_fraction(&self) -> f64 {
        self.fractions.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn rainbow_check(cfg: &Configuration, g: &Graph, h: &ConstraintGraph, eps: &[f64]) -> Result<RainbowCheck> {
    let u = unconstrained_counts(cfg, g, h)?;
    let n = g.n() as f64;
    let fractions: Vec<f64> = u[1..].iter().map(|&x| x as f64 / n).collect();
    let satisfied = fractions.iter().map(|&f| eps.iter().map(|&e| f > e).collect()).collect();
    Ok(RainbowCheck { fractions, eps: eps.to_vec(), satisfied })
}

/// Graph sequences for KL sweeps, indexed by N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KLFamily {
    TrianglesPlusPath { path_len: usize },
    CliqueBipartite { q: usize },
}

impl KLFamily {
    pub fn kind(&self, n: usize) -> GraphKind {
        match *self {
            KLFamily::TrianglesPlusPath { path_len } => GraphKind::TrianglesPlusPath { triangles: n, path_len },
            KLFamily::CliqueBipartite { q } => GraphKind::CliqueBipartite { q, n },
        }
    }
}

fn default_cap() -> u64 {
    crate::sampler::DEFAULT_STATE_CAP
}

fn default_method() -> KLMethod {
    KLMethod::ComponentFactorized
}

/// Settings file for the experiment command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentSettings {
    Consistency {
        graph_family: GraphFamily,
        h: Preset,
        beta_true: Vec<f64>,
        n_list: Vec<usize>,
        replicates: usize,
        #[serde(default)]
        sampler: SamplerSettings,
    },
    GradientConcentration {
        graph_family: GraphFamily,
        h: Preset,
        beta: Vec<f64>,
        n_list: Vec<usize>,
        replicates: usize,
        #[serde(default)]
        sampler: SamplerSettings,
    },
    Kl {
        kl_family: KLFamily,
        h: Preset,
        theta: Vec<f64>,
        theta_prime: Vec<f64>,
        n_list: Vec<usize>,
        #[serde(default = "default_cap")]
        cap: u64,
        #[serde(default = "default_method")]
        method: KLMethod,
    },
}

pub const KL_HEADER: [&str; 5] = ["n", "theta", "theta_prime", "kl", "method"];

/// Runs the experiment and renders its CSV.
pub fn run_experiment(settings: &ExperimentSettings, seed: u64, exec: Execution) -> Result<String> {
    match settings {
        ExperimentSettings::Consistency { graph_family, h, beta_true, n_list, replicates, sampler } => {
            let run =
                consistency_experiment(graph_family, *h, beta_true, n_list, *replicates, sampler, seed, exec)?;
            consistency_csv(&run.rows)
        }
        ExperimentSettings::GradientConcentration { graph_family, h, beta, n_list, replicates, sampler } => {
            let rows = gradient_concentration(graph_family, *h, beta, n_list, *replicates, sampler, seed, exec)?;
            concentration_csv(&rows)
        }
        ExperimentSettings::Kl { kl_family, h, theta, theta_prime, n_list, cap, method } => {
            let hg = h.build()?;
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(KL_HEADER).map_err(csv_err)?;
            for &n in n_list {
                let g = generate(&kl_family.kind(n), seed)?;
                let r = kl_exact(&g, &hg, theta, theta_prime, *cap, *method)?;
                let method = match r.method {
                    KLMethod::BruteForce => "brute_force",
                    KLMethod::ComponentFactorized => "component_factorized",
                };
                w.write_record([n.to_string(), join(&r.theta), join(&r.theta_prime), r.kl.to_string(), method.into()])
                    .map_err(csv_err)?;
            }
            finish(w)
        }
    }
}
