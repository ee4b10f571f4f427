use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcmrf::experiments::{rainbow_check, run_experiment, ExperimentSettings, DEFAULT_EPS_GRID};
use hcmrf::graph::{
    degree_stats, disjoint_subset_bound, is_neighborhood_disjoint, neighborhood_disjoint_subset, DisjointStrategy,
};
use hcmrf::pseudolikelihood::{mpl_fit, mpl_hardcore, FitOptions, DEFAULT_TOL};
use hcmrf::sampler::{enumerate_exact, sample, DEFAULT_STATE_CAP};
use hcmrf::{Configuration, ConstraintGraph, Execution, Graph, GraphKind, Model, ModelParams, PLState, Preset};
use serde::Serialize;
use serde_json::{json, Value};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "hcmrf", version, about = "Sampling and pseudo-likelihood estimation for H-coloring models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a graph from a named family.
    GenGraph {
        /// Family name, e.g. `cycle`, `random_regular`, `clique_bipartite`.
        #[arg(long)]
        kind: String,
        /// Family parameters as inline JSON or a path to a JSON file, e.g. `{"n": 10}`.
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one configuration by Glauber dynamics.
    Sample {
        #[arg(long)]
        graph: PathBuf,
        /// Preset name (`hardcore`, `proper_coloring:3`, ...) or constraint graph JSON file.
        #[arg(long)]
        h: String,
        /// Activities for colors 1..q-1, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        /// Sweeps before the configuration is taken; defaults to a size-dependent value.
        #[arg(long)]
        burnin: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum pseudo-likelihood estimate from one configuration.
    Estimate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        h: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact partition function and moments by enumeration.
    Exact {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        h: String,
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        /// Maximum number of search nodes.
        #[arg(long, default_value_t = DEFAULT_STATE_CAP)]
        cap: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment described by a JSON settings file; writes CSV.
    Experiment {
        #[arg(long)]
        settings: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 1 runs sequentially, 0 uses every core.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rainbow fractions, degree statistics, curvature and disjoint subsets for one configuration.
    Diagnose {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        h: String,
        #[arg(long)]
        config: PathBuf,
        /// Point at which the curvature is evaluated (colors 1..q-1); zero by default.
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<String>,
        /// Seed for the randomized disjoint-subset search.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Lib(hcmrf::Error),
    Usage(String),
    Disagreement(String),
}

impl From<hcmrf::Error> for CliError {
    fn from(e: hcmrf::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(hcmrf::Error::Infeasible) => 2,
            CliError::Lib(hcmrf::Error::CapExceeded(_) | hcmrf::Error::UnknownFeasibility(_)) => 3,
            CliError::Disagreement(_) => 4,
            _ => 1,
        }
    }

    fn envelope(&self) -> Value {
        let (kind, message) = match self {
            CliError::Lib(e) => (e.kind(), e.to_string()),
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Disagreement(m) => ("estimator_disagreement", m.clone()),
        };
        json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

type CliResult<T> = Result<T, CliError>;

/// What a command produced, plus the resolved settings echoed into the sidecar.
struct Artifact {
    body: String,
    command: &'static str,
    seed: Option<u64>,
    config: Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::Usage(e.to_string().trim_end().to_string())),
    };
    let out = output_path(&cli.command).cloned();
    let result = check_output(out.as_deref()).and_then(|()| run(cli.command));
    match result.and_then(|artifact| emit(&artifact, out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.envelope());
    ExitCode::from(e.exit_code())
}

fn output_path(cmd: &Command) -> Option<&PathBuf> {
    match cmd {
        Command::GenGraph { out, .. }
        | Command::Sample { out, .. }
        | Command::Estimate { out, .. }
        | Command::Exact { out, .. }
        | Command::Experiment { out, .. }
        | Command::Diagnose { out, .. } => out.as_ref(),
    }
}

// Fail before any sampling starts if the result cannot be written.
fn check_output(out: Option<&Path>) -> CliResult<()> {
    let Some(path) = out else { return Ok(()) };
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::Usage(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn emit(artifact: &Artifact, out: Option<&Path>) -> CliResult<()> {
    let mut body = artifact.body.clone();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    let Some(path) = out else {
        print!("{body}");
        return Ok(());
    };
    fs::write(path, body)?;
    let meta = json!({
        "tool": "hcmrf",
        "version": VERSION,
        "command": artifact.command,
        "seed": artifact.seed,
        "config": artifact.config,
    });
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Lib(hcmrf::Error::Input(format!("cannot read {}: {e}", path.display()))))
}

fn read_graph(path: &Path) -> CliResult<Graph> {
    Ok(Graph::from_json(&read(path)?)?)
}

fn read_config(path: &Path) -> CliResult<Configuration> {
    Ok(Configuration::from_json(&read(path)?)?)
}

/// A preset name, or otherwise a constraint graph JSON file.
fn read_h(arg: &str) -> CliResult<(ConstraintGraph, Option<Preset>)> {
    if let Ok(p) = arg.parse::<Preset>() {
        return Ok((p.build()?, Some(p)));
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(CliError::Lib(hcmrf::Error::Input(format!(
            "`{arg}` is neither a known preset nor a readable file"
        ))));
    }
    Ok((ConstraintGraph::from_json(&read(path)?)?, None))
}

fn parse_beta(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Lib(hcmrf::Error::Parameter(format!("cannot parse beta entry `{s}`"))))
        })
        .collect()
}

fn h_echo(arg: &str, h: &ConstraintGraph) -> Value {
    json!({ "name": arg, "q": h.q(), "edges": h.edges() })
}

fn run(cmd: Command) -> CliResult<Artifact> {
    match cmd {
        Command::GenGraph { kind, params, seed, .. } => gen_graph(&kind, &params, seed),
        Command::Sample { graph, h, beta, burnin, seed, .. } => {
            let (hg, _) = read_h(&h)?;
            let g = read_graph(&graph)?;
            let beta = parse_beta(&beta)?;
            let model = Model::new(g, hg.clone(), ModelParams::new(beta.clone())?)?;
            let burn_in = burnin.unwrap_or_else(|| hcmrf::sampler::default_burn_in(model.graph().n()));
            let cfg = sample(&model, Some(burn_in), seed)?;
            Ok(Artifact {
                body: cfg.to_json(),
                command: "sample",
                seed: Some(seed),
                config: json!({ "graph": graph, "h": h_echo(&h, &hg), "beta": beta, "burnin": burn_in }),
            })
        }
        Command::Estimate { graph, h, config, tol, .. } => estimate(&graph, &h, &config, tol),
        Command::Exact { graph, h, beta, cap, .. } => {
            let (hg, _) = read_h(&h)?;
            let g = read_graph(&graph)?;
            let beta = parse_beta(&beta)?;
            let model = Model::new(g, hg.clone(), ModelParams::new(beta.clone())?)?;
            let summary = enumerate_exact(&model, cap)?;
            Ok(Artifact {
                body: serde_json::to_string_pretty(&summary)?,
                command: "exact",
                seed: None,
                config: json!({ "graph": graph, "h": h_echo(&h, &hg), "beta": beta, "cap": cap }),
            })
        }
        Command::Experiment { settings, seed, jobs, .. } => experiment(&settings, seed, jobs),
        Command::Diagnose { graph, h, config, beta, seed, .. } => diagnose(&graph, &h, &config, beta.as_deref(), seed),
    }
}

fn gen_graph(kind: &str, params: &str, seed: u64) -> CliResult<Artifact> {
    let text = if Path::new(params).is_file() { read(Path::new(params))? } else { params.to_string() };
    let mut value: Value = serde_json::from_str(&text)?;
    let Some(obj) = value.as_object_mut() else {
        return Err(CliError::Lib(hcmrf::Error::Input("--params must be a JSON object".into())));
    };
    obj.insert("kind".into(), Value::String(kind.to_string()));
    let resolved: GraphKind = serde_json::from_value(value)
        .map_err(|e| CliError::Lib(hcmrf::Error::Input(format!("graph kind `{kind}`: {e}"))))?;
    let g = hcmrf::generate(&resolved, seed)?;
    Ok(Artifact {
        body: g.to_json(),
        command: "gen-graph",
        seed: Some(seed),
        config: serde_json::to_value(&resolved)?,
    })
}

fn estimate(graph: &Path, h: &str, config: &Path, tol: f64) -> CliResult<Artifact> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Lib(hcmrf::Error::Parameter(format!("tol must be positive, got {tol}"))));
    }
    let (hg, preset) = read_h(h)?;
    let g = read_graph(graph)?;
    let cfg = read_config(config)?;
    let options = FitOptions { tol, ..FitOptions::default() };
    let fitted = mpl_fit(&cfg, &g, &hg, &options)?;
    let report = if preset == Some(Preset::Hardcore) {
        let closed = mpl_hardcore(&cfg, &g)?;
        check_agreement(&closed, &fitted)?;
        closed
    } else {
        fitted
    };
    Ok(Artifact {
        body: report.to_json(),
        command: "estimate",
        seed: None,
        config: json!({ "graph": graph, "h": h_echo(h, &hg), "config": config, "tol": tol }),
    })
}

// Strong concavity turns the optimizer's residual gradient into a distance
// bound |b - b*| <= |grad| / lambda_min, with slack for the curvature varying
// along the segment.
fn check_agreement(closed: &hcmrf::EstimateReport, fitted: &hcmrf::EstimateReport) -> CliResult<()> {
    if closed.degenerate != fitted.degenerate {
        return Err(CliError::Disagreement(format!(
            "closed form flags {:?}, optimizer flags {:?}",
            closed.degenerate, fitted.degenerate
        )));
    }
    if closed.is_degenerate() {
        return Ok(());
    }
    let (a, b) = (closed.beta_hat[0], fitted.beta_hat[0]);
    let lambda = fitted.min_eigenvalue_neg_hessian_at_fit.max(1e-12);
    let allowed = 4.0 * fitted.final_gradient_norm / lambda + 1e-9;
    if !fitted.converged || (a - b).abs() > allowed {
        return Err(CliError::Disagreement(format!(
            "closed form {a} vs optimizer {b} (allowed gap {allowed:.3e}, converged: {})",
            fitted.converged
        )));
    }
    Ok(())
}

fn experiment(settings_path: &Path, seed: u64, jobs: usize) -> CliResult<Artifact> {
    let settings: ExperimentSettings = serde_json::from_str(&read(settings_path)?)
        .map_err(|e| CliError::Lib(hcmrf::Error::Input(format!("settings: {e}"))))?;
    let csv = if jobs == 1 {
        run_experiment(&settings, seed, Execution::Sequential)?
    } else {
        run_parallel(&settings, seed, jobs)?
    };
    Ok(Artifact {
        body: csv,
        command: "experiment",
        seed: Some(seed),
        config: json!({ "settings": settings, "jobs": jobs }),
    })
}

#[cfg(feature = "parallel")]
fn run_parallel(settings: &ExperimentSettings, seed: u64, jobs: usize) -> CliResult<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| run_experiment(settings, seed, Execution::Parallel))?)
}

#[cfg(not(feature = "parallel"))]
fn run_parallel(settings: &ExperimentSettings, seed: u64, _jobs: usize) -> CliResult<String> {
    Ok(run_experiment(settings, seed, Execution::Sequential)?)
}

#[derive(Serialize)]
struct DisjointReport {
    color: usize,
    /// Vertices where `color` is not allowed.
    w_size: usize,
    applicable: bool,
    subset: Vec<usize>,
    disjoint: bool,
    bound: f64,
    bound_holds: Option<bool>,
}

fn diagnose(graph: &Path, h: &str, config: &Path, beta: Option<&str>, seed: u64) -> CliResult<Artifact> {
    let (hg, _) = read_h(h)?;
    let g = read_graph(graph)?;
    let cfg = read_config(config)?;
    let q = hg.q();
    let b = match beta {
        Some(text) => parse_beta(text)?,
        None => vec![0.0; q - 1],
    };
    if b.len() != q - 1 {
        return Err(CliError::Lib(hcmrf::Error::Parameter(format!(
            "expected {} beta values, got {}",
            q - 1,
            b.len()
        ))));
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Lib(hcmrf::Error::NonFinite));
    }
    let state = PLState::new(&cfg, &g, &hg)?;
    let rainbow = rainbow_check(&cfg, &g, &hg, &DEFAULT_EPS_GRID)?;
    let bound = disjoint_subset_bound(&g);
    let subsets: Vec<DisjointReport> = (1..q)
        .map(|r| {
            let w: Vec<usize> = (0..g.n()).filter(|&u| !state.allowed(u).contains(r)).collect();
            let applicable = 2 * w.len() >= g.n();
            let subset = neighborhood_disjoint_subset(&g, &w, seed, DisjointStrategy::RandomPermutation);
            DisjointReport {
                color: r,
                w_size: w.len(),
                applicable,
                disjoint: is_neighborhood_disjoint(&g, &subset),
                bound_holds: applicable.then_some(subset.len() as f64 >= bound),
                subset,
                bound,
            }
        })
        .collect();
    let report = json!({
        "n": g.n(),
        "q": q,
        "rainbow": rainbow,
        "degree_stats": degree_stats(&g),
        "b": b,
        "lambda_min": state.min_eigenvalue_neg_hessian(&b),
        "disjoint_subsets": subsets,
    });
    Ok(Artifact {
        body: serde_json::to_string_pretty(&report)?,
        command: "diagnose",
        seed: Some(seed),
        config: json!({ "graph": graph, "h": h_echo(h, &hg), "config": config, "b": b }),
    })
}
