//! Executes a parsed experiment and writes its JSON result and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rwrc::conductance::{sample_field, ConductanceField, FieldRecord};
use rwrc::lattice::{LatticeBox, Site};
use rwrc::scaling::{admissible_alpha, classify_regime, lifshitz_predictor, nonexit_predictor, ScalingParams};
use rwrc::spectrum::{assemble, discretize_potential, lifshitz_mc, lowest_eigenpairs};
use rwrc::varprob::{solve_chi_c, solve_chi_d, ChiCOutcome};
use rwrc::walker::{nonexit_mc, simulate};
use rwrc::{homogenise, rng};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    ChiCParams, ChiDParams, CompareSlopesParams, EigenParams, ExperimentConfig, ExperimentKind, Exponent, HomogParams,
    LifshitzParams, NonExitParams, Params, PredictParams, SampleParams, SimulateParams,
};
use crate::error::{CliError, CliResult};
use crate::slopes::{compare_slopes, SlopePoint};

const WALK_TAG: u64 = 0x51A1;

/// A CSV table written next to the JSON result as `<stem>.<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            name,
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Site coordinates as columns `z1, ..., zd`.
fn site_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("z{i}")).collect()
}

fn site_cells(z: &Site) -> Vec<String> {
    z.iter().map(i64::to_string).collect()
}

fn num(x: f64) -> String {
    x.to_string()
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub result: Value,
    pub tables: Vec<Table>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize to JSON")
}

fn seed_of(config: &ExperimentConfig) -> u64 {
    // Parsing guarantees a seed for every stochastic kind.
    config.seed.unwrap_or(0)
}

/// Runs the experiment without touching the file system (except to read referenced inputs).
pub fn execute(config: &ExperimentConfig) -> CliResult<Outcome> {
    let seed = seed_of(config);
    match &config.params {
        Params::Sample(p) => sample(p, seed),
        Params::Simulate(p) => simulate_walk(p, seed),
        Params::ChiD(p) => chi_d(p, config.seed),
        Params::ChiC(p) => chi_c(p, config.seed),
        Params::Nonexit(p) => nonexit(p, seed),
        Params::Lifshitz(p) => lifshitz(p, seed),
        Params::Homog(p) => homog(p, seed),
        Params::Regime(q) => Ok(Outcome {
            result: to_value(&classify_regime(q.eta, q.d)?),
            tables: Vec::new(),
        }),
        Params::Predict(p) => predict(p),
        Params::Eigen(p) => eigen(p),
        Params::CompareSlopes(p) => slopes(p),
    }
}

fn lattice_of(spec: &rwrc::lattice::BoxSpec) -> CliResult<Arc<LatticeBox>> {
    Ok(Arc::new(LatticeBox::from_spec(spec)?))
}

fn start_or_origin(start: &Option<Site>, d: usize) -> Site {
    start.clone().unwrap_or_else(|| vec![0; d])
}

fn sample(p: &SampleParams, seed: u64) -> CliResult<Outcome> {
    p.model.validate()?;
    let lattice = lattice_of(&p.box_spec)?;
    let record = sample_field(&lattice, &p.model, seed).to_record();
    let mut table = Table::new("edges", site_header(lattice.dim()));
    table.header.extend(["e".into(), "weight".into()]);
    for e in &record.edges {
        let mut row = site_cells(&e.z);
        row.extend([e.e.to_string(), num(e.weight)]);
        table.push(row);
    }
    Ok(Outcome {
        result: to_value(&record),
        tables: vec![table],
    })
}

fn simulate_walk(p: &SimulateParams, seed: u64) -> CliResult<Outcome> {
    p.model.validate()?;
    let lattice = lattice_of(&p.box_spec)?;
    let field = sample_field(&lattice, &p.model, seed);
    let start = start_or_origin(&p.start, lattice.dim());
    let (path, times) = simulate(&field, &start, p.horizon, p.stop_on_exit, rng::child_seed(seed, WALK_TAG, 0))?;
    let d = lattice.dim();
    let mut local = Table::new("local_times", site_header(d));
    local.header.push("time".into());
    let mut occupied = Vec::new();
    for (z, &t) in lattice.sites().zip(times.times()) {
        let mut row = site_cells(&z);
        row.push(num(t));
        local.push(row);
        if t > 0.0 {
            occupied.push(json!({ "z": z, "time": t }));
        }
    }
    let mut jumps = Table::new("jumps", ["time"]);
    jumps.header.extend(site_header(d));
    for j in &path.jumps {
        let mut row = vec![num(j.time)];
        row.extend(site_cells(&j.site));
        jumps.push(row);
    }
    let result = json!({
        "exited": path.exited(),
        "trajectory": path,
        "total_local_time": times.total(),
        "local_times": occupied,
    });
    Ok(Outcome {
        result,
        tables: vec![local, jumps],
    })
}

fn chi_d(p: &ChiDParams, seed: Option<u64>) -> CliResult<Outcome> {
    let exponent = Exponent { p: p.p, eta: p.eta }.resolve()?;
    let lattice = LatticeBox::from_spec(&p.box_spec)?;
    let mut cfg = p.solver.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let r = solve_chi_d(&lattice, exponent, &cfg)?;
    let mut table = Table::new("minimizer", site_header(lattice.dim()));
    table.header.push("g".into());
    for (z, g) in lattice.sites().zip(&r.minimizer) {
        let mut row = site_cells(&z);
        row.push(num(*g));
        table.push(row);
    }
    let result = json!({
        "value": r.value,
        "p": exponent,
        "sites": lattice.len(),
        "minimizer_table": "minimizer",
        "diagnostics": {
            "restarts": r.restarts,
            "restart_values": r.restart_values,
            "best_restart": r.best_restart,
            "final_smoothing": r.final_smoothing,
            "stationarity_residual": r.stationarity_residual,
            "iterations": r.iterations,
            "converged": r.converged,
        },
    });
    Ok(Outcome {
        result,
        tables: vec![table],
    })
}

fn chi_c(p: &ChiCParams, seed: Option<u64>) -> CliResult<Outcome> {
    let exponent = Exponent { p: p.p, eta: p.eta }.resolve()?;
    let mut cfg = p.solver.clone();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let outcome = solve_chi_c(&p.domain, exponent, &p.levels, &cfg)?;
    let (levels, witness) = match &outcome {
        ChiCOutcome::Limit { levels, .. } => (Some(levels), None),
        ChiCOutcome::ZeroInfimum { witness } => (None, Some(witness)),
        ChiCOutcome::Critical { levels, witness } => (Some(levels), Some(witness)),
    };
    let mut tables = Vec::new();
    if let Some(levels) = levels {
        let mut t = Table::new("levels", ["alpha", "sites", "chi_d", "scaled", "converged"]);
        for l in levels {
            t.push(vec![num(l.alpha), l.sites.to_string(), num(l.chi_d), num(l.scaled), l.converged.to_string()]);
        }
        tables.push(t);
    }
    if let Some(witness) = witness {
        let mut t = Table::new("witness", ["parameter", "norm", "energy"]);
        for w in witness {
            t.push(vec![num(w.parameter), num(w.norm), num(w.energy)]);
        }
        tables.push(t);
    }
    let mut result = to_value(&outcome);
    result["p"] = json!(exponent);
    Ok(Outcome { result, tables })
}

fn nonexit(p: &NonExitParams, seed: u64) -> CliResult<Outcome> {
    let lattice = lattice_of(&p.box_spec)?;
    let start = start_or_origin(&p.start, lattice.dim());
    let est = nonexit_mc(&p.model, &lattice, &start, p.t, p.n_env, p.n_walks, seed)?;
    let per_env = &est.per_env;
    let summary = json!({
        "mean": per_env.iter().sum::<f64>() / per_env.len() as f64,
        "min": per_env.iter().copied().fold(f64::INFINITY, f64::min),
        "max": per_env.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "zero_survival_envs": per_env.iter().filter(|&&f| f == 0.0).count(),
    });
    let mut table = Table::new("per_env", ["env", "survival_frequency"]);
    for (i, f) in per_env.iter().enumerate() {
        table.push(vec![i.to_string(), num(*f)]);
    }
    let result = json!({
        "estimate": est.estimate,
        "std_error": est.std_error,
        "ci": est.ci,
        "one_sided": est.one_sided,
        "n_env": est.n_env,
        "n_walks": est.n_walks,
        "n_exit": est.n_exit,
        "per_env_summary": summary,
    });
    Ok(Outcome {
        result,
        tables: vec![table],
    })
}

fn lifshitz(p: &LifshitzParams, seed: u64) -> CliResult<Outcome> {
    let lattice = lattice_of(&p.box_spec)?;
    let table = lifshitz_mc(&p.model, &lattice, &p.eps, p.n_env, seed)?;
    let mut csv = Table::new("rows", ["eps", "count", "frequency", "ci_low", "ci_high", "predicted_log_probability"]);
    for r in &table.rows {
        csv.push(vec![
            num(r.eps),
            r.count.to_string(),
            num(r.frequency),
            num(r.ci_low),
            num(r.ci_high),
            num(r.predicted_log_probability),
        ]);
    }
    Ok(Outcome {
        result: to_value(&table),
        tables: vec![csv],
    })
}

fn homog(p: &HomogParams, seed: u64) -> CliResult<Outcome> {
    let potential = p.potential.clone();
    let v = potential.as_ref().map(|spec| move |y: &[f64]| spec.eval(y));
    let v_ref: Option<&(dyn Fn(&[f64]) -> f64 + Sync)> = v.as_ref().map(|f| f as _);
    let r = homogenise::spectral_convergence_experiment(&p.model, p.d, v_ref, p.j_max, &p.sizes, p.n_env, seed)?;
    let mut eig = Table::new("eigenvalues", ["alpha", "j", "eigenvalue", "std_error", "eigenfunction_distance"]);
    for row in &r.rows {
        for (j, (e, s)) in row.eigenvalues.iter().zip(&row.std_errors).enumerate() {
            let dist = if j == 0 { row.eigenfunction_distance.map(num).unwrap_or_default() } else { String::new() };
            eig.push(vec![num(row.alpha), (j + 1).to_string(), num(*e), num(*s), dist]);
        }
    }
    let mut limits = Table::new("limits", ["j", "limit", "continuum"]);
    for (j, (l, c)) in r.limits.iter().zip(&r.continuum).enumerate() {
        limits.push(vec![(j + 1).to_string(), num(*l), num(*c)]);
    }
    let mut ceff = Table::new("c_eff", ["alpha", "c", "std_error"]);
    for row in &r.c_eff.rows {
        ceff.push(vec![num(row.alpha), num(row.ratio), num(row.std_error)]);
    }
    Ok(Outcome {
        result: to_value(&r),
        tables: vec![eig, limits, ceff],
    })
}

fn predict(p: &PredictParams) -> CliResult<Outcome> {
    let result = match *p {
        PredictParams::Nonexit {
            eta,
            tail_constant,
            d,
            t,
            alpha,
            chi,
            window_ratio,
        } => {
            let params = ScalingParams {
                eta,
                tail_constant,
                d,
                t,
                alpha,
            };
            let prediction = nonexit_predictor(&params, chi)?;
            let scales = params.scales()?;
            let regime = classify_regime(eta, d)?.regime;
            let window = admissible_alpha(t, alpha, eta, d, regime, window_ratio)?;
            json!({
                "mode": "nonexit",
                "prediction": prediction,
                "scales": scales,
                "rate_constant": params.rate_constant(),
                "window": window,
                "window_pass": window.pass(),
            })
        }
        PredictParams::Lifshitz { eta, d, s, chi_c } => {
            json!({ "mode": "lifshitz", "prediction": lifshitz_predictor(eta, d, s, chi_c)? })
        }
    };
    Ok(Outcome {
        result,
        tables: Vec::new(),
    })
}

fn load_field(path: &Path) -> CliResult<ConductanceField> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::config("params.field", format!("{}: {e}", path.display())))?;
    // Accept a whole `sample` result file as well as a bare record.
    if value.get("experiment").is_some() {
        if let Some(inner) = value.get_mut("result") {
            value = inner.take();
        }
    }
    let record: FieldRecord = serde_path_to_error::deserialize(value)
        .map_err(|e| CliError::config("params.field", format!("{}: {} at {}", path.display(), e.inner(), e.path())))?;
    Ok(ConductanceField::from_record(&record)?)
}

fn eigen(p: &EigenParams) -> CliResult<Outcome> {
    let field = match (&p.field, &p.uniform) {
        (Some(path), _) => load_field(path)?,
        (None, Some(u)) => ConductanceField::constant(&lattice_of(&u.box_spec)?, u.value)?,
        (None, None) => unreachable!("checked when parsing"),
    };
    let lattice = field.lattice().clone();
    let potential = p.potential.as_ref().map(|spec| discretize_potential(|y| spec.eval(y), &lattice));
    let op = assemble(&field, potential.as_deref(), p.laplace_scale)?;
    if p.count > op.len() {
        return Err(CliError::config(
            "params.count",
            format!("box has only {} sites", op.len()),
        ));
    }
    let pairs = lowest_eigenpairs(&op, p.count, op.tolerance(p.tol))?;
    let mut table = Table::new("eigenvector", site_header(lattice.dim()));
    table.header.push("v".into());
    for (z, v) in lattice.sites().zip(&pairs[0].eigenvector) {
        let mut row = site_cells(&z);
        row.push(num(*v));
        table.push(row);
    }
    let result = json!({
        "value": pairs[0].eigenvalue,
        "eigenvalues": pairs.iter().map(|r| r.eigenvalue).collect::<Vec<_>>(),
        "residuals": pairs.iter().map(|r| r.residual).collect::<Vec<_>>(),
        "iterations": pairs.iter().map(|r| r.iterations).collect::<Vec<_>>(),
        "sites": lattice.len(),
    });
    Ok(Outcome {
        result,
        tables: vec![table],
    })
}

fn read_slope_table(path: &Path) -> CliResult<Vec<SlopePoint>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| CliError::config("params.table_file", format!("{} row {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn slopes(p: &CompareSlopesParams) -> CliResult<Outcome> {
    let points = match (&p.table, &p.table_file) {
        (Some(t), _) => t.clone(),
        (None, Some(path)) => read_slope_table(path)?,
        (None, None) => unreachable!("checked when parsing"),
    };
    let source = if p.table.is_some() { "params.table" } else { "params.table_file" };
    let report = compare_slopes(&points, p.predicted_slope).map_err(|e| CliError::config(source, e.to_string()))?;
    let mut table = Table::new("points", ["x", "estimate", "lo", "hi", "fitted"]);
    for q in &points {
        let fitted = (report.intercept + report.slope * q.x).exp();
        table.push(vec![num(q.x), num(q.estimate), num(q.lo), num(q.hi), num(fitted)]);
    }
    Ok(Outcome {
        result: to_value(&report),
        tables: vec![table],
    })
}

#[derive(Debug, Clone, Serialize)]
struct Versions {
    rwrc: &'static str,
    #[serde(rename = "rwrc-cli")]
    rwrc_cli: &'static str,
}

const VERSIONS: Versions = Versions {
    rwrc: rwrc::VERSION,
    rwrc_cli: env!("CARGO_PKG_VERSION"),
};

#[derive(Serialize)]
struct Envelope<'a> {
    experiment: ExperimentKind,
    config_hash: &'a str,
    versions: Versions,
    seed: Option<u64>,
    /// File names of the CSV tables, relative to the result file.
    tables: Vec<String>,
    result: &'a Value,
}

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct Written {
    pub result: PathBuf,
    pub tables: Vec<PathBuf>,
}

fn table_path(output: &Path, name: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    output.with_file_name(format!("{stem}.{name}.csv"))
}

fn write_table(path: &Path, table: &Table, header_line: &str) -> CliResult<()> {
    let mut out = Vec::new();
    out.extend_from_slice(header_line.as_bytes());
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Executes `config` and writes `output` plus one CSV per table beside it.
pub fn run(config: &ExperimentConfig) -> CliResult<Written> {
    let outcome = execute(config)?;
    let output = &config.output;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let table_paths: Vec<PathBuf> = outcome.tables.iter().map(|t| table_path(output, t.name)).collect();
    let envelope = Envelope {
        experiment: config.kind,
        config_hash: config.hash(),
        versions: VERSIONS,
        seed: config.seed,
        tables: table_paths
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        result: &outcome.result,
    };
    let mut json = serde_json::to_string_pretty(&envelope).expect("envelope serializes");
    json.push('\n');
    fs::write(output, json).map_err(|e| CliError::io(output, e))?;
    let header_line = format!(
        "# experiment={} config_hash={} rwrc={} rwrc-cli={}\n",
        config.kind,
        config.hash(),
        VERSIONS.rwrc,
        VERSIONS.rwrc_cli
    );
    for (table, path) in outcome.tables.iter().zip(&table_paths) {
        write_table(path, table, &header_line)?;
    }
    Ok(Written {
        result: output.clone(),
        tables: table_paths,
    })
}
