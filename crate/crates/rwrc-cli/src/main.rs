use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rwrc_cli::{run, CliError, ExperimentConfig};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "rwrc", version, about = "Random walks among random conductances: experiment runner")]
struct Cli {
    /// Worker threads for the parallel ensembles (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a JSON experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample a conductance field on a box.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        geometry: BoxArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate one walk and record its local times.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        geometry: BoxArgs,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        start: Option<Vec<i64>>,
        #[arg(long)]
        horizon: f64,
        /// Keep the walk in the box instead of killing it at the first exit.
        #[arg(long)]
        reflect: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Discrete p-energy infimum on a box.
    ChiD {
        #[command(flatten)]
        geometry: BoxArgs,
        #[command(flatten)]
        exponent: ExponentArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Continuum constant from rescaled discrete problems (or the vanishing witness).
    ChiC {
        #[arg(long = "G", value_parser = parse_domain, allow_hyphen_values = true)]
        domain: Value,
        #[command(flatten)]
        exponent: ExponentArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Annealed non-exit probability by Monte Carlo.
    Nonexit {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        geometry: BoxArgs,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n_env: usize,
        #[arg(long)]
        n_walks: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        start: Option<Vec<i64>>,
        #[command(flatten)]
        common: Common,
    },
    /// Lifshitz tail frequencies of the principal eigenvalue.
    Lifshitz {
        #[arg(long)]
        eta: f64,
        #[arg(long = "D")]
        tail_constant: f64,
        #[arg(long, default_value_t = 1.0)]
        cap: f64,
        #[command(flatten)]
        geometry: BoxArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        eps_grid: Vec<f64>,
        #[arg(long)]
        n_env: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Spectral homogenisation for an elliptic environment on the unit cube.
    Homog {
        #[arg(long)]
        lambda: f64,
        /// Equiprobable conductance values; uniform on [lambda, 1/lambda] when absent.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        d: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jmax: usize,
        #[arg(long)]
        n_env: usize,
        /// Potential as JSON, e.g. '{"kind":"linear","gradient":[1.0]}'.
        #[arg(long = "V")]
        potential: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Classify (eta, d).
    Regime {
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        d: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a predictor.
    Predict {
        #[arg(long, value_enum)]
        mode: PredictMode,
        /// Predictor parameters as a JSON object.
        #[arg(long)]
        params: String,
        #[command(flatten)]
        common: Common,
    },
    /// Lowest Dirichlet eigenpairs of a sampled or uniform field.
    Eigen {
        /// Field file written by `sample`.
        #[arg(long, conflicts_with_all = ["d", "n", "alpha", "domain"])]
        field: Option<PathBuf>,
        #[command(flatten)]
        geometry: OptionalBoxArgs,
        /// Potential as JSON.
        #[arg(long = "V")]
        potential: Option<String>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit ln(estimate) against x and compare with a predicted slope.
    CompareSlopes {
        /// CSV with columns x,estimate,lo,hi.
        #[arg(long)]
        table: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        predicted_slope: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictMode {
    Nonexit,
    Lifshitz,
}

#[derive(Args)]
struct Common {
    /// Required by the stochastic experiments.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Tail,
    Elliptic,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "tail")]
    model: ModelKind,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long = "D")]
    tail_constant: Option<f64>,
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

/// Either `--n` for the cube `[-n, n]^d` at unit scale or `--alpha` with `--G`.
#[derive(Args)]
struct BoxArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, conflicts_with_all = ["alpha", "domain"])]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Intervals as "lo,hi;lo,hi".
    #[arg(long = "G", value_parser = parse_domain, allow_hyphen_values = true)]
    domain: Option<Value>,
}

#[derive(Args)]
struct OptionalBoxArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, conflicts_with_all = ["alpha", "domain"])]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "G", value_parser = parse_domain, allow_hyphen_values = true)]
    domain: Option<Value>,
}

#[derive(Args)]
struct ExponentArgs {
    #[arg(long, conflicts_with = "eta")]
    p: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

fn parse_domain(s: &str) -> Result<Value, String> {
    s.split(';')
        .map(|interval| {
            let ends: Vec<f64> = interval
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
                .collect::<Result<_, _>>()?;
            match ends[..] {
                [lo, hi] => Ok(json!([lo, hi])),
                _ => Err(format!("interval {interval:?} needs exactly two endpoints")),
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::Array)
}

fn insert_some(map: &mut Map<String, Value>, key: &str, value: Option<impl Into<Value>>) {
    if let Some(v) = value {
        map.insert(key.into(), v.into());
    }
}

fn box_json(d: Option<usize>, n: Option<usize>, alpha: Option<f64>, domain: Option<Value>) -> Value {
    match n {
        Some(n) => {
            let d = d.unwrap_or(1);
            let h = n as f64 + 0.5;
            json!({ "d": d, "alpha": 1.0, "G": vec![[-h, h]; d] })
        }
        None => {
            let domain = domain.unwrap_or(Value::Null);
            let d = d.or_else(|| domain.as_array().map(Vec::len)).unwrap_or(0);
            json!({ "d": d, "alpha": alpha.unwrap_or(1.0), "G": domain })
        }
    }
}

impl BoxArgs {
    fn to_json(&self) -> Value {
        box_json(self.d, self.n, self.alpha, self.domain.clone())
    }
}

impl ModelArgs {
    fn to_json(&self) -> Value {
        let mut m = Map::new();
        match self.model {
            ModelKind::Tail => {
                m.insert("model".into(), "tail".into());
                insert_some(&mut m, "eta", self.eta);
                insert_some(&mut m, "D", self.tail_constant);
                insert_some(&mut m, "cap", self.cap);
            }
            ModelKind::Elliptic => {
                m.insert("model".into(), "elliptic".into());
                insert_some(&mut m, "lambda", self.lambda);
                elliptic_law(&mut m, self.values.clone());
            }
        }
        Value::Object(m)
    }
}

fn elliptic_law(m: &mut Map<String, Value>, values: Option<Vec<f64>>) {
    match values {
        Some(values) => {
            let weights = vec![1.0; values.len()];
            m.insert("law".into(), "discrete".into());
            m.insert("values".into(), json!(values));
            m.insert("weights".into(), json!(weights));
        }
        None => {
            m.insert("law".into(), "uniform".into());
        }
    }
}

impl SolverArgs {
    fn to_json(&self) -> Value {
        let mut m = Map::new();
        insert_some(&mut m, "restarts", self.restarts);
        insert_some(&mut m, "max_iter", self.max_iter);
        insert_some(&mut m, "tol", self.tol);
        Value::Object(m)
    }
}

fn parse_json_arg(text: &str, path: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::config(path, e.to_string()))
}

fn document(kind: &str, common: &Common, params: Value) -> Value {
    let mut doc = json!({ "experiment": kind, "output": common.out, "params": params });
    if let Some(seed) = common.seed {
        doc["seed"] = json!(seed);
    }
    doc
}

fn build(command: Command) -> Result<ExperimentConfig, CliError> {
    let doc = match command {
        Command::Run { config } => return ExperimentConfig::from_path(&config),
        Command::Sample { model, geometry, common } => {
            document("sample", &common, json!({ "model": model.to_json(), "box": geometry.to_json() }))
        }
        Command::Simulate {
            model,
            geometry,
            start,
            horizon,
            reflect,
            common,
        } => {
            let mut p = json!({ "model": model.to_json(), "box": geometry.to_json(),
                "horizon": horizon, "stop_on_exit": !reflect });
            if let Some(s) = start {
                p["start"] = json!(s);
            }
            document("simulate", &common, p)
        }
        Command::ChiD {
            geometry,
            exponent,
            solver,
            common,
        } => {
            let mut p = json!({ "box": geometry.to_json(), "solver": solver.to_json() });
            let m = p.as_object_mut().expect("object literal");
            insert_some(m, "p", exponent.p);
            insert_some(m, "eta", exponent.eta);
            document("chi-d", &common, p)
        }
        Command::ChiC {
            domain,
            exponent,
            levels,
            solver,
            common,
        } => {
            let mut p = json!({ "G": domain, "levels": levels, "solver": solver.to_json() });
            let m = p.as_object_mut().expect("object literal");
            insert_some(m, "p", exponent.p);
            insert_some(m, "eta", exponent.eta);
            document("chi-c", &common, p)
        }
        Command::Nonexit {
            model,
            geometry,
            t,
            n_env,
            n_walks,
            start,
            common,
        } => {
            let mut p = json!({ "model": model.to_json(), "box": geometry.to_json(),
                "t": t, "n_env": n_env, "n_walks": n_walks });
            if let Some(s) = start {
                p["start"] = json!(s);
            }
            document("nonexit", &common, p)
        }
        Command::Lifshitz {
            eta,
            tail_constant,
            cap,
            geometry,
            eps_grid,
            n_env,
            common,
        } => document(
            "lifshitz",
            &common,
            json!({ "model": { "eta": eta, "D": tail_constant, "cap": cap }, "box": geometry.to_json(),
                "eps": eps_grid, "n_env": n_env }),
        ),
        Command::Homog {
            lambda,
            values,
            d,
            sizes,
            jmax,
            n_env,
            potential,
            common,
        } => {
            let mut model = Map::new();
            model.insert("lambda".into(), json!(lambda));
            elliptic_law(&mut model, values);
            let mut p = json!({ "model": model, "d": d, "sizes": sizes, "j_max": jmax, "n_env": n_env });
            if let Some(v) = potential {
                p["potential"] = parse_json_arg(&v, "params.potential")?;
            }
            document("homog", &common, p)
        }
        Command::Regime { eta, d, common } => document("regime", &common, json!({ "eta": eta, "d": d })),
        Command::Predict { mode, params, common } => {
            let mut p = parse_json_arg(&params, "params")?;
            let mode = match mode {
                PredictMode::Nonexit => "nonexit",
                PredictMode::Lifshitz => "lifshitz",
            };
            match p.as_object_mut() {
                Some(m) => m.insert("mode".into(), mode.into()),
                None => return Err(CliError::config("params", "must be a JSON object")),
            };
            document("predict", &common, p)
        }
        Command::Eigen {
            field,
            geometry,
            potential,
            count,
            tol,
            common,
        } => {
            let mut p = json!({ "count": count });
            match field {
                Some(path) => p["field"] = json!(path),
                None => {
                    p["uniform"] = json!({
                        "box": box_json(geometry.d, geometry.n, geometry.alpha, geometry.domain),
                    })
                }
            }
            if let Some(v) = potential {
                p["potential"] = parse_json_arg(&v, "params.potential")?;
            }
            if let Some(tol) = tol {
                p["tol"] = json!(tol);
            }
            document("eigen", &common, p)
        }
        Command::CompareSlopes {
            table,
            predicted_slope,
            common,
        } => document(
            "compare-slopes",
            &common,
            json!({ "table_file": table, "predicted_slope": predicted_slope }),
        ),
    };
    ExperimentConfig::from_value(doc)
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": message.trim_end() } }));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(CliError::config("threads", e.to_string()));
        }
    }
    let config = match build(cli.command) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match run(&config) {
        Ok(written) => {
            println!("{}", written.result.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
