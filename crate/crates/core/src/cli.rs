use std::fs::File;
use std::io::{self, Read};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use bell_lab::metrics::{ch_sum, lhv_extrema, qm_counts, AnalyzerQuad, CountMode};
use bell_lab::model::{DetectionModel, EntangledState, PolarizerModel};
use bell_lab::optimize::{critical_efficiency, maximize_ch, scan_f, OptimizerSettings};
use bell_lab::sim::{
    estimate_f, fit_fringe, noise_mix_for_visibility, read_fringe_csv, simulate_fringe,
    simulate_run, BasisCounts, RunRecord, SimConfig,
};
use bell_lab::{CountModel, LabError};

/// Published detection-efficiency limits for weakly and maximally
/// entangled pairs.
const PUBLISHED_ETA_WEAK: f64 = 0.67;
const PUBLISHED_ETA_MAXIMAL: f64 = 0.81;

#[derive(Debug, Parser)]
#[command(
    name = "bell-lab",
    version,
    about = "Clauser-Horne Bell-test laboratory"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// RNG seed for simulations.
    #[arg(long, global = true, env = "BELL_LAB_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Digits after the decimal point in table output.
    #[arg(long, global = true, default_value_t = 6)]
    pub precision: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    CoincidenceNormalized,
    Singles,
}

impl From<ModeArg> for CountMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CoincidenceNormalized => CountMode::CoincidenceNormalized,
            ModeArg::Singles => CountMode::Singles,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expected CH counts, CH sum and R for given settings.
    Predict(PredictArgs),
    /// CH-maximizing analyzer settings.
    Optimize(OptimizeArgs),
    /// Optimize over a list of f values.
    ScanF(ScanArgs),
    /// Critical symmetric detection efficiency for each f.
    CriticalEta(CriticalArgs),
    /// One Monte Carlo CH run.
    Simulate(SimulateArgs),
    /// Monte Carlo fringe with one polarizer fixed.
    Fringe(FringeArgs),
    /// Fit A cos^2(theta - phi) + B to angle_deg,count CSV.
    Fit(InputArgs),
    /// Recompute the CH report of a saved simulate run (JSON).
    Analyze(InputArgs),
    /// Estimate f from V/V and H/H coincidences.
    EstimateF(EstimateArgs),
    /// CH extrema over deterministic local strategies.
    Lhv,
}

#[derive(Debug, Args, Serialize)]
pub struct StateArgs {
    /// Real part of f in |HH> + f |VV>.
    #[arg(long = "f")]
    pub f: f64,
    /// Imaginary part of f.
    #[arg(long = "f-im", default_value_t = 0.0)]
    pub f_im: f64,
}

impl StateArgs {
    fn state(&self) -> bell_lab::Result<EntangledState> {
        EntangledState::new(Complex64::new(self.f, self.f_im))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PolArgs {
    /// Arm-1 transmission along the polarizer axis.
    #[arg(long, default_value_t = 1.0)]
    pub eps_par_1: f64,
    /// Arm-1 leakage across the polarizer axis.
    #[arg(long, default_value_t = 0.0)]
    pub eps_perp_1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eps_par_2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps_perp_2: f64,
}

impl PolArgs {
    fn model(&self) -> PolarizerModel {
        PolarizerModel {
            eps_par_1: self.eps_par_1,
            eps_perp_1: self.eps_perp_1,
            eps_par_2: self.eps_par_2,
            eps_perp_2: self.eps_perp_2,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DetArgs {
    /// Arm-1 detection efficiency.
    #[arg(long, default_value_t = 1.0)]
    pub eta_1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta_2: f64,
    /// Dark-count rate on arm 1, counts/s.
    #[arg(long, default_value_t = 0.0)]
    pub dark_1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dark_2: f64,
    /// Entangled pairs per second.
    #[arg(long, default_value_t = 1.0)]
    pub pair_rate: f64,
    /// Coincidence window, s.
    #[arg(long, default_value_t = 0.0)]
    pub window: f64,
    /// Integration time per setting, s.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
}

impl DetArgs {
    fn model(&self) -> DetectionModel {
        DetectionModel {
            eta_1: self.eta_1,
            eta_2: self.eta_2,
            dark_1: self.dark_1,
            dark_2: self.dark_2,
            pair_rate: self.pair_rate,
            window: self.window,
            duration: self.duration,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub state: StateArgs,
    /// theta1,theta2,theta1',theta2' in degrees.
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true)]
    pub angles: [f64; 4],
    #[arg(long, value_enum, default_value_t = ModeArg::CoincidenceNormalized)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub pol: PolArgs,
    #[command(flatten)]
    pub det: DetArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 5.0)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 20_000)]
    pub budget: usize,
}

impl SearchArgs {
    fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            grid_step_deg: self.grid_step,
            starts: self.starts,
            budget: self.budget,
            ..OptimizerSettings::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::CoincidenceNormalized)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub pol: PolArgs,
    #[command(flatten)]
    pub det: DetArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ScanArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub f_values: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::CoincidenceNormalized)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub pol: PolArgs,
    #[command(flatten)]
    pub det: DetArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CriticalArgs {
    /// One or more f values in [0, 1], comma separated.
    #[arg(long = "f", value_delimiter = ',', required = true)]
    pub f: Vec<f64>,
    /// Dark counts per emitted pair on each arm.
    #[arg(long, default_value_t = 0.0)]
    pub background: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SourceArgs {
    #[command(flatten)]
    pub state: StateArgs,
    /// White-noise fraction of the source.
    #[arg(long, default_value_t = 0.0)]
    pub noise_mix: f64,
    /// Choose noise_mix so the expected fringe at --theta-fixed has this
    /// visibility (overrides --noise-mix).
    #[arg(long)]
    pub target_visibility: Option<f64>,
    /// Fixed polarizer angle of the fringe, degrees.
    #[arg(long, default_value_t = 45.0, allow_negative_numbers = true)]
    pub theta_fixed: f64,
    #[command(flatten)]
    pub pol: PolArgs,
    #[command(flatten)]
    pub det: DetArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// theta1,theta2,theta1',theta2' in degrees.
    #[arg(long, value_parser = parse_angles, allow_hyphen_values = true, default_value = "67.5,45,22.5,0")]
    pub angles: [f64; 4],
}

#[derive(Debug, Args, Serialize)]
pub struct FringeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 36)]
    pub points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub per_point_duration: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Input file; `-` reads standard input.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Coincidences with both polarizers at 0 deg.
    #[arg(long)]
    pub n_vv: f64,
    /// Coincidences with both polarizers at 90 deg.
    #[arg(long)]
    pub n_hh: f64,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(LabError),
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Domain(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
        }
    }
}

/// What a subcommand produced.
pub enum Body {
    Record(Value),
    /// Rows of a CSV-able table; also serialized under `result` in JSON.
    Table {
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
        json: Value,
    },
}

pub struct Outcome {
    pub command: &'static str,
    pub config: Value,
    pub body: Body,
    /// Set when an optimizer ran out of budget.
    pub non_converged: bool,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn parse_angles(s: &str) -> Result<[f64; 4], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated angles, got {}", v.len()))
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let res = if path.as_os_str() == "-" {
        io::stdin().read_to_end(&mut buf)
    } else {
        File::open(path).and_then(|mut f| f.read_to_end(&mut buf))
    };
    res.map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(buf)
}

impl SourceArgs {
    fn config(&self, quad: AnalyzerQuad, seed: u64) -> Result<SimConfig, CliError> {
        let mut cfg = SimConfig {
            state: self.state.state()?,
            pol: self.pol.model(),
            det: self.det.model(),
            quad,
            seed,
            noise_mix: self.noise_mix,
        };
        if let Some(v) = self.target_visibility {
            cfg.noise_mix = noise_mix_for_visibility(&cfg, self.theta_fixed, v)?;
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    let config = |args: Value| json!({ "global": to_value(g), "args": args });
    let resolved_config = |args: Value, cfg: &SimConfig| json!({ "global": to_value(g), "args": args, "resolved": cfg });
    let record = |command, args: Value, result: Value| Outcome {
        command,
        config: config(args),
        body: Body::Record(result),
        non_converged: false,
    };

    match &cli.command {
        Command::Predict(a) => {
            let quad = AnalyzerQuad::from_array(a.angles)?;
            let counts = qm_counts(
                &a.state.state()?,
                &quad,
                &a.pol.model(),
                &a.det.model(),
                a.mode.into(),
            )?;
            let report = ch_sum(&counts);
            Ok(record(
                "predict",
                to_value(a),
                json!({ "quad": quad, "counts": counts, "report": report }),
            ))
        }
        Command::Optimize(a) => {
            let model = CountModel::new(
                a.state.state()?,
                a.pol.model(),
                a.det.model(),
                a.mode.into(),
            )?;
            let res = maximize_ch(&model, &a.search.settings())?;
            let mut out = record("optimize", to_value(a), to_value(&res));
            out.non_converged = !res.converged;
            Ok(out)
        }
        Command::ScanF(a) => {
            let scan = scan_f(
                &a.f_values,
                &a.pol.model(),
                &a.det.model(),
                a.mode.into(),
                &a.search.settings(),
            )?;
            let columns = [
                "f",
                "theta1",
                "theta2",
                "theta1_prime",
                "theta2_prime",
                "ch_max",
                "r_at_max",
                "converged",
            ];
            let rows = scan
                .entries
                .iter()
                .map(|e| {
                    let q = e.result.quad;
                    vec![
                        json!(e.f),
                        json!(q.theta1),
                        json!(q.theta2),
                        json!(q.theta1_prime),
                        json!(q.theta2_prime),
                        json!(e.result.ch_max),
                        json!(e.result.r_at_max),
                        json!(e.result.converged),
                    ]
                })
                .collect();
            let non_converged = scan.entries.iter().any(|e| !e.result.converged);
            Ok(Outcome {
                command: "scan-f",
                config: config(to_value(a)),
                body: Body::Table {
                    columns: columns.iter().map(|s| s.to_string()).collect(),
                    rows,
                    json: to_value(&scan),
                },
                non_converged,
            })
        }
        Command::CriticalEta(a) => {
            let settings = a.search.settings();
            let thresholds =
                a.f.iter()
                    .map(|&f| critical_efficiency(f, a.background, a.tol, &settings))
                    .collect::<bell_lab::Result<Vec<_>>>()?;
            let columns = [
                "f",
                "background",
                "eta_star",
                "lower",
                "upper",
                "theta1",
                "theta2",
                "theta1_prime",
                "theta2_prime",
            ];
            let rows = thresholds
                .iter()
                .map(|t| {
                    let q = t.quad_at_threshold;
                    vec![
                        json!(t.f),
                        json!(t.background),
                        json!(t.eta_star),
                        json!(t.lower),
                        json!(t.upper),
                        json!(q.theta1),
                        json!(q.theta2),
                        json!(q.theta1_prime),
                        json!(q.theta2_prime),
                    ]
                })
                .collect();
            Ok(Outcome {
                command: "critical-eta",
                config: config(to_value(a)),
                body: Body::Table {
                    columns: columns.iter().map(|s| s.to_string()).collect(),
                    rows,
                    json: json!({
                        "thresholds": thresholds,
                        "published_limit_weak_entanglement": PUBLISHED_ETA_WEAK,
                        "published_limit_maximal_entanglement": PUBLISHED_ETA_MAXIMAL,
                    }),
                },
                non_converged: false,
            })
        }
        Command::Simulate(a) => {
            let cfg = a
                .source
                .config(AnalyzerQuad::from_array(a.angles)?, g.seed)?;
            let run = simulate_run(&cfg)?;
            Ok(Outcome {
                command: "simulate",
                config: resolved_config(to_value(a), &cfg),
                body: Body::Record(to_value(&run)),
                non_converged: false,
            })
        }
        Command::Fringe(a) => {
            let cfg = a
                .source
                .config(AnalyzerQuad::maximal_entanglement(), g.seed)?;
            let points =
                simulate_fringe(&cfg, a.source.theta_fixed, a.points, a.per_point_duration)?;
            Ok(Outcome {
                command: "fringe",
                config: resolved_config(to_value(a), &cfg),
                body: Body::Table {
                    columns: vec!["angle_deg".into(), "count".into()],
                    rows: points
                        .iter()
                        .map(|p| vec![json!(p.angle_deg), json!(p.count)])
                        .collect(),
                    json: to_value(&points),
                },
                non_converged: false,
            })
        }
        Command::Fit(a) => {
            let bytes = read_input(&a.input)?;
            let points = read_fringe_csv(bytes.as_slice())
                .map_err(|e| CliError::Usage(format!("bad fringe CSV: {e}")))?;
            let fit = fit_fringe(&points)?;
            Ok(record(
                "fit",
                to_value(a),
                json!({ "fit": fit, "reduced_chi2": fit.reduced_chi2(), "points": points.len() }),
            ))
        }
        Command::Analyze(a) => {
            let bytes = read_input(&a.input)?;
            let doc: Value = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Usage(format!("bad run JSON: {e}")))?;
            // accept either a bare RunRecord or a full `simulate` document
            let run_value = doc.get("result").cloned().unwrap_or(doc);
            let run: RunRecord = serde_json::from_value(run_value)
                .map_err(|e| CliError::Usage(format!("not a run record: {e}")))?;
            let report = run.reanalyze();
            Ok(record(
                "analyze",
                to_value(a),
                json!({ "counts": run.counts.to_sextet(), "report": report, "matches_record": report == run.report }),
            ))
        }
        Command::EstimateF(a) => {
            let est = estimate_f(&BasisCounts {
                n_vv: a.n_vv,
                n_hh: a.n_hh,
            })?;
            Ok(record(
                "estimate-f",
                to_value(a),
                json!({ "f_hat": est.value, "sigma_f": est.sigma }),
            ))
        }
        Command::Lhv => {
            let lhv = lhv_extrema();
            let rows = lhv
                .strategies
                .iter()
                .map(|(s, ch)| {
                    vec![
                        json!(s.a1),
                        json!(s.a2),
                        json!(s.b1),
                        json!(s.b2),
                        json!(ch),
                    ]
                })
                .collect();
            Ok(Outcome {
                command: "lhv",
                config: config(json!({})),
                body: Body::Table {
                    columns: ["a1", "a2", "b1", "b2", "ch"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    rows,
                    json: to_value(&lhv),
                },
                non_converged: false,
            })
        }
    }
}

/// Leaf values keyed by dotted path.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&key(k), child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.clone())),
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn pretty(v: &Value, precision: usize) -> String {
    match v {
        Value::Number(n) if n.is_f64() => {
            format!("{:.*}", precision, n.as_f64().unwrap_or(f64::NAN))
        }
        Value::Null => "-".into(),
        other => plain(other),
    }
}

pub fn render(outcome: &Outcome, format: Format, precision: usize) -> String {
    let mut config = Vec::new();
    flatten("", &outcome.config, &mut config);
    match format {
        Format::Json => {
            let result = match &outcome.body {
                Body::Record(v) => v.clone(),
                Body::Table { json, .. } => json.clone(),
            };
            let doc =
                json!({ "command": outcome.command, "config": outcome.config, "result": result });
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = String::new();
            for (k, v) in &config {
                s.push_str(&format!("# {k}={}\n", plain(v)));
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            match &outcome.body {
                Body::Record(v) => {
                    let mut leaves = Vec::new();
                    flatten("", v, &mut leaves);
                    w.write_record(["key", "value"]).expect("in-memory write");
                    for (k, v) in leaves {
                        w.write_record([k, plain(&v)]).expect("in-memory write");
                    }
                }
                Body::Table { columns, rows, .. } => {
                    w.write_record(columns).expect("in-memory write");
                    for row in rows {
                        w.write_record(row.iter().map(plain))
                            .expect("in-memory write");
                    }
                }
            }
            s.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
            s
        }
        Format::Table => {
            let mut s = format!("# bell-lab {}\n", outcome.command);
            for (k, v) in &config {
                s.push_str(&format!("# {k} = {}\n", plain(v)));
            }
            match &outcome.body {
                Body::Record(v) => {
                    let mut leaves = Vec::new();
                    flatten("", v, &mut leaves);
                    let width = leaves.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                    for (k, v) in leaves {
                        s.push_str(&format!("{k:<width$}  {}\n", pretty(&v, precision)));
                    }
                }
                Body::Table { columns, rows, .. } => {
                    let cells: Vec<Vec<String>> = rows
                        .iter()
                        .map(|r| r.iter().map(|v| pretty(v, precision)).collect())
                        .collect();
                    let widths: Vec<usize> = columns
                        .iter()
                        .enumerate()
                        .map(|(i, c)| {
                            cells
                                .iter()
                                .map(|r| r[i].len())
                                .chain([c.len()])
                                .max()
                                .unwrap_or(0)
                        })
                        .collect();
                    let line = |items: Vec<&str>| {
                        items
                            .iter()
                            .zip(&widths)
                            .map(|(c, w)| format!("{c:>w$}"))
                            .collect::<Vec<_>>()
                            .join("  ")
                    };
                    s.push_str(&line(columns.iter().map(String::as_str).collect()));
                    s.push('\n');
                    for r in &cells {
                        s.push_str(&line(r.iter().map(String::as_str).collect()));
                        s.push('\n');
                    }
                }
            }
            s
        }
    }
}
