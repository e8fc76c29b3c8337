//! The `hiermed` command line.
//!
//! Exit codes: 0 on success, 2 for usage or validation errors, 3 for problems
//! with a data file. Sweeps and predictions default to CSV, point
//! evaluations to text and simulations to JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::blup::{blup_weights, population_blue, predict_scalar, CenterParams, CenterSummaries};
use crate::criterion::{a_criterion, efficiency, mse_alpha};
use crate::error::Error;
use crate::model::{ApproxDesign, ExactDesign, ModelDims, VarianceRatios};
use crate::optimizer::{
    optimize_allocation, rescaled_grid, round_to_exact, run_sweep, HeldRatio, SweepAxis, SweepRow,
    SweepSpec, DEFAULT_TOLERANCE,
};
use crate::simulation::{empirical_mse, SimConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "HIERMED_THREADS";

/// Header of the sweep CSV.
pub const SWEEP_HEADER: &str = "axis,r,ratio,u,v,w_star,phi_star,phi_balanced,efficiency";

#[derive(Debug, Parser)]
#[command(
    name = "hiermed",
    version,
    about = "Optimal treatment allocation for predicting center effects in multi-center trials"
)]
pub struct Cli {
    /// Output format (default depends on the command)
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Write output to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// A-optimal allocation rate, optionally rounded to an exact design
    Optimize(OptimizeArgs),
    /// Effect-prediction MSE matrix and A-criterion at one design
    Criterion(CriterionArgs),
    /// A-efficiency of a reference allocation rate
    Efficiency(EfficiencyArgs),
    /// Optimal allocation and efficiency over a grid of rescaled variance ratios
    Sweep(SweepArgs),
    /// Predict center intercepts and treatment effects from raw observations
    Predict(PredictArgs),
    /// Monte Carlo check of the analytic prediction MSE
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Number of centers
    #[arg(long = "K")]
    centers: usize,
    /// Individuals per center
    #[arg(long = "N")]
    center_size: usize,
    /// Intercept variance ratio
    #[arg(long, allow_negative_numbers = true)]
    u: f64,
    /// Treatment-effect variance ratio
    #[arg(long, allow_negative_numbers = true)]
    v: f64,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<(ModelDims, VarianceRatios), CliError> {
        Ok((
            ModelDims::new(self.centers, self.center_size)?,
            VarianceRatios::new(self.u, self.v)?,
        ))
    }
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Width of the final search bracket
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Also report the best exact design and the adjacent runner-up
    #[arg(long)]
    exact: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("design").required(true).args(["w", "n"]))]
struct CriterionArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Allocation rate to the treatment group
    #[arg(long, allow_negative_numbers = true)]
    w: Option<f64>,
    /// Treated individuals per center
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Args)]
struct EfficiencyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Reference allocation rate
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    w0: f64,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    V,
    U,
    Q,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeldArg {
    U,
    V,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Ratio to sweep: v (u fixed), u (v fixed) or q = v/u
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated fixed values, one output block each
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    fixed: Vec<f64>,
    /// Number of grid points on the rescaled axis (0, 1)
    #[arg(long)]
    grid: usize,
    /// Ratio held at the fixed values for q sweeps
    #[arg(long, value_enum, default_value = "u")]
    q_held: HeldArg,
    #[arg(long = "K")]
    centers: usize,
    #[arg(long = "N")]
    center_size: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// CSV with header `center,group,y`, group T or C
    #[arg(long)]
    data: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    u: f64,
    #[arg(long, allow_negative_numbers = true)]
    v: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Treated individuals per center
    #[arg(long)]
    n: usize,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    sigma: f64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Formats `x` with 12 significant digits, plain decimal notation for
/// moderate magnitudes and `e` notation otherwise.
pub fn format_sig(x: f64) -> String {
    const DIGITS: usize = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS as i32).contains(&exp) {
        let decimals = (DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Key/value lines for text output.
struct TextReport(String);

impl TextReport {
    fn new() -> Self {
        Self(String::new())
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        writeln!(self.0, "{key:<16}{value}").unwrap();
        self
    }

    fn num(&mut self, key: &str, value: f64) -> &mut Self {
        self.line(key, format_sig(value))
    }
}

fn unsupported(format: Format, command: &str) -> CliError {
    CliError::Usage(format!("--format {format:?} is not supported by `{command}`").to_lowercase())
}

#[derive(Serialize)]
struct ScenarioOut {
    #[serde(rename = "K")]
    centers: usize,
    #[serde(rename = "N")]
    center_size: usize,
    u: f64,
    v: f64,
}

impl ScenarioOut {
    fn new(dims: &ModelDims, ratios: &VarianceRatios) -> Self {
        Self {
            centers: dims.centers(),
            center_size: dims.center_size(),
            u: ratios.u(),
            v: ratios.v(),
        }
    }

    fn write_text(&self, t: &mut TextReport) {
        t.line("K", self.centers)
            .line("N", self.center_size)
            .num("u", self.u)
            .num("v", self.v);
    }
}

#[derive(Serialize)]
struct ExactDesignOut {
    n: usize,
    w: f64,
    phi: f64,
}

#[derive(Serialize)]
struct ExactOut {
    best: ExactDesignOut,
    runner_up: Option<ExactDesignOut>,
}

#[derive(Serialize)]
struct OptimizeOut {
    #[serde(flatten)]
    scenario: ScenarioOut,
    w_star: f64,
    phi_star: f64,
    iterations: usize,
    bracket_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactOut>,
}

fn cmd_optimize(args: &OptimizeArgs, format: Format) -> Result<String, CliError> {
    let (dims, ratios) = args.scenario.resolve()?;
    let optimum = optimize_allocation(&dims, &ratios, args.tol)?;
    let exact = args.exact.then(|| {
        let rounded = round_to_exact(&dims, &ratios, optimum);
        let out = |d: ExactDesign, phi: f64| ExactDesignOut {
            n: d.treated(),
            w: d.rate(),
            phi,
        };
        ExactOut {
            best: out(rounded.design, rounded.phi.value()),
            runner_up: rounded.runner_up.map(|(d, phi)| out(d, phi.value())),
        }
    });
    let report = OptimizeOut {
        scenario: ScenarioOut::new(&dims, &ratios),
        w_star: optimum.w_star,
        phi_star: optimum.phi_star,
        iterations: optimum.iterations,
        bracket_width: optimum.bracket_width,
        exact,
    };
    match format {
        Format::Json => Ok(to_json(&report)),
        Format::Text => {
            let mut t = TextReport::new();
            report.scenario.write_text(&mut t);
            t.num("w_star", report.w_star)
                .num("phi_star", report.phi_star)
                .line("iterations", report.iterations)
                .num("bracket_width", report.bracket_width);
            if let Some(exact) = &report.exact {
                t.line("n_star", exact.best.n).num("phi_exact", exact.best.phi);
                if let Some(r) = &exact.runner_up {
                    t.line("runner_up_n", r.n).num("runner_up_phi", r.phi);
                }
            }
            Ok(t.0)
        }
        Format::Csv => Err(unsupported(format, "optimize")),
    }
}

#[derive(Serialize)]
struct CriterionOut {
    #[serde(flatten)]
    scenario: ScenarioOut,
    w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    averaging: f64,
    centering: f64,
    phi: f64,
}

fn cmd_criterion(args: &CriterionArgs, format: Format) -> Result<String, CliError> {
    let (dims, ratios) = args.scenario.resolve()?;
    let design = match (args.w, args.n) {
        (Some(w), None) => ApproxDesign::new(w)?,
        (None, Some(n)) => ExactDesign::new(dims, n)?.into(),
        _ => return Err(CliError::Usage("give exactly one of --w and --n".into())),
    };
    let mse = mse_alpha(&dims, &ratios, &design);
    let report = CriterionOut {
        scenario: ScenarioOut::new(&dims, &ratios),
        w: design.rate(),
        n: args.n,
        averaging: mse.averaging,
        centering: mse.centering,
        phi: mse.trace(),
    };
    match format {
        Format::Json => Ok(to_json(&report)),
        Format::Text => {
            let mut t = TextReport::new();
            report.scenario.write_text(&mut t);
            t.num("w", report.w);
            if let Some(n) = report.n {
                t.line("n", n);
            }
            t.num("averaging", report.averaging)
                .num("centering", report.centering)
                .num("phi", report.phi);
            Ok(t.0)
        }
        Format::Csv => Err(unsupported(format, "criterion")),
    }
}

#[derive(Serialize)]
struct EfficiencyOut {
    #[serde(flatten)]
    scenario: ScenarioOut,
    w_ref: f64,
    phi_ref: f64,
    w_star: f64,
    phi_star: f64,
    efficiency: f64,
}

fn cmd_efficiency(args: &EfficiencyArgs, format: Format) -> Result<String, CliError> {
    let (dims, ratios) = args.scenario.resolve()?;
    let reference = ApproxDesign::new(args.w0)?;
    let optimum = optimize_allocation(&dims, &ratios, args.tol)?;
    let report = EfficiencyOut {
        scenario: ScenarioOut::new(&dims, &ratios),
        w_ref: reference.rate(),
        phi_ref: a_criterion(&dims, &ratios, &reference).value(),
        w_star: optimum.w_star,
        phi_star: optimum.phi_star,
        efficiency: efficiency(&dims, &ratios, &reference, &optimum.design()),
    };
    match format {
        Format::Json => Ok(to_json(&report)),
        Format::Text => {
            let mut t = TextReport::new();
            report.scenario.write_text(&mut t);
            t.num("w_ref", report.w_ref)
                .num("phi_ref", report.phi_ref)
                .num("w_star", report.w_star)
                .num("phi_star", report.phi_star)
                .num("efficiency", report.efficiency);
            Ok(t.0)
        }
        Format::Csv => Err(unsupported(format, "efficiency")),
    }
}

/// Renders sweep rows as CSV with [`SWEEP_HEADER`].
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let fields = [
            row.r,
            row.ratio,
            row.u,
            row.v,
            row.w_star,
            row.phi_star,
            row.phi_balanced,
            row.efficiency,
        ];
        out.push_str(&row.axis.to_string());
        for x in fields {
            out.push(',');
            out.push_str(&format_sig(x));
        }
        out.push('\n');
    }
    out
}

fn cmd_sweep(args: &SweepArgs, format: Format) -> Result<String, CliError> {
    let dims = ModelDims::new(args.centers, args.center_size)?;
    let axis = match args.axis {
        AxisArg::V => SweepAxis::V,
        AxisArg::U => SweepAxis::U,
        AxisArg::Q => SweepAxis::Q,
    };
    let held = match args.q_held {
        HeldArg::U => HeldRatio::U,
        HeldArg::V => HeldRatio::V,
    };
    let spec = SweepSpec::new(axis, args.fixed.clone(), rescaled_grid(args.grid)?, dims)?
        .with_q_held(held)?
        .with_tolerance(args.tol)?;
    let rows = run_sweep(&spec)?;
    match format {
        Format::Csv | Format::Text => Ok(sweep_csv(&rows)),
        Format::Json => Ok(to_json(&rows)),
    }
}

#[derive(Debug, Deserialize)]
struct Observation {
    center: i64,
    group: String,
    y: f64,
}

#[derive(Default)]
struct CenterData {
    treatment: Vec<f64>,
    control: Vec<f64>,
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len() as f64
}

/// Reads `center,group,y` rows and checks that all centers share one `(N, n)`.
fn read_observations(path: &Path) -> Result<(ExactDesign, Vec<i64>, CenterSummaries), CliError> {
    let data_err = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["center", "group", "y"] {
        return Err(data_err(format!(
            "expected header `center,group,y`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut centers: BTreeMap<i64, CenterData> = BTreeMap::new();
    for (idx, record) in reader.deserialize::<Observation>().enumerate() {
        let line = idx + 2;
        let obs = record.map_err(|e| data_err(format!("line {line}: {e}")))?;
        if !obs.y.is_finite() {
            return Err(data_err(format!("line {line}: center {} has non-finite y", obs.center)));
        }
        let entry = centers.entry(obs.center).or_default();
        match obs.group.as_str() {
            "T" => entry.treatment.push(obs.y),
            "C" => entry.control.push(obs.y),
            other => {
                return Err(data_err(format!(
                    "line {line}: center {} has group `{other}`, expected T or C",
                    obs.center
                )))
            }
        }
    }
    let Some(first) = centers.values().next() else {
        return Err(data_err("no observations".into()));
    };
    let expected = (first.treatment.len(), first.control.len());
    for (id, c) in &centers {
        if c.treatment.is_empty() {
            return Err(data_err(format!("center {id} has no treatment (T) observations")));
        }
        if c.control.is_empty() {
            return Err(data_err(format!("center {id} has no control (C) observations")));
        }
        if (c.treatment.len(), c.control.len()) != expected {
            return Err(data_err(format!(
                "center {id} has {} treated and {} control observations, expected {} and {}",
                c.treatment.len(),
                c.control.len(),
                expected.0,
                expected.1
            )));
        }
    }
    let dims = ModelDims::new(centers.len(), expected.0 + expected.1)?;
    let design = ExactDesign::new(dims, expected.0)?;
    let ids = centers.keys().copied().collect();
    let (treatment, control) = centers
        .values()
        .map(|c| (mean(&c.treatment), mean(&c.control)))
        .unzip();
    let summaries = CenterSummaries::new(treatment, control).map_err(|e| data_err(e.to_string()))?;
    Ok((design, ids, summaries))
}

#[derive(Serialize)]
struct CenterOut {
    center: i64,
    mu_hat: f64,
    alpha_hat: f64,
}

#[derive(Serialize)]
struct PredictOut {
    #[serde(rename = "K")]
    centers: usize,
    #[serde(rename = "N")]
    center_size: usize,
    n: usize,
    u: f64,
    v: f64,
    population: CenterParams,
    predictions: Vec<CenterOut>,
}

fn cmd_predict(args: &PredictArgs, format: Format) -> Result<String, CliError> {
    let ratios = VarianceRatios::new(args.u, args.v)?;
    let (design, ids, summaries) = read_observations(&args.data)?;
    let predictions = predict_scalar(&summaries, &blup_weights(&ratios, &design));
    let report = PredictOut {
        centers: design.dims().centers(),
        center_size: design.dims().center_size(),
        n: design.treated(),
        u: ratios.u(),
        v: ratios.v(),
        population: population_blue(&summaries),
        predictions: ids
            .iter()
            .zip(&predictions.centers)
            .map(|(&center, p)| CenterOut {
                center,
                mu_hat: p.intercept,
                alpha_hat: p.effect,
            })
            .collect(),
    };
    match format {
        Format::Json => Ok(to_json(&report)),
        Format::Csv | Format::Text => {
            let mut out = String::from("kind,center,mu_hat,alpha_hat\n");
            for p in &report.predictions {
                writeln!(out, "center,{},{},{}", p.center, format_sig(p.mu_hat), format_sig(p.alpha_hat)).unwrap();
            }
            writeln!(
                out,
                "population,,{},{}",
                format_sig(report.population.intercept),
                format_sig(report.population.effect)
            )
            .unwrap();
            Ok(out)
        }
    }
}

fn cmd_simulate(args: &SimulateArgs, format: Format) -> Result<String, CliError> {
    let (dims, ratios) = args.scenario.resolve()?;
    let design = ExactDesign::new(dims, args.n)?;
    let config = SimConfig::new(design, ratios, args.reps, args.seed)
        .with_means(args.mu, args.alpha)
        .with_sigma(args.sigma);
    let report = empirical_mse(&config)?;
    match format {
        Format::Json => Ok(to_json(&report)),
        Format::Text => {
            let mut t = TextReport::new();
            ScenarioOut::new(&dims, &ratios).write_text(&mut t);
            t.line("n", args.n)
                .line("replications", args.reps)
                .line("seed", args.seed)
                .num("empirical_trace", report.empirical_trace)
                .num("analytic_trace", report.analytic_trace)
                .num("relative_error", report.relative_error)
                .num("standard_error", report.standard_error)
                .line("within_3_se", report.within_three_se);
            Ok(t.0)
        }
        Format::Csv => Err(unsupported(format, "simulate")),
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let format = cli.format;
    match &cli.command {
        Command::Optimize(a) => cmd_optimize(a, format.unwrap_or(Format::Text)),
        Command::Criterion(a) => cmd_criterion(a, format.unwrap_or(Format::Text)),
        Command::Efficiency(a) => cmd_efficiency(a, format.unwrap_or(Format::Text)),
        Command::Sweep(a) => cmd_sweep(a, format.unwrap_or(Format::Csv)),
        Command::Predict(a) => cmd_predict(a, format.unwrap_or(Format::Csv)),
        Command::Simulate(a) => cmd_simulate(a, format.unwrap_or(Format::Json)),
    }
}

/// Parses `HIERMED_THREADS`; `Err` carries a warning for unusable values.
fn thread_cap(value: Option<String>) -> Result<Option<usize>, String> {
    match value {
        None => Ok(None),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("ignoring {THREADS_ENV}={s:?}: expected a positive integer")),
        },
    }
}

/// Runs the command line with explicit argument list and output streams,
/// returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(rendered.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(rendered.as_bytes());
                    2
                }
            };
        }
    };

    let threads = match thread_cap(std::env::var(THREADS_ENV).ok()) {
        Ok(n) => n,
        Err(warning) => {
            let _ = writeln!(stderr, "warning: {warning}");
            None
        }
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(_) => execute(&cli),
        },
        None => execute(&cli),
    };

    let output = match result {
        Ok(output) => output,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            return e.exit_code();
        }
    };
    let written = match &cli.out {
        Some(path) => std::fs::write(path, &output).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => stdout.write_all(output.as_bytes()).map_err(|e| e.to_string()),
    };
    match written {
        Ok(()) => 0,
        Err(message) => {
            let _ = writeln!(stderr, "error: {message}");
            2
        }
    }
}
