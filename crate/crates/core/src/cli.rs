//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2 failed computation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::bias::{first_order_bias, BiasOptions};
use crate::chart::{chart_for, read_plot_rows, render_svg, ChartKind};
use crate::dataset::{read_csv_with_schema, write_csv, CsvSchema, GridSpec, SpatialDataset};
use crate::error::{Error, Result};
use crate::glm::{
    bootstrap_ci, fit, naive_ci, population_odds_ratio, BootstrapConfig, Family, GlmData, GroupContrast, ModelSpec,
    Resampling, Statistic,
};
use crate::kernels::KernelFamily;
use crate::masking::{apply, build_operator, compose_two_step};
use crate::risk::{assess, IntruderScenario};
use crate::sim::{profile, profile_rows, read_rows, run_study, write_rows, SimConfig, StudyRow};

/// Version of the JSON config layout; every config file carries it as `schema_version`.
pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "smoothmask", version, about = "Mask spatial data by kernel smoothing and measure utility and disclosure risk")]
struct Cli {
    /// Worker threads (defaults to RAYON_NUM_THREADS, else the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Smooth outcome and regressors with a kernel operator and write the masked CSV.
    Mask(MaskArgs),
    /// Fit a GLM and report coefficients, naive intervals and optional odds ratio / bootstrap.
    Fit(FitArgs),
    /// Expected rate of correct record matches for an intruder scenario.
    Risk(RiskArgs),
    /// First-order bias of masked-data coefficients at λ = 0.
    Bias(BiasArgs),
    /// Run a replicate simulation study; writes study.csv, profile.csv and metadata.json.
    Simulate(SimulateArgs),
    /// Extract the (kernel, λ, MSE, risk) profile from a study CSV.
    Profile(ProfileArgs),
    /// Render a study or profile CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct Columns {
    /// Id column.
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Number rows instead of reading an id column.
    #[arg(long)]
    no_id: bool,
    /// First coordinate column.
    #[arg(long, default_value = "lon")]
    lon_col: String,
    /// Second coordinate column.
    #[arg(long, default_value = "lat")]
    lat_col: String,
    /// Outcome column.
    #[arg(long, default_value = "y")]
    outcome_col: String,
    /// Optional count column (exposure or binomial trials).
    #[arg(long)]
    count_col: Option<String>,
    /// Regressor columns, comma separated; default is every remaining column.
    #[arg(long, value_delimiter = ',')]
    regressors: Vec<String>,
}

impl Columns {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: (!self.no_id).then(|| self.id_col.clone()),
            lon: self.lon_col.clone(),
            lat: self.lat_col.clone(),
            regressors: self.regressors.clone(),
            outcome: self.outcome_col.clone(),
            count: self.count_col.clone(),
            order: Vec::new(),
        }
    }
}

#[derive(Debug, Args)]
struct MaskArgs {
    /// Input dataset CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Kernel JSON: {"schema_version": 1, "family": ..., "params": {...}}.
    #[arg(long)]
    kernel: PathBuf,
    /// Smoothness λ ≥ 0; 0 releases the data unchanged.
    #[arg(long, allow_hyphen_values = true)]
    lambda: f64,
    /// Output CSV, same columns as the input plus a leading provenance comment.
    #[arg(long)]
    out: PathBuf,
    /// Grid JSON; when given, aggregate to cells first and smooth cell rates (two-step masking).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Also write the N×N operator as CSV. Audit use only: releasing the kernel and λ lets an
    /// intruder invert the masking.
    #[arg(long)]
    operator_out: Option<PathBuf>,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Strategy {
    /// Resample rows of the data as given.
    Rows,
    /// Resample rows of the unmasked --in data, then mask each sample with --kernel and --lambda.
    Remask,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Model JSON: {"schema_version": 1, "family": "poisson-log" | "binomial-logit" | "gaussian-identity", ...}.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Group regressor for the population odds ratio (binomial-logit only).
    #[arg(long)]
    odds_ratio: Option<String>,
    /// Number of bootstrap replicates; 0 skips the bootstrap.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Bootstrap resampling strategy.
    #[arg(long, value_enum, default_value = "rows")]
    strategy: Strategy,
    /// Kernel JSON; with --lambda, --in is masked before fitting (required by remask).
    #[arg(long)]
    kernel: Option<PathBuf>,
    /// Smoothness used with --kernel.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Seed for the bootstrap.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Debug, Args)]
struct RiskArgs {
    /// Released (masked) CSV.
    #[arg(long)]
    masked: PathBuf,
    /// Original CSV with the intruder's true values.
    #[arg(long)]
    truth: PathBuf,
    /// Scenario JSON: {"schema_version": 1, "ap_columns": [...], "u_columns": [...], ...}.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario's Monte Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Debug, Args)]
struct BiasArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    kernel: PathBuf,
    /// Coefficients, intercept first, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "fit")]
    beta: Vec<f64>,
    /// Fit report JSON from `fit`, whose coefficients are used.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, default_value = "poisson-log")]
    family: String,
    /// Design without intercept column.
    #[arg(long)]
    no_intercept: bool,
    /// Finite-difference step for R₀ (non-flat kernels only).
    #[arg(long)]
    h_step: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    columns: Columns,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Study config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Study CSV written by `simulate`.
    #[arg(long)]
    study: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Estimates,
    Mse,
    Risk,
    Tradeoff,
    Widthratio,
}

impl From<Kind> for ChartKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Estimates => ChartKind::Estimates,
            Kind::Mse => ChartKind::Mse,
            Kind::Risk => ChartKind::Risk,
            Kind::Tradeoff => ChartKind::Tradeoff,
            Kind::Widthratio => ChartKind::WidthRatio,
        }
    }
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Study or profile CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Output SVG.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Mask(a) => mask(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Risk(a) => risk_cmd(a),
        Command::Bias(a) => bias_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Profile(a) => profile_cmd(a),
        Command::Plot(a) => plot(a),
    }
}

/// Reads a JSON config, checking and removing its `schema_version`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::invalid("config must be a JSON object"))?;
    match obj.remove("schema_version") {
        Some(Value::Number(n)) if n.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(Error::invalid(format!("unsupported schema_version {v}; expected {SCHEMA_VERSION}"))),
        None => return Err(Error::invalid(format!("missing schema_version (expected {SCHEMA_VERSION})"))),
    }
    Ok(serde_json::from_value(value)?)
}

/// Writes to a temporary file next to `path` and renames it into place on success.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|e| Error::io(path, e))
    })
}

fn load(path: &Path, columns: &Columns) -> Result<(SpatialDataset, CsvSchema)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_with_schema(file, &columns.schema())
}

fn mask(a: MaskArgs) -> Result<()> {
    let kernel: KernelFamily = read_config(&a.kernel)?;
    kernel.validate()?;
    let (data, schema) = load(&a.input, &a.columns)?;
    let (masked, schema, operator) = match &a.grid {
        Some(g) => {
            let grid: GridSpec = read_config(g)?;
            let m = compose_two_step(&data, &grid, &kernel, a.lambda)?;
            let schema = CsvSchema {
                id: Some(schema.id.clone().unwrap_or_else(|| "id".into())),
                count: Some(schema.count.clone().unwrap_or_else(|| "n".into())),
                ..schema
            };
            let op = match &a.operator_out {
                Some(_) => Some(build_operator(&m.data.locations(), &kernel, a.lambda)?),
                None => None,
            };
            (m, schema, op)
        }
        None => {
            let op = build_operator(&data.locations(), &kernel, a.lambda)?;
            let m = apply(&op, &data)?;
            (m, schema, Some(op))
        }
    };
    write_atomic(&a.out, |w| {
        writeln!(w, "# smoothmask {} {}", env!("CARGO_PKG_VERSION"), masked.provenance()).map_err(|e| Error::io(&a.out, e))?;
        write_csv(w, &masked.data, &schema)
    })?;
    if let (Some(path), Some(op)) = (&a.operator_out, operator) {
        eprintln!("warning: the exported operator reveals the kernel and λ; releasing it enables reconstruction of the original data");
        write_atomic(path, |w| op.write_csv(w))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    family: Family,
    names: Vec<String>,
    beta: Vec<f64>,
    se_naive: Vec<f64>,
    ci: Vec<(f64, f64)>,
    level: f64,
    deviance: f64,
    dispersion: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    odds_ratio: Option<OrReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootReport>,
}

#[derive(Serialize)]
struct OrReport {
    group: String,
    or_value: f64,
    log_or: f64,
    log_or_se_naive: f64,
    ci: (f64, f64),
    p_present: f64,
    p_absent: f64,
}

#[derive(Serialize)]
struct BootReport {
    statistic: String,
    replicates: usize,
    strategy: String,
    seed: u64,
    se: f64,
    interval: (f64, f64),
    failed: usize,
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let spec: ModelSpec = read_config(&a.model)?;
    let (original, _) = load(&a.input, &a.columns)?;
    let kernel: Option<KernelFamily> = a.kernel.as_deref().map(read_config).transpose()?;
    let data = match (&kernel, a.lambda) {
        (Some(k), Some(l)) => apply(&build_operator(&original.locations(), k, l)?, &original)?.data,
        (None, None) => original.clone(),
        _ => return Err(Error::invalid("--kernel and --lambda go together")),
    };
    let design = GlmData::from_dataset(&spec, &data)?;
    let f = fit(spec.family, &design)?;
    if !f.converged {
        return Err(Error::Numerical(format!("IRLS did not converge in {} iterations", f.iterations)));
    }
    let ci = naive_ci(&f, a.level)?;
    let contrast = a.odds_ratio.as_ref().map(GroupContrast::new);
    let odds_ratio = match &contrast {
        Some(c) => {
            let or = population_odds_ratio(&f, &design, c, a.level)?;
            Some(OrReport {
                group: c.column.clone(),
                or_value: or.or_value,
                log_or: or.log_or,
                log_or_se_naive: or.log_or_se_naive,
                ci: or.ci,
                p_present: or.p_present,
                p_absent: or.p_absent,
            })
        }
        None => None,
    };
    let bootstrap = if a.bootstrap > 0 {
        let (statistic, label) = match &contrast {
            Some(c) => (Statistic::LogOddsRatio(c.clone()), format!("log-or:{}", c.column)),
            None => {
                let k = f.names.len() - 1;
                (Statistic::Coefficient(k), format!("coefficient:{}", f.names[k]))
            }
        };
        let resampling = match a.strategy {
            Strategy::Rows => Resampling::Rows,
            Strategy::Remask => Resampling::Remask {
                original: &original,
                spec: &spec,
                kernel: kernel
                    .as_ref()
                    .ok_or_else(|| Error::invalid("--strategy remask needs --kernel"))?,
                lambda: a.lambda.ok_or_else(|| Error::invalid("--strategy remask needs --lambda"))?,
            },
        };
        let cfg = BootstrapConfig {
            replicates: a.bootstrap,
            seed: a.seed,
            level: a.level,
        };
        let b = bootstrap_ci(spec.family, &design, &statistic, &cfg, resampling)?;
        Some(BootReport {
            statistic: label,
            replicates: a.bootstrap,
            strategy: format!("{:?}", a.strategy).to_lowercase(),
            seed: a.seed,
            se: b.se,
            interval: b.interval,
            failed: b.failed,
        })
    } else {
        None
    };
    let report = FitReport {
        family: f.family,
        names: f.names.clone(),
        beta: f.beta.iter().copied().collect(),
        se_naive: f.se(),
        ci,
        level: a.level,
        deviance: f.deviance,
        dispersion: f.dispersion,
        iterations: f.iterations,
        converged: f.converged,
        odds_ratio,
        bootstrap,
    };
    write_json(&a.out, &report)
}

fn risk_cmd(a: RiskArgs) -> Result<()> {
    let mut scenario: IntruderScenario = read_config(&a.scenario)?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    let (released, _) = load(&a.masked, &a.columns)?;
    let (truth, _) = load(&a.truth, &a.columns)?;
    let report = assess(&released, &truth, &scenario)?;
    write_json(&a.out, &report)
}

fn bias_cmd(a: BiasArgs) -> Result<()> {
    let kernel: KernelFamily = read_config(&a.kernel)?;
    kernel.validate()?;
    let family: Family = serde_json::from_value(Value::String(a.family.clone()))
        .map_err(|_| Error::invalid(format!("unknown family '{}'", a.family)))?;
    let (data, _) = load(&a.input, &a.columns)?;
    let beta = match (&a.fit, a.beta.is_empty()) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: Value = serde_json::from_str(&text)?;
            serde_json::from_value::<Vec<f64>>(v.get("beta").cloned().unwrap_or(Value::Null))
                .map_err(|_| Error::invalid(format!("{}: no numeric 'beta' array", path.display())))?
        }
        (None, false) => a.beta.clone(),
        (None, true) => return Err(Error::invalid("supply --beta or --fit")),
    };
    let names = data.regressor_names().to_vec();
    let cols: Vec<Vec<f64>> = (0..names.len()).map(|k| data.regressor(k)).collect();
    let design = GlmData::new(names, &cols, data.outcome(), !a.no_intercept)?;
    let opts = BiasOptions { h_step: a.h_step };
    let report = first_order_bias(&design, &data.locations(), &kernel, family, &DVector::from_vec(beta), &opts)?;
    write_json(&a.out, &report)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimConfig = read_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let result = run_study(&cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_atomic(&a.out.join("study.csv"), |w| write_rows(w, &result.rows))?;
    write_atomic(&a.out.join("profile.csv"), |w| write_rows(w, &profile(&result)))?;
    write_json(&a.out.join("metadata.json"), &result.metadata)
}

fn profile_cmd(a: ProfileArgs) -> Result<()> {
    let file = File::open(&a.study).map_err(|e| Error::io(&a.study, e))?;
    let rows: Vec<StudyRow> = read_rows(file)?;
    write_atomic(&a.out, |w| write_rows(w, &profile_rows(&rows)))
}

fn plot(a: PlotArgs) -> Result<()> {
    let kind = ChartKind::from(a.kind);
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let rows = read_plot_rows(file, kind)?;
    let svg = render_svg(&chart_for(&rows, kind)?)?;
    write_atomic(&a.out, |w| w.write_all(svg.as_bytes()).map_err(|e| Error::io(&a.out, e)))
}
