//! Command-line front end for `eqstab`: loads system definitions, runs the
//! analyses and writes JSON reports plus optional CSV and SVG artifacts.
//!
//! Exit codes: 0 on success, 1 when an analysis (or writing an artifact)
//! fails, 2 on usage errors such as bad flags or a missing input file.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csv_out;
pub mod report;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use eqstab::eig::Eigenvalue;
use eqstab::greitzer::{self, CompressorParams, CompressorState, SurgeBoundary, SweepRow, EXPERIMENTAL_SURGE_FLOW};
use eqstab::sim::{
    detect_limit_cycle, integrate, outcome, phase_portrait, AsymptoticOutcome, IntegrateOptions, LimitCycleOptions,
    LimitCycleReport, Method, Seeds, Termination,
};
use eqstab::stability::{
    bendixson_test, classify, eigen_field, linspace, popov_scalar_inequality, popov_test, taylor_lure,
    BendixsonVerdict, ClassifyOptions, LureSystem, PopovOptions, PopovResult, Region, Uniqueness, VerdictKind,
    TOL_ZERO,
};
use eqstab::system::{builtin, parse_named_system, JacobianMethod, BUILTINS};
use eqstab::DynamicalSystem;
use serde::Serialize;

use csv_out::{trajectory_table, Table};
use report::{eigen_list, ErrorBody, ErrorInfo, Report, SystemInfo};
use svg::{PlotSeries, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANALYSIS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "EQSTAB_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn analysis(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_ANALYSIS,
            message: message.to_string(),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::analysis(format!("{e:#}"))
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "eqstab",
    version,
    about = "Extended-Jacobian stability analysis of nonlinear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Locate equilibria in a region and classify stability.
    Analyze(AnalyzeArgs),
    /// Integrate trajectories from many seeds.
    Portrait(PortraitArgs),
    /// Integrate one trajectory.
    Simulate(SimulateArgs),
    /// Jacobian spectra on a grid over the region.
    SweepEig(SweepEigArgs),
    /// Popov frequency-domain criterion for a Lur'e system.
    Popov(PopovArgs),
    /// Bendixson divergence test on a planar box.
    Bendixson(BendixsonArgs),
    /// Greitzer compressor model.
    #[command(subcommand)]
    Compressor(CompressorCommand),
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    /// System definition file.
    #[arg(long, conflicts_with = "builtin")]
    pub file: Option<PathBuf>,
    /// Built-in system: example1..example4, greitzer.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Throttle parameter for the greitzer built-in.
    #[arg(long)]
    pub g: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RegionArgs {
    /// Box `a:b[,a:b...]`; a single interval applies to every axis.
    #[arg(long, allow_hyphen_values = true)]
    pub region: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct OutputArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write tabular data as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write a plot as SVG.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Multistart nodes per axis.
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    /// Real parts within this of zero count as zero.
    #[arg(long, default_value_t = TOL_ZERO)]
    pub tol_zero: f64,
    /// Also run the Popov test on the linearization (one-dimensional systems).
    #[arg(long)]
    pub popov: bool,
    /// Sector bound for `--popov`; unbounded when omitted.
    #[arg(long, requires = "popov")]
    pub popov_k: Option<f64>,
    /// Also run the Bendixson test on the region (planar systems).
    #[arg(long)]
    pub bendixson: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PortraitArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Number of random seeds drawn from the region.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Explicit seeds `a,b;c,d`, replacing the random ones.
    #[arg(long)]
    pub starts: Option<String>,
    #[arg(long, default_value_t = 20.0)]
    pub t_end: f64,
    /// Distance to the equilibrium accepted as convergence.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Rkf45,
    Rk4,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Initial state `a[,b...]`.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 10.0)]
    pub t_end: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Rkf45)]
    pub method: MethodArg,
    /// Fixed step for rk4.
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub atol: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub rtol: f64,
    /// Largest adaptive step.
    #[arg(long)]
    pub max_step: Option<f64>,
    /// Look for a limit cycle in this component (1-based).
    #[arg(long)]
    pub cycle_component: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepEigArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PopovArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    /// Scalar Lur'e system `x' = a x - phi(x)` instead of a linearized system.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["file", "builtin"])]
    pub a: Option<f64>,
    /// Sector bound; unbounded when omitted.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long, default_value_t = 9)]
    pub grid: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BendixsonArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub region: RegionArgs,
    #[arg(long, default_value_t = 21)]
    pub grid: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct CompressorArgs {
    /// Characteristic value at zero flow.
    #[arg(long, default_value_t = 0.352)]
    pub shutoff: f64,
    /// Semi-height of the cubic characteristic.
    #[arg(long, default_value_t = 0.18)]
    pub semi_height: f64,
    /// Semi-width of the cubic characteristic.
    #[arg(long, default_value_t = 0.25)]
    pub semi_width: f64,
    /// Stability parameter B.
    #[arg(long, default_value_t = 0.8)]
    pub b: f64,
}

impl CompressorArgs {
    fn params(&self) -> CliResult<CompressorParams> {
        let p = CompressorParams {
            psi_c0: self.shutoff,
            h: self.semi_height,
            w: self.semi_width,
            b: self.b,
        };
        p.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Subcommand)]
pub enum CompressorCommand {
    /// Tabulate the compressor characteristic over the working range.
    Characteristic {
        #[command(flatten)]
        params: CompressorArgs,
        #[arg(long, default_value_t = 161)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Flow where the equilibrium loses stability.
    Boundary {
        #[command(flatten)]
        params: CompressorArgs,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Eigenvalues of the equilibrium along the working range.
    Sweep {
        #[command(flatten)]
        params: CompressorArgs,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        from: f64,
        #[arg(long, default_value_t = 0.8)]
        to: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Perturb an equilibrium and look for surge oscillations.
    Surge {
        #[command(flatten)]
        params: CompressorArgs,
        /// Equilibrium flow; sets the throttle accordingly.
        #[arg(long, conflicts_with = "g")]
        phi: Option<f64>,
        /// Throttle parameter.
        #[arg(long)]
        g: Option<f64>,
        #[arg(long, default_value_t = 400.0)]
        t_end: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Reports go to stdout unless `--out` is given;
/// diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let out_path = output_args(&cli.command).out.clone();
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {}", err.message);
            let kind = if err.code == EXIT_USAGE { "usage" } else { "analysis" };
            let body = ErrorBody {
                error: ErrorInfo {
                    kind,
                    exit_code: err.code,
                    message: err.message.clone(),
                },
            };
            let _ = emit_json(&Report::new(command_name(&cli.command), body), out_path.as_deref());
            err.code
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        if n > 0 {
            // fails only if a pool already exists, e.g. when run() is called twice
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Analyze(_) => "analyze",
        Command::Portrait(_) => "portrait",
        Command::Simulate(_) => "simulate",
        Command::SweepEig(_) => "sweep-eig",
        Command::Popov(_) => "popov",
        Command::Bendixson(_) => "bendixson",
        Command::Compressor(CompressorCommand::Characteristic { .. }) => "compressor characteristic",
        Command::Compressor(CompressorCommand::Boundary { .. }) => "compressor boundary",
        Command::Compressor(CompressorCommand::Sweep { .. }) => "compressor sweep",
        Command::Compressor(CompressorCommand::Surge { .. }) => "compressor surge",
    }
}

fn output_args(c: &Command) -> &OutputArgs {
    match c {
        Command::Analyze(a) => &a.output,
        Command::Portrait(a) => &a.output,
        Command::Simulate(a) => &a.output,
        Command::SweepEig(a) => &a.output,
        Command::Popov(a) => &a.output,
        Command::Bendixson(a) => &a.output,
        Command::Compressor(
            CompressorCommand::Characteristic { output, .. }
            | CompressorCommand::Boundary { output, .. }
            | CompressorCommand::Sweep { output, .. }
            | CompressorCommand::Surge { output, .. },
        ) => output,
    }
}

fn dispatch(c: &Command) -> CliResult<()> {
    match c {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Portrait(a) => cmd_portrait(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::SweepEig(a) => cmd_sweep_eig(a),
        Command::Popov(a) => cmd_popov(a),
        Command::Bendixson(a) => cmd_bendixson(a),
        Command::Compressor(cc) => match cc {
            CompressorCommand::Characteristic { params, points, output } => {
                cmd_characteristic(&params.params()?, *points, output)
            }
            CompressorCommand::Boundary { params, tol, output } => cmd_boundary(&params.params()?, *tol, output),
            CompressorCommand::Sweep {
                params,
                points,
                from,
                to,
                output,
            } => cmd_sweep(&params.params()?, *points, *from, *to, output),
            CompressorCommand::Surge {
                params,
                phi,
                g,
                t_end,
                output,
            } => cmd_surge(&params.params()?, *phi, *g, *t_end, output),
        },
    }
}

// ---- inputs ----

struct Loaded {
    sys: DynamicalSystem,
    info: SystemInfo,
    builtin: Option<String>,
}

fn load_system(a: &SystemArgs) -> CliResult<Loaded> {
    let (sys, source, builtin_name) = match (&a.file, &a.builtin) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read system file {}: {e}", path.display())))?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            let sys =
                parse_named_system(&text, name).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            (sys, "file".to_string(), None)
        }
        (None, Some(name)) => {
            let sys =
                builtin(name, a.g).map_err(|e| CliError::usage(format!("{e} (available: {})", BUILTINS.join(", "))))?;
            (sys, format!("builtin:{name}"), Some(name.clone()))
        }
        (None, None) => return Err(CliError::usage("one of --file or --builtin is required")),
        (Some(_), Some(_)) => return Err(CliError::usage("--file and --builtin are mutually exclusive")),
    };
    let info = SystemInfo::new(&sys, source);
    Ok(Loaded {
        sys,
        info,
        builtin: builtin_name,
    })
}

/// Parses `a:b[,a:b...]`; one interval is repeated for every axis.
pub fn parse_region(text: &str, dim: usize) -> Result<Region, String> {
    let mut bounds = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| format!("interval `{part}` is not of the form a:b"))?;
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{part}`"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{part}`"))?;
        bounds.push([lo, hi]);
    }
    if bounds.len() == 1 && dim > 1 {
        bounds = vec![bounds[0]; dim];
    }
    if bounds.len() != dim {
        return Err(format!(
            "region has {} intervals, system has dimension {dim}",
            bounds.len()
        ));
    }
    Region::new(bounds).map_err(|e| e.to_string())
}

/// Region used when `--region` is omitted for a built-in system.
pub fn default_region(builtin_name: &str) -> Option<&'static str> {
    Some(match builtin_name {
        "example1" | "example2" => "0.01:10",
        "example3" => "-3:3,-3:3",
        "example4" => "-2:3,-2:3,-2:3",
        "greitzer" => "0.01:0.8,0.05:1",
        _ => return None,
    })
}

fn region_for(loaded: &Loaded, a: &RegionArgs) -> CliResult<Region> {
    let text = match (&a.region, &loaded.builtin) {
        (Some(r), _) => r.as_str(),
        (None, Some(name)) => default_region(name).ok_or_else(|| CliError::usage("--region is required"))?,
        (None, None) => return Err(CliError::usage("--region is required for systems read from a file")),
    };
    parse_region(text, loaded.sys.dim()).map_err(CliError::usage)
}

fn parse_point(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}`")))
        .collect()
}

// ---- outputs ----

fn emit_json<T: Serialize>(report: &Report<T>, path: Option<&Path>) -> CliResult<()> {
    let text = report.to_json();
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::analysis(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::analysis(format!("cannot write report: {e}")))
        }
    }
}

/// Writes the requested artifacts, then the report.
fn finish<T: Serialize>(
    command: &'static str,
    body: T,
    out: &OutputArgs,
    table: impl FnOnce() -> Option<Table>,
    plot: impl FnOnce() -> Option<PlotSeries>,
) -> CliResult<()> {
    if let Some(path) = &out.csv {
        let t = table().ok_or_else(|| CliError::usage(format!("{command} has no CSV output")))?;
        t.write(path)?;
    }
    if let Some(path) = &out.svg {
        let p = plot().ok_or_else(|| CliError::usage(format!("{command} has no SVG output")))?;
        svg::write(&p, path)?;
    }
    emit_json(&Report::new(command, body), out.out.as_deref())
}

fn plot(title: &str, x_label: &str, y_label: &str, series: Vec<Series>) -> PlotSeries {
    PlotSeries {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        series,
    }
}

// ---- analyze ----

#[derive(Serialize)]
struct EquilibriumOut {
    x: Vec<f64>,
    residual: f64,
}

#[derive(Serialize)]
struct VerdictOut {
    kind: VerdictKind,
    uniqueness: Uniqueness,
    tol_zero: f64,
    method_note: &'static str,
}

#[derive(Serialize)]
struct AnalyzeBody {
    system: SystemInfo,
    region: Region,
    grid: usize,
    equilibria: Vec<EquilibriumOut>,
    spectrum: Option<Vec<Eigenvalue>>,
    verdict: VerdictOut,
    #[serde(skip_serializing_if = "Option::is_none")]
    popov: Option<PopovOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bendixson: Option<BendixsonVerdict>,
}

fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let loaded = load_system(&a.system)?;
    let region = region_for(&loaded, &a.region)?;
    if a.grid == 0 {
        return Err(CliError::usage("--grid must be positive"));
    }
    let opts = ClassifyOptions {
        grid: a.grid,
        tol_zero: a.tol_zero,
        ..ClassifyOptions::default()
    };
    let sys = &loaded.sys;
    let verdict = classify(sys, &region, &opts).map_err(CliError::analysis)?;
    let popov = if a.popov {
        let eq = verdict
            .equilibrium()
            .ok_or_else(|| CliError::analysis("Popov test needs a unique equilibrium"))?;
        let mut lure = taylor_lure(sys, eq).map_err(CliError::analysis)?;
        lure.k = sector(a.popov_k)?;
        Some(popov_report(&lure)?)
    } else {
        None
    };
    let bendixson = if a.bendixson {
        Some(bendixson_test(sys, &region, 21).map_err(CliError::analysis)?)
    } else {
        None
    };
    let spectrum = verdict.spectrum.as_ref().map(eigen_list);
    let equilibria: Vec<EquilibriumOut> = verdict
        .equilibria
        .iter()
        .map(|e| EquilibriumOut {
            x: e.x.clone(),
            residual: e.residual,
        })
        .collect();
    let dim = sys.dim();
    let table = || {
        let mut t = Table::new((1..=dim).map(|i| format!("x{i}")).chain(["residual".to_string()]));
        for e in &equilibria {
            let mut row = e.x.clone();
            row.push(e.residual);
            t.push_floats(&row);
        }
        Some(t)
    };
    let plot_fn = || {
        spectrum.as_ref().map(|s| {
            plot(
                "Spectrum at the equilibrium",
                "real part",
                "imaginary part",
                vec![Series::points(
                    "eigenvalues",
                    s.iter().map(|e| e.re).collect(),
                    s.iter().map(|e| e.im).collect(),
                )],
            )
        })
    };
    let table_data = table();
    let plot_data = plot_fn();
    let body = AnalyzeBody {
        system: loaded.info,
        region,
        grid: a.grid,
        equilibria,
        spectrum: spectrum.clone(),
        verdict: VerdictOut {
            kind: verdict.kind,
            uniqueness: verdict.uniqueness,
            tol_zero: a.tol_zero,
            method_note: verdict.method_note,
        },
        popov,
        bendixson,
    };
    finish("analyze", body, &a.output, || table_data, || plot_data)
}

// ---- portrait ----

#[derive(Serialize)]
struct PortraitRow {
    seed: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    termination: Option<Termination>,
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_state: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<AsymptoticOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct PortraitBody {
    system: SystemInfo,
    region: Region,
    t_end: f64,
    seed: Option<u64>,
    equilibrium: Option<Vec<f64>>,
    tol: f64,
    trajectories: Vec<PortraitRow>,
}

fn cmd_portrait(a: &PortraitArgs) -> CliResult<()> {
    let loaded = load_system(&a.system)?;
    let region = region_for(&loaded, &a.region)?;
    let sys = &loaded.sys;
    let seeds = match &a.starts {
        Some(text) => Seeds::Explicit(
            text.split(';')
                .map(|p| {
                    let v = parse_point(p)?;
                    (v.len() == sys.dim())
                        .then_some(v)
                        .ok_or_else(|| format!("start `{p}` has the wrong dimension"))
                })
                .collect::<Result<_, _>>()
                .map_err(CliError::usage)?,
        ),
        None => Seeds::Random {
            count: a.count,
            seed: a.seed,
        },
    };
    if !(a.t_end > 0.0) {
        return Err(CliError::usage("--t-end must be positive"));
    }
    let verdict = classify(sys, &region, &ClassifyOptions::default()).map_err(CliError::analysis)?;
    let eq = verdict.equilibrium().cloned();
    let entries = phase_portrait(sys, &region, &seeds, a.t_end, &IntegrateOptions::default());
    let rows: Vec<PortraitRow> = entries
        .iter()
        .map(|e| match &e.trajectory {
            Ok(tr) => PortraitRow {
                seed: e.seed.clone(),
                termination: Some(tr.termination),
                samples: Some(tr.len()),
                final_time: Some(tr.final_time()),
                final_state: Some(tr.final_state().to_vec()),
                outcome: eq.as_ref().map(|q| outcome(tr, q, a.tol)),
                error: None,
            },
            Err(err) => PortraitRow {
                seed: e.seed.clone(),
                termination: None,
                samples: None,
                final_time: None,
                final_state: None,
                outcome: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    let dim = sys.dim();
    let table = || {
        let mut t = Table::new(
            ["trajectory".to_string(), "t".to_string()]
                .into_iter()
                .chain((1..=dim).map(|i| format!("x{i}"))),
        );
        for (k, e) in entries.iter().enumerate() {
            if let Ok(tr) = &e.trajectory {
                for (ti, xi) in tr.t.iter().zip(&tr.x) {
                    let mut row = vec![k.to_string(), csv_out::fmt_f64(*ti)];
                    row.extend(xi.iter().map(|v| csv_out::fmt_f64(*v)));
                    t.rows.push(row);
                }
            }
        }
        Some(t)
    };
    let plot_fn = || {
        let series: Vec<Series> = entries
            .iter()
            .enumerate()
            .filter_map(|(k, e)| e.trajectory.as_ref().ok().filter(|tr| !tr.is_empty()).map(|tr| (k, tr)))
            .map(|(k, tr)| {
                let name = format!("seed {k}");
                if dim == 1 {
                    Series::line(name, tr.t.clone(), tr.component(0))
                } else {
                    Series::line(name, tr.component(0), tr.component(1))
                }
            })
            .collect();
        let (xl, yl) = if dim == 1 { ("t", "x1") } else { ("x1", "x2") };
        Some(plot("Phase portrait", xl, yl, series))
    };
    let (t, p) = (table(), plot_fn());
    let body = PortraitBody {
        system: loaded.info,
        region,
        t_end: a.t_end,
        seed: a.starts.is_none().then_some(a.seed),
        equilibrium: eq.map(|e| e.x),
        tol: a.tol,
        trajectories: rows,
    };
    finish("portrait", body, &a.output, || t, || p)
}

// ---- simulate ----

#[derive(Serialize)]
struct SimulateBody {
    system: SystemInfo,
    x0: Vec<f64>,
    t_end: f64,
    method: &'static str,
    termination: Termination,
    samples: usize,
    final_time: f64,
    final_state: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit_cycle: Option<LimitCycleReport>,
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let loaded = load_system(&a.system)?;
    let sys = &loaded.sys;
    let x0 = parse_point(&a.x0).map_err(CliError::usage)?;
    let mut opts = IntegrateOptions::default();
    let method = match a.method {
        MethodArg::Rk4 => {
            opts.method = Method::Rk4 { h: a.step };
            "rk4"
        }
        MethodArg::Rkf45 => {
            opts.method = Method::Rkf45 {
                atol: a.atol,
                rtol: a.rtol,
            };
            "rkf45"
        }
    };
    if let Some(m) = a.max_step {
        opts.max_step = m;
    }
    let tr = integrate(sys, &x0, a.t_end, &opts).map_err(CliError::analysis)?;
    let limit_cycle = a
        .cycle_component
        .map(|c| detect_limit_cycle(&tr, c, &LimitCycleOptions::default()));
    let dim = sys.dim();
    let t = trajectory_table(&tr.t, &tr.x, dim);
    let p = (!tr.is_empty()).then(|| {
        plot(
            "Trajectory",
            "t",
            "state",
            (0..dim)
                .map(|k| Series::line(format!("x{}", k + 1), tr.t.clone(), tr.component(k)))
                .collect(),
        )
    });
    let body = SimulateBody {
        system: loaded.info,
        x0,
        t_end: a.t_end,
        method,
        termination: tr.termination,
        samples: tr.len(),
        final_time: tr.final_time(),
        final_state: tr.final_state().to_vec(),
        limit_cycle,
    };
    finish("simulate", body, &a.output, || Some(t), || p)
}

// ---- sweep-eig ----

#[derive(Serialize)]
struct FieldOut {
    x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<Eigenvalue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_real: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

#[derive(Serialize)]
struct SweepEigBody {
    system: SystemInfo,
    region: Region,
    grid: usize,
    nodes: usize,
    nodes_skipped: usize,
    /// Largest real part strictly positive at every evaluated node.
    unstable_everywhere: bool,
    /// Largest real part strictly negative at every evaluated node.
    stable_everywhere: bool,
    rows: Vec<FieldOut>,
}

fn cmd_sweep_eig(a: &SweepEigArgs) -> CliResult<()> {
    let loaded = load_system(&a.system)?;
    let region = region_for(&loaded, &a.region)?;
    let sys = &loaded.sys;
    let field = eigen_field(sys, &region, a.grid).map_err(CliError::analysis)?;
    let rows: Vec<FieldOut> = field
        .iter()
        .map(|r| match &r.spectrum {
            Ok(s) => FieldOut {
                x: r.x.clone(),
                eigenvalues: Some(eigen_list(s)),
                max_real: Some(s.max_real()),
                skipped: None,
            },
            Err(reason) => FieldOut {
                x: r.x.clone(),
                eigenvalues: None,
                max_real: None,
                skipped: Some(reason.clone()),
            },
        })
        .collect();
    let evaluated: Vec<&FieldOut> = rows.iter().filter(|r| r.eigenvalues.is_some()).collect();
    let all = |f: &dyn Fn(f64) -> bool| !evaluated.is_empty() && evaluated.iter().all(|r| r.max_real.is_some_and(f));
    let unstable = all(&|m| m > 0.0);
    let stable = all(&|m| m < 0.0);
    let dim = sys.dim();
    let mut t = Table::new(
        (1..=dim)
            .map(|i| format!("x{i}"))
            .chain(["max_real".to_string()])
            .chain((1..=dim).flat_map(|k| [format!("eig_re_{k}"), format!("eig_im_{k}")])),
    );
    for r in &evaluated {
        let mut row = r.x.clone();
        row.push(r.max_real.unwrap_or(f64::NAN));
        for e in r.eigenvalues.as_deref().unwrap_or(&[]) {
            row.extend([e.re, e.im]);
        }
        t.push_floats(&row);
    }
    let p = (!evaluated.is_empty()).then(|| {
        plot(
            "Largest eigenvalue real part over the grid",
            "x1",
            "max real part",
            vec![Series::points(
                "max Re",
                evaluated.iter().map(|r| r.x[0]).collect(),
                evaluated.iter().map(|r| r.max_real.unwrap_or(0.0)).collect(),
            )],
        )
    });
    let body = SweepEigBody {
        system: loaded.info,
        region,
        grid: a.grid,
        nodes: rows.len(),
        nodes_skipped: rows.len() - evaluated.len(),
        unstable_everywhere: unstable,
        stable_everywhere: stable,
        rows,
    };
    finish("sweep-eig", body, &a.output, || Some(t), || p)
}

// ---- popov ----

#[derive(Serialize)]
struct PopovOut {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    /// Null for an unbounded sector.
    k: Option<f64>,
    result: PopovResult,
    /// For scalar systems: the closed-form inequality
    /// `w^2 (1 + k gamma) + a^2 > k a` at every checked frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    scalar_inequality_holds: Option<bool>,
}

fn popov_report(lure: &LureSystem) -> CliResult<PopovOut> {
    let opts = PopovOptions::default();
    let result = popov_test(lure, &opts).map_err(CliError::analysis)?;
    let scalar =
        (lure.k.is_finite() && lure.a.dim() == 1 && lure.d == 0.0 && lure.b == [1.0] && lure.c == [1.0]).then(|| {
            opts.frequencies
                .iter()
                .all(|&w| popov_scalar_inequality(lure.a[(0, 0)], lure.k, result.gamma, w))
        });
    Ok(PopovOut {
        a: lure.a.rows(),
        b: lure.b.clone(),
        c: lure.c.clone(),
        d: lure.d,
        k: lure.k.is_finite().then_some(lure.k),
        result,
        scalar_inequality_holds: scalar,
    })
}

#[derive(Serialize)]
struct PopovBody {
    #[serde(skip_serializing_if = "Option::is_none")]
    system: Option<SystemInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    equilibrium: Option<Vec<f64>>,
    popov: PopovOut,
}

fn sector(k: Option<f64>) -> CliResult<f64> {
    match k {
        None => Ok(f64::INFINITY),
        Some(k) if k > 0.0 => Ok(k),
        Some(k) => Err(CliError::usage(format!("sector bound {k} must be positive"))),
    }
}

fn cmd_popov(a: &PopovArgs) -> CliResult<()> {
    let k = sector(a.k)?;
    let (lure, system, equilibrium) = match a.a {
        Some(av) => (LureSystem::scalar(av, k), None, None),
        None => {
            let loaded = load_system(&a.system)?;
            let region = region_for(&loaded, &a.region)?;
            let opts = ClassifyOptions {
                grid: a.grid,
                ..ClassifyOptions::default()
            };
            let verdict = classify(&loaded.sys, &region, &opts).map_err(CliError::analysis)?;
            let eq = verdict
                .equilibrium()
                .ok_or_else(|| CliError::analysis("Popov test needs a unique equilibrium in the region"))?
                .clone();
            let mut lure = taylor_lure(&loaded.sys, &eq).map_err(CliError::analysis)?;
            lure.k = k;
            (lure, Some(loaded.info), Some(eq.x))
        }
    };
    let popov = popov_report(&lure)?;
    let freqs = PopovOptions::default().frequencies;
    let transfer: Vec<(f64, f64, f64, f64)> = freqs
        .iter()
        .map(|&w| {
            let h = lure.transfer(w);
            (w, h.re, h.im, lure.popov_margin(w, popov.result.gamma))
        })
        .collect();
    let mut t = Table::new(["w", "re_h", "im_h", "margin"]);
    for &(w, re, im, m) in &transfer {
        t.push_floats(&[w, re, im, m]);
    }
    let p = plot(
        "Popov plot",
        "Re H(jw)",
        "w Im H(jw)",
        vec![Series::line(
            "H",
            transfer.iter().map(|r| r.1).collect(),
            transfer.iter().map(|r| r.0 * r.2).collect(),
        )],
    );
    let body = PopovBody {
        system,
        equilibrium,
        popov,
    };
    finish("popov", body, &a.output, || Some(t), || Some(p))
}

// ---- bendixson ----

#[derive(Serialize)]
struct BendixsonBody {
    system: SystemInfo,
    region: Region,
    grid: usize,
    verdict: BendixsonVerdict,
}

fn cmd_bendixson(a: &BendixsonArgs) -> CliResult<()> {
    let loaded = load_system(&a.system)?;
    let region = region_for(&loaded, &a.region)?;
    let verdict = bendixson_test(&loaded.sys, &region, a.grid).map_err(CliError::analysis)?;
    let mut t = Table::new(["x1", "x2", "divergence"]);
    for node in region.grid(a.grid) {
        if let Ok(j) = loaded.sys.jacobian(&node, JacobianMethod::Analytic) {
            t.push_floats(&[node[0], node[1], j[(0, 0)] + j[(1, 1)]]);
        }
    }
    let body = BendixsonBody {
        system: loaded.info,
        region,
        grid: a.grid,
        verdict,
    };
    finish("bendixson", body, &a.output, || Some(t), || None)
}

// ---- compressor ----

#[derive(Serialize)]
struct CharacteristicBody {
    params: CompressorParams,
    phi_peak: f64,
    psi_peak: f64,
    points: usize,
}

fn cmd_characteristic(p: &CompressorParams, points: usize, out: &OutputArgs) -> CliResult<()> {
    if points < 2 {
        return Err(CliError::usage("--points must be at least 2"));
    }
    let phis = linspace(0.0, greitzer::PHI_MAX, points);
    let psis: Vec<f64> = phis.iter().map(|&f| greitzer::characteristic(f, p)).collect();
    let mut t = Table::new(["phi", "psi_c"]);
    for (f, s) in phis.iter().zip(&psis) {
        t.push_floats(&[*f, *s]);
    }
    let pl = plot(
        "Compressor characteristic",
        "flow phi",
        "pressure rise psi_c",
        vec![Series::line("psi_c", phis.clone(), psis.clone())],
    );
    let peak = greitzer::characteristic_peak(p);
    let body = CharacteristicBody {
        params: *p,
        phi_peak: peak,
        psi_peak: greitzer::characteristic(peak, p),
        points,
    };
    finish("compressor characteristic", body, out, || Some(t), || Some(pl))
}

#[derive(Serialize)]
struct BoundaryBody {
    params: CompressorParams,
    tol: f64,
    #[serde(flatten)]
    boundary: SurgeBoundary,
    experimental_surge_flow: f64,
}

fn cmd_boundary(p: &CompressorParams, tol: f64, out: &OutputArgs) -> CliResult<()> {
    if !(tol > 0.0) {
        return Err(CliError::usage("--tol must be positive"));
    }
    let boundary = greitzer::surge_boundary(p, tol).map_err(CliError::analysis)?;
    let body = BoundaryBody {
        params: *p,
        tol,
        boundary,
        experimental_surge_flow: EXPERIMENTAL_SURGE_FLOW,
    };
    finish("compressor boundary", body, out, || None, || None)
}

#[derive(Serialize)]
struct SweepBody {
    params: CompressorParams,
    points: usize,
    discriminant_max: f64,
    complex_everywhere: bool,
    max_spectral_mismatch: f64,
    /// Consecutive grid flows between which the real part changes sign.
    real_part_sign_changes: Vec<[f64; 2]>,
    experimental_surge_flow: f64,
    rows: Vec<SweepRow>,
}

fn cmd_sweep(p: &CompressorParams, points: usize, from: f64, to: f64, out: &OutputArgs) -> CliResult<()> {
    if points < 2 {
        return Err(CliError::usage("--points must be at least 2"));
    }
    let grid = linspace(from, to, points);
    let rows = greitzer::eigen_sweep(&grid, p).map_err(|e| CliError::usage(e.to_string()))?;
    let discriminant_max = rows.iter().map(|r| r.discriminant).fold(f64::NEG_INFINITY, f64::max);
    let max_mismatch = rows.iter().map(|r| r.spectral_mismatch).fold(0.0, f64::max);
    let changes = rows
        .windows(2)
        .filter(|w| w[0].real_part.signum() != w[1].real_part.signum())
        .map(|w| [w[0].phi, w[1].phi])
        .collect();
    let mut t = Table::new(["phi", "psi_c", "g", "real_part", "discriminant", "eig_re", "eig_im"]);
    for r in &rows {
        let e = r.eigenvalues[1];
        t.push_floats(&[r.phi, r.psi_c, r.g, r.real_part, r.discriminant, e.re, e.im]);
    }
    let pl = plot(
        "Eigenvalue real part along the working range",
        "flow phi",
        "real part",
        vec![Series::line(
            "real part",
            rows.iter().map(|r| r.phi).collect(),
            rows.iter().map(|r| r.real_part).collect(),
        )],
    );
    let body = SweepBody {
        params: *p,
        points,
        discriminant_max,
        complex_everywhere: discriminant_max < 0.0,
        max_spectral_mismatch: max_mismatch,
        real_part_sign_changes: changes,
        experimental_surge_flow: EXPERIMENTAL_SURGE_FLOW,
        rows,
    };
    finish("compressor sweep", body, out, || Some(t), || Some(pl))
}

#[derive(Serialize)]
struct SurgeBody {
    params: CompressorParams,
    g: f64,
    equilibrium: CompressorState,
    real_part: f64,
    perturbation: f64,
    t_end: f64,
    termination: Termination,
    samples: usize,
    limit_cycle: LimitCycleReport,
    outcome: AsymptoticOutcome,
    experimental_surge_flow: f64,
}

fn cmd_surge(p: &CompressorParams, phi: Option<f64>, g: Option<f64>, t_end: f64, out: &OutputArgs) -> CliResult<()> {
    let g = match (phi, g) {
        (Some(f), None) => greitzer::throttle_for_phi(f, p).map_err(|e| CliError::usage(e.to_string()))?,
        (None, Some(g)) => g,
        _ => return Err(CliError::usage("exactly one of --phi or --g is required")),
    };
    if !(t_end > 0.0) {
        return Err(CliError::usage("--t-end must be positive"));
    }
    let run = greitzer::surge_experiment(g, p, t_end).map_err(CliError::analysis)?;
    let tr = &run.trajectory;
    let t = trajectory_table(&tr.t, &tr.x, 2);
    let pl = (!tr.is_empty()).then(|| {
        plot(
            "Surge experiment",
            "flow phi",
            "pressure rise psi",
            vec![
                Series::line("trajectory", tr.component(0), tr.component(1)),
                Series::points("equilibrium", vec![run.equilibrium.phi], vec![run.equilibrium.psi]),
            ],
        )
    });
    let body = SurgeBody {
        params: *p,
        g,
        equilibrium: run.equilibrium,
        real_part: greitzer::real_part(run.equilibrium.phi, p),
        perturbation: greitzer::SURGE_PERTURBATION,
        t_end,
        termination: tr.termination,
        samples: tr.len(),
        limit_cycle: run.cycle,
        outcome: run.outcome,
        experimental_surge_flow: EXPERIMENTAL_SURGE_FLOW,
    };
    finish("compressor surge", body, out, || Some(t), || pl)
}
