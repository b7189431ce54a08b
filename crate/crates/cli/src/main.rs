//! `dirac`: simulate, check and reduce implicit Hamiltonian systems.
//!
//! Exit codes: 0 pass, 1 check failure, 2 numerical failure, 3 configuration
//! or precondition error.

mod checks;
mod scenario;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dirac_core::ihs_core::{constraint_drift, energy_drift, first_integral_drift, integrate};
use dirac_core::reduction::{labels_along, piece_classification, StrataReport};
use dirac_core::report::Failure;
use dirac_core::systems::SampleKind;
use dirac_core::{CheckReport, DiracError, IntegrateOptions};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use checks::{default_checks, exit_code, reduce_run, run_check};
use scenario::{CheckSpec, Context, RunPurpose, RunSpec, Scenario};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "dirac", version, about = "Dirac structures, implicit Hamiltonian systems and their reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a system and write the trajectory CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run named checks and print a JSON report.
    Check(CheckArgs),
    /// Integrate on P^-1(0) and write the trajectory in invariant coordinates.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Classify points of P^-1(0) by orbit type.
    Strata {
        #[command(flatten)]
        common: Common,
        /// Sampled points on the zero level.
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
}

#[derive(Args)]
struct Common {
    /// JSON scenario file.
    #[arg(long, conflicts_with = "system")]
    scenario: Option<PathBuf>,
    /// Built-in system name.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads for independent checks.
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for output files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Gravity for the spherical pendulum.
    #[arg(long)]
    g0: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    t_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<f64>,
    /// Skip the Newton projection onto the constraint manifold.
    #[arg(long)]
    no_projection: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Checks to run; defaults to the scenario's list or the standard suite.
    names: Vec<String>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Fiber dimension for dirac-random.
    #[arg(long)]
    n: Option<usize>,
    /// Trials for dirac-random.
    #[arg(long)]
    trials: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Serialize)]
struct CheckEntry {
    name: String,
    pass: bool,
    max_residual: f64,
    tolerance: f64,
    probes: usize,
    failures: Vec<Failure>,
}

impl From<CheckReport> for CheckEntry {
    fn from(r: CheckReport) -> Self {
        CheckEntry {
            name: r.check,
            pass: r.pass,
            max_residual: r.max_residual,
            tolerance: r.tolerance,
            probes: r.probes,
            failures: r.failures,
        }
    }
}

#[derive(Serialize)]
struct Report {
    tool_version: &'static str,
    seed: u64,
    system: Option<String>,
    checks: Vec<CheckEntry>,
    elapsed_ms: u128,
}

#[derive(Serialize)]
struct StrataOutput {
    tool_version: &'static str,
    seed: u64,
    system: String,
    #[serde(flatten)]
    report: StrataReport,
    elapsed_ms: u128,
}

/// Failure that ends a command with a specific exit code.
struct Fail {
    code: u8,
    message: String,
}

impl From<DiracError> for Fail {
    fn from(e: DiracError) -> Self {
        Fail {
            code: exit_code(&e) as u8,
            message: e.to_string(),
        }
    }
}

fn io_fail(path: &Path, e: io::Error) -> Fail {
    Fail {
        code: 3,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

type CmdResult = Result<u8, Fail>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Simulate { common, run } => cmd_simulate(&common, &run),
        Command::Check(args) => cmd_check(&args, started),
        Command::Reduce { common, run } => cmd_reduce(&common, &run, started),
        Command::Strata { common, probes } => cmd_strata(&common, probes, started),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(common: &Common) -> Result<Option<Scenario>, Fail> {
    match (&common.scenario, &common.system) {
        (Some(path), _) => Ok(Some(Scenario::load(path)?)),
        (None, Some(name)) => Ok(Some(Scenario::for_system(name))),
        (None, None) => Ok(None),
    }
}

fn require_scenario(common: &Common) -> Result<(Scenario, Context), Fail> {
    let sc = load_scenario(common)?.ok_or_else(|| Fail {
        code: 3,
        message: "either --scenario or --system is required".into(),
    })?;
    let ctx = Context::resolve(&sc.system, common.g0)?;
    Ok((sc, ctx))
}

/// Scenario run section, then built-in defaults, overridden by flags.
fn merge_run(sc: &Scenario, ctx: &Context, args: &RunArgs, purpose: RunPurpose) -> Result<RunSpec, Fail> {
    let base = sc.run.clone().or_else(|| ctx.default_run(purpose));
    let mut r = match (base, &args.x0) {
        (Some(r), _) => r,
        (None, Some(x0)) => RunSpec {
            x0: x0.clone(),
            t_end: 1.0,
            dt: 0.01,
            projection: true,
        },
        (None, None) => {
            return Err(Fail {
                code: 3,
                message: format!("{} has no default run; pass --x0, --t-end and --dt", ctx.name),
            })
        }
    };
    if let Some(x0) = &args.x0 {
        r.x0 = x0.clone();
    }
    if let Some(t) = args.t_end {
        r.t_end = t;
    }
    if let Some(dt) = args.dt {
        r.dt = dt;
    }
    if args.no_projection {
        r.projection = false;
    }
    r.validate(ctx.n())?;
    Ok(r)
}

/// Output location: scenario path (relative to `--out` when given), else a
/// default file name under `--out`, else `None` for stdout.
fn output_path(common: &Common, configured: Option<&String>, default_name: &str) -> Option<PathBuf> {
    match (configured, &common.out) {
        (Some(p), Some(dir)) => Some(dir.join(p)),
        (Some(p), None) => Some(PathBuf::from(p)),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

fn write_output(path: Option<&PathBuf>, content: &[u8]) -> Result<(), Fail> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_fail(parent, e))?;
            }
            fs::write(p, content).map_err(|e| io_fail(p, e))
        }
        None => io::stdout()
            .write_all(content)
            .map_err(|e| io_fail(Path::new("<stdout>"), e)),
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

fn cmd_simulate(common: &Common, args: &RunArgs) -> CmdResult {
    let (sc, ctx) = require_scenario(common)?;
    let r = merge_run(&sc, &ctx, args, RunPurpose::Simulate)?;
    let opts = IntegrateOptions {
        projection: r.projection,
        first_integrals: Some(ctx.p.map().clone()),
        ..IntegrateOptions::default()
    };
    let x0 = DVector::from_column_slice(&r.x0);
    let traj = integrate(&ctx.sys, &x0, r.t_end, r.dt, &opts)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).expect("writing to memory");
    write_output(output_path(common, sc.outputs.trajectory.as_ref(), "trajectory.csv").as_ref(), &csv)?;
    let last = traj.last_state().expect("trajectory has samples");
    eprintln!(
        "{}: {} samples, t_end {}, energy drift {:.3e}, momentum drift {:.3e}, constraint drift {:.3e}",
        ctx.name,
        traj.len(),
        r.t_end,
        energy_drift(&traj),
        first_integral_drift(&traj, ctx.p.map()).amax(),
        constraint_drift(&traj)
    );
    eprintln!("final state: {:?}", last.as_slice());
    Ok(0)
}

fn cmd_check(args: &CheckArgs, started: Instant) -> CmdResult {
    let common = &args.common;
    let sc = load_scenario(common)?;
    let ctx = match &sc {
        Some(s) => Some(Context::resolve(&s.system, common.g0)?),
        None => None,
    };
    let specs: Vec<CheckSpec> = if !args.names.is_empty() {
        args.names
            .iter()
            .map(|name| CheckSpec {
                name: name.clone(),
                probes: args.probes,
                tolerance: args.tolerance,
                mu: args.mu,
                n: args.n,
                trials: args.trials,
            })
            .collect()
    } else if let Some(s) = sc.as_ref().filter(|s| !s.checks.is_empty()) {
        s.checks.clone()
    } else if let Some(c) = &ctx {
        default_checks(c)
    } else {
        return Err(Fail {
            code: 3,
            message: "name a check or pass --scenario/--system".into(),
        });
    };
    let has_run_flags = args.run.x0.is_some() || args.run.t_end.is_some() || args.run.dt.is_some();
    let run = match (&sc, &ctx) {
        (Some(s), Some(c)) if s.run.is_some() || has_run_flags => {
            let purpose = if specs.iter().any(|s| s.name == "singular-dynamics") {
                RunPurpose::Reduce
            } else {
                RunPurpose::Simulate
            };
            Some(merge_run(s, c, &args.run, purpose)?)
        }
        _ => None,
    };

    let seed = common.seed;
    let work = || -> Vec<dirac_core::Result<Vec<CheckReport>>> {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                run_check(ctx.as_ref(), spec, run.as_ref(), &mut rng)
            })
            .collect()
    };
    let results = match common.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Fail {
                code: 3,
                message: format!("cannot start worker pool: {e}"),
            })?
            .install(work),
        None => work(),
    };
    let mut entries = Vec::new();
    for r in results {
        entries.extend(r?.into_iter().map(CheckEntry::from));
    }
    let all_pass = entries.iter().all(|e| e.pass);
    let report = Report {
        tool_version: TOOL_VERSION,
        seed,
        system: ctx.as_ref().map(|c| c.name.clone()),
        checks: entries,
        elapsed_ms: started.elapsed().as_millis(),
    };
    let json = to_json(&report);
    if let Some(path) = output_path(common, sc.as_ref().and_then(|s| s.outputs.report.as_ref()), "report.json") {
        write_output(Some(&path), &json)?;
    }
    write_output(None, &json)?;
    for e in &report.checks {
        eprintln!(
            "{} {} (max residual {:.3e}, tolerance {:.1e}, {} probes)",
            if e.pass { "PASS" } else { "FAIL" },
            e.name,
            e.max_residual,
            e.tolerance,
            e.probes
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn cmd_reduce(common: &Common, args: &RunArgs, started: Instant) -> CmdResult {
    let (sc, ctx) = require_scenario(common)?;
    let r = merge_run(&sc, &ctx, args, RunPurpose::Reduce)?;
    let admissible = ctx.bundle.as_ref().map(|b| b.admissible.clone()).unwrap_or_default();
    let (traj, rpt) = reduce_run(&ctx, &r, &admissible)?;
    let chart = ctx.require_chart()?;
    let labels = labels_along(&ctx.action, &traj)?;

    let k = chart.k();
    let mut csv = String::from("t");
    for i in 1..=k {
        csv.push_str(&format!(",sigma{i}"));
    }
    csv.push_str(",stratum_label\n");
    for ((t, x), label) in traj.times.iter().zip(&traj.states).zip(&labels) {
        csv.push_str(&format!("{t:.16e}"));
        for s in chart.eval(x).iter() {
            csv.push_str(&format!(",{s:.16e}"));
        }
        csv.push_str(&format!(",{label}\n"));
    }
    let sigma_path = output_path(common, sc.outputs.sigma.as_ref(), "sigma.csv");
    write_output(sigma_path.as_ref(), csv.as_bytes())?;

    let mut rep = CheckReport::new("singular-dynamics", rpt.tolerance);
    rep.probes = rpt.times.len();
    rep.max_residual = rpt.max_residual;
    rep.pass = rpt.pass;
    if !rpt.pass {
        rep.fail(&DVector::from_column_slice(&r.x0), "reduced dynamics residual above tolerance");
    }
    let report = Report {
        tool_version: TOOL_VERSION,
        seed: common.seed,
        system: Some(ctx.name.clone()),
        checks: vec![rep.into()],
        elapsed_ms: started.elapsed().as_millis(),
    };
    let json = to_json(&report);
    match output_path(common, sc.outputs.report.as_ref(), "report.json") {
        Some(p) => write_output(Some(&p), &json)?,
        // stdout already carries the CSV
        None => io::stderr().write_all(&json).map_err(|e| io_fail(Path::new("<stderr>"), e))?,
    }
    let mut distinct = labels.clone();
    distinct.dedup();
    eprintln!(
        "{}: {} samples, max residual {:.3e} (tolerance {:.1e}), strata along trajectory {:?}",
        ctx.name,
        rpt.times.len(),
        rpt.max_residual,
        rpt.tolerance,
        distinct
    );
    Ok(if rpt.pass { 0 } else { 1 })
}

fn cmd_strata(common: &Common, probes: usize, started: Instant) -> CmdResult {
    let (sc, ctx) = require_scenario(common)?;
    let chart = ctx.require_chart()?;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let mut points = ctx.samples(SampleKind::ZeroLevel, probes, &mut rng)?;
    if let Some(b) = &ctx.bundle {
        points.extend(b.fixed_points.iter().cloned());
    }
    let report = piece_classification(&ctx.sys, &ctx.action, &ctx.p, chart, &points)?;
    let pass = report.pass;
    for s in &report.strata {
        eprintln!(
            "{}: {} points, table deviation {:.3e}",
            s.label, s.count, s.max_table_deviation
        );
    }
    let out = StrataOutput {
        tool_version: TOOL_VERSION,
        seed: common.seed,
        system: ctx.name.clone(),
        report,
        elapsed_ms: started.elapsed().as_millis(),
    };
    let path = output_path(common, sc.outputs.strata.as_ref(), "strata.json");
    write_output(path.as_ref(), &to_json(&out))?;
    Ok(if pass { 0 } else { 1 })
}
