//! Command line front end: problem files, single syntheses, closed-loop runs,
//! the feasibility sweep and the exact oracle.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use lmih_core::io::{problem_to_string, read_problem, CertificateJson, PolytopeJson};
use lmih_core::lmi::TailScale;
use lmih_core::model::{build_example, validate, Problem, ProblemKind};
use lmih_core::mpc::{run_closed_loop, MpcError, MpcOptions, ProblemStream};
use lmih_core::oracle::{feasible_set, grid, Polytope};
use lmih_core::simulate::{sample_disturbances, DisturbanceMode};
use lmih_core::synthesis::{synth, verify_certificate, SynthOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lmih", version, about = "Robust receding-horizon synthesis via LMIs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize and verify a certificate for one problem.
    Synth(SynthArgs),
    /// Classify grid points against the exact feasible set for a range of gammas and horizons.
    Sweep(SweepArgs),
    /// Run the receding-horizon controller in closed loop.
    Mpc(MpcArgs),
    /// Compute the maximal robust controllable set of a problem's last stage.
    Oracle(OracleArgs),
    /// Write the two-state example problem.
    Example(ExampleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolveFlags {
    /// Tail block scaling, `identity` or `nu`.
    #[arg(long, default_value = "identity")]
    pub tail_scale: TailScale,
    /// Invert `Pf + 1e-9 I` when `Pf` is singular.
    #[arg(long)]
    pub pf_ridge: bool,
    /// Interior-point stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

impl SolveFlags {
    pub fn options(&self) -> SynthOptions<f64> {
        let mut o = SynthOptions::default();
        o.assemble.tail_scale = self.tail_scale;
        o.assemble.pf_ridge = self.pf_ridge;
        o.solver.tol = self.tol;
        o
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub problem: PathBuf,
    /// Override the problem kind.
    #[arg(long)]
    pub kind: Option<ProblemKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solve: SolveFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `start:stop:step`, inclusive.
    #[arg(long, default_value = "0.05:0.45:0.05")]
    pub gammas: String,
    /// `first..last`, inclusive.
    #[arg(long, default_value = "0..4")]
    pub horizons: String,
    #[arg(long, default_value_t = 10)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eps2: f64,
    #[arg(long, default_value = "fractions.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub solve: SolveFlags,
}

#[derive(Debug, Args)]
pub struct MpcArgs {
    pub problem: PathBuf,
    /// Initial state, comma separated; defaults to the problem's `x_bar`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `vertices`, `uniform` or `zero`.
    #[arg(long, default_value = "uniform")]
    pub disturbance: String,
    /// Record solve times; without it the `solve_ms` column is zero so reruns are byte-identical.
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value = "log.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub solve: SolveFlags,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub problem: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub grid: usize,
    #[arg(long, default_value_t = -7.9, allow_negative_numbers = true)]
    pub lo: f64,
    #[arg(long, default_value_t = 7.9, allow_negative_numbers = true)]
    pub hi: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value = "polytope.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps2: f64,
    #[arg(long, default_value_t = 2)]
    pub horizon: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value = "robust_infinite")]
    pub kind: ProblemKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `start:stop:step` into an inclusive, rounded list.
pub fn parse_range(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad range `{spec}`"))?;
    let [start, stop, step] = parts[..] else {
        bail!("expected start:stop:step, got `{spec}`");
    };
    if !(step > 0.0) || stop < start {
        bail!("empty range `{spec}`");
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // round to 12 digits so 0.05 * 3 prints as 0.15
    Ok((0..count)
        .map(|i| ((start + step * i as f64) * 1e12).round() / 1e12)
        .collect())
}

/// Parses `a..b` (inclusive) or a single horizon.
pub fn parse_horizons(spec: &str) -> anyhow::Result<Vec<usize>> {
    let bad = || format!("bad horizon range `{spec}`");
    match spec.split_once("..") {
        Some((a, b)) => {
            let a: usize = a.trim().parse().with_context(bad)?;
            let b: usize = b.trim_start_matches('=').trim().parse().with_context(bad)?;
            if b < a {
                bail!(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![spec.trim().parse().with_context(bad)?]),
    }
}

/// Runs `f` on a pool sized by `LMIH_THREADS` (all cores when unset).
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("LMIH_THREADS") {
        let n: usize = v.parse().with_context(|| format!("LMIH_THREADS=`{v}`"))?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

/// Outcome of one grid point in a sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub enum PointOutcome {
    /// Certified, with `nu` and the worst verification margin.
    Certified { nu: f64, verify_margin: f64 },
    Infeasible,
    /// Solver or recovery failure; counted as infeasible.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub gamma: f64,
    pub horizon: usize,
    /// Grid indices inside the exact feasible set.
    pub members: Vec<usize>,
    /// One outcome per member, same order.
    pub outcomes: Vec<PointOutcome>,
}

impl SweepCell {
    pub fn certified_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, PointOutcome::Certified { .. }))
            .count()
    }

    pub fn oracle_count(&self) -> usize {
        self.members.len()
    }

    pub fn fraction(&self) -> f64 {
        self.certified_count() as f64 / self.oracle_count() as f64
    }

    /// Grid indices that were certified.
    pub fn certified(&self) -> Vec<usize> {
        self.members
            .iter()
            .zip(&self.outcomes)
            .filter(|(_, o)| matches!(o, PointOutcome::Certified { .. }))
            .map(|(i, _)| *i)
            .collect()
    }

    pub fn diagnostics(&self) -> String {
        let failed: Vec<String> = self
            .members
            .iter()
            .zip(&self.outcomes)
            .filter_map(|(i, o)| match o {
                PointOutcome::Failed(msg) => Some(format!("{i}:{msg}")),
                _ => None,
            })
            .collect();
        failed.join("; ")
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub grid: usize,
    pub lo: f64,
    pub hi: f64,
    pub eps2: f64,
    pub oracle_iters: usize,
    pub oracle_tol: f64,
    pub synth: SynthOptions<f64>,
    /// Run `verify_certificate` on every certificate.
    pub verify_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gammas: parse_range("0.05:0.45:0.05").unwrap(),
            horizons: (0..=4).collect(),
            grid: 10,
            lo: -7.9,
            hi: 7.9,
            eps2: 0.1,
            oracle_iters: 100,
            oracle_tol: 1e-7,
            synth: SynthOptions::default(),
            verify_tol: 1e-6,
        }
    }
}

fn classify(problem: &Problem<f64>, opts: &SynthOptions<f64>, verify_tol: f64) -> PointOutcome {
    match synth(problem, opts) {
        Ok(cert) => match verify_certificate(problem, &cert, verify_tol) {
            Ok(rep) => PointOutcome::Certified {
                nu: cert.nu(),
                verify_margin: rep.worst.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min),
            },
            Err(e) => PointOutcome::Failed(format!("verification: {e}")),
        },
        Err(e) if e.is_infeasible() => PointOutcome::Infeasible,
        Err(e) => PointOutcome::Failed(e.to_string()),
    }
}

/// The exact feasible set of the example at `gamma` and the grid indices it contains.
pub fn oracle_members(cfg: &SweepConfig, gamma: f64) -> anyhow::Result<(Polytope<f64>, Vec<usize>)> {
    let set = feasible_set(&build_example(gamma, cfg.eps2), cfg.oracle_iters, cfg.oracle_tol)?.set;
    let points = grid(cfg.lo, cfg.hi, cfg.grid)?;
    let members = points
        .iter()
        .enumerate()
        .filter(|(_, x)| set.contains(x, 1e-9))
        .map(|(i, _)| i)
        .collect();
    Ok((set, members))
}

/// Every `(gamma, N)` cell, ordered by gamma then horizon; points run in parallel.
pub fn run_sweep(cfg: &SweepConfig) -> anyhow::Result<Vec<SweepCell>> {
    let points = grid(cfg.lo, cfg.hi, cfg.grid)?;
    let mut cells = Vec::new();
    for &gamma in &cfg.gammas {
        let (_, members) = oracle_members(cfg, gamma)?;
        for &horizon in &cfg.horizons {
            let base = build_example(gamma, cfg.eps2).with_horizon(horizon);
            let outcomes = members
                .par_iter()
                .map(|&i| classify(&base.clone().with_x_bar(points[i].clone()), &cfg.synth, cfg.verify_tol))
                .collect();
            cells.push(SweepCell {
                gamma,
                horizon,
                members: members.clone(),
                outcomes,
            });
        }
    }
    Ok(cells)
}

pub fn write_sweep_csv<W: Write>(out: W, cells: &[SweepCell]) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["gamma", "N", "certified_count", "oracle_count", "fraction", "diagnostics"])?;
    for c in cells {
        wr.write_record([
            format!("{}", c.gamma),
            c.horizon.to_string(),
            c.certified_count().to_string(),
            c.oracle_count().to_string(),
            format!("{:.6}", c.fraction()),
            c.diagnostics(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load(path: &Path) -> anyhow::Result<Problem<f64>> {
    let p = read_problem(path).with_context(|| format!("cannot load {}", path.display()))?;
    if let Err(errs) = validate(&p) {
        let msgs: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        bail!("invalid problem: {}", msgs.join("; "));
    }
    Ok(p)
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<i32> {
    let mut p = load(&args.problem)?;
    if let Some(kind) = args.kind {
        p = p.with_kind(kind);
    }
    let opts = args.solve.options();
    let cert = match synth(&p, &opts) {
        Ok(c) => c,
        Err(e) if e.is_infeasible() => {
            println!("infeasible: {e}");
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(e.into()),
    };
    let rep = verify_certificate(&p, &cert, 1e-6)?;
    println!("kind            {}", cert.kind);
    println!("horizon         {}", cert.horizon());
    println!("nu              {:.9e}", cert.nu());
    println!("phase-I margin  {:.3e}", cert.feasibility_margin);
    println!("program margin  {:.3e}", cert.program_margin);
    for (fam, m) in &rep.worst {
        println!("verify {:<10} {:.3e}", fam.as_str(), m);
    }
    if let Some(out) = &args.out {
        let mut w = create(out)?;
        serde_json::to_writer_pretty(&mut w, &CertificateJson::new(&cert, Some(&rep)))?;
        w.flush()?;
    }
    if !rep.passed() {
        bail!("certificate failed verification at tol 1e-6");
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<i32> {
    let cfg = SweepConfig {
        gammas: parse_range(&args.gammas)?,
        horizons: parse_horizons(&args.horizons)?,
        grid: args.grid,
        eps2: args.eps2,
        synth: args.solve.options(),
        ..SweepConfig::default()
    };
    let cells = with_pool(|| run_sweep(&cfg))??;
    write_sweep_csv(create(&args.out)?, &cells)?;
    for c in &cells {
        println!(
            "gamma {:.2} N {}: {:>3} / {:<3} = {:.4}",
            c.gamma,
            c.horizon,
            c.certified_count(),
            c.oracle_count(),
            c.fraction()
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_mpc(args: &MpcArgs) -> anyhow::Result<i32> {
    let p = load(&args.problem)?;
    let x0 = match &args.x0 {
        Some(v) => DVector::from_column_slice(v),
        None => p.x_bar.clone(),
    };
    if x0.len() != p.n() {
        bail!("x0 has {} entries, the problem has {} states", x0.len(), p.n());
    }
    let mode = match args.disturbance.as_str() {
        "zero" => DisturbanceMode::Custom,
        s => s.parse::<DisturbanceMode>().map_err(anyhow::Error::msg)?,
    };
    let dist = sample_disturbances(&p.cone, args.steps, mode, args.seed);
    let opts = MpcOptions {
        synth: args.solve.options(),
        ..MpcOptions::default()
    };
    let mut log = match run_closed_loop(&ProblemStream::Lti(p), &x0, &dist, args.steps, &opts) {
        Ok(log) => log,
        Err(e @ MpcError::Infeasible { .. }) => {
            println!("{e}");
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(e.into()),
    };
    if !args.timing {
        log.solve_ms.iter_mut().for_each(|t| *t = 0.0);
    }
    log.write_csv(create(&args.out)?)?;
    println!(
        "{} steps, nu {:.6e} -> {:.6e}, cost {:.6e}, worst nu increase {:.3e}",
        args.steps,
        log.nu.first().copied().unwrap_or(f64::NAN),
        log.nu.last().copied().unwrap_or(f64::NAN),
        log.trajectory.total_cost(),
        log.worst_nu_increase()
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct OracleJson {
    #[serde(flatten)]
    polytope: PolytopeJson,
    iterations: usize,
    changes: Vec<f64>,
    grid: Vec<[f64; 2]>,
    members: Vec<usize>,
}

pub fn cmd_oracle(args: &OracleArgs) -> anyhow::Result<i32> {
    let p = load(&args.problem)?;
    if p.n() > 3 {
        bail!("the oracle handles at most 3 states, got {}", p.n());
    }
    let fs = feasible_set(&p, args.max_iters, args.tol)?;
    let (points, members) = if p.n() == 2 {
        let pts = grid(args.lo, args.hi, args.grid)?;
        let members = (0..pts.len()).filter(|&i| fs.set.contains(&pts[i], 1e-9)).collect();
        (pts.iter().map(|x| [x[0], x[1]]).collect(), members)
    } else {
        (vec![], vec![])
    };
    println!(
        "{} rows after {} iterations, {} of {} grid points inside",
        fs.set.rows(),
        fs.iterations,
        members.len(),
        points.len()
    );
    let json = OracleJson {
        polytope: PolytopeJson::new(&fs.set),
        iterations: fs.iterations,
        changes: fs.changes,
        grid: points,
        members,
    };
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &json)?;
    w.flush()?;
    Ok(EXIT_OK)
}

pub fn cmd_example(args: &ExampleArgs) -> anyhow::Result<i32> {
    let mut p = build_example(args.gamma, args.eps2)
        .with_horizon(args.horizon)
        .with_kind(args.kind);
    if let Some(x) = &args.x0 {
        if x.len() != 2 {
            bail!("the example has 2 states");
        }
        p = p.with_x_bar(DVector::from_column_slice(x));
    }
    let text = problem_to_string(&p);
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(EXIT_OK)
}

/// Dispatches a parsed command line and maps errors to exit code 1.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Mpc(a) => cmd_mpc(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Example(a) => cmd_example(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
