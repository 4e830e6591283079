//! `flexagg` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or failed verification, 3 solver
//! did not converge (or failed), 4 I/O error.

mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flexagg::aggregate::AggregateDoc;
use flexagg::disaggregate::{schedule, verify, Tolerances};
use flexagg::fleet::{load_fleet, sample_fleet, write_fleet_csv, EvRequest, FleetFormat, TimeHorizon};
use flexagg::oracle::{brute_force_cloud, cloud_support};
use flexagg::series::{load_series, write_series};
use flexagg::solver::{solve, Method, Objective, SolutionDoc, SolveOptions, SolverSolution, StepRule};
use flexagg::AggregateFlexibility;
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "flexagg", version, about = "Aggregate EV charging flexibility, optimize over it, disaggregate")]
struct Cli {
    /// Directory that receives output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random fleet and write fleet.csv.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
    },
    /// Build the aggregate flexibility set and write aggregate.json.
    Aggregate(FleetArgs),
    /// Optimize an objective over the aggregate; writes solution.json and xstar.csv.
    Solve(SolveArgs),
    /// Split a solution into per-EV schedules; writes schedule.csv and verification.json.
    Disaggregate {
        #[arg(long)]
        solution: PathBuf,
        #[command(flatten)]
        fleet: FleetArgs,
    },
    /// Time aggregation and a linear solve over a grid of fleet sizes; writes bench.csv.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [48])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 500, 2000, 8000])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Track a signal; writes track.csv, track.svg and solution.json.
    Track {
        #[command(flatten)]
        fleet: FleetArgs,
        #[arg(long)]
        signal: PathBuf,
        #[command(flatten)]
        opts: SolverArgs,
    },
    /// Brute-force support values of the fleet's vertex cloud (debugging).
    #[command(hide = true)]
    Oracle {
        #[command(flatten)]
        fleet: FleetArgs,
        /// Direction as a `t,value` series.
        #[arg(long)]
        direction: PathBuf,
    },
}

#[derive(Args)]
struct FleetArgs {
    /// Fleet file (.csv or .json).
    #[arg(long)]
    fleet: PathBuf,
    /// Horizon length.
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct SolveArgs {
    /// Fleet file; alternative to --aggregate.
    #[arg(long, requires = "n", conflicts_with = "aggregate", required_unless_present = "aggregate")]
    fleet: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Aggregate JSON written by `aggregate`.
    #[arg(long)]
    aggregate: Option<PathBuf>,
    #[arg(long, value_enum)]
    objective: ObjectiveKind,
    #[arg(long)]
    price: Option<PathBuf>,
    #[arg(long)]
    demand: Option<PathBuf>,
    #[arg(long)]
    signal: Option<PathBuf>,
    #[command(flatten)]
    opts: SolverArgs,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::FrankWolfe)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = StepArg::Exact)]
    step_rule: StepArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveKind {
    Linear,
    Quadratic,
    Track,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    FrankWolfe,
    Pairwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum StepArg {
    Exact,
    OpenLoop,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            max_iters: self.max_iters,
            gap_tol: self.gap_tol,
            method: match self.method {
                MethodArg::FrankWolfe => Method::FrankWolfe,
                MethodArg::Pairwise => Method::Pairwise,
            },
            step_rule: match self.step_rule {
                StepArg::Exact => StepRule::Exact,
                StepArg::OpenLoop => StepRule::OpenLoop,
            },
        }
    }
}

/// Solver stopped at the iteration cap. Artifacts are kept: they are
/// complete, just not certified to the requested gap.
#[derive(Debug, thiserror::Error)]
#[error("solver did not converge: gap {gap:.3e} after {iterations} iterations")]
struct NotConverged {
    gap: f64,
    iterations: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("disaggregation failed verification (see verification.json)")]
struct VerificationFailed;

/// Output files created by a command; removed again unless the command
/// finishes and calls [`Artifacts::keep`].
struct Artifacts {
    dir: PathBuf,
    created: Vec<PathBuf>,
    keep: bool,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), created: Vec::new(), keep: false })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.created.push(path.clone());
        let mut out = BufWriter::new(file);
        body(&mut out)?;
        out.flush().with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn keep(&mut self) {
        self.keep = true;
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.created {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn horizon(n: usize) -> Result<TimeHorizon> {
    Ok(TimeHorizon::new(n)?)
}

fn read_fleet(args: &FleetArgs) -> Result<(Vec<EvRequest>, TimeHorizon)> {
    let h = horizon(args.n)?;
    let fleet = load_fleet(&args.fleet, FleetFormat::from_path(&args.fleet), h)
        .with_context(|| format!("loading {}", args.fleet.display()))?;
    Ok((fleet, h))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc = serde_json::from_str(&text)
        .map_err(flexagg::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    Ok(doc)
}

fn series(path: &Option<PathBuf>, flag: &str, n: usize) -> Result<Vec<f64>> {
    let Some(path) = path else {
        return Err(flexagg::Error::InvalidObjective(format!("--{flag} is required for this objective")).into());
    };
    load_series(path, n).with_context(|| format!("loading {}", path.display()))
}

fn write_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(flexagg::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn finish_solve(sol: &SolverSolution) -> Result<()> {
    if sol.converged {
        Ok(())
    } else {
        Err(NotConverged { gap: sol.fw_gap, iterations: sol.iterations }.into())
    }
}

fn cmd_sample(out: &Path, seed: u64, k: usize, n: usize) -> Result<()> {
    let h = horizon(n)?;
    let fleet = sample_fleet(seed, k, h);
    let mut art = Artifacts::new(out)?;
    art.write("fleet.csv", |w| Ok(write_fleet_csv(&fleet, w)?))?;
    art.keep();
    println!("sampled {k} EVs over n = {n} (seed {seed})");
    Ok(())
}

fn cmd_aggregate(out: &Path, args: &FleetArgs) -> Result<()> {
    let (fleet, h) = read_fleet(args)?;
    let agg = AggregateFlexibility::build(&fleet, h)?;
    let mut art = Artifacts::new(out)?;
    art.write("aggregate.json", |w| write_json(w, &agg.to_doc()))?;
    art.keep();
    println!(
        "{} EVs in {} windows, total energy {}",
        fleet.len(),
        agg.blocks().len(),
        agg.total_energy()
    );
    Ok(())
}

fn cmd_solve(out: &Path, args: &SolveArgs) -> Result<()> {
    let agg = match (&args.aggregate, &args.fleet, args.n) {
        (Some(path), _, _) => AggregateFlexibility::from_doc(read_json::<AggregateDoc>(path)?)?,
        (None, Some(fleet), Some(n)) => {
            let (fleet, h) = read_fleet(&FleetArgs { fleet: fleet.clone(), n })?;
            AggregateFlexibility::build(&fleet, h)?
        }
        _ => bail!(flexagg::Error::Parse("either --aggregate or --fleet with --n is required".into())),
    };
    let n = agg.n();
    let obj = match args.objective {
        ObjectiveKind::Linear => Objective::Linear { price: series(&args.price, "price", n)? },
        ObjectiveKind::Quadratic => Objective::QuadraticPrice {
            price: series(&args.price, "price", n)?,
            demand: series(&args.demand, "demand", n)?,
        },
        ObjectiveKind::Track => Objective::TrackL2 { signal: series(&args.signal, "signal", n)? },
    };
    let sol = solve(&agg, &obj, &args.opts.options())?;
    let mut art = Artifacts::new(out)?;
    art.write("solution.json", |w| write_json(w, &sol.to_doc()))?;
    art.write("xstar.csv", |w| Ok(write_series(&sol.x_star, w)?))?;
    art.keep();
    println!(
        "objective {} after {} iterations, gap {:.3e}",
        sol.objective_value, sol.iterations, sol.fw_gap
    );
    finish_solve(&sol)
}

fn cmd_disaggregate(out: &Path, solution: &Path, args: &FleetArgs) -> Result<()> {
    let (fleet, h) = read_fleet(args)?;
    let agg = AggregateFlexibility::build(&fleet, h)?;
    let sol = SolverSolution::from_doc(read_json::<SolutionDoc>(solution)?, &agg)?;
    let sched = schedule(&sol, &fleet, &agg)?;
    let tol = Tolerances::for_fleet(&fleet);
    let report = verify(&sched, &sol.x_star, &fleet, tol);
    let mut art = Artifacts::new(out)?;
    art.write("schedule.csv", |w| Ok(sched.write_csv(&fleet, tol.per_ev_rel, w)?))?;
    art.write("verification.json", |w| write_json(w, &report))?;
    // the report is the point of a failed run, so keep it
    art.keep();
    println!(
        "verification {}: tracking error {:.3e}, {} EV violation(s)",
        if report.passed { "passed" } else { "FAILED" },
        report.tracking_error,
        report.violations.len()
    );
    if !report.passed {
        return Err(VerificationFailed.into());
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn cmd_bench(out: &Path, seed: u64, ns: &[usize], ks: &[usize], reps: usize) -> Result<()> {
    if reps == 0 {
        bail!(flexagg::Error::Parse("--reps must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in ns {
        let h = horizon(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let price: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let obj = Objective::Linear { price };
        for &k in ks {
            let fleet = sample_fleet(seed.wrapping_add(k as u64), k, h);
            let (mut build, mut solve_ms) = (Vec::new(), Vec::new());
            let mut last = None;
            for _ in 0..reps {
                let t0 = Instant::now();
                let agg = AggregateFlexibility::build(&fleet, h)?;
                build.push(t0.elapsed().as_secs_f64() * 1e3);
                let t1 = Instant::now();
                let sol = solve(&agg, &obj, &SolveOptions::default())?;
                solve_ms.push(t1.elapsed().as_secs_f64() * 1e3);
                last = Some(sol);
            }
            let sol = last.expect("reps > 0");
            let row = (n, k, median(build), median(solve_ms), sol.iterations, sol.fw_gap);
            println!("n={} k={} build {:.3} ms, solve {:.3} ms", row.0, row.1, row.2, row.3);
            rows.push(row);
        }
    }
    let mut art = Artifacts::new(out)?;
    art.write("bench.csv", |w| {
        writeln!(w, "n,k,build_ms,solve_ms,iterations,gap")?;
        for (n, k, b, s, it, gap) in &rows {
            writeln!(w, "{n},{k},{b},{s},{it},{gap}")?;
        }
        Ok(())
    })?;
    art.keep();
    Ok(())
}

fn cmd_track(out: &Path, args: &FleetArgs, signal: &Path, opts: &SolverArgs) -> Result<()> {
    let (fleet, h) = read_fleet(args)?;
    let agg = AggregateFlexibility::build(&fleet, h)?;
    let g = load_series(signal, h.n).with_context(|| format!("loading {}", signal.display()))?;
    let obj = Objective::TrackL2 { signal: g.clone() };
    let sol = solve(&agg, &obj, &opts.options())?;
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let residual = norm(&mut sol.x_star.iter().zip(&g).map(|(x, y)| x - y));
    let relative = residual / norm(&mut g.iter().copied()).max(f64::MIN_POSITIVE);

    let mut art = Artifacts::new(out)?;
    art.write("track.csv", |w| {
        writeln!(w, "t,x_star,signal")?;
        for (t, (x, y)) in sol.x_star.iter().zip(&g).enumerate() {
            writeln!(w, "{},{x},{y}", t + 1)?;
        }
        Ok(())
    })?;
    art.write("track.svg", |w| {
        let svg = plot::line_plot(
            "aggregate profile vs signal",
            &[
                plot::Series { label: "x*", color: "#1f77b4", values: &sol.x_star },
                plot::Series { label: "signal", color: "#d62728", values: &g },
            ],
        );
        w.write_all(svg.as_bytes())?;
        Ok(())
    })?;
    art.write("solution.json", |w| write_json(w, &sol.to_doc()))?;
    art.keep();
    println!(
        "residual {residual:.6e} (relative {relative:.6e}) after {} iterations, gap {:.3e}",
        sol.iterations, sol.fw_gap
    );
    finish_solve(&sol)
}

fn cmd_oracle(args: &FleetArgs, direction: &Path) -> Result<()> {
    let (fleet, h) = read_fleet(args)?;
    let y = load_series(direction, h.n)?;
    let cloud = brute_force_cloud(&fleet, h)?;
    let agg = AggregateFlexibility::build(&fleet, h)?;
    println!("cloud points {}", cloud.len());
    println!("cloud support {}", cloud_support(&cloud, &y)?);
    println!("aggregate support {}", agg.support(&y)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FLEXAGG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| flexagg::Error::Parse(format!("FLEXAGG_THREADS must be a non-negative integer, got {raw:?}")))?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        warn!("could not configure thread pool: {e}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Sample { seed, k, n } => cmd_sample(out, *seed, *k, *n),
        Command::Aggregate(args) => cmd_aggregate(out, args),
        Command::Solve(args) => cmd_solve(out, args),
        Command::Disaggregate { solution, fleet } => cmd_disaggregate(out, solution, fleet),
        Command::Bench { seed, n, k, reps } => cmd_bench(out, *seed, n, k, *reps),
        Command::Track { fleet, signal, opts } => cmd_track(out, fleet, signal, opts),
        Command::Oracle { fleet, direction } => cmd_oracle(fleet, direction),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return 3;
    }
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<flexagg::Error>() {
        return match e {
            flexagg::Error::Io(_) => 4,
            flexagg::Error::SolverFailure(_) | flexagg::Error::TooLarge(_) => 3,
            _ => 2,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 4;
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
