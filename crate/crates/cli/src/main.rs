use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerrfock::harness::{self, RunConfig, OUT_DIR_ENV};
use kerrfock::Error;

/// Adiabatic Fock-state preparation in a driven Kerr cavity.
#[derive(Debug, Parser)]
#[command(name = "kerrfock", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Optimizer seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid points (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Fock-space truncation of the dynamics.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct PathArg {
    /// Path document from `optimize` (default: <out>/path.json).
    #[arg(long = "path")]
    path_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the drive path and write path.json.
    Optimize,
    /// Turn a path into a timed schedule.
    Schedule(PathArg),
    /// Simulate from the vacuum; writes the trajectory and Wigner grids.
    Simulate(PathArg),
    /// Only the Wigner grids of a simulation.
    Wigner(PathArg),
    /// Best fidelity over the (T, k) grids for every loss rate.
    Sweep(PathArg),
    /// Optimized penalty against n with a power-law fit.
    Scaling {
        /// Targets (default: study.n_range).
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Smallest chi/kappa reaching a target fidelity.
    Requirements {
        /// Targets (default: study.n_range).
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Fidelity to reach (default: study.f_target).
        #[arg(long)]
        f_target: Option<f64>,
    },
    /// Print a commented configuration with every default.
    Template,
}

/// Process exit status for each failure class.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidDimension(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. } => 2,
        Error::InfeasiblePath(_) | Error::DegeneratePoint { .. } => 3,
        Error::Numerical(_) | Error::NotHermitian(_) => 4,
        Error::Io { .. } | Error::Format(_) => 5,
    }
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &g.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.optimizer.seed = seed;
    }
    if let Some(dim) = g.dim {
        cfg.target.dim = dim;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn path_report(cfg: &RunConfig, arg: &PathArg) -> Result<harness::PathReport, Error> {
    let file = arg.path_file.clone().unwrap_or_else(|| cfg.output.dir.join("path.json"));
    harness::load_path(&file, cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Command::Template = cli.command {
        print!("{}", harness::config_template());
        return Ok(());
    }
    let cfg = load_config(&cli.global)?;
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let say = |msg: String| {
        if !cli.global.quiet {
            println!("{msg}");
        }
    };
    let files = |list: &[PathBuf]| list.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");
    match &cli.command {
        Command::Optimize => {
            let out = harness::cmd_optimize(&cfg)?;
            let r = &out.report;
            say(format!(
                "|{}⟩: I[C] = {:.6}, beta_max = {:.3}, region-B slope = {}",
                cfg.target.n,
                r.total_penalty,
                r.beta_max,
                r.region_b_slope.map_or("n/a".into(), |s| format!("{s:.4}"))
            ));
            say(format!("wrote {}", files(&out.written)));
        }
        Command::Schedule(arg) => {
            let report = path_report(&cfg, arg)?;
            let (sched, written) = harness::cmd_schedule(&cfg, &report)?;
            let (a, b, c) = sched.dwell_fractions();
            say(format!(
                "T = {}, k = {}: dwell fractions A {a:.3}, B {b:.3}, C {c:.3}",
                sched.total_time, sched.stretch
            ));
            say(format!("wrote {}", files(&written)));
        }
        Command::Simulate(arg) | Command::Wigner(arg) => {
            let report = path_report(&cfg, arg)?;
            let only_wigner = matches!(cli.command, Command::Wigner(_));
            let traj = !only_wigner && cfg.output.trajectory;
            let wig = only_wigner || cfg.output.wigner;
            let out = harness::cmd_simulate(&cfg, &report, traj, wig)?;
            let s = &out.summary;
            say(format!(
                "|{}⟩, T = {}, k = {}, kappa = {}: F = {:.6}, W(0,0) = {:.5}",
                s.n_target, s.total_time, s.stretch, s.kappa, s.fidelity, s.wigner_origin
            ));
            say(format!("wrote {}", files(&out.written)));
        }
        Command::Sweep(arg) => {
            let report = path_report(&cfg, arg)?;
            let (table, written) = harness::cmd_sweep(&cfg, &report)?;
            for kappa in &cfg.loss.kappa_grid {
                if let Some(r) = table.best_at(*kappa) {
                    say(format!(
                        "kappa = {kappa:e}: best F = {:.6} at T = {:.3}, k = {}",
                        r.fidelity, r.total_time, r.stretch
                    ));
                }
            }
            say(format!("wrote {}", files(&written)));
        }
        Command::Scaling { n } => {
            let range = n.clone().unwrap_or_else(|| cfg.study.n_range.clone());
            let rep = harness::cmd_scaling(&cfg, &range)?;
            for p in &rep.points {
                say(format!("n = {}: I[C] = {:.6}", p.n, p.total_penalty));
            }
            match &rep.fit {
                Some(fit) => say(format!(
                    "exponent {:.4}, max |residual| {:.3e}",
                    fit.exponent,
                    fit.residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()))
                )),
                None => say("fit refused: fewer than two targets".into()),
            }
        }
        Command::Requirements { n, f_target } => {
            let range = n.clone().unwrap_or_else(|| cfg.study.n_range.clone());
            let target = f_target.unwrap_or(cfg.study.f_target);
            let rep = harness::cmd_requirements(&cfg, &range, target)?;
            for r in &rep.rows {
                let rel = if r.reached { "=" } else { ">" };
                say(format!(
                    "n = {}: chi/kappa {rel} {:.3e} (best F {:.4})",
                    r.n, r.chi_over_kappa, r.best_fidelity
                ));
            }
            if let Some(fit) = &rep.trend {
                say(format!("chi/kappa ~ n^{:.3}", fit.exponent));
            }
        }
        Command::Template => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
