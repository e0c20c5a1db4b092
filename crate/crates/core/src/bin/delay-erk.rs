use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use delay_erk::dump::save_history;
use delay_erk::harness::{parse_step, run_study, write_reference, StudyConfig, StudyFile};
use delay_erk::problem::{by_name, l2_norm, BUILTIN_PROBLEMS};
use delay_erk::verify::run_kernel_oracle;
use delay_erk::{IterationPolicy, Method};

#[derive(Parser)]
#[command(name = "delay-erk", version, about = "Exponential Runge-Kutta solvers for parabolic problems with state-dependent delay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one problem with one method and step size.
    Solve(SolveArgs),
    /// Convergence study over h = 2^-kmin .. 2^-kmax, written as CSV.
    Converge(ConvergeArgs),
    /// Generate a high-resolution reference state at the horizon.
    Reference(ReferenceArgs),
    /// Check the phi and weight kernels against quadrature oracles.
    Phitest(PhitestArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value = "gl4")]
    method: String,
    /// Step size, decimal or 2^-k.
    #[arg(long)]
    h: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    track: bool,
    /// Write the full history dump here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvergeArgs {
    /// TOML file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Comma separated, e.g. euler,erk2,col3,gl4.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    kmin: Option<u32>,
    #[arg(long)]
    kmax: Option<u32>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    track: bool,
    /// manufactured, 2^-k or a dump file.
    #[arg(long = "ref")]
    reference: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write wall_ms = 0 so the CSV is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value = "2^-14")]
    h: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value = "gl4")]
    method: String,
    /// Disable breakpoint tracking.
    #[arg(long)]
    no_track: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PhitestArgs {
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn check_problem(name: &str) -> Result<()> {
    if !BUILTIN_PROBLEMS.contains(&name) {
        bail!("unknown problem `{name}`, expected one of {}", BUILTIN_PROBLEMS.join(", "));
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    check_problem(&args.problem)?;
    let p = by_name(&args.problem, args.n)?;
    let method: Method = args.method.parse()?;
    let h = parse_step(&args.h)?;
    let res = delay_erk::harness::solve(&p, &method, h, args.track, &IterationPolicy::default())?;
    println!("problem   {}", p.name);
    println!("method    {method}");
    println!("steps     {}", res.steps.len());
    println!("overlaps  {}", res.overlap_steps());
    if let Some(exact) = &p.exact {
        let err = l2_norm(&p.op, &res.final_state().difference(&exact(p.horizon)));
        println!("error_l2  {err:e}");
    }
    println!("norm_l2   {:e}", l2_norm(&p.op, res.final_state()));
    if let Some(bp) = &res.breakpoints {
        for (t, parent) in bp.points().iter().zip(bp.parents()).skip(1) {
            println!("breakpoint {t} parent {}", parent.unwrap_or(0));
        }
    }
    if let Some(out) = &args.out {
        save_history(out, &res.history).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn converge(args: ConvergeArgs) -> Result<()> {
    let mut file = match &args.config {
        Some(path) => StudyFile::load(path)?,
        None => StudyFile::default(),
    };
    file.problem = args.problem.or(file.problem);
    file.methods = args.methods.or(file.methods);
    file.kmin = args.kmin.or(file.kmin);
    file.kmax = args.kmax.or(file.kmax);
    file.n = args.n.or(file.n);
    file.reference = args.reference.or(file.reference);
    file.out = args.out.or(file.out);
    if args.track {
        file.track = Some(true);
    }
    if args.no_timing {
        file.timing = Some(false);
    }
    let cfg = StudyConfig::from_file(&file)?;
    check_problem(&cfg.problem)?;
    let table = run_study(&cfg)?;
    if cfg.out.is_none() {
        print!("{}", table.to_csv());
    }
    for m in &cfg.methods {
        let name = m.name();
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        eprintln!(
            "{name}: finest rate {}, fitted slope {}",
            fmt(table.finest_rate(&name)),
            fmt(table.slope(&name))
        );
    }
    Ok(())
}

fn reference(args: ReferenceArgs) -> Result<()> {
    check_problem(&args.problem)?;
    let p = by_name(&args.problem, args.n)?;
    let method: Method = args.method.parse()?;
    let h = parse_step(&args.h)?;
    let res = write_reference(&p, h, &method, !args.no_track, &args.out)?;
    println!("reference {} written to {}", p.name, args.out.display());
    if let Some(bp) = &res.breakpoints {
        for t in bp.detected() {
            println!("breakpoint {t}");
        }
    }
    Ok(())
}

fn phitest(args: PhitestArgs) -> Result<()> {
    let report = run_kernel_oracle(args.seed, args.cases)?;
    println!("cases                {}", report.cases);
    println!("max phi residual     {:e}", report.max_phi_residual);
    println!("max weight residual  {:e}", report.max_weight_residual);
    if report.max_phi_residual > 1e-9 || report.max_weight_residual > 1e-9 {
        bail!("kernel residuals exceed 1e-9");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(a) => solve(a),
        Command::Converge(a) => converge(a),
        Command::Reference(a) => reference(a),
        Command::Phitest(a) => phitest(a),
    }
}
