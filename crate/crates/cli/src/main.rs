mod config;
mod error;
mod output;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;
use error::{CliError, CliResult};
use output::{config_digest, resolve_out, write_run, ManifestInfo, Outputs};

#[derive(Parser)]
#[command(name = "shflab", version, about = "Numerical experiments on the critical 2D stochastic heat flow")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write wall-clock timings to timings.json (not part of the reproducible artifacts).
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides SHFLAB_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: plot::PlotKind,
    /// CSV artifact to render.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dickman densities f_s(t) and their normalization.
    Dickman(RunArgs),
    /// Green's function G_θ(t).
    Green(RunArgs),
    /// First and second moments of the mass.
    Moments(RunArgs),
    /// Divergence of the ball second moment as ε → 0.
    Scan(RunArgs),
    /// Feynman-Kac Monte Carlo mass.
    Simulate(RunArgs),
    /// Drift constant and disjointness of a tube family.
    Tubes(RunArgs),
    /// Lower-tail certificate.
    Certificate(RunArgs),
    /// Empirical lower tail of log-masses.
    Tail(RunArgs),
    /// Correlation of tube masses under shared noise.
    Independence(RunArgs),
    /// Render a CSV artifact as SVG.
    Plot(PlotArgs),
}

fn execute<C: RunConfig>(name: &str, args: &RunArgs, timings: bool, body: impl FnOnce(&C, u64, &mut Outputs) -> CliResult<()>) -> CliResult<()> {
    let (cfg, seed) = config::load::<C>(&args.config, args.seed)?;
    let digest = config_digest(name, &cfg)?;
    let started = Instant::now();
    let mut out = Outputs::new(&digest);
    body(&cfg, seed, &mut out)?;
    let dir = resolve_out(args.out.clone());
    write_run(
        &dir,
        &out,
        ManifestInfo {
            command: name,
            config: &cfg,
            seed,
        },
    )?;
    if timings {
        write_timings(&dir, started.elapsed().as_secs_f64())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Timings {
    wall_seconds: f64,
}

fn write_timings(dir: &std::path::Path, wall_seconds: f64) -> CliResult<()> {
    std::fs::write(dir.join("timings.json"), serde_json::to_vec_pretty(&Timings { wall_seconds })?)?;
    Ok(())
}

fn plot(args: &PlotArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::config(format!("cannot read {}: {e}", args.input.display())))?;
    let svg = plot::render(&text, args.kind)?;
    let dir = resolve_out(args.out.clone());
    std::fs::create_dir_all(&dir)?;
    let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    std::fs::write(dir.join(format!("{stem}.svg")), svg)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let t = cli.timings;
    match &cli.command {
        Command::Dickman(a) => execute("dickman", a, t, |c, _, o| run::dickman(c, o)),
        Command::Green(a) => execute("green", a, t, |c, _, o| run::green(c, o)),
        Command::Moments(a) => execute("moments", a, t, |c, _, o| run::moments(c, o)),
        Command::Scan(a) => execute("scan", a, t, |c, _, o| run::scan(c, o)),
        Command::Simulate(a) => execute("simulate", a, t, run::simulate),
        Command::Tubes(a) => execute("tubes", a, t, |c, _, o| run::tubes(c, o)),
        Command::Certificate(a) => execute("certificate", a, t, run::certificate),
        Command::Tail(a) => execute("tail", a, t, run::tail),
        Command::Independence(a) => execute("independence", a, t, run::independence),
        Command::Plot(a) => plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(CliError::internal(format!("thread pool: {e}")));
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&e).unwrap_or_else(|_| e.message.clone()));
    ExitCode::from(e.exit_code as u8)
}
