//! `nonstat`: reproducible experiments on the induced scheme, families and
//! bridging points. Artifacts go to the output directory as JSON and CSV.

mod commands;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] nonstat::Error),
    #[error("writing {path}: {msg}")]
    Output { path: String, msg: String },
}

impl CliError {
    /// Exit status: 2 for unusable input, 1 for everything that failed while running.
    fn code(&self) -> u8 {
        use nonstat::Error as E;
        match self {
            CliError::Input(_) => 2,
            CliError::Core(
                E::Input(_)
                | E::InvalidTarget(_)
                | E::InvalidMap(_)
                | E::OutOfDomain(_)
                | E::NotInY(_)
                | E::Misaligned(_)
                | E::TailFit(_)
                | E::CapExceeded(_),
            ) => 2,
            _ => 1,
        }
    }
}

/// Result of a subcommand that ran to completion.
pub enum Outcome {
    Ok,
    /// A certificate or invariant check failed; the value is written as the witness.
    Failed(serde_json::Value),
}

#[derive(Parser, Debug)]
#[command(name = "nonstat", version, about = "Induced-scheme laboratory for maps with neutral fixed points")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Block-choice policy: lex-least, lex-greatest, nearest or seeded:N.
    #[arg(long, global = true)]
    seed_policy: Option<String>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    /// `example`, `thaler:D:KAPPA` or a map JSON file.
    #[arg(long, global = true)]
    map: Option<String>,
    #[arg(long, global = true)]
    m_max: Option<u32>,
    /// Point `a,b,c` or polyline `a,b,c;d,e,f`; decimals and `p/q` accepted.
    #[arg(long, global = true, allow_hyphen_values = true)]
    target: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    eps0: Option<String>,
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Comma-separated core depths.
    #[arg(long, global = true, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    seeds: Option<u64>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    k_cap: Option<u64>,
}

impl Global {
    fn flags(&self) -> ExperimentConfig {
        ExperimentConfig {
            map: self.map.clone().map(config::MapSource::Name),
            m_max: self.m_max,
            target: self.target.clone(),
            epsilon: self.epsilon.clone(),
            eps0: self.eps0.clone(),
            levels: self.levels,
            depths: self.depths.clone(),
            budget: self.budget,
            seeds: self.seeds,
            seed: self.seed,
            steps: self.steps,
            k_cap: self.k_cap,
            policy: self.seed_policy.clone(),
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Map document, fixed points and assumption checks.
    DescribeMap,
    /// Inducing set, big images, regions, alphabet and connectors.
    Induce,
    /// Return-time tails and fitted exponents (needs m_max >= 100).
    Tail,
    /// Enumerate the n-cylinders, optionally inside a ratio ball.
    Cylinders(commands::CylinderArgs),
    /// Virtual dimension of a length list or of all n-cylinders.
    Vdim(commands::VdimArgs),
    /// Families with ratios near the target, with item checks.
    Approx,
    /// Plan a schedule, build a point, certify and replay it.
    Bridge(commands::BridgeArgs),
    /// Recheck a stored certificate bundle from scratch.
    Verify(commands::VerifyArgs),
    /// Orbit occupancy, coding checks, limit set and seed ensembles.
    Simulate(commands::SimulateArgs),
}

fn init_logging(level: log::LevelFilter) {
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, rec| writeln!(buf, "level={} {}", rec.level().as_str().to_lowercase(), rec.args()))
        .target(env_logger::Target::Stderr)
        .init();
}

fn settings(g: &Global) -> Result<ExperimentConfig, CliError> {
    let file = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let cfg = g.flags().or(file);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: &Command, cfg: ExperimentConfig, threads: Option<usize>) -> Result<Outcome, CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    let out = cfg.out();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Output {
        path: out.display().to_string(),
        msg: e.to_string(),
    })?;
    let ctx = commands::Ctx { cfg, out };
    match cmd {
        Command::DescribeMap => commands::describe_map(&ctx),
        Command::Induce => commands::induce(&ctx),
        Command::Tail => commands::tail(&ctx),
        Command::Cylinders(a) => commands::cylinders(&ctx, a),
        Command::Vdim(a) => commands::vdim(&ctx, a),
        Command::Approx => commands::approx(&ctx),
        Command::Bridge(a) => commands::bridge(&ctx, a),
        Command::Verify(a) => commands::verify(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
    }
}

fn fail(e: CliError, out: &Path) -> ExitCode {
    let code = e.code();
    error!("{e}");
    if code == 1 {
        let w = serde_json::json!({ "error": e.to_string() });
        if std::fs::create_dir_all(out).is_ok() && commands::write_json(out, "witness.json", &w).is_ok() {
            info!("witness in {}", out.join("witness.json").display());
        }
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(cli.global.log_level);
    let cfg = match settings(&cli.global) {
        Ok(c) => c,
        Err(e) => return fail(e, Path::new("out")),
    };
    let out = cfg.out();
    match run(&cli.cmd, cfg, cli.global.threads) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(w)) => {
            error!("check failed, witness in {}", out.join("witness.json").display());
            if let Err(e) = commands::write_json(&out, "witness.json", &w) {
                error!("{e}");
            }
            ExitCode::from(1)
        }
        Err(e) => fail(e, &out),
    }
}
