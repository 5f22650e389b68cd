use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use sandi_service::client::{Client, HttpTransport};
use sandi_service::config::{ClockMode, ServiceConfig};
use sandi_service::harness::{self, RunSpec};
use sandi_service::{bench, http, Service};
use sandi_sim::{
    brute_force_optimum, check_bounded_optimality, check_normalized_optimality, optimal_value,
    Instance,
};

#[derive(Parser)]
#[command(
    name = "sandi",
    version,
    about = "Anonymous sender accountability: server, scripted runs, benchmarks, strategy simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the accountability server over HTTP.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the bind address from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Execute a run spec and print its JSON-lines transcript.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base URL of a server started with `clock = "manual"`; runs in-process when absent.
        #[arg(long)]
        remote: Option<String>,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time tag issuance, receipt and reporting.
    Bench {
        #[arg(long, default_value_t = 200)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve a strategy-game instance.
    Sim {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = SimMode::Dp)]
        mode: SimMode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimMode {
    Dp,
    Brute,
    Theorems,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Serve { config, bind } => result(serve(config, bind)),
        Command::Run {
            spec,
            seed,
            remote,
            out,
        } => result(run(spec, seed, remote, out)),
        Command::Bench { iterations, seed } => result(run_bench(iterations, seed)),
        Command::Sim { instance, mode } => result(sim(instance, mode)),
    }
}

fn result(r: Result<bool, String>) -> ExitCode {
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn serve(config: Option<PathBuf>, bind: Option<String>) -> Result<bool, String> {
    let mut config = match config {
        Some(path) => ServiceConfig::load(&path).map_err(|e| e.to_string())?,
        None => ServiceConfig::from_toml("").map_err(|e| e.to_string())?,
    };
    if let Some(bind) = bind {
        config.bind = bind;
    }
    let service = Arc::new(Service::from_config(&config).map_err(|e| e.to_string())?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.bind)
            .await
            .map_err(|e| format!("binding {}: {e}", config.bind))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        eprintln!("listening on http://{addr} ({:?} clock)", config.clock);
        if config.clock == ClockMode::System {
            let period = Duration::from_secs(service.server().config().epoch_dur.clamp(1, 10));
            http::spawn_roller(service.clone(), period);
        }
        tokio::select! {
            r = http::serve(service, listener) => r.map_err(|e| e.to_string())?,
            _ = tokio::signal::ctrl_c() => eprintln!("shutting down"),
        }
        Ok(true)
    })
}

fn run(
    spec: PathBuf,
    seed: u64,
    remote: Option<String>,
    out: Option<PathBuf>,
) -> Result<bool, String> {
    let text = std::fs::read_to_string(&spec).map_err(|e| format!("{}: {e}", spec.display()))?;
    let spec = RunSpec::from_toml(&text).map_err(|e| e.to_string())?;
    let result = match remote {
        Some(base) => harness::run(&spec, seed, &Client::new(HttpTransport::new(base))),
        None => harness::run_embedded(&spec, seed).map(|(r, _)| r),
    }
    .map_err(|e| e.to_string())?;
    let transcript = result.transcript();
    match out {
        Some(path) => {
            std::fs::write(&path, transcript).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => print!("{transcript}"),
    }
    for m in &result.mismatches {
        eprintln!("mismatch: {m}");
    }
    if !result.all_accepted() {
        eprintln!("some proofs were rejected");
    }
    Ok(result.success())
}

fn run_bench(iterations: usize, seed: u64) -> Result<bool, String> {
    if iterations == 0 {
        return Err("iterations must be positive".into());
    }
    let timings = bench::run(iterations, seed).map_err(|e| e.to_string())?;
    println!(
        "{:<12} {:>12} {:>12} {:>12}",
        "operation", "median", "mean", "max"
    );
    for t in &timings {
        println!(
            "{:<12} {:>12.3?} {:>12.3?} {:>12.3?}",
            t.op.name(),
            t.median(),
            t.mean(),
            t.max()
        );
    }
    Ok(true)
}

fn sim(path: PathBuf, mode: SimMode) -> Result<bool, String> {
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let instance = Instance::from_toml(&text).map_err(|e| e.to_string())?;
    let env = &instance.env;
    let sc = instance.start_score;
    println!(
        "horizon {}  budget {}  start score {sc}  delay {}",
        env.horizon, env.budget, env.delay
    );
    match mode {
        SimMode::Dp => {
            let v =
                optimal_value(sc, env.horizon, env.budget, 0, env).map_err(|e| e.to_string())?;
            println!("optimal expected reward  {v:.6}");
        }
        SimMode::Brute => {
            let r = brute_force_optimum(env, sc).map_err(|e| e.to_string())?;
            println!(
                "optimal expected reward  {:.6}  ({} leaves)",
                r.value, r.leaves
            );
            println!("{:>3} {:>8}  scripts", "e", "level");
            for plan in &r.witness {
                let names: Vec<&str> = plan
                    .scripts
                    .iter()
                    .map(|&i| env.archetypes[i].name.as_str())
                    .collect();
                println!(
                    "{:>3} {:>8}  {}",
                    plan.e,
                    format!("{:?}", plan.level),
                    names.join(", ")
                );
            }
        }
        SimMode::Theorems => {
            let t1 = check_normalized_optimality(env, sc).map_err(|e| e.to_string())?;
            let t2 = check_bounded_optimality(env, sc).map_err(|e| e.to_string())?;
            println!("{:<28} {:>12}", "optimum", format!("{:.6}", t1.optimum));
            println!(
                "{:<28} {:>12}",
                "best normalized profile",
                format!("{:.6}", t1.best_value)
            );
            println!(
                "{:<28} {:>12}",
                "profile (X_e..X_0)",
                format!("{:?}", t1.best_profile.0)
            );
            println!("{:<28} {:>12}", "profiles searched", t1.profiles);
            println!("{:<28} {:>12}", "normalized optimum found", t1.holds);
            println!("{:<28} {:>12}", "growth condition", t2.growth);
            let bounded = t2
                .best_bounded
                .map_or("none".to_owned(), |v| format!("{v:.6}"));
            println!("{:<28} {:>12}", "best bounded profile", bounded);
            println!("{:<28} {:>12}", "bounded optimum found", t2.attained);
            return Ok(t1.holds && t2.holds);
        }
    }
    Ok(true)
}
