use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stefan_spde::config::parse_config;
use stefan_spde::runner::{
    resolve_threads, run_converge, run_qreport, run_simulate, run_verify, with_threads, RunError, EXIT_CONFIG, EXIT_RUNTIME,
    EXIT_VERIFICATION,
};

#[derive(Parser)]
#[command(name = "stefan-spde", version, about = "Stochastic Stefan problem: Galerkin simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ensemble; write snapshots, increments and the manifest.
    Simulate(Common),
    /// Replay and audit a run directory written by `simulate`.
    Verify(Common),
    /// Galerkin convergence sweep over m and 2m.
    Converge(Common),
    /// Correction matrix field and noise assumption summaries.
    Qreport(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to STEFAN_SPDE_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Simulate(c) | Command::Verify(c) | Command::Converge(c) | Command::Qreport(c)) = &cli.command;
    let mut config = match parse_config(&c.config) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", c.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(seed) = c.seed {
        config.sim.seed = seed;
    }
    let threads = match resolve_threads(c.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let out = &c.out;
    let result = with_threads(threads, || -> Result<i32, RunError> {
        match &cli.command {
            Command::Simulate(_) => {
                let m = run_simulate(&config, out)?;
                for n in &m.validators.notes {
                    eprintln!("warning: {n}");
                }
                let blown: Vec<String> = m
                    .paths
                    .iter()
                    .filter_map(|p| p.blow_up.as_ref().map(|b| format!("path {}: step {} ({})", p.path, b.step, b.message)))
                    .collect();
                println!(
                    "simulated {} paths, {} steps, dt = {:e}, wall {:.2} s -> {}",
                    m.paths.len(),
                    m.steps,
                    m.dt,
                    m.wall_time_s,
                    out.display()
                );
                for b in &blown {
                    eprintln!("blow-up: {b}");
                }
                Ok(if blown.is_empty() { 0 } else { EXIT_RUNTIME })
            }
            Command::Verify(_) => {
                let r = run_verify(&config, out)?;
                print!("{}", r.table());
                Ok(if r.passed() { 0 } else { EXIT_VERIFICATION })
            }
            Command::Converge(_) => {
                let r = run_converge(&config, out)?;
                print!("{}", r.study.to_csv());
                println!("{}: {} ({})", r.entry.name, r.entry.status.label(), r.entry.detail);
                Ok(if r.study.blow_up {
                    EXIT_RUNTIME
                } else if r.entry.passed() {
                    0
                } else {
                    EXIT_VERIFICATION
                })
            }
            Command::Qreport(_) => {
                let r = run_qreport(&config, out)?;
                println!("γ = {:.6e}, λ_max = {:.6e}", r.gamma, r.lambda_max);
                println!(
                    "(Ip1) partial {:.6e}, extended {:.6e}, ratio {:.3e}: {}",
                    r.ip1.partial_sum,
                    r.ip1.extended_sum,
                    r.ip1.increment_ratio,
                    if r.ip1.passed { "pass" } else { "fail" }
                );
                println!(
                    "(Ip2) trace tail ratio {:.3e}: {}; (Ip3) min eigenvalue {:.3e}: {}",
                    r.ip2_ip3.trace_tail_ratio,
                    if r.ip2_ip3.ip2_passed { "pass" } else { "fail" },
                    r.ip2_ip3.min_eigenvalue,
                    if r.ip2_ip3.ip3_passed { "pass" } else { "fail" }
                );
                for n in &r.notes {
                    eprintln!("warning: {n}");
                }
                if let Some(why) = &r.rejection {
                    eprintln!("rejected: {why}");
                }
                Ok(if r.passed { 0 } else { EXIT_VERIFICATION })
            }
        }
    });
    match result.and_then(|r| r) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
