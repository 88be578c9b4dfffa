use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use equilex::builder::build_set;
use equilex::config::{resolve_seed, RunConfig};
use equilex::matrix::{in_class, inverse_norm_check, sample_class_member, EpsSchedule};
use equilex::report::{render_report, verify_report_file, write_report_atomic};

#[derive(Parser)]
#[command(
    name = "equilex",
    about = "Construct and verify equilateral point sets in smooth normed spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full construction described by a TOML config and emit a JSON report.
    Build {
        config: PathBuf,
        /// Override the seed from config / EQUILEX_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the report path from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute all pairwise distances of an emitted report from its coordinates.
    Verify {
        report: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Estimate the modulus of smoothness of the configured space at given tau values.
    Modulus {
        config: PathBuf,
        #[arg(long = "tau", required = true)]
        taus: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print an eps/R schedule and verify inverse-norm budgets by sampling.
    MatrixGate {
        #[arg(long)]
        c: f64,
        #[arg(long = "n-max")]
        n_max: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn env_seed() -> Option<u64> {
    std::env::var("EQUILEX_SEED")
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
}

fn load_config(path: &PathBuf, seed_flag: Option<u64>) -> Result<RunConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config = RunConfig::parse(&text).map_err(|e| e.to_string())?;
    let seed = resolve_seed(config.seed, env_seed(), seed_flag);
    Ok(config.with_seed(seed))
}

fn cmd_build(config_path: PathBuf, seed: Option<u64>, output: Option<PathBuf>) -> ExitCode {
    let config = match load_config(&config_path, seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let out_path = output.unwrap_or_else(|| {
        config
            .output_path
            .clone()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("report.json"))
    });

    let source = config.source().expect("config was validated");
    let oracle = config.oracle().expect("config was validated");
    let outcome = build_set(&source, &oracle, &config.policy, &config.params);

    let rendered = render_report(&config, &outcome);
    if let Err(e) = write_report_atomic(&out_path, &rendered) {
        eprintln!("error: writing {}: {e}", out_path.display());
        return ExitCode::from(1);
    }

    match outcome {
        Ok(set) => {
            println!(
                "ok: {} points, lambda = {:.12}, defect = {:.3e} -> {}",
                set.points.len(),
                set.lambda,
                set.defect,
                out_path.display()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("construction failed: {err}");
            eprintln!("report written to {}", out_path.display());
            ExitCode::from(2)
        }
    }
}

fn cmd_verify(report: PathBuf, tol: f64) -> ExitCode {
    match verify_report_file(&report, tol) {
        Ok(outcome) => {
            println!(
                "{}: {} points, lambda = {:.12}, recomputed defect = {:.3e} (tol {:.1e})",
                if outcome.ok { "ok" } else { "FAILED" },
                outcome.n_points,
                outcome.lambda,
                outcome.defect,
                tol
            );
            if outcome.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_modulus(config_path: PathBuf, taus: Vec<f64>, samples: usize, seed: Option<u64>) -> ExitCode {
    let config = match load_config(&config_path, seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let oracle = config.oracle().expect("config was validated");
    println!("p = {}, dim = {}, samples = {samples}, seed = {}", config.p, config.dim, config.seed);
    println!("{:>10} {:>24} {:>24}", "tau", "modulus", "tau^2/2 reference");
    for tau in taus {
        match oracle.modulus_of_smoothness(tau, samples, config.seed) {
            Ok(rho) => {
                println!("{:>10.4} {:>24.16e} {:>24.16e}", tau, rho, tau * tau / 2.0);
            }
            Err(e) => {
                eprintln!("error: tau = {tau}: {e}");
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::SUCCESS
}

fn cmd_matrix_gate(c: f64, n_max: usize, samples: usize, seed: u64) -> ExitCode {
    let sched = match EpsSchedule::new(c, n_max) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    println!("schedule for C = {c}, N_max = {n_max}:");
    for j in 2..=n_max {
        println!("  eps_{j} = {:.16e}", sched.eps(j).unwrap());
    }
    for n in 1..=n_max {
        println!("  R_{n} = {:.16e}", sched.r(n).unwrap());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_ok = true;
    for n in 1..=n_max {
        let budget = sched.r(n).unwrap();
        let mut worst = 0.0f64;
        let mut failures = 0usize;
        for _ in 0..samples {
            let a = match sample_class_member(&sched, n, &mut rng) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: sampling N = {n}: {e}");
                    return ExitCode::from(2);
                }
            };
            if !in_class(&a, c, &sched) {
                failures += 1;
                continue;
            }
            match inverse_norm_check(&a, budget) {
                Ok((ok, measured)) => {
                    worst = worst.max(measured);
                    if !ok {
                        failures += 1;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        all_ok &= failures == 0;
        println!(
            "  N = {n}: {samples} samples, worst inverse norm {:.6e} vs budget {:.6e}, failures {failures}",
            worst, budget
        );
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Build {
            config,
            seed,
            output,
        } => cmd_build(config, seed, output),
        Command::Verify { report, tol } => cmd_verify(report, tol),
        Command::Modulus {
            config,
            taus,
            samples,
            seed,
        } => cmd_modulus(config, taus, samples, seed),
        Command::MatrixGate {
            c,
            n_max,
            samples,
            seed,
        } => cmd_matrix_gate(c, n_max, samples, seed),
    }
}
