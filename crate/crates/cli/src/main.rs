use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cri_cli::compare::compare_oracle;
use cri_cli::config::{ConfigError, Overrides};
use cri_cli::runner::{run_scenario, write_config_failure, EXIT_CONFIG, EXIT_INNER_FAILURE};
use cri_cli::{load_config, scenarios};

#[derive(Parser)]
#[command(name = "cri", version, about = "Coupled Ricci iteration on discrete periodic tori")]
struct Cli {
    /// Print the bundled presets and exit.
    #[arg(long)]
    list_scenarios: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file, or the name of a bundled preset.
    config: String,
    /// Output directory (default: `output_dir` from the config, else runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// gs or jacobi.
    #[arg(long)]
    mode: Option<String>,
    /// Fixed-point tolerance on max_i ||rho_i||_inf.
    #[arg(long)]
    tol: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides { out: self.out.clone(), max_outer: self.max_outer, mode: self.mode.clone(), tol: self.tol }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the iteration and write ledger, summary, fields and plot data.
    Run(RunArgs),
    /// Check a config and report every problem found.
    Validate(RunArgs),
    /// Compare the engine with the reference oracles on a coarse grid.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        /// Points per axis for the comparison (default: min(N, 8), capped by the oracle).
        #[arg(long)]
        points: Option<usize>,
    },
    /// Print the bundled presets.
    ListScenarios,
}

fn list() -> ExitCode {
    for (name, desc) in scenarios::descriptions() {
        println!("{name:<22} {desc}");
    }
    ExitCode::SUCCESS
}

fn config_failure(e: &ConfigError, out: Option<&PathBuf>) -> ExitCode {
    eprintln!("{e}");
    if let Some(out) = out {
        let errors = match e {
            ConfigError::Validation(v) => v.clone(),
            other => vec![other.to_string()],
        };
        if let Err(w) = write_config_failure(out, &errors) {
            eprintln!("{w}");
        }
    }
    ExitCode::from(EXIT_CONFIG as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_scenarios {
        return list();
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; try `cri --help`");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    match command {
        Command::ListScenarios => list(),
        Command::Validate(args) => match load_config(&args.config, &args.overrides()) {
            Ok(cfg) => {
                println!(
                    "ok: {} (lambda={}, n={}, N={}, k={}, mode={:?})",
                    cfg.name,
                    cfg.lambda.value(),
                    cfg.n,
                    cfg.points,
                    cfg.k,
                    cfg.iteration.mode
                );
                ExitCode::SUCCESS
            }
            Err(e) => config_failure(&e, None),
        },
        Command::Run(args) => {
            let cfg = match load_config(&args.config, &args.overrides()) {
                Ok(c) => c,
                Err(e) => return config_failure(&e, args.out.as_ref()),
            };
            match run_scenario(&cfg, &cfg.output_dir) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    println!(
                        "{}: {} after {} steps, D = {:.12e}, max rho = {:.3e} -> {}",
                        s.scenario,
                        s.reason,
                        s.steps,
                        s.final_d,
                        s.final_rho_max,
                        cfg.output_dir.display()
                    );
                    if let Some(f) = &s.failure {
                        eprintln!("class {} failed in step {}: {}", f.class, f.step, f.message);
                    }
                    ExitCode::from(s.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_CONFIG as u8)
                }
            }
        }
        Command::Oracle { run, points } => {
            let cfg = match load_config(&run.config, &run.overrides()) {
                Ok(c) => c,
                Err(e) => return config_failure(&e, run.out.as_ref()),
            };
            match compare_oracle(&cfg, points) {
                Ok(report) => {
                    let text = serde_json::to_string_pretty(&report.to_json()).expect("plain values");
                    println!("{text}");
                    if let Some(out) = &run.out {
                        let written = std::fs::create_dir_all(out).and_then(|_| std::fs::write(out.join("oracle.json"), text + "\n"));
                        if let Err(e) = written {
                            eprintln!("cannot write {}: {e}", out.display());
                            return ExitCode::from(EXIT_CONFIG as u8);
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(EXIT_INNER_FAILURE as u8)
                }
            }
        }
    }
}
