use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use screwdyn::scenarios;
use screwdyn_cli::config::ConfigError;
use screwdyn_cli::driver::{self, Overrides, EXIT_CONFIG, EXIT_EXPECTATION, EXIT_IO, EXIT_OK};

#[derive(Parser)]
#[command(name = "screwdyn", version, about = "Event-driven simulation of screw dislocations under maximal dissipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a config file or a built-in scenario and write the artifacts.
    Run {
        /// JSON run configuration.
        config: Option<PathBuf>,
        /// Output directory (default: the config's output.dir, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        dt_max: Option<f64>,
        /// Check the configuration and print the existence-time estimate.
        #[arg(long)]
        validate_only: bool,
        /// Run a built-in scenario instead of a config file.
        #[arg(long, conflicts_with_all = ["config", "sweep"])]
        scenario: Option<String>,
        /// Run several configs in parallel, each into `<out>/<file stem>`.
        #[arg(long, num_args = 1.., conflicts_with = "config")]
        sweep: Vec<PathBuf>,
        /// Worker threads for `--sweep`.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Built-in scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Print the name and summary of every scenario.
    List,
}

fn config_exit(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| matches!(c.downcast_ref::<ConfigError>(), Some(ConfigError::Io { .. }))) {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

fn run(cli: Cli) -> i32 {
    let Command::Run { config, out, t_max, dt_max, validate_only, scenario, sweep, jobs } = cli.command else {
        for sc in scenarios::catalog() {
            println!("{:<22} {}", sc.name, sc.summary);
        }
        return EXIT_OK;
    };
    let over = Overrides { t_max, dt_max };
    if !sweep.is_empty() {
        let out = out.unwrap_or_else(|| PathBuf::from("out"));
        return match driver::sweep(&sweep, &out, over, jobs) {
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_CONFIG
            }
            Ok(rows) => {
                let mut worst = EXIT_OK;
                for (c, line, code) in rows {
                    println!("{}: {line}", c.display());
                    worst = worst.max(code);
                }
                worst
            }
        };
    }
    let (problem, config_out, expect) = match (config, scenario) {
        (Some(path), None) => match driver::problem_from_file(&path, over) {
            Ok((p, dir)) => (p, dir, None),
            Err(e) => {
                eprintln!("error: {e:#}");
                return config_exit(&e);
            }
        },
        (None, Some(name)) => match scenarios::by_name(&name) {
            Some(sc) => {
                let mut p = driver::problem_from_scenario(&sc);
                over.apply(&mut p);
                (p, None, Some(sc))
            }
            None => {
                eprintln!("error: unknown scenario {name:?}; see `screwdyn scenarios list`");
                return EXIT_CONFIG;
            }
        },
        _ => {
            eprintln!("error: give a config file or --scenario NAME");
            return EXIT_CONFIG;
        }
    };
    if validate_only {
        return match driver::validation_report(&problem) {
            Ok(s) => {
                print!("{s}");
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_CONFIG
            }
        };
    }
    let out = out.or(config_out).unwrap_or_else(|| PathBuf::from("out"));
    let record = match driver::run_to(&problem, &out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return if e.chain().any(|c| c.is::<std::io::Error>()) { EXIT_IO } else { EXIT_CONFIG };
        }
    };
    println!("{}", driver::describe(&record));
    println!("wrote {}", out.display());
    let mut code = driver::exit_code(&record);
    if let Some(sc) = expect {
        match sc.check(&record) {
            Ok(()) => println!("expectation met: {}", sc.summary),
            Err(msg) => {
                println!("expectation NOT met: {msg}");
                code = code.max(EXIT_EXPECTATION);
            }
        }
    }
    code
}

fn main() -> ExitCode {
    let code = run(Cli::parse());
    ExitCode::from(code as u8)
}
