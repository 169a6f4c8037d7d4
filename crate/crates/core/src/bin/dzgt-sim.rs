use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dzgt_core::harness::{self, format_g, ExperimentSpec};
use dzgt_core::Error;

/// Output directory override, below `--out` and above the config file.
const OUT_DIR_ENV: &str = "DZGT_OUT_DIR";

#[derive(Parser)]
#[command(name = "dzgt-sim", version, about = "Distributed zeroth-order gradient tracking simulator for stochastic MPECs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides DZGT_OUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for combinations.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Check a config file and print the resolved sweep.
    Validate { config: PathBuf },
    /// Print step-size constants for each (topology, m) of a config.
    Constants { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentSpec, Error> {
    harness::load_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Parse(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config_error() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn describe(spec: &ExperimentSpec) {
    println!("instance: {:?}", spec.instance);
    println!(
        "topologies: {}",
        spec.topologies.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
    );
    println!("m: {:?}", spec.m_values);
    println!(
        "gamma: {} ({:?} rule)",
        spec.gammas.iter().map(|g| format_g(*g, 6)).collect::<Vec<_>>().join(", "),
        spec.step_rule
    );
    println!("eta = {}, K = {}, repeats = {}, seed = {}", format_g(spec.eta, 6), spec.epochs, spec.repeats, spec.master_seed);
    println!("combinations: {}", spec.combinations());
    println!("output: {}", spec.output_dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(spec) => {
                describe(&spec);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Constants { config } => {
            let spec = match load(&config) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let rows = match harness::constants_report(&spec) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            println!("topology,m,rho,L0,L0_tilde,eps0,beta,C0,T1,T2,T3,gamma_max,K_min,theta,gamma_at_K,C1,C2,C3,C4");
            for r in rows {
                let head = format!(
                    "{},{},{},{},{},{},{}",
                    r.topology,
                    r.m,
                    format_g(r.rho, 10),
                    format_g(r.l0, 10),
                    format_g(r.l0_tilde, 10),
                    format_g(r.eps0, 10),
                    format_g(r.beta, 10)
                );
                match r.constants {
                    Ok(c) => {
                        let k = spec.epochs.max(c.horizon_min());
                        let at = c.at_horizon(k);
                        let vals = [
                            c.c0, c.t1, c.t2, c.t3, c.gamma_max, c.k_min, c.theta, at.gamma, at.c1, at.c2, at.c3, at.c4,
                        ];
                        let tail: Vec<String> = vals.iter().map(|v| format_g(*v, 10)).collect();
                        println!("{head},{}", tail.join(","));
                    }
                    Err(e) => println!("{head},error: {e}"),
                }
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            seed,
            parallel,
        } => {
            let mut spec = match load(&config) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            if let Some(dir) = out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
                spec.output_dir = dir;
            }
            if let Some(s) = seed {
                spec.master_seed = s;
            }
            if let Some(p) = parallel {
                spec.parallel = p;
            }
            match harness::run_experiment(&spec) {
                Ok(table) => {
                    print!("{}", harness::summary_markdown(&spec, &table));
                    if table.failures() > 0 {
                        eprintln!("{} combination(s) failed", table.failures());
                        ExitCode::from(3)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
