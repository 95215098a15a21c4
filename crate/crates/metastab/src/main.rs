//! Command-line front end: run experiments from config files, validate
//! configs, and summarize the chain a model spec builds at a given size.

use clap::{Parser, Subcommand};
use metastab::config::{parse_config, resolve_workers};
use metastab::error::Error;
use metastab::experiments::run_experiment;
use metastab::zrp::{count_configs, enumerate_configs, zr_measure, zr_wells, ZRModelSpec};
use std::path::{Path, PathBuf};

/// Table enumeration ceiling for `chain-info`; above it only the closed-form
/// summary is printed.
const INFO_STATE_CAP: u128 = 2_000_000;

#[derive(Parser)]
#[command(
    name = "metastab",
    version,
    about = "Metastability experiments for finite-state Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        /// Config file path.
        config: PathBuf,
        /// Output directory; defaults to "<config stem>-out".
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides METASTAB_WORKERS and the config key.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Parse a config and print the normalized form, or every violation.
    Validate {
        /// Config file path.
        config: PathBuf,
    },
    /// Summarize the model a spec file builds at one particle count.
    ChainInfo {
        /// Model spec file path.
        modelspec: PathBuf,
        /// Particle count.
        #[arg(long)]
        n: usize,
    },
}

fn main() {
    // Restore the default SIGPIPE disposition so `metastab ... | head`
    // ends quietly instead of panicking on a failed stdout write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, workers } => cmd_run(&config, out.as_deref(), workers),
        Command::Validate { config } => cmd_validate(&config),
        Command::ChainInfo { modelspec, n } => cmd_chain_info(&modelspec, n),
    };
    std::process::exit(code);
}

fn read_or_complain(path: &Path) -> Result<String, i32> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        2
    })
}

fn load_config(path: &Path) -> Result<metastab::config::ExperimentConfig, i32> {
    let text = read_or_complain(path)?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config(&text, base).map_err(|err| {
        match err {
            Error::InvalidConfig(violations) => {
                eprintln!("invalid config {}:", path.display());
                for v in &violations {
                    eprintln!("  - {v}");
                }
            }
            other => eprintln!("error: {other}"),
        }
        2
    })
}

fn cmd_run(path: &Path, out: Option<&Path>, workers_flag: Option<usize>) -> i32 {
    let config = match load_config(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let workers = resolve_workers(workers_flag, &config);
    let out_dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from(format!("{stem}-out"))
        }
    };
    match run_experiment(&config, &out_dir, workers) {
        Ok(outcome) => {
            println!("wrote {}", outcome.csv_path.display());
            println!("wrote {}", outcome.manifest_path.display());
            if outcome.n_failed > 0 {
                eprintln!(
                    "{} of {} cells failed; the manifest records each reason",
                    outcome.n_failed, outcome.n_cells
                );
                1
            } else {
                println!("{} cells completed on {} workers", outcome.n_cells, workers);
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn cmd_validate(path: &Path) -> i32 {
    match load_config(path) {
        Ok(config) => {
            print!("{}", config.to_text());
            0
        }
        Err(code) => code,
    }
}

fn cmd_chain_info(path: &Path, n: usize) -> i32 {
    let text = match read_or_complain(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let spec = match ZRModelSpec::parse(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let model = match spec.build(Some(n)) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    println!(
        "model: kappa={} n={} gamma={} delta={} speedup={}",
        model.kappa,
        model.n,
        model.gamma,
        model.delta,
        if model.speedup { "on" } else { "off" }
    );
    println!("walk edges: {}", model.walk_edges().len());
    let states = count_configs(model.n, model.kappa);
    match states {
        Some(c) => println!("configurations: {c}"),
        None => println!("configurations: beyond u128"),
    }
    match model.scales() {
        Ok(scales) => match serde_json::to_string_pretty(&scales) {
            Ok(json) => println!("scales: {json}"),
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        Err(e) => println!("scales: unavailable ({e})"),
    }
    let Some(states) = states else { return 0 };
    if states > INFO_STATE_CAP {
        println!("well geometry: skipped ({states} configurations exceed {INFO_STATE_CAP})");
        return 0;
    }
    let table = match enumerate_configs(model.n, model.kappa) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let (mu, z) = match zr_measure(&model, &table) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    println!("partition function: {z}");
    match zr_wells(&model, &table) {
        Ok(wells) => {
            println!(
                "thresholds: well >= {}, deep >= {}, wide >= {}, basin others <= {}",
                wells.t_e, wells.t_d, wells.t_w, wells.t_v
            );
            let wp = &wells.partition;
            for x in 0..wp.n_labels() {
                println!(
                    "well {x}: size {} mass {} anchor rank {}",
                    wp.well(x).len(),
                    mu.mass(wp.well(x)),
                    wells.anchors[x]
                );
            }
            println!(
                "transition region: size {} mass {}",
                wp.delta().len(),
                mu.mass(wp.delta())
            );
        }
        Err(e) => println!("well geometry: unavailable ({e})"),
    }
    0
}
