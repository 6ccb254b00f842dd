use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fortress::checkpoint::load_checkpoint;
use fortress::config::parse_config;
use fortress::data::load_interactions;
use fortress::runner::{evaluate_model, prepare_dataset, run_experiment, write_csv};

#[derive(Parser)]
#[command(
    name = "fortress",
    about = "Deterministic federated sequential-recommendation simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override experiment.base_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override experiment.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from a checkpoint written by an earlier run of the same
        /// config (rounds/out_dir may differ).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rank a held-out dataset under a checkpointed model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV with a user_id,item_id,timestamp header.
        #[arg(long)]
        data: PathBuf,
        /// Cutoffs, e.g. 5,10,20.
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        k: Vec<usize>,
    },
    /// Generate the synthetic dataset a config describes and write it as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<(), String> {
    match Cli::parse().cmd {
        Cmd::Run {
            config,
            seed,
            out,
            resume,
        } => {
            let mut cfg = parse_config(&config).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.experiment.base_seed = s;
            }
            if let Some(dir) = out {
                cfg.experiment.out_dir = dir.display().to_string();
            }
            let output =
                run_experiment(&cfg, resume.as_deref()).map_err(|e| e.to_string())?;
            eprintln!(
                "done: {} rounds, outputs in {}",
                output.reports.len(),
                cfg.experiment.out_dir
            );
            Ok(())
        }
        Cmd::Eval { checkpoint, data, k } => {
            if k.is_empty() || k.iter().any(|&x| x == 0) {
                return Err("--k must list cutoffs >= 1".into());
            }
            let ck = load_checkpoint(&checkpoint, None).map_err(|e| e.to_string())?;
            let (mut dataset, stats) = load_interactions(&data).map_err(|e| e.to_string())?;
            if stats.num_items > ck.params.num_items() {
                return Err(format!(
                    "data has {} items but the checkpointed model only covers {}",
                    stats.num_items,
                    ck.params.num_items()
                ));
            }
            fortress::data::leave_one_out_split(&mut dataset);
            let metrics = evaluate_model(&ck.params, &dataset, &k, &[], 3);
            println!(
                "{}",
                serde_json::to_string_pretty(&metrics).expect("metrics serialize")
            );
            Ok(())
        }
        Cmd::GenData { config } => {
            let cfg = parse_config(&config).map_err(|e| e.to_string())?;
            let dataset = prepare_dataset(&cfg).map_err(|e| e.to_string())?;
            let out_dir = PathBuf::from(&cfg.experiment.out_dir);
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
            let path = out_dir.join("synthetic.csv");
            write_csv(&dataset, &path).map_err(|e| e.to_string())?;
            let rows: usize = dataset.sequences.iter().map(|s| s.items.len()).sum();
            eprintln!(
                "wrote {} ({} users, {} items, {rows} interactions)",
                path.display(),
                dataset.num_users,
                dataset.num_items
            );
            Ok(())
        }
    }
}
