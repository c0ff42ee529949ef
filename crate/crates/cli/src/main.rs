use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use calgnn_core::autodiff::GradCheckConfig;
use calgnn_core::config::KeyValues;
use calgnn_core::data::{parse_log, write_dataset, Dataset, LogPaths, Task};
use calgnn_core::model::Variant;
use calgnn_core::synth::{generate, SynthConfig};
use calgnn_core::train::{
    ablate, ablation_table, evaluate_checkpoint, load_checkpoint, save_checkpoint, train, SplitName, TrainConfig,
};
use calgnn_core::verify::{gradient_suite, TOLERANCE};

/// Calendar graph neural networks over spatiotemporal behavior logs.
#[derive(Parser)]
#[command(name = "calgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate four raw CSV files and write a normalized dataset bundle.
    Ingest {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        locations: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write a checkpoint with its run history.
    Train {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        variant: Option<Variant>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Refuse the checkpoint unless it matches this config's model layout.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the report as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seed-averaged comparison of the full model and its five ablations.
    Ablate {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every layer's and both models' gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic log with a planted label rule.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the attention weights of one user as CSV.
    AttnDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Setup {
    /// Directory holding items.csv, locations.csv, sessions.csv and users.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    task: Option<Task>,
    /// Flat `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Setup {
    fn load(&self) -> Result<(TrainConfig, Dataset)> {
        let mut config = read_config(self.config.as_deref())?;
        if let Some(task) = self.task {
            config.model.task = task;
        }
        Ok((config, load_data(&self.data)?))
    }
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let kv = KeyValues::load(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::from_key_values(&kv)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    parse_log(&LogPaths::in_dir(dir)).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            items,
            locations,
            sessions,
            users,
            out,
        } => {
            let dataset = parse_log(&LogPaths {
                items,
                locations,
                sessions,
                users,
            })?;
            fs::create_dir_all(&out)?;
            write_dataset(&dataset, &LogPaths::in_dir(&out))?;
            println!(
                "users={}\nsessions={}\nevents={}\ndropped_sessions={}",
                dataset.users.len(),
                dataset.sessions.len(),
                dataset.num_events(),
                dataset.dropped_sessions
            );
        }
        Command::Train {
            setup,
            variant,
            seed,
            out,
        } => {
            let (mut config, dataset) = setup.load()?;
            if let Some(v) = variant {
                config.model.variant = v;
            }
            let seed = seed.unwrap_or(config.seed);
            config.seed = seed;
            let outcome = train(&config, &dataset, seed)?;
            save_checkpoint(&out, &config, &outcome.model, Some(&outcome.history))?;
            log::info!("best epoch {}; checkpoint in {}", outcome.history.best_epoch, out.display());
            print!("{}", outcome.history.test.to_key_values());
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            config,
            out,
        } => {
            let expected = config.as_deref().map(|p| read_config(Some(p))).transpose()?;
            let dataset = load_data(&data)?;
            let report = evaluate_checkpoint(&checkpoint, &dataset, split, expected.as_ref())?;
            print!("{}", report.to_key_values());
            if let Some(p) = out {
                fs::write(&p, format!("{}\n{}\n", report.csv_header(), report.csv_row()))?;
            }
        }
        Command::Ablate { setup, out } => {
            let (config, dataset) = setup.load()?;
            let rows = ablate(&config, &dataset)?;
            emit(&ablation_table(&rows), out.as_deref())?;
        }
        Command::Gradcheck { seed } => {
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            let entries = gradient_suite(&cfg)?;
            println!("check,max_rel_error,coords,passed");
            for e in &entries {
                println!("{},{:e},{},{}", e.name, e.report.max_rel_error, e.report.coords_checked, e.passed());
            }
            let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
            if !failed.is_empty() {
                bail!("gradient check above {TOLERANCE:e} for: {}", failed.join(", "));
            }
        }
        Command::Synth { config, out } => {
            let config = match config {
                Some(p) => SynthConfig::from_key_values(&KeyValues::load(&p)?)?,
                None => SynthConfig::default(),
            };
            let (dataset, ledger) = generate(&config)?;
            fs::create_dir_all(&out)?;
            write_dataset(&dataset, &LogPaths::in_dir(&out))?;
            fs::write(out.join("ledger.json"), ledger.to_json()?)?;
            println!("users={}\nsessions={}\nevents={}", ledger.users, ledger.sessions, ledger.events);
        }
        Command::AttnDump {
            checkpoint,
            data,
            user,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint, None)?;
            if ckpt.config.model.variant != Variant::Attn {
                bail!("attention weights exist only for the attn variant, not {}", ckpt.config.model.variant);
            }
            let dataset = load_data(&data)?;
            let graph = dataset
                .graphs()
                .into_iter()
                .find(|g| g.user_id == user)
                .with_context(|| format!("no user {user:?} with sessions"))?;
            let features = ckpt.model.features(&dataset)?;
            let trace = ckpt
                .model
                .attention_trace(&graph, &features)?
                .context("model produced no attention trace")?;
            emit(&trace.to_csv(), out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
