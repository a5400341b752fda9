//! Command-line entry point: subcommand dispatch and flag-over-config
//! resolution. Flags win over the config file; the fully resolved
//! configuration is echoed to stderr so every run is reproducible from its
//! log.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mindspell::commands::{self, DecodeArgs, EvaluateArgs, TrainArgs};
use mindspell::config::RunConfig;
use mindspell::error::CliError;

#[derive(Parser)]
#[command(
    name = "mindspell",
    version,
    about = "Mental-imagery EEG speller: simulate, preprocess, train, decode, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonOpts {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Worker threads for gradient batches; 0 means one per core.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Overwrite outputs that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpora: staged speller, direct speller, order probe.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Generator seed override.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
    },
    /// Run the preprocessing pipeline over a dataset and write the result.
    Preprocess {
        #[command(flatten)]
        common: CommonOpts,
        /// Input dataset directory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Train a network; write a checkpoint and its per-epoch metric history.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Input dataset directory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Training seed override.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Epoch count override.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Session held out for validation; default is the highest session.
        #[arg(long, value_name = "S")]
        val_session: Option<u8>,
        /// Expect the direct paradigm (single alphabet-wide head).
        #[arg(long)]
        direct: bool,
        /// Replace the recurrent unit with the per-step linear adapter.
        #[arg(long)]
        ablate_gru: bool,
    },
    /// Decode characters with a trained checkpoint; write the report CSV.
    Decode {
        #[command(flatten)]
        common: CommonOpts,
        /// Input dataset directory.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Checkpoint file.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Decode only this session.
        #[arg(long, value_name = "S")]
        session: Option<u8>,
        /// Expect the direct-paradigm head in the checkpoint.
        #[arg(long)]
        direct: bool,
        /// Average window probabilities instead of counting hard votes.
        #[arg(long)]
        soft_vote: bool,
    },
    /// Leave-one-session-out cross-validation; optional paradigm comparison.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Input dataset directory (the staged arm when comparing).
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Comma-separated training seeds.
        #[arg(long, value_name = "LIST")]
        seeds: Option<String>,
        /// Epoch count override.
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
        /// Direct-paradigm dataset to compare against the staged one.
        #[arg(long, value_name = "DIR")]
        paradigm_compare: Option<PathBuf>,
        /// Ablation arm: per-step linear adapter instead of the recurrent unit.
        #[arg(long)]
        ablate_gru: bool,
        /// Average window probabilities instead of counting hard votes.
        #[arg(long)]
        soft_vote: bool,
        /// Also write the per-session accuracy curve CSV.
        #[arg(long)]
        curve: bool,
    },
}

fn base_config(common: &CommonOpts) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(out) = &common.out {
        cfg.paths.out = Some(out.clone());
    }
    if let Some(jobs) = common.jobs {
        cfg.train.jobs = jobs;
    }
    Ok(cfg)
}

fn need(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| {
        CliError::usage(format!("{what} required: pass the flag or set it under [paths]"))
    })
}

fn parse_seeds(list: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Vec<u64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| CliError::usage(format!("bad seed value: {s}"))))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::usage("--seeds needs at least one value"));
    }
    Ok(seeds)
}

fn print_resolved(cfg: &RunConfig, extras: &[(&str, String)]) {
    eprintln!("# resolved configuration");
    for line in cfg.resolved().lines() {
        eprintln!("# {line}");
    }
    for (key, value) in extras {
        eprintln!("# {key} = {value}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate { common, seed } => {
            let mut cfg = base_config(&common)?;
            if let Some(seed) = seed {
                cfg.synth.seed = seed;
            }
            let out = need(&cfg.paths.out, "--out")?;
            print_resolved(&cfg, &[("force", common.force.to_string())]);
            commands::simulate(&cfg, &out, common.force)
        }
        Cmd::Preprocess { common, data } => {
            let mut cfg = base_config(&common)?;
            if let Some(data) = data {
                cfg.paths.data = Some(data);
            }
            let data = need(&cfg.paths.data, "--data")?;
            let out = need(&cfg.paths.out, "--out")?;
            print_resolved(&cfg, &[("force", common.force.to_string())]);
            commands::preprocess(&cfg, &data, &out, common.force)
        }
        Cmd::Train { common, data, seed, epochs, val_session, direct, ablate_gru } => {
            let mut cfg = base_config(&common)?;
            if let Some(data) = data {
                cfg.paths.data = Some(data);
            }
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            cfg.network.use_gru &= !ablate_gru;
            let args = TrainArgs {
                data: need(&cfg.paths.data, "--data")?,
                out: need(&cfg.paths.out, "--out")?,
                val_session,
                direct,
                force: common.force,
            };
            print_resolved(
                &cfg,
                &[
                    ("direct", direct.to_string()),
                    ("val_session", format!("{val_session:?}")),
                    ("force", common.force.to_string()),
                ],
            );
            commands::train_cmd(&cfg, &args)
        }
        Cmd::Decode { common, data, model, session, direct, soft_vote } => {
            let mut cfg = base_config(&common)?;
            if let Some(data) = data {
                cfg.paths.data = Some(data);
            }
            if let Some(model) = model {
                cfg.paths.model = Some(model);
            }
            cfg.decoder.soft_vote |= soft_vote;
            let args = DecodeArgs {
                data: need(&cfg.paths.data, "--data")?,
                model: need(&cfg.paths.model, "--model")?,
                out: need(&cfg.paths.out, "--out")?,
                session,
                direct,
                force: common.force,
            };
            print_resolved(
                &cfg,
                &[
                    ("direct", direct.to_string()),
                    ("session", format!("{session:?}")),
                    ("force", common.force.to_string()),
                ],
            );
            commands::decode_cmd(&cfg, &args)
        }
        Cmd::Evaluate {
            common,
            data,
            seeds,
            epochs,
            paradigm_compare,
            ablate_gru,
            soft_vote,
            curve,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(data) = data {
                cfg.paths.data = Some(data);
            }
            if let Some(list) = &seeds {
                cfg.eval.seeds = parse_seeds(list)?;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            cfg.network.use_gru &= !ablate_gru;
            cfg.decoder.soft_vote |= soft_vote;
            let args = EvaluateArgs {
                data: need(&cfg.paths.data, "--data")?,
                out: need(&cfg.paths.out, "--out")?,
                compare: paradigm_compare.clone(),
                curve,
                force: common.force,
            };
            print_resolved(
                &cfg,
                &[
                    ("paradigm_compare", format!("{paradigm_compare:?}")),
                    ("curve", curve.to_string()),
                    ("force", common.force.to_string()),
                ],
            );
            commands::evaluate(&cfg, &args)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
