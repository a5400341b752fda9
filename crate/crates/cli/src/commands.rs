//! The five subcommands behind the binary.
//!
//! Commands read raw dataset directories and run the preprocessing pipeline
//! in memory; a dataset whose sidecar is marked preprocessed skips it, so
//! materialized copies from `preprocess` never get standardized twice.

use std::fs;
use std::path::{Path, PathBuf};

use mindspell_core::codebook::CodebookTable;
use mindspell_core::decoder::{decode_direct, predict_character, DecodeError};
use mindspell_core::domain::{MentalTask, Paradigm, StageSegment};
use mindspell_core::eval::{
    compare_paradigms, per_session_curve, preprocess_dataset, run_cross_validation, EvalError,
    EvalSettings,
};
use mindspell_core::synth::{generate_direct_set, generate_order_probe, generate_session_set};
use mindspell_core::tsld::{train, Split, TsldError};
use mindspell_core::SessionDataset;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{self, LoadedDataset};
use crate::report::{self, DecodeRow};

/// Dataset subdirectories written by `simulate`.
pub const STAGED_DIR: &str = "mental_task";
pub const DIRECT_DIR: &str = "direct";
pub const PROBE_DIR: &str = "probe";

/// Divergence and non-finite numerics exit with their own code; everything
/// else a training error reports is a configuration problem.
fn train_err(err: TsldError) -> CliError {
    match err {
        TsldError::Diverged { .. } | TsldError::NonFinite { .. } => CliError::numeric(err),
        other => CliError::usage(other),
    }
}

fn decode_err(err: DecodeError) -> CliError {
    match err {
        DecodeError::Network(e) => train_err(e),
        other => CliError::usage(other),
    }
}

fn eval_err(err: EvalError) -> CliError {
    match err {
        EvalError::Network(e) => train_err(e),
        EvalError::Decode(e) => decode_err(e),
        EvalError::Preprocess(e) => CliError::numeric(e),
        EvalError::Domain(e) => CliError::data(e),
        other => CliError::usage(other),
    }
}

/// The configured codebook, or the built-in table when no file is set.
pub fn load_codebook(cfg: &RunConfig) -> Result<CodebookTable, CliError> {
    match &cfg.paths.codebook {
        None => Ok(CodebookTable::default()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            CodebookTable::parse_csv(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
        }
    }
}

/// Preprocess unless the files already went through the pipeline.
fn prepared(cfg: &RunConfig, loaded: LoadedDataset) -> Result<SessionDataset, CliError> {
    if loaded.preprocessed {
        return Ok(loaded.dataset);
    }
    let pc = cfg.preprocess.to_core();
    pc.validate(loaded.dataset.sampling_rate_hz()).map_err(CliError::usage)?;
    preprocess_dataset(&loaded.dataset, &pc).map_err(eval_err)
}

/// Refuses to clobber an existing file unless forced.
fn write_new(path: &Path, contents: &str, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::data(format!(
            "{}: already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Generate all three synthetic corpora under `out`.
pub fn simulate(cfg: &RunConfig, out: &Path, force: bool) -> Result<(), CliError> {
    let synth = cfg.synth.to_core();
    synth.validate().map_err(CliError::usage)?;
    let table = load_codebook(cfg)?;
    let mut total = 0;
    {
        let staged = generate_session_set(&synth, &table).map_err(CliError::usage)?;
        let dir = out.join(STAGED_DIR);
        let n = io::write_dataset(&dir, &staged, false, force)?;
        println!("{STAGED_DIR}: {n} segments -> {}", dir.display());
        total += n;
    }
    {
        let direct = generate_direct_set(&synth).map_err(CliError::usage)?;
        let dir = out.join(DIRECT_DIR);
        let n = io::write_dataset(&dir, &direct, false, force)?;
        println!("{DIRECT_DIR}: {n} segments -> {}", dir.display());
        total += n;
    }
    {
        let probe = generate_order_probe(&synth).map_err(CliError::usage)?;
        let dir = out.join(PROBE_DIR);
        let n = io::write_dataset(&dir, &probe, false, force)?;
        println!("{PROBE_DIR}: {n} segments -> {}", dir.display());
        total += n;
    }
    println!("total: {total} segments");
    Ok(())
}

/// Run the preprocessing pipeline over a dataset and write the result.
pub fn preprocess(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<(), CliError> {
    let loaded = io::read_dataset(data)?;
    if loaded.preprocessed {
        return Err(CliError::usage(format!(
            "{}: dataset is already preprocessed",
            data.display()
        )));
    }
    let pc = cfg.preprocess.to_core();
    pc.validate(loaded.dataset.sampling_rate_hz()).map_err(CliError::usage)?;
    let clean = preprocess_dataset(&loaded.dataset, &pc).map_err(eval_err)?;
    let n = io::write_dataset(out, &clean, true, force)?;
    println!("preprocessed {n} segments -> {}", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Session held out for validation; highest session when absent.
    pub val_session: Option<u8>,
    /// Assert the dataset is direct-paradigm.
    pub direct: bool,
    pub force: bool,
}

/// Train on every session but the validation one; write the checkpoint and
/// the per-epoch metric history next to it.
pub fn train_cmd(cfg: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    if args.out.exists() && !args.force {
        return Err(CliError::data(format!(
            "{}: already exists (pass --force to overwrite)",
            args.out.display()
        )));
    }
    let loaded = io::read_dataset(&args.data)?;
    let ds = prepared(cfg, loaded)?;
    let direct = ds.paradigm == Paradigm::Direct;
    if args.direct && !direct {
        return Err(CliError::usage("--direct needs a direct-paradigm dataset"));
    }
    let task_classes = if direct { ds.alphabet.len() } else { MentalTask::ALL.len() };
    let network = cfg.network.to_core(ds.n_channels(), task_classes, direct);

    let sessions = ds.session_indices();
    let val_session = match args.val_session {
        Some(s) => {
            if !sessions.contains(&s) {
                return Err(CliError::usage(format!(
                    "--val-session {s}: not in the dataset (present: {sessions:?})"
                )));
            }
            Some(s)
        }
        None => sessions.last().copied().filter(|_| sessions.len() > 1),
    };
    let train_refs: Vec<&StageSegment> =
        ds.segments.iter().filter(|s| Some(s.session_index) != val_session).collect();
    let val_refs: Vec<&StageSegment> =
        ds.segments.iter().filter(|s| Some(s.session_index) == val_session).collect();
    match val_session {
        Some(s) => println!(
            "training on {} segments, validating on session {s} ({} segments)",
            train_refs.len(),
            val_refs.len()
        ),
        None => println!("training on all {} segments (no validation split)", train_refs.len()),
    }

    let outcome =
        train(&network, &train_refs, &val_refs, &cfg.train.to_core()).map_err(train_err)?;
    io::write_checkpoint(&args.out, &outcome.params)?;
    let metrics_path = args.out.with_extension("metrics.csv");
    write_new(&metrics_path, &report::history_csv(&outcome.history), true)?;
    println!("checkpoint -> {}", args.out.display());
    println!("history -> {}", metrics_path.display());
    let best = outcome
        .history
        .iter()
        .filter(|r| r.epoch == outcome.best_epoch)
        .max_by_key(|r| r.split == Split::Validation);
    if let Some(r) = best {
        println!(
            "best epoch {} ({}): loss_mt {:.4}, acc_task {:.4}",
            outcome.best_epoch,
            r.split.name(),
            r.loss_task,
            r.acc_task
        );
    }
    Ok(())
}

pub struct DecodeArgs {
    pub data: PathBuf,
    pub model: PathBuf,
    pub out: PathBuf,
    /// Decode only this session; all present sessions when absent.
    pub session: Option<u8>,
    /// Assert the checkpoint carries the direct head.
    pub direct: bool,
    pub force: bool,
}

/// Decode a dataset with a trained checkpoint and write the report CSV:
/// one row per stage decision (staged), one row per character (direct).
pub fn decode_cmd(cfg: &RunConfig, args: &DecodeArgs) -> Result<(), CliError> {
    let params = io::read_checkpoint(&args.model)?;
    let loaded = io::read_dataset(&args.data)?;
    let ds = prepared(cfg, loaded)?;
    let direct = params.config().direct_mode;
    if args.direct && !direct {
        return Err(CliError::usage("--direct given but the checkpoint has the dual-head network"));
    }
    if direct != (ds.paradigm == Paradigm::Direct) {
        return Err(CliError::usage(format!(
            "checkpoint head ({}) does not match the dataset paradigm ({})",
            if direct { "direct" } else { "staged" },
            ds.paradigm.name()
        )));
    }
    if params.config().n_channels != ds.n_channels() {
        return Err(CliError::usage(format!(
            "checkpoint expects {} channels, dataset has {}",
            params.config().n_channels,
            ds.n_channels()
        )));
    }
    let dec = cfg.decoder.to_core();
    let sessions = match args.session {
        Some(s) => {
            if !ds.session_indices().contains(&s) {
                return Err(CliError::usage(format!(
                    "--session {s}: not in the dataset (present: {:?})",
                    ds.session_indices()
                )));
            }
            vec![s]
        }
        None => ds.session_indices(),
    };

    let mut rows = Vec::new();
    let mut decoded = 0usize;
    let mut hits = 0usize;
    if direct {
        for &session in &sessions {
            for seg in ds.segments_in_session(session) {
                let pred = decode_direct(&seg.recording, &params, &dec).map_err(decode_err)?;
                let gt_idx = ds.alphabet.iter().position(|&c| c == seg.character).unwrap();
                let pred_idx = ds.alphabet.iter().position(|&c| c == pred.decoded).unwrap();
                rows.push(DecodeRow {
                    character_gt: seg.character,
                    character_pred: pred.decoded,
                    stage_index: 0,
                    task_gt: gt_idx.to_string(),
                    task_pred: pred_idx.to_string(),
                    eye_gt: String::new(),
                    eye_pred: String::new(),
                    adjusted_prob: pred.adjusted[pred_idx],
                });
                decoded += 1;
                hits += usize::from(pred.decoded == seg.character);
            }
        }
    } else {
        let table = load_codebook(cfg)?;
        for &session in &sessions {
            for &c in &ds.alphabet {
                let Some(triple) = ds.stage_triple(session, c) else { continue };
                let recs =
                    [&triple[0].recording, &triple[1].recording, &triple[2].recording];
                let pred = predict_character(recs, &params, &table, &dec).map_err(decode_err)?;
                for (stage, decision) in pred.stages.iter().enumerate() {
                    rows.push(DecodeRow {
                        character_gt: c,
                        character_pred: pred.decoded,
                        stage_index: stage as u8,
                        task_gt: triple[stage].task.name().into(),
                        task_pred: decision.task.name().into(),
                        eye_gt: triple[stage].eye.name().into(),
                        eye_pred: decision.eye.name().into(),
                        adjusted_prob: decision.adjusted_task[decision.task.code() as usize]
                            * decision.adjusted_eye[decision.eye.code() as usize],
                    });
                }
                decoded += 1;
                hits += usize::from(pred.matched == Some(c));
            }
        }
    }
    if decoded == 0 {
        return Err(CliError::data("no decodable characters in the selected sessions"));
    }
    write_new(&args.out, &report::decode_csv(&rows), args.force)?;
    println!("decoded {decoded} characters -> {}", args.out.display());
    println!("exact-match accuracy: {:.4}", hits as f64 / decoded as f64);
    Ok(())
}

pub struct EvaluateArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Direct-paradigm dataset for the paradigm comparison.
    pub compare: Option<PathBuf>,
    /// Also write the per-session accuracy curve.
    pub curve: bool,
    pub force: bool,
}

/// Leave-one-session-out cross-validation; optionally compares the staged
/// and direct paradigms on matching corpora.
pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<(), CliError> {
    let loaded = io::read_dataset(&args.data)?;
    let table = load_codebook(cfg)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;

    let direct = loaded.dataset.paradigm == Paradigm::Direct;
    let task_classes =
        if direct { loaded.dataset.alphabet.len() } else { MentalTask::ALL.len() };
    let pc = cfg.preprocess.to_core();
    if !loaded.preprocessed {
        pc.validate(loaded.dataset.sampling_rate_hz()).map_err(CliError::usage)?;
    }
    let settings = EvalSettings {
        network: cfg.network.to_core(loaded.dataset.n_channels(), task_classes, direct),
        train: cfg.train.to_core(),
        decoder: cfg.decoder.to_core(),
        preprocess: pc,
        seeds: cfg.eval.seeds.clone(),
        already_preprocessed: loaded.preprocessed,
    };

    match &args.compare {
        Some(direct_dir) => {
            if direct {
                return Err(CliError::usage(
                    "--paradigm-compare takes the staged dataset as --data",
                ));
            }
            let direct_loaded = io::read_dataset(direct_dir)?;
            if direct_loaded.dataset.paradigm != Paradigm::Direct {
                return Err(CliError::usage(format!(
                    "{}: paradigm comparison needs a direct-paradigm dataset",
                    direct_dir.display()
                )));
            }
            if direct_loaded.preprocessed != loaded.preprocessed {
                return Err(CliError::usage(
                    "both datasets must be in the same preprocessing state",
                ));
            }
            let cmp =
                compare_paradigms(&loaded.dataset, &direct_loaded.dataset, &table, &settings)
                    .map_err(eval_err)?;
            write_new(&args.out.join("comparison.json"), &report::comparison_json(&cmp), args.force)?;
            write_new(
                &args.out.join("metrics_mental_task.csv"),
                &report::metrics_csv(&cmp.staged),
                args.force,
            )?;
            write_new(
                &args.out.join("metrics_direct.csv"),
                &report::metrics_csv(&cmp.direct),
                args.force,
            )?;
            println!(
                "top1 mental_task {:.4} vs direct {:.4} (ratio {:.3}) -> {}",
                cmp.staged.top1.mean,
                cmp.direct.top1.mean,
                cmp.top1_ratio,
                args.out.display()
            );
        }
        None => {
            let rep = run_cross_validation(&loaded.dataset, &table, &settings).map_err(eval_err)?;
            write_new(&args.out.join("metrics.json"), &report::metrics_json(&rep), args.force)?;
            write_new(&args.out.join("metrics.csv"), &report::metrics_csv(&rep), args.force)?;
            if args.curve {
                let curve = per_session_curve(&rep);
                write_new(&args.out.join("curve.csv"), &report::curve_csv(&curve), args.force)?;
            }
            println!(
                "top1 {:.4} +/- {:.4}, top3 {:.4}, top5 {:.4}, stage task acc {:.4} -> {}",
                rep.top1.mean,
                rep.top1.sd,
                rep.top3.mean,
                rep.top5.mean,
                rep.stage_task_accuracy.mean,
                args.out.display()
            );
        }
    }
    Ok(())
}
