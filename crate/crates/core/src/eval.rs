//! Leave-one-session-out evaluation: preprocess a corpus once, train one
//! network per (fold, seed), decode the held-out session, and aggregate
//! character and stage accuracies.

use alloc::vec::Vec;

use crate::codebook::CodebookTable;
use crate::decoder::{decode_direct, predict_character, DecodeError, DecoderSettings};
use crate::domain::{DomainError, Paradigm, SessionDataset, StageSegment};
use crate::preprocess::{preprocess_pipeline, PreprocessConfig, PreprocessError};
use crate::tsld::{train, EpochRecord, TrainSettings, TsldConfig, TsldError};

/// Baseline mean character accuracies the decoder is compared against, at
/// k = 1, 3, 5. Recorded for documentation; they describe a recorded-EEG
/// cohort and are not reproducible from synthetic data.
pub const REFERENCE_TOP_K: [f64; 3] = [0.3204, 0.5312, 0.6128];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("cross-validation needs at least two sessions")]
    TooFewSessions,
    #[error("no training seeds given")]
    NoSeeds,
    #[error("top-k rank {k} is outside 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("{rankings} rankings against {truths} truths")]
    LengthMismatch { rankings: usize, truths: usize },
    #[error("network config does not fit the data: {0}")]
    NetworkMismatch(&'static str),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Network(#[from] TsldError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// One cross-validation fold: train on every session but one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub held_out_session: u8,
    pub train_sessions: Vec<u8>,
}

/// Leave-one-session-out folds over the given session indices.
pub fn leave_one_session_out(sessions: &[u8]) -> Vec<FoldSpec> {
    sessions
        .iter()
        .map(|&held| FoldSpec {
            held_out_session: held,
            train_sessions: sessions.iter().copied().filter(|&s| s != held).collect(),
        })
        .collect()
}

/// Whether the true character appears in the first `k` ranking entries.
pub fn top_k_hit(ranking: &[(char, f64)], truth: char, k: usize) -> bool {
    ranking.iter().take(k).any(|&(c, _)| c == truth)
}

/// Fraction of items whose truth appears in the first `k` entries of its
/// ranking.
pub fn top_k_accuracy(
    rankings: &[&[(char, f64)]],
    truths: &[char],
    k: usize,
) -> Result<f64, EvalError> {
    let max = crate::domain::ALPHABET.len();
    if k < 1 || k > max {
        return Err(EvalError::BadK { k, max });
    }
    if rankings.len() != truths.len() {
        return Err(EvalError::LengthMismatch { rankings: rankings.len(), truths: truths.len() });
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(ranking, &truth)| top_k_hit(ranking, truth, k))
        .count();
    Ok(hits as f64 / rankings.len().max(1) as f64)
}

/// Everything one evaluation run needs besides the data.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub network: TsldConfig,
    pub train: TrainSettings,
    pub decoder: DecoderSettings,
    pub preprocess: PreprocessConfig,
    /// Training seeds; every fold runs once per seed.
    pub seeds: Vec<u64>,
    /// Skip the preprocessing pipeline; the dataset already went through it.
    pub already_preprocessed: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            network: TsldConfig::default(),
            train: TrainSettings::default(),
            decoder: DecoderSettings::default(),
            preprocess: PreprocessConfig::default(),
            seeds: alloc::vec![0, 1, 2],
            already_preprocessed: false,
        }
    }
}

/// Metrics from decoding one held-out session with one trained network.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub held_out_session: u8,
    pub seed: u64,
    /// Staged paradigm: fraction of characters whose three stage decisions
    /// matched their codeword exactly. Direct paradigm: fraction whose
    /// vote winner was the true character.
    pub top1: f64,
    pub top3: f64,
    pub top5: f64,
    /// Fraction of stages whose task decision is correct; NaN in the
    /// direct paradigm.
    pub stage_task_accuracy: f64,
    /// Fraction of stages whose eye decision is correct; NaN in the direct
    /// paradigm.
    pub eye_accuracy: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Mean and sample standard deviation over fold outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> Summary {
    let n = values.clone().count();
    if n == 0 {
        return Summary { mean: f64::NAN, sd: f64::NAN };
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        crate::math::sqrt(ss / (n - 1) as f64)
    };
    Summary { mean, sd }
}

/// Aggregated cross-validation results over all folds and seeds.
#[derive(Debug, Clone)]
pub struct CrossValidationReport {
    pub paradigm: Paradigm,
    pub folds: Vec<FoldOutcome>,
    pub top1: Summary,
    pub top3: Summary,
    pub top5: Summary,
    pub stage_task_accuracy: Summary,
    pub eye_accuracy: Summary,
}

impl CrossValidationReport {
    fn from_folds(paradigm: Paradigm, folds: Vec<FoldOutcome>) -> Self {
        let top1 = summarize(folds.iter().map(|f| f.top1));
        let top3 = summarize(folds.iter().map(|f| f.top3));
        let top5 = summarize(folds.iter().map(|f| f.top5));
        let stage_task_accuracy = summarize(folds.iter().map(|f| f.stage_task_accuracy));
        let eye_accuracy = summarize(folds.iter().map(|f| f.eye_accuracy));
        CrossValidationReport {
            paradigm,
            folds,
            top1,
            top3,
            top5,
            stage_task_accuracy,
            eye_accuracy,
        }
    }
}

fn check_network(dataset: &SessionDataset, cfg: &TsldConfig) -> Result<(), EvalError> {
    if cfg.n_channels != dataset.n_channels() {
        return Err(EvalError::NetworkMismatch("channel count differs from the data"));
    }
    match dataset.paradigm {
        Paradigm::MentalTask => {
            if cfg.direct_mode {
                return Err(EvalError::NetworkMismatch(
                    "staged data needs the dual-head network",
                ));
            }
        }
        Paradigm::Direct => {
            if !cfg.direct_mode || cfg.task_classes != dataset.alphabet.len() {
                return Err(EvalError::NetworkMismatch(
                    "direct data needs the single-head alphabet-wide network",
                ));
            }
        }
    }
    Ok(())
}

/// Run the full preprocessing chain over every segment, preserving labels.
pub fn preprocess_dataset(
    dataset: &SessionDataset,
    cfg: &PreprocessConfig,
) -> Result<SessionDataset, EvalError> {
    let mut segments = Vec::with_capacity(dataset.segments.len());
    for seg in &dataset.segments {
        let recording = preprocess_pipeline(&seg.recording, cfg)?;
        segments.push(StageSegment { recording, ..seg.clone() });
    }
    Ok(SessionDataset {
        paradigm: dataset.paradigm,
        alphabet: dataset.alphabet.clone(),
        segments,
    })
}

/// Train on the fold's sessions and decode its held-out session.
fn run_fold(
    clean: &SessionDataset,
    table: &CodebookTable,
    fold: &FoldSpec,
    seed: u64,
    settings: &EvalSettings,
) -> Result<FoldOutcome, EvalError> {
    let train_refs: Vec<&StageSegment> = clean
        .segments
        .iter()
        .filter(|s| fold.train_sessions.contains(&s.session_index))
        .collect();
    let val_refs: Vec<&StageSegment> =
        clean.segments_in_session(fold.held_out_session).collect();
    let mut train_settings = settings.train.clone();
    train_settings.seed = seed;
    let outcome = train(&settings.network, &train_refs, &val_refs, &train_settings)?;

    let (mut hit1, mut hit3, mut hit5) = (0usize, 0usize, 0usize);
    let mut chars = 0usize;
    let mut task_hits = 0usize;
    let mut eye_hits = 0usize;
    let mut stages = 0usize;
    match clean.paradigm {
        Paradigm::MentalTask => {
            for &truth in &clean.alphabet {
                let triple = clean
                    .stage_triple(fold.held_out_session, truth)
                    .expect("complete dataset has every stage triple");
                let recs = [&triple[0].recording, &triple[1].recording, &triple[2].recording];
                let pred = predict_character(recs, &outcome.params, table, &settings.decoder)?;
                chars += 1;
                hit1 += (pred.matched == Some(truth)) as usize;
                hit3 += top_k_hit(&pred.ranking, truth, 3) as usize;
                hit5 += top_k_hit(&pred.ranking, truth, 5) as usize;
                for (decision, seg) in pred.stages.iter().zip(triple) {
                    stages += 1;
                    task_hits += (decision.task == seg.task) as usize;
                    eye_hits += (decision.eye == seg.eye) as usize;
                }
            }
        }
        Paradigm::Direct => {
            for seg in clean.segments_in_session(fold.held_out_session) {
                let pred = decode_direct(&seg.recording, &outcome.params, &settings.decoder)?;
                chars += 1;
                hit1 += top_k_hit(&pred.ranking, seg.character, 1) as usize;
                hit3 += top_k_hit(&pred.ranking, seg.character, 3) as usize;
                hit5 += top_k_hit(&pred.ranking, seg.character, 5) as usize;
            }
        }
    }
    let stage_task_accuracy =
        if stages == 0 { f64::NAN } else { task_hits as f64 / stages as f64 };
    let eye_accuracy = if stages == 0 { f64::NAN } else { eye_hits as f64 / stages as f64 };
    Ok(FoldOutcome {
        held_out_session: fold.held_out_session,
        seed,
        top1: hit1 as f64 / chars as f64,
        top3: hit3 as f64 / chars as f64,
        top5: hit5 as f64 / chars as f64,
        stage_task_accuracy,
        eye_accuracy,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    })
}

/// Leave-one-session-out cross-validation over a complete corpus: every
/// fold runs once per seed on the preprocessed data.
pub fn run_cross_validation(
    dataset: &SessionDataset,
    table: &CodebookTable,
    settings: &EvalSettings,
) -> Result<CrossValidationReport, EvalError> {
    dataset.validate_complete()?;
    check_network(dataset, &settings.network)?;
    if settings.seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let sessions = dataset.session_indices();
    if sessions.len() < 2 {
        return Err(EvalError::TooFewSessions);
    }
    let clean = if settings.already_preprocessed {
        dataset.clone()
    } else {
        preprocess_dataset(dataset, &settings.preprocess)?
    };
    let folds = leave_one_session_out(&sessions);
    let mut outcomes = Vec::with_capacity(folds.len() * settings.seeds.len());
    for &seed in &settings.seeds {
        for fold in &folds {
            outcomes.push(run_fold(&clean, table, fold, seed, settings)?);
        }
    }
    Ok(CrossValidationReport::from_folds(dataset.paradigm, outcomes))
}

/// One held-out session's accuracy, averaged over the report's seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionPoint {
    pub session: u8,
    pub top1: Summary,
    pub stage_task_accuracy: Summary,
}

/// The fold accuracies of a report grouped by held-out session and
/// ordered by session index: the per-session accuracy curve.
pub fn per_session_curve(report: &CrossValidationReport) -> Vec<SessionPoint> {
    let mut sessions: Vec<u8> = report.folds.iter().map(|f| f.held_out_session).collect();
    sessions.sort_unstable();
    sessions.dedup();
    sessions
        .into_iter()
        .map(|session| {
            let folds = report.folds.iter().filter(|f| f.held_out_session == session);
            SessionPoint {
                session,
                top1: summarize(folds.clone().map(|f| f.top1)),
                stage_task_accuracy: summarize(folds.map(|f| f.stage_task_accuracy)),
            }
        })
        .collect()
}

/// Both paradigms evaluated side by side. Chance levels differ: 1/36 for
/// a direct top-1 guess, (1/4)^3 for a random task triple.
#[derive(Debug, Clone)]
pub struct ParadigmComparison {
    pub staged: CrossValidationReport,
    pub direct: CrossValidationReport,
    /// Staged mean top-1 over direct mean top-1; infinite when the direct
    /// decoder never succeeds.
    pub top1_ratio: f64,
}

/// Run cross-validation on both corpora with one settings template. The
/// staged arm uses the settings as given; the direct arm swaps the network
/// head for a single alphabet-wide classifier with no eye branch.
pub fn compare_paradigms(
    staged_data: &SessionDataset,
    direct_data: &SessionDataset,
    table: &CodebookTable,
    settings: &EvalSettings,
) -> Result<ParadigmComparison, EvalError> {
    let staged = run_cross_validation(staged_data, table, settings)?;
    let direct_network = TsldConfig {
        direct_mode: true,
        task_classes: direct_data.alphabet.len(),
        ..settings.network
    };
    let direct_settings = EvalSettings { network: direct_network, ..settings.clone() };
    let direct = run_cross_validation(direct_data, table, &direct_settings)?;
    let top1_ratio = staged.top1.mean / direct.top1.mean;
    Ok(ParadigmComparison { staged, direct, top1_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_direct_set, generate_session_set, SynthConfig};

    #[test]
    fn folds_hold_out_each_session_once() {
        let folds = leave_one_session_out(&[0, 2, 5]);
        assert_eq!(folds.len(), 3);
        assert_eq!(folds[0].held_out_session, 0);
        assert_eq!(folds[0].train_sessions, vec![2, 5]);
        assert_eq!(folds[2].held_out_session, 5);
        assert_eq!(folds[2].train_sessions, vec![0, 2]);
    }

    #[test]
    fn top_k_accuracy_counts_rank_hits() {
        let r1: &[(char, f64)] = &[('B', 0.5), ('A', 0.3), ('C', 0.2)];
        let r2: &[(char, f64)] = &[('A', 0.9), ('B', 0.1)];
        let rankings = [r1, r2];
        assert_eq!(top_k_accuracy(&rankings, &['B', 'B'], 1).unwrap(), 0.5);
        assert_eq!(top_k_accuracy(&rankings, &['A', 'A'], 3).unwrap(), 1.0);
        assert_eq!(top_k_accuracy(&rankings, &['Z', 'Z'], 5).unwrap(), 0.0);
        assert!(matches!(
            top_k_accuracy(&rankings, &['A', 'A'], 0),
            Err(EvalError::BadK { k: 0, max: 36 })
        ));
        assert!(matches!(
            top_k_accuracy(&rankings, &['A', 'A'], 37),
            Err(EvalError::BadK { k: 37, max: 36 })
        ));
        assert!(matches!(
            top_k_accuracy(&rankings, &['A'], 1),
            Err(EvalError::LengthMismatch { rankings: 2, truths: 1 })
        ));
    }

    #[test]
    fn summaries_match_hand_computation() {
        let s = summarize([0.2, 0.4, 0.6].into_iter());
        assert!((s.mean - 0.4).abs() < 1e-12);
        assert!((s.sd - 0.2).abs() < 1e-12);
        let single = summarize([0.7].into_iter());
        assert_eq!(single.sd, 0.0);
        assert!(summarize(core::iter::empty()).mean.is_nan());
    }

    fn quick_settings(network: TsldConfig) -> EvalSettings {
        EvalSettings {
            network,
            train: TrainSettings {
                epochs: 4,
                batch_size: 8,
                learning_rate: 5e-3,
                window_len: 512,
                ..Default::default()
            },
            decoder: DecoderSettings { window_len: 512, shift: 256, ..Default::default() },
            preprocess: PreprocessConfig::default(),
            seeds: vec![0],
            already_preprocessed: false,
        }
    }

    fn tiny_network(channels: usize) -> TsldConfig {
        TsldConfig {
            n_channels: channels,
            temporal_filters: 2,
            temporal_kernel: 25,
            temporal_stride: 8,
            spatial_filters: 2,
            hidden: 4,
            ..Default::default()
        }
    }

    #[test]
    fn staged_cross_validation_reports_every_fold() {
        let cfg = SynthConfig { n_channels: 6, sessions: 2, difficulty: 0.2, ..Default::default() };
        let table = CodebookTable::default();
        let data = generate_session_set(&cfg, &table).unwrap();
        let settings = quick_settings(tiny_network(6));
        let report = run_cross_validation(&data, &table, &settings).unwrap();
        assert_eq!(report.paradigm, Paradigm::MentalTask);
        assert_eq!(report.folds.len(), 2);
        let manual: f64 =
            report.folds.iter().map(|f| f.top1).sum::<f64>() / report.folds.len() as f64;
        assert!((report.top1.mean - manual).abs() < 1e-12);
        for fold in &report.folds {
            assert!((0.0..=1.0).contains(&fold.top1));
            assert!(fold.top1 <= fold.top3 && fold.top3 <= fold.top5);
            assert!((0.0..=1.0).contains(&fold.stage_task_accuracy));
            assert!((0.0..=1.0).contains(&fold.eye_accuracy));
            assert!(!fold.history.is_empty());
        }
    }

    #[test]
    fn direct_cross_validation_has_no_stage_metrics() {
        let cfg = SynthConfig { n_channels: 6, sessions: 2, difficulty: 0.2, ..Default::default() };
        let table = CodebookTable::default();
        let data = generate_direct_set(&cfg).unwrap();
        let network = TsldConfig { direct_mode: true, task_classes: 36, ..tiny_network(6) };
        let mut settings = quick_settings(network);
        settings.train.epochs = 2;
        let report = run_cross_validation(&data, &table, &settings).unwrap();
        assert_eq!(report.paradigm, Paradigm::Direct);
        assert_eq!(report.folds.len(), 2);
        for fold in &report.folds {
            assert!(fold.stage_task_accuracy.is_nan());
            assert!(fold.eye_accuracy.is_nan());
            assert!(fold.top1 <= fold.top3 && fold.top3 <= fold.top5);
        }
        assert!(report.stage_task_accuracy.mean.is_nan());
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let cfg = SynthConfig { n_channels: 6, sessions: 2, difficulty: 0.2, ..Default::default() };
        let table = CodebookTable::default();
        let data = generate_session_set(&cfg, &table).unwrap();
        let wrong_channels = quick_settings(tiny_network(5));
        assert!(matches!(
            run_cross_validation(&data, &table, &wrong_channels),
            Err(EvalError::NetworkMismatch(_))
        ));
        let direct_net =
            TsldConfig { direct_mode: true, task_classes: 36, ..tiny_network(6) };
        assert!(matches!(
            run_cross_validation(&data, &table, &quick_settings(direct_net)),
            Err(EvalError::NetworkMismatch(_))
        ));
        let no_seeds = EvalSettings { seeds: vec![], ..quick_settings(tiny_network(6)) };
        assert!(matches!(
            run_cross_validation(&data, &table, &no_seeds),
            Err(EvalError::NoSeeds)
        ));
    }

    fn fold_stub(session: u8, seed: u64, top1: f64) -> FoldOutcome {
        FoldOutcome {
            held_out_session: session,
            seed,
            top1,
            top3: top1,
            top5: top1,
            stage_task_accuracy: top1,
            eye_accuracy: top1,
            best_epoch: 1,
            history: vec![],
        }
    }

    #[test]
    fn session_curve_groups_folds_by_held_out_session() {
        let report = CrossValidationReport::from_folds(
            Paradigm::MentalTask,
            vec![
                fold_stub(0, 0, 0.2),
                fold_stub(1, 0, 0.6),
                fold_stub(0, 1, 0.4),
                fold_stub(1, 1, 0.8),
            ],
        );
        let curve = per_session_curve(&report);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].session, 0);
        assert!((curve[0].top1.mean - 0.3).abs() < 1e-12);
        assert_eq!(curve[1].session, 1);
        assert!((curve[1].top1.mean - 0.7).abs() < 1e-12);
        // Consistent with the overall mean.
        let overall = (curve[0].top1.mean + curve[1].top1.mean) / 2.0;
        assert!((report.top1.mean - overall).abs() < 1e-12);
    }

    #[test]
    fn paradigm_comparison_runs_both_arms() {
        let cfg = SynthConfig { n_channels: 6, sessions: 2, difficulty: 0.2, ..Default::default() };
        let table = CodebookTable::default();
        let staged = generate_session_set(&cfg, &table).unwrap();
        let direct = generate_direct_set(&cfg).unwrap();
        let mut settings = quick_settings(tiny_network(6));
        settings.train.epochs = 2;
        let cmp = compare_paradigms(&staged, &direct, &table, &settings).unwrap();
        assert_eq!(cmp.staged.paradigm, Paradigm::MentalTask);
        assert_eq!(cmp.direct.paradigm, Paradigm::Direct);
        let expect = cmp.staged.top1.mean / cmp.direct.top1.mean;
        assert!(
            (cmp.top1_ratio == expect) || (cmp.top1_ratio.is_nan() && expect.is_nan()),
            "ratio must come from the two arms"
        );
    }
}
