//! Segment-level decoding: slide fixed windows over a preprocessed
//! recording, vote across the network's window decisions, and map stage
//! decisions back to characters through the codebook.

use alloc::vec;
use alloc::vec::Vec;

use crate::codebook::CodebookTable;
use crate::domain::{char_index, EegRecording, EyeState, MentalTask};
use crate::tsld::{forward, TsldError, TsldParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("window shift must be at least 1")]
    ZeroShift,
    #[error("segment of {found} samples cannot fit a {window}-sample window")]
    SegmentTooShort { window: usize, found: usize },
    #[error("stage decoding needs the dual-head four-task network")]
    NotStageNetwork,
    #[error("direct decoding needs the single-head 36-way network")]
    NotDirectNetwork,
    #[error(transparent)]
    Network(#[from] TsldError),
}

/// Windowing and vote-aggregation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderSettings {
    /// Window length in samples.
    pub window_len: usize,
    /// Offset between consecutive windows.
    pub shift: usize,
    /// Also decode a final window flush with the segment end when the
    /// stride leaves a tail uncovered.
    pub include_tail: bool,
    /// Average the per-window probabilities instead of counting hard votes.
    pub soft_vote: bool,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        DecoderSettings {
            window_len: crate::domain::WINDOW_SAMPLES,
            shift: crate::domain::WINDOW_SHIFT,
            include_tail: false,
            soft_vote: false,
        }
    }
}

/// Start offsets of every decoding window over a `total`-sample segment:
/// multiples of the shift while a full window fits, plus one tail window
/// when enabled and not already covered.
pub fn window_offsets(total: usize, s: &DecoderSettings) -> Result<Vec<usize>, DecodeError> {
    if s.shift == 0 {
        return Err(DecodeError::ZeroShift);
    }
    if total < s.window_len {
        return Err(DecodeError::SegmentTooShort { window: s.window_len, found: total });
    }
    let last = total - s.window_len;
    let mut offsets: Vec<usize> = (0..=last).step_by(s.shift).collect();
    if s.include_tail && *offsets.last().expect("at least offset 0") != last {
        offsets.push(last);
    }
    Ok(offsets)
}

/// One sliding window's network output.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    /// Sample offset of the window within the segment.
    pub start_offset: usize,
    /// Pooled task-head probabilities (a simplex point).
    pub task_probs: Vec<f64>,
    /// Pooled eye-head probabilities; absent for the direct network.
    pub eye_probs: Option<Vec<f64>>,
}

/// The winning class of a vote tally; ties go to the lowest class index.
pub fn decide_from_votes(votes: &[u32]) -> usize {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate().skip(1) {
        if v > votes[best] {
            best = i;
        }
    }
    best
}

/// Per-class decision evidence aggregated over windows.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    votes: Vec<u32>,
    adjusted: Vec<f64>,
    windows: usize,
}

/// Aggregate window probabilities: hard votes count argmax wins and the
/// adjusted probability is the vote share; soft voting averages the
/// probabilities and keeps the votes for inspection.
fn tally(window_probs: &[&[f64]], classes: usize, soft: bool) -> Tally {
    let n = window_probs.len();
    let mut votes = vec![0u32; classes];
    let mut mean = vec![0.0; classes];
    for probs in window_probs {
        votes[crate::tsld::argmax(probs)] += 1;
        for (m, &p) in mean.iter_mut().zip(*probs) {
            *m += p / n as f64;
        }
    }
    let adjusted = if soft {
        mean
    } else {
        votes.iter().map(|&v| v as f64 / n as f64).collect()
    };
    Tally { votes, adjusted, windows: n }
}

/// One stage's decoded (task, eye) decision with its evidence.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDecision {
    pub task: MentalTask,
    pub eye: EyeState,
    pub task_votes: Vec<u32>,
    pub eye_votes: Vec<u32>,
    /// Vote shares (or soft-vote means) per task class; sums to one.
    pub adjusted_task: Vec<f64>,
    pub adjusted_eye: Vec<f64>,
    /// The per-window outputs the votes were tallied from.
    pub windows: Vec<WindowPrediction>,
    pub window_count: usize,
}

/// Decode one preprocessed stage recording with the dual-head network.
pub fn predict_stage(
    rec: &EegRecording,
    params: &TsldParams,
    s: &DecoderSettings,
) -> Result<StageDecision, DecodeError> {
    let cfg = params.config();
    if cfg.direct_mode || cfg.task_classes != MentalTask::ALL.len() {
        return Err(DecodeError::NotStageNetwork);
    }
    let offsets = window_offsets(rec.n_samples(), s)?;
    let mut windows = Vec::with_capacity(offsets.len());
    for &off in &offsets {
        let window = rec.mat().slice_cols(off, s.window_len);
        let trace = forward(&window, params)?;
        windows.push(WindowPrediction {
            start_offset: off,
            task_probs: trace.task_mean,
            eye_probs: Some(trace.eye_mean),
        });
    }
    let task_probs: Vec<&[f64]> = windows.iter().map(|w| w.task_probs.as_slice()).collect();
    let eye_probs: Vec<&[f64]> = windows
        .iter()
        .map(|w| w.eye_probs.as_deref().expect("stage windows carry eye probabilities"))
        .collect();
    let t = tally(&task_probs, cfg.task_classes, s.soft_vote);
    let e = tally(&eye_probs, cfg.eye_classes, s.soft_vote);
    let task_winner = if s.soft_vote {
        crate::tsld::argmax(&t.adjusted)
    } else {
        decide_from_votes(&t.votes)
    };
    let eye_winner = if s.soft_vote {
        crate::tsld::argmax(&e.adjusted)
    } else {
        decide_from_votes(&e.votes)
    };
    Ok(StageDecision {
        task: MentalTask::from_code(task_winner as u8).expect("winner within class range"),
        eye: EyeState::from_code(eye_winner as u8).expect("winner within class range"),
        task_votes: t.votes,
        eye_votes: e.votes,
        adjusted_task: t.adjusted,
        adjusted_eye: e.adjusted,
        windows,
        window_count: t.windows,
    })
}

/// A decoded character with its evidence and full ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterPrediction {
    pub stages: [StageDecision; 3],
    /// The character whose codeword equals all three stage decisions, if
    /// one does.
    pub matched: Option<char>,
    /// All 36 characters, best first, scored by the product over stages of
    /// the decoded class probabilities. A hard match always ranks first;
    /// remaining ties break toward the alphabet order.
    pub ranking: Vec<(char, f64)>,
    /// The emitted character: the top of the ranking.
    pub decoded: char,
}

/// Decode one character from its three preprocessed stage recordings.
pub fn predict_character(
    stage_recs: [&EegRecording; 3],
    params: &TsldParams,
    table: &CodebookTable,
    s: &DecoderSettings,
) -> Result<CharacterPrediction, DecodeError> {
    let decisions = [
        predict_stage(stage_recs[0], params, s)?,
        predict_stage(stage_recs[1], params, s)?,
        predict_stage(stage_recs[2], params, s)?,
    ];
    let observed = [
        (decisions[0].task, decisions[0].eye),
        (decisions[1].task, decisions[1].eye),
        (decisions[2].task, decisions[2].eye),
    ];
    let matched = table.decode(&observed);
    let ranking = rank_characters(table, &decisions, matched);
    let decoded = ranking[0].0;
    Ok(CharacterPrediction { stages: decisions, matched, ranking, decoded })
}

/// Score every character by the product of its codeword's class
/// probabilities across stages, sorted best first. `matched` wins exact
/// score ties, then alphabet order decides.
fn rank_characters(
    table: &CodebookTable,
    decisions: &[StageDecision; 3],
    matched: Option<char>,
) -> Vec<(char, f64)> {
    let mut scored: Vec<(char, f64)> = table
        .entries()
        .iter()
        .map(|entry| {
            let mut score = 1.0;
            for (stage, &(task, eye)) in entry.stages.iter().enumerate() {
                score *= decisions[stage].adjusted_task[task.code() as usize]
                    * decisions[stage].adjusted_eye[eye.code() as usize];
            }
            (entry.character, score)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| {
                let a_matched = matched == Some(a.0);
                let b_matched = matched == Some(b.0);
                b_matched.cmp(&a_matched)
            })
            .then_with(|| char_index(a.0).cmp(&char_index(b.0)))
    });
    scored
}

/// A direct-paradigm decode: one 36-way vote over the whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPrediction {
    pub votes: Vec<u32>,
    /// Vote shares (or soft-vote means) per character; sums to one.
    pub adjusted: Vec<f64>,
    /// All 36 characters, best first; ties break toward alphabet order.
    pub ranking: Vec<(char, f64)>,
    pub decoded: char,
    /// The per-window outputs the votes were tallied from.
    pub windows: Vec<WindowPrediction>,
    pub window_count: usize,
}

/// Decode one preprocessed direct-paradigm recording with the 36-way
/// network.
pub fn decode_direct(
    rec: &EegRecording,
    params: &TsldParams,
    s: &DecoderSettings,
) -> Result<DirectPrediction, DecodeError> {
    let cfg = params.config();
    if !cfg.direct_mode || cfg.task_classes != crate::domain::ALPHABET.len() {
        return Err(DecodeError::NotDirectNetwork);
    }
    let offsets = window_offsets(rec.n_samples(), s)?;
    let mut windows = Vec::with_capacity(offsets.len());
    for &off in &offsets {
        let window = rec.mat().slice_cols(off, s.window_len);
        let trace = forward(&window, params)?;
        windows.push(WindowPrediction {
            start_offset: off,
            task_probs: trace.task_mean,
            eye_probs: None,
        });
    }
    let probs: Vec<&[f64]> = windows.iter().map(|w| w.task_probs.as_slice()).collect();
    let t = tally(&probs, cfg.task_classes, s.soft_vote);
    let mut ranking: Vec<(char, f64)> = crate::domain::ALPHABET
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, t.adjusted[i]))
        .collect();
    ranking.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| char_index(a.0).cmp(&char_index(b.0)))
    });
    let decoded = ranking[0].0;
    Ok(DirectPrediction {
        votes: t.votes,
        adjusted: t.adjusted,
        ranking,
        decoded,
        windows,
        window_count: offsets.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DEFAULT_SAMPLING_RATE_HZ, DIRECT_SAMPLES, STAGE_SAMPLES};
    use crate::mat::Mat;
    use crate::tsld::{TsldConfig, TsldParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stage_segments_get_eight_windows() {
        let s = DecoderSettings::default();
        let offsets = window_offsets(STAGE_SAMPLES, &s).unwrap();
        assert_eq!(offsets, vec![0, 100, 200, 300, 400, 500, 600, 700]);
    }

    #[test]
    fn tail_window_is_optional_and_flush() {
        let s = DecoderSettings { include_tail: true, ..Default::default() };
        let offsets = window_offsets(STAGE_SAMPLES, &s).unwrap();
        assert_eq!(offsets.len(), 9);
        assert_eq!(*offsets.last().unwrap(), STAGE_SAMPLES - 1000);
        // Already flush: no duplicate tail.
        let exact = window_offsets(1700, &s).unwrap();
        assert_eq!(exact, vec![0, 100, 200, 300, 400, 500, 600, 700]);
    }

    #[test]
    fn direct_recordings_get_44_windows() {
        let offsets = window_offsets(DIRECT_SAMPLES, &DecoderSettings::default()).unwrap();
        assert_eq!(offsets.len(), 44);
        assert_eq!(*offsets.last().unwrap(), 4300);
    }

    #[test]
    fn window_offset_errors() {
        let s = DecoderSettings { shift: 0, ..Default::default() };
        assert_eq!(window_offsets(STAGE_SAMPLES, &s), Err(DecodeError::ZeroShift));
        assert_eq!(
            window_offsets(999, &DecoderSettings::default()),
            Err(DecodeError::SegmentTooShort { window: 1000, found: 999 })
        );
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        assert_eq!(decide_from_votes(&[4, 4]), 0);
        assert_eq!(decide_from_votes(&[1, 3, 3, 1]), 1);
        assert_eq!(decide_from_votes(&[0, 0, 0]), 0);
        assert_eq!(decide_from_votes(&[1, 2, 4, 1]), 2);
    }

    #[test]
    fn tally_counts_and_shares() {
        let probs: [&[f64]; 4] = [
            &[0.7, 0.1, 0.1, 0.1],
            &[0.1, 0.6, 0.2, 0.1],
            &[0.4, 0.3, 0.2, 0.1],
            &[0.1, 0.2, 0.3, 0.4],
        ];
        let t = tally(&probs, 4, false);
        assert_eq!(t.votes, vec![2, 1, 0, 1]);
        assert_eq!(t.adjusted, vec![0.5, 0.25, 0.0, 0.25]);
        assert_eq!(t.adjusted.iter().sum::<f64>(), 1.0);

        let soft = tally(&probs, 4, true);
        assert_eq!(soft.votes, vec![2, 1, 0, 1]);
        assert!((soft.adjusted[0] - 0.325).abs() < 1e-12);
        assert!((soft.adjusted.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Eight windows with a controlled winner per window: vote shares over
    /// a power-of-two window count are exact binary fractions.
    #[test]
    fn eight_window_shares_sum_exactly_to_one() {
        let mut probs = Vec::new();
        for w in 0..8 {
            let mut p = vec![0.05; 4];
            p[w % 3] = 0.85;
            probs.push(p);
        }
        let views: Vec<&[f64]> = probs.iter().map(|p| p.as_slice()).collect();
        let t = tally(&views, 4, false);
        assert_eq!(t.votes.iter().sum::<u32>(), 8);
        assert_eq!(t.adjusted.iter().sum::<f64>(), 1.0);
    }

    fn stage_decision(task_shares: [f64; 4], eye_shares: [f64; 2]) -> StageDecision {
        let task_votes: Vec<u32> = task_shares.iter().map(|&s| (s * 8.0) as u32).collect();
        let eye_votes: Vec<u32> = eye_shares.iter().map(|&s| (s * 8.0) as u32).collect();
        StageDecision {
            task: MentalTask::from_code(decide_from_votes(&task_votes) as u8).unwrap(),
            eye: EyeState::from_code(decide_from_votes(&eye_votes) as u8).unwrap(),
            task_votes,
            eye_votes,
            adjusted_task: task_shares.to_vec(),
            adjusted_eye: eye_shares.to_vec(),
            windows: vec![],
            window_count: 8,
        }
    }

    #[test]
    fn ranking_puts_hard_match_first() {
        let table = CodebookTable::default();
        // Clear decisions matching 'A' = (foot, foot, foot), eyes
        // closed/open/closed.
        let decisions = [
            stage_decision([0.75, 0.125, 0.125, 0.0], [0.875, 0.125]),
            stage_decision([0.75, 0.125, 0.125, 0.0], [0.125, 0.875]),
            stage_decision([0.75, 0.125, 0.125, 0.0], [0.875, 0.125]),
        ];
        let observed = [
            (decisions[0].task, decisions[0].eye),
            (decisions[1].task, decisions[1].eye),
            (decisions[2].task, decisions[2].eye),
        ];
        let matched = table.decode(&observed);
        assert_eq!(matched, Some('A'));
        let ranking = rank_characters(&table, &decisions, matched);
        assert_eq!(ranking[0].0, 'A');
        assert_eq!(ranking.len(), 36);
        for pair in ranking.windows(2) {
            assert!(pair[0].1 >= pair[1].1, "ranking not sorted");
        }
    }

    #[test]
    fn ranking_ties_break_alphabetically() {
        let table = CodebookTable::default();
        // Uniform task evidence with eyes following the shared pattern:
        // every character's score is the same product, a 36-way tie.
        let decisions = [
            stage_decision([0.25; 4], [0.875, 0.125]),
            stage_decision([0.25; 4], [0.125, 0.875]),
            stage_decision([0.25; 4], [0.875, 0.125]),
        ];
        let observed = [
            (decisions[0].task, decisions[0].eye),
            (decisions[1].task, decisions[1].eye),
            (decisions[2].task, decisions[2].eye),
        ];
        // Task ties resolve to foot at every stage, which is exactly 'A'.
        let matched = table.decode(&observed);
        assert_eq!(matched, Some('A'));
        let ranking = rank_characters(&table, &decisions, matched);
        assert_eq!(ranking[0].0, 'A');
        // After the match, pure alphabet order.
        let rest: Vec<char> = ranking[1..].iter().map(|&(c, _)| c).collect();
        let mut expected: Vec<char> = crate::domain::ALPHABET[1..].to_vec();
        expected.sort_by_key(|&c| char_index(c));
        assert_eq!(rest, expected);
    }

    fn trained_stub(cfg: &TsldConfig) -> TsldParams {
        TsldParams::init(cfg, 123).unwrap()
    }

    fn small_stage_config() -> TsldConfig {
        TsldConfig {
            n_channels: 4,
            temporal_filters: 2,
            temporal_kernel: 25,
            temporal_stride: 8,
            spatial_filters: 2,
            hidden: 4,
            ..Default::default()
        }
    }

    fn random_recording(channels: usize, samples: usize, seed: u64) -> EegRecording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mat::from_fn(channels, samples, |_, _| rng.gen_range(-1.0..1.0));
        EegRecording::new(m, DEFAULT_SAMPLING_RATE_HZ).unwrap()
    }

    #[test]
    fn predict_stage_counts_windows_and_normalises() {
        let cfg = small_stage_config();
        let params = trained_stub(&cfg);
        let rec = random_recording(4, STAGE_SAMPLES, 1);
        let d = predict_stage(&rec, &params, &DecoderSettings::default()).unwrap();
        assert_eq!(d.window_count, 8);
        assert_eq!(d.task_votes.iter().sum::<u32>(), 8);
        assert_eq!(d.eye_votes.iter().sum::<u32>(), 8);
        assert_eq!(d.adjusted_task.iter().sum::<f64>(), 1.0);
        assert_eq!(d.adjusted_eye.iter().sum::<f64>(), 1.0);
        assert_eq!(d.task.code() as usize, decide_from_votes(&d.task_votes));
        assert_eq!(d.windows.len(), 8);
        for (i, w) in d.windows.iter().enumerate() {
            assert_eq!(w.start_offset, i * 100);
            assert!((w.task_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let eye = w.eye_probs.as_ref().unwrap();
            assert!((eye.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_stage_rejects_direct_network() {
        let cfg = TsldConfig {
            direct_mode: true,
            task_classes: 36,
            ..small_stage_config()
        };
        let params = trained_stub(&cfg);
        let rec = random_recording(4, STAGE_SAMPLES, 2);
        assert_eq!(
            predict_stage(&rec, &params, &DecoderSettings::default()).unwrap_err(),
            DecodeError::NotStageNetwork
        );
    }

    #[test]
    fn predict_character_is_consistent_with_stage_decisions() {
        let cfg = small_stage_config();
        let params = trained_stub(&cfg);
        let table = CodebookTable::default();
        let recs = [
            random_recording(4, STAGE_SAMPLES, 10),
            random_recording(4, STAGE_SAMPLES, 11),
            random_recording(4, STAGE_SAMPLES, 12),
        ];
        let pred = predict_character(
            [&recs[0], &recs[1], &recs[2]],
            &params,
            &table,
            &DecoderSettings::default(),
        )
        .unwrap();
        assert_eq!(pred.ranking.len(), 36);
        assert_eq!(pred.decoded, pred.ranking[0].0);
        if let Some(m) = pred.matched {
            assert_eq!(pred.decoded, m);
        }
        // The top-ranked characters are a prefix chain by construction.
        let top1: Vec<char> = pred.ranking[..1].iter().map(|&(c, _)| c).collect();
        let top3: Vec<char> = pred.ranking[..3].iter().map(|&(c, _)| c).collect();
        assert!(top3.starts_with(&top1));
    }

    #[test]
    fn decode_direct_requires_direct_network_and_counts_windows() {
        let stage_params = trained_stub(&small_stage_config());
        let rec = random_recording(4, DIRECT_SAMPLES, 3);
        assert_eq!(
            decode_direct(&rec, &stage_params, &DecoderSettings::default()).unwrap_err(),
            DecodeError::NotDirectNetwork
        );

        let cfg = TsldConfig {
            direct_mode: true,
            task_classes: 36,
            ..small_stage_config()
        };
        let params = trained_stub(&cfg);
        let d = decode_direct(&rec, &params, &DecoderSettings::default()).unwrap();
        assert_eq!(d.window_count, 44);
        assert_eq!(d.votes.iter().sum::<u32>(), 44);
        assert!((d.adjusted.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.ranking.len(), 36);
        assert_eq!(d.decoded, d.ranking[0].0);
        assert_eq!(d.windows.len(), 44);
        assert!(d.windows.iter().all(|w| w.eye_probs.is_none()));
        assert!(d
            .windows
            .iter()
            .all(|w| (w.task_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9));
    }
}
