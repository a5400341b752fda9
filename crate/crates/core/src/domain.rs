//! Shared vocabulary: recordings, stage labels, datasets and the alphabet.
//!
//! Every downstream module speaks in these types. Label enums carry fixed
//! integer codes and fixed short names; both are serialized into files, so
//! they are load-bearing and must never change.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::mat::Mat;

/// Samples per spelling stage (7 s at 256 Hz).
pub const STAGE_SAMPLES: usize = 1792;
/// Samples per direct-imagination recording (21 s at 256 Hz).
pub const DIRECT_SAMPLES: usize = 5376;
/// Decoding window length in samples.
pub const WINDOW_SAMPLES: usize = 1000;
/// Shift between consecutive decoding windows in samples.
pub const WINDOW_SHIFT: usize = 100;
/// Stages spelled per character.
pub const STAGES_PER_CHARACTER: usize = 3;
/// Recording sessions per dataset.
pub const SESSIONS: usize = 6;
/// Default sampling rate of the recording headset.
pub const DEFAULT_SAMPLING_RATE_HZ: u32 = 256;

/// The 36 spellable characters, in ranking order.
pub const ALPHABET: [char; 36] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R',
    'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9',
];

/// Position of `c` in [`ALPHABET`], if it is spellable.
pub fn char_index(c: char) -> Option<usize> {
    match c {
        'A'..='Z' => Some(c as usize - 'A' as usize),
        '0'..='9' => Some(26 + c as usize - '0' as usize),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("recording must have at least one channel and one sample")]
    EmptyRecording,
    #[error("channel {channel} sample {sample} is not finite")]
    NonFiniteSample { channel: usize, sample: usize },
    #[error("stage index {0} out of range (stages run 0..3)")]
    StageIndexOutOfRange(u8),
    #[error("session index {0} out of range (sessions run 0..6)")]
    SessionIndexOutOfRange(u8),
    #[error("character {0:?} is not in the 36-character alphabet")]
    UnknownCharacter(char),
    #[error("unknown mental-task code {0}")]
    UnknownTaskCode(u8),
    #[error("unknown eye-state code {0}")]
    UnknownEyeCode(u8),
    #[error("unknown mental-task name {0:?}")]
    UnknownTaskName(String),
    #[error("unknown eye-state name {0:?}")]
    UnknownEyeName(String),
    #[error("dataset has no segments")]
    EmptyDataset,
    #[error("dataset needs at least two channels, found {0}")]
    TooFewChannels(usize),
    #[error(
        "segment '{character}' session {session} stage {stage}: \
         expected {expected} samples, found {found}"
    )]
    SegmentLength { character: char, session: u8, stage: u8, expected: usize, found: usize },
    #[error(
        "segment '{character}' session {session} stage {stage}: \
         expected {expected} channels, found {found}"
    )]
    ChannelMismatch { character: char, session: u8, stage: u8, expected: usize, found: usize },
    #[error(
        "segment '{character}' session {session} stage {stage}: \
         sampling rate {found} Hz differs from {expected} Hz"
    )]
    RateMismatch { character: char, session: u8, stage: u8, expected: u32, found: u32 },
    #[error(
        "direct-paradigm segment '{character}' session {session} \
         must use stage index 0, found {stage}"
    )]
    DirectStageIndex { character: char, session: u8, stage: u8 },
    #[error(
        "session {session} character '{character}' stage {stage}: \
         expected exactly one segment, found {found}"
    )]
    IncompleteCharacter { session: u8, character: char, stage: u8, found: usize },
}

/// One of the four imagery tasks a stage can ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MentalTask {
    FootImagery,
    TongueImagery,
    VisualImagery,
    Arithmetic,
}

impl MentalTask {
    pub const ALL: [MentalTask; 4] = [
        MentalTask::FootImagery,
        MentalTask::TongueImagery,
        MentalTask::VisualImagery,
        MentalTask::Arithmetic,
    ];

    /// Stable integer code used in files and as the classifier class index.
    pub fn code(self) -> u8 {
        match self {
            MentalTask::FootImagery => 0,
            MentalTask::TongueImagery => 1,
            MentalTask::VisualImagery => 2,
            MentalTask::Arithmetic => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or(DomainError::UnknownTaskCode(code))
    }

    /// Stable short name used in codebook CSV files.
    pub fn name(self) -> &'static str {
        match self {
            MentalTask::FootImagery => "foot",
            MentalTask::TongueImagery => "tongue",
            MentalTask::VisualImagery => "visual",
            MentalTask::Arithmetic => "arith",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| DomainError::UnknownTaskName(name.to_string()))
    }
}

/// Eye state held during a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EyeState {
    Closed,
    Open,
}

impl EyeState {
    pub const ALL: [EyeState; 2] = [EyeState::Closed, EyeState::Open];

    /// Stable integer code used in files and as the classifier class index.
    pub fn code(self) -> u8 {
        match self {
            EyeState::Closed => 0,
            EyeState::Open => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|e| e.code() == code)
            .ok_or(DomainError::UnknownEyeCode(code))
    }

    /// Stable short name used in codebook CSV files.
    pub fn name(self) -> &'static str {
        match self {
            EyeState::Closed => "closed",
            EyeState::Open => "open",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| DomainError::UnknownEyeName(name.to_string()))
    }
}

/// Recording protocol a dataset was captured under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Paradigm {
    /// Three 7 s (task, eye) stages per character.
    MentalTask,
    /// One 21 s recording per character, imagined directly.
    Direct,
}

impl Paradigm {
    /// Samples every segment of this paradigm must have.
    pub fn segment_samples(self) -> usize {
        match self {
            Paradigm::MentalTask => STAGE_SAMPLES,
            Paradigm::Direct => DIRECT_SAMPLES,
        }
    }

    /// Stable name used in metadata files.
    pub fn name(self) -> &'static str {
        match self {
            Paradigm::MentalTask => "mental_task",
            Paradigm::Direct => "direct",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mental_task" => Some(Paradigm::MentalTask),
            "direct" => Some(Paradigm::Direct),
            _ => None,
        }
    }
}

/// Multichannel EEG, one row per channel, finite samples throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    data: Mat,
    sampling_rate_hz: u32,
}

impl EegRecording {
    pub fn new(data: Mat, sampling_rate_hz: u32) -> Result<Self, DomainError> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(DomainError::EmptyRecording);
        }
        for (c, row) in data.rows_iter().enumerate() {
            if let Some(s) = row.iter().position(|x| !x.is_finite()) {
                return Err(DomainError::NonFiniteSample { channel: c, sample: s });
            }
        }
        Ok(EegRecording { data, sampling_rate_hz })
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.data.rows()
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn sampling_rate_hz(&self) -> u32 {
        self.sampling_rate_hz
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        self.data.row(c)
    }

    pub fn mat(&self) -> &Mat {
        &self.data
    }

    pub fn into_mat(self) -> Mat {
        self.data
    }

    /// Same sampling rate, new samples. Validates finiteness again.
    pub fn with_data(&self, data: Mat) -> Result<EegRecording, DomainError> {
        EegRecording::new(data, self.sampling_rate_hz)
    }
}

/// One labelled spelling stage: a recording plus what the subject was asked
/// to do and where in the protocol it sat.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSegment {
    pub recording: EegRecording,
    pub task: MentalTask,
    pub eye: EyeState,
    pub character: char,
    pub session_index: u8,
    pub stage_index: u8,
}

impl StageSegment {
    pub fn new(
        recording: EegRecording,
        task: MentalTask,
        eye: EyeState,
        character: char,
        session_index: u8,
        stage_index: u8,
    ) -> Result<Self, DomainError> {
        if stage_index as usize >= STAGES_PER_CHARACTER {
            return Err(DomainError::StageIndexOutOfRange(stage_index));
        }
        if session_index as usize >= SESSIONS {
            return Err(DomainError::SessionIndexOutOfRange(session_index));
        }
        if char_index(character).is_none() {
            return Err(DomainError::UnknownCharacter(character));
        }
        Ok(StageSegment { recording, task, eye, character, session_index, stage_index })
    }
}

/// A window cut from a segment, labelled for training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: Mat,
    /// Class index for the task head: the task code in the staged paradigm,
    /// the alphabet index in the direct paradigm.
    pub task_class: usize,
    /// Absent in the direct paradigm, which has no eye labels.
    pub eye: Option<EyeState>,
}

/// A full labelled corpus: segments across sessions under one paradigm.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    pub paradigm: Paradigm,
    pub alphabet: Vec<char>,
    pub segments: Vec<StageSegment>,
}

impl SessionDataset {
    /// Build and structurally validate: consistent shapes and rates across
    /// segments, the paradigm's segment length, at least two channels.
    pub fn new(paradigm: Paradigm, segments: Vec<StageSegment>) -> Result<Self, DomainError> {
        let ds = SessionDataset { paradigm, alphabet: ALPHABET.to_vec(), segments };
        ds.validate_structure()?;
        Ok(ds)
    }

    pub fn validate_structure(&self) -> Result<(), DomainError> {
        let first = self.segments.first().ok_or(DomainError::EmptyDataset)?;
        let channels = first.recording.n_channels();
        let rate = first.recording.sampling_rate_hz();
        if channels < 2 {
            return Err(DomainError::TooFewChannels(channels));
        }
        let expected = self.paradigm.segment_samples();
        for seg in &self.segments {
            let found = seg.recording.n_samples();
            if found != expected {
                return Err(DomainError::SegmentLength {
                    character: seg.character,
                    session: seg.session_index,
                    stage: seg.stage_index,
                    expected,
                    found,
                });
            }
            if seg.recording.n_channels() != channels {
                return Err(DomainError::ChannelMismatch {
                    character: seg.character,
                    session: seg.session_index,
                    stage: seg.stage_index,
                    expected: channels,
                    found: seg.recording.n_channels(),
                });
            }
            if seg.recording.sampling_rate_hz() != rate {
                return Err(DomainError::RateMismatch {
                    character: seg.character,
                    session: seg.session_index,
                    stage: seg.stage_index,
                    expected: rate,
                    found: seg.recording.sampling_rate_hz(),
                });
            }
            if self.paradigm == Paradigm::Direct && seg.stage_index != 0 {
                return Err(DomainError::DirectStageIndex {
                    character: seg.character,
                    session: seg.session_index,
                    stage: seg.stage_index,
                });
            }
        }
        Ok(())
    }

    /// Full-protocol check on top of [`validate_structure`]: every session
    /// present covers the whole alphabet, with one segment per stage in the
    /// staged paradigm and one segment per character in the direct paradigm.
    ///
    /// [`validate_structure`]: SessionDataset::validate_structure
    pub fn validate_complete(&self) -> Result<(), DomainError> {
        self.validate_structure()?;
        let stages: &[u8] = match self.paradigm {
            Paradigm::MentalTask => &[0, 1, 2],
            Paradigm::Direct => &[0],
        };
        for session in self.session_indices() {
            for &c in &self.alphabet {
                for &stage in stages {
                    let found = self
                        .segments
                        .iter()
                        .filter(|s| {
                            s.session_index == session && s.character == c && s.stage_index == stage
                        })
                        .count();
                    if found != 1 {
                        return Err(DomainError::IncompleteCharacter {
                            session,
                            character: c,
                            stage,
                            found,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.segments.first().map_or(0, |s| s.recording.n_channels())
    }

    pub fn sampling_rate_hz(&self) -> u32 {
        self.segments.first().map_or(0, |s| s.recording.sampling_rate_hz())
    }

    /// Sorted distinct session indices present in the data.
    pub fn session_indices(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.segments.iter().map(|s| s.session_index).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn segments_in_session(&self, session: u8) -> impl Iterator<Item = &StageSegment> {
        self.segments.iter().filter(move |s| s.session_index == session)
    }

    /// The three stage segments of `character` in `session`, in stage order.
    /// Requires a complete session (see [`validate_complete`]).
    ///
    /// [`validate_complete`]: SessionDataset::validate_complete
    pub fn stage_triple(&self, session: u8, character: char) -> Option<[&StageSegment; 3]> {
        let mut found: [Option<&StageSegment>; 3] = [None, None, None];
        for seg in self.segments_in_session(session) {
            if seg.character == character {
                let slot = &mut found[seg.stage_index as usize];
                if slot.is_some() {
                    return None;
                }
                *slot = Some(seg);
            }
        }
        match found {
            [Some(a), Some(b), Some(c)] => Some([a, b, c]),
            _ => None,
        }
    }
}
