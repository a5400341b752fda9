//! On-disk formats: signal files, dataset directories, network checkpoints.
//!
//! Signal file (integers little-endian): magic `EEGS`, u16 version = 1,
//! u16 flags = 0, u32 n_channels, u32 n_samples, u32 sampling_rate_hz, then
//! n_channels * n_samples f32 samples, channel-major. Samples live in 32
//! bits on disk and widen to f64 in memory, so a write/read cycle is the
//! identity exactly when every sample is f32-representable; data that came
//! from disk always is.
//!
//! Dataset directory: one signal file per segment under `segments/` plus a
//! `dataset.json` sidecar listing, per segment, its file, character,
//! stage_index, task_code, eye_code, session_index, and paradigm.
//!
//! Checkpoint: magic `TSLD`, u16 version = 1, u16 reserved = 0, u32 config
//! length, config JSON, u32 tensor count, then per tensor: u32 name length,
//! name bytes, u32 rank, u32 dims, f64 little-endian payload.

use std::fs;
use std::path::{Component, Path, PathBuf};

use mindspell_core::domain::{DomainError, EyeState, MentalTask, Paradigm};
use mindspell_core::tsld::{tensor_specs, TsldConfig, TsldParams};
use mindspell_core::{EegRecording, Mat, SessionDataset, StageSegment};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SIGNAL_MAGIC: [u8; 4] = *b"EEGS";
pub const SIGNAL_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TSLD";
pub const CHECKPOINT_VERSION: u16 = 1;
/// Sidecar file name inside a dataset directory.
pub const SIDECAR_FILE: &str = "dataset.json";
const SEGMENT_DIR: &str = "segments";

/// Largest accepted value for any checkpoint config dimension.
const MAX_CONFIG_DIM: usize = 1 << 14;
/// Largest accepted total parameter count when reading a checkpoint.
const MAX_PARAMS: usize = 1 << 28;

/// File-format failures, one kind per way a file can be wrong.
#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {found}")]
    WrongVersion { path: PathBuf, found: u16 },
    #[error("{path}: truncated payload")]
    Truncated { path: PathBuf },
    #[error("{path}: {field} out of range: {value}")]
    LabelOutOfRange { path: PathBuf, field: &'static str, value: String },
    #[error("{path}: channel {channel} sample {sample} is not representable in 32 bits")]
    NonFinite { path: PathBuf, channel: usize, sample: usize },
    #[error("{path}: already exists (pass --force to overwrite)")]
    AlreadyExists { path: PathBuf },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<FileError> for CliError {
    fn from(err: FileError) -> Self {
        CliError::Data(err.to_string())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> FileError {
    FileError::Io { path: path.to_path_buf(), source }
}

fn malformed(path: &Path, reason: impl Into<String>) -> FileError {
    FileError::Malformed { path: path.to_path_buf(), reason: reason.into() }
}

/// Bounds-checked little-endian cursor over a loaded file.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FileError::Truncated { path: self.path.to_path_buf() })?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, FileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Rejects trailing bytes after the structure ends.
    fn done(&self) -> Result<(), FileError> {
        if self.pos != self.buf.len() {
            return Err(malformed(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn u32_of(path: &Path, what: &str, v: usize) -> Result<u32, FileError> {
    u32::try_from(v).map_err(|_| malformed(path, format!("{what} too large for format: {v}")))
}

/// Write one recording as a signal file.
pub fn write_signal(path: &Path, rec: &EegRecording) -> Result<(), FileError> {
    let (channels, samples) = (rec.n_channels(), rec.n_samples());
    let mut buf = Vec::with_capacity(20 + channels * samples * 4);
    buf.extend_from_slice(&SIGNAL_MAGIC);
    buf.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&u32_of(path, "channel count", channels)?.to_le_bytes());
    buf.extend_from_slice(&u32_of(path, "sample count", samples)?.to_le_bytes());
    buf.extend_from_slice(&rec.sampling_rate_hz().to_le_bytes());
    for c in 0..channels {
        for (s, &v) in rec.channel(c).iter().enumerate() {
            let v32 = v as f32;
            if !v32.is_finite() {
                return Err(FileError::NonFinite {
                    path: path.to_path_buf(),
                    channel: c,
                    sample: s,
                });
            }
            buf.extend_from_slice(&v32.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Read one signal file back into a recording.
pub fn read_signal(path: &Path) -> Result<EegRecording, FileError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(&bytes, path);
    if r.take(4)? != SIGNAL_MAGIC {
        return Err(FileError::BadMagic { path: path.to_path_buf() });
    }
    let version = r.u16()?;
    if version != SIGNAL_VERSION {
        return Err(FileError::WrongVersion { path: path.to_path_buf(), found: version });
    }
    if r.u16()? != 0 {
        return Err(malformed(path, "unsupported flags"));
    }
    let channels = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let rate = r.u32()?;
    if channels == 0 || samples == 0 || rate == 0 {
        return Err(malformed(path, "zero channels, samples, or sampling rate"));
    }
    let len = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed(path, "sample count overflows"))?;
    let payload = r.take(len)?;
    r.done()?;
    let mut data = Vec::with_capacity(channels * samples);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    EegRecording::new(Mat::from_vec(channels, samples, data), rate)
        .map_err(|e| malformed(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    preprocessed: bool,
    alphabet: String,
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    file: String,
    character: char,
    stage_index: u8,
    task_code: u8,
    eye_code: u8,
    session_index: u8,
    paradigm: String,
}

/// A dataset read back from disk, with its preprocessing marker.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: SessionDataset,
    /// True when the preprocessing pipeline already ran over the files.
    pub preprocessed: bool,
}

/// Write a dataset directory: one signal file per segment plus the sidecar.
/// Returns the number of segments written. An empty dataset writes a valid
/// sidecar and no signal files.
pub fn write_dataset(
    dir: &Path,
    ds: &SessionDataset,
    preprocessed: bool,
    force: bool,
) -> Result<usize, FileError> {
    let sidecar_path = dir.join(SIDECAR_FILE);
    if sidecar_path.exists() && !force {
        return Err(FileError::AlreadyExists { path: sidecar_path });
    }
    fs::create_dir_all(dir.join(SEGMENT_DIR)).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::with_capacity(ds.segments.len());
    for seg in &ds.segments {
        let name = format!(
            "{SEGMENT_DIR}/s{}_{}_{}.eegs",
            seg.session_index, seg.character, seg.stage_index
        );
        write_signal(&dir.join(&name), &seg.recording)?;
        records.push(SegmentRecord {
            file: name,
            character: seg.character,
            stage_index: seg.stage_index,
            task_code: seg.task.code(),
            eye_code: seg.eye.code(),
            session_index: seg.session_index,
            paradigm: ds.paradigm.name().to_string(),
        });
    }
    let sidecar =
        Sidecar { preprocessed, alphabet: ds.alphabet.iter().collect(), segments: records };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&sidecar_path, json + "\n").map_err(|e| io_err(&sidecar_path, e))?;
    Ok(ds.segments.len())
}

/// Segment file references must stay inside the dataset directory.
fn check_relative(path: &Path, file: &str) -> Result<(), FileError> {
    let ok = !file.is_empty()
        && Path::new(file).components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(malformed(path, format!("segment file path escapes the dataset directory: {file}")))
    }
}

/// Read a dataset directory back; every structural invariant is re-checked.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset, FileError> {
    let sidecar_path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)
        .map_err(|e| malformed(&sidecar_path, e.to_string()))?;
    if sidecar.segments.is_empty() {
        return Err(malformed(&sidecar_path, "dataset has no segments"));
    }
    let paradigm_name = sidecar.segments[0].paradigm.clone();
    let paradigm = Paradigm::from_name(&paradigm_name).ok_or_else(|| {
        FileError::LabelOutOfRange {
            path: sidecar_path.clone(),
            field: "paradigm",
            value: paradigm_name.clone(),
        }
    })?;
    let alphabet: Vec<char> = sidecar.alphabet.chars().collect();
    if alphabet.is_empty() {
        return Err(malformed(&sidecar_path, "empty alphabet"));
    }
    for (i, &c) in alphabet.iter().enumerate() {
        if alphabet[..i].contains(&c) {
            return Err(malformed(&sidecar_path, format!("duplicate alphabet character {c}")));
        }
    }
    let label_err = |field: &'static str, value: String| FileError::LabelOutOfRange {
        path: sidecar_path.clone(),
        field,
        value,
    };
    let mut segments = Vec::with_capacity(sidecar.segments.len());
    for rec in &sidecar.segments {
        if rec.paradigm != paradigm_name {
            return Err(malformed(&sidecar_path, "segments mix paradigms"));
        }
        let task = MentalTask::from_code(rec.task_code)
            .map_err(|_| label_err("task_code", rec.task_code.to_string()))?;
        let eye = EyeState::from_code(rec.eye_code)
            .map_err(|_| label_err("eye_code", rec.eye_code.to_string()))?;
        if !alphabet.contains(&rec.character) {
            return Err(label_err("character", rec.character.to_string()));
        }
        check_relative(&sidecar_path, &rec.file)?;
        let recording = read_signal(&dir.join(&rec.file))?;
        let seg = StageSegment::new(
            recording,
            task,
            eye,
            rec.character,
            rec.session_index,
            rec.stage_index,
        )
        .map_err(|e| match e {
            DomainError::StageIndexOutOfRange(v) => label_err("stage_index", v.to_string()),
            DomainError::SessionIndexOutOfRange(v) => label_err("session_index", v.to_string()),
            DomainError::UnknownCharacter(c) => label_err("character", c.to_string()),
            other => malformed(&sidecar_path, other.to_string()),
        })?;
        segments.push(seg);
    }
    let dataset = SessionDataset { paradigm, alphabet, segments };
    dataset.validate_structure().map_err(|e| malformed(dir, e.to_string()))?;
    Ok(LoadedDataset { dataset, preprocessed: sidecar.preprocessed })
}

/// Serialized mirror of the network configuration inside a checkpoint.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointConfig {
    n_channels: usize,
    temporal_filters: usize,
    temporal_kernel: usize,
    temporal_stride: usize,
    tied_temporal: bool,
    spatial_filters: usize,
    hidden: usize,
    task_classes: usize,
    eye_classes: usize,
    direct_mode: bool,
    use_gru: bool,
}

impl CheckpointConfig {
    fn of(cfg: &TsldConfig) -> Self {
        CheckpointConfig {
            n_channels: cfg.n_channels,
            temporal_filters: cfg.temporal_filters,
            temporal_kernel: cfg.temporal_kernel,
            temporal_stride: cfg.temporal_stride,
            tied_temporal: cfg.tied_temporal,
            spatial_filters: cfg.spatial_filters,
            hidden: cfg.hidden,
            task_classes: cfg.task_classes,
            eye_classes: cfg.eye_classes,
            direct_mode: cfg.direct_mode,
            use_gru: cfg.use_gru,
        }
    }

    fn into_core(self) -> TsldConfig {
        TsldConfig {
            n_channels: self.n_channels,
            temporal_filters: self.temporal_filters,
            temporal_kernel: self.temporal_kernel,
            temporal_stride: self.temporal_stride,
            tied_temporal: self.tied_temporal,
            spatial_filters: self.spatial_filters,
            hidden: self.hidden,
            task_classes: self.task_classes,
            eye_classes: self.eye_classes,
            direct_mode: self.direct_mode,
            use_gru: self.use_gru,
        }
    }
}

/// Write trained parameters as a checkpoint file.
pub fn write_checkpoint(path: &Path, params: &TsldParams) -> Result<(), FileError> {
    let cfg = params.config();
    let config_json =
        serde_json::to_vec(&CheckpointConfig::of(cfg)).expect("config serializes");
    let specs = tensor_specs(cfg);
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&u32_of(path, "config block", config_json.len())?.to_le_bytes());
    buf.extend_from_slice(&config_json);
    buf.extend_from_slice(&u32_of(path, "tensor count", specs.len())?.to_le_bytes());
    for spec in &specs {
        buf.extend_from_slice(&u32_of(path, "tensor name", spec.name.len())?.to_le_bytes());
        buf.extend_from_slice(spec.name.as_bytes());
        buf.extend_from_slice(&u32_of(path, "tensor rank", spec.shape.len())?.to_le_bytes());
        for &d in &spec.shape {
            buf.extend_from_slice(&u32_of(path, "tensor dimension", d)?.to_le_bytes());
        }
        for &v in params.tensor(spec) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Read a checkpoint; tensor names, shapes, and order must match the layout
/// its own config dictates.
pub fn read_checkpoint(path: &Path) -> Result<TsldParams, FileError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader::new(&bytes, path);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(FileError::BadMagic { path: path.to_path_buf() });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FileError::WrongVersion { path: path.to_path_buf(), found: version });
    }
    if r.u16()? != 0 {
        return Err(malformed(path, "nonzero reserved field"));
    }
    let config_len = r.u32()? as usize;
    let dto: CheckpointConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| malformed(path, e.to_string()))?;
    let cfg = dto.into_core();
    for (name, v) in [
        ("n_channels", cfg.n_channels),
        ("temporal_filters", cfg.temporal_filters),
        ("temporal_kernel", cfg.temporal_kernel),
        ("spatial_filters", cfg.spatial_filters),
        ("hidden", cfg.hidden),
        ("task_classes", cfg.task_classes),
        ("eye_classes", cfg.eye_classes),
    ] {
        if v > MAX_CONFIG_DIM {
            return Err(malformed(path, format!("config {name} too large: {v}")));
        }
    }
    let specs = tensor_specs(&cfg);
    let mut total: usize = 0;
    for spec in &specs {
        total = total
            .checked_add(spec.len())
            .filter(|&t| t <= MAX_PARAMS)
            .ok_or_else(|| malformed(path, "parameter count too large"))?;
    }
    let count = r.u32()? as usize;
    if count != specs.len() {
        return Err(malformed(
            path,
            format!("expected {} tensors, found {count}", specs.len()),
        ));
    }
    let mut data = Vec::with_capacity(total);
    for spec in &specs {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| malformed(path, "tensor name is not UTF-8"))?;
        if name != spec.name {
            return Err(malformed(path, format!("expected tensor {}, found {name}", spec.name)));
        }
        let rank = r.u32()? as usize;
        if rank != spec.shape.len() {
            return Err(malformed(path, format!("tensor {name}: wrong rank {rank}")));
        }
        for &d in &spec.shape {
            let found = r.u32()? as usize;
            if found != d {
                return Err(malformed(
                    path,
                    format!("tensor {name}: expected dimension {d}, found {found}"),
                ));
            }
        }
        let payload = r.take(spec.len() * 8)?;
        for chunk in payload.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(malformed(path, format!("non-finite value in tensor {name}")));
            }
            data.push(v);
        }
    }
    r.done()?;
    TsldParams::from_flat(&cfg, data).map_err(|e| malformed(path, e.to_string()))
}
