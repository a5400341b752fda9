//! Synthetic EEG sessions with known ground truth: band-limited task
//! signatures and eye-state alpha riding on pink noise, drift, powerline
//! hum, and blink artefacts. Difficulty scales the nuisance components
//! only, so difficulty zero renders the pure signatures.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::CodebookTable;
use crate::domain::{
    char_index, DomainError, EegRecording, EyeState, MentalTask, Paradigm, SessionDataset,
    StageSegment, ALPHABET, DIRECT_SAMPLES, STAGES_PER_CHARACTER, STAGE_SAMPLES,
};
use crate::mat::Mat;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("need at least 4 channels for the scalp groups, got {0}")]
    TooFewChannels(usize),
    #[error("sampling rate {0} Hz is too low for the signal bank")]
    BadSamplingRate(u32),
    #[error("session count must be 1..=6, got {0}")]
    BadSessions(usize),
    #[error("difficulty must be within [0, 1], got {0}")]
    BadDifficulty(f64),
    #[error("{0} must be finite and non-negative")]
    BadAmplitude(&'static str),
    #[error("probe needs at least one segment per class per session")]
    NoProbeReps,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Scalp regions as channel-index bands: the first quarter of the montage
/// is frontal, the next three eighths central, the last three eighths
/// occipital (channels 0-7, 8-19, 20-31 on a 32-channel cap).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelGroup {
    Frontal,
    Central,
    Occipital,
}

impl ChannelGroup {
    pub fn range(self, channels: usize) -> Range<usize> {
        let frontal_end = channels / 4;
        let occipital_start = channels - (3 * channels) / 8;
        match self {
            ChannelGroup::Frontal => 0..frontal_end,
            ChannelGroup::Central => frontal_end..occipital_start,
            ChannelGroup::Occipital => occipital_start..channels,
        }
    }
}

/// Generator knobs. Amplitudes are in the same arbitrary units the
/// recordings use; `difficulty` scales the nuisance amplitudes only.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_channels: usize,
    pub sampling_rate_hz: u32,
    /// How many of the six protocol sessions to render.
    pub sessions: usize,
    /// Nuisance scale in [0, 1]: 0 renders pure signatures.
    pub difficulty: f64,
    pub seed: u64,
    /// Task-signature tone amplitude (not difficulty-scaled).
    pub signature_amp: f64,
    /// Eyes-closed occipital alpha amplitude (not difficulty-scaled).
    pub alpha_amp: f64,
    pub noise_amp: f64,
    pub drift_amp: f64,
    pub powerline_amp: f64,
    pub blink_amp: f64,
    /// Order-probe segments per class per session.
    pub probe_reps: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_channels: 32,
            sampling_rate_hz: crate::domain::DEFAULT_SAMPLING_RATE_HZ,
            sessions: crate::domain::SESSIONS,
            difficulty: 0.5,
            seed: 0,
            signature_amp: 1.0,
            alpha_amp: 1.2,
            noise_amp: 1.0,
            drift_amp: 4.0,
            powerline_amp: 1.5,
            blink_amp: 6.0,
            probe_reps: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_channels < 4 {
            return Err(SynthError::TooFewChannels(self.n_channels));
        }
        if self.sampling_rate_hz < 128 {
            return Err(SynthError::BadSamplingRate(self.sampling_rate_hz));
        }
        if self.sessions == 0 || self.sessions > crate::domain::SESSIONS {
            return Err(SynthError::BadSessions(self.sessions));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(SynthError::BadDifficulty(self.difficulty));
        }
        for (name, amp) in [
            ("signature_amp", self.signature_amp),
            ("alpha_amp", self.alpha_amp),
            ("noise_amp", self.noise_amp),
            ("drift_amp", self.drift_amp),
            ("powerline_amp", self.powerline_amp),
            ("blink_amp", self.blink_amp),
        ] {
            if !(amp.is_finite() && amp >= 0.0) {
                return Err(SynthError::BadAmplitude(name));
            }
        }
        if self.probe_reps == 0 {
            return Err(SynthError::NoProbeReps);
        }
        Ok(())
    }
}

/// The (frequency, region) fingerprint each mental task leaves in the
/// 4-38 Hz band.
pub fn task_signature(task: MentalTask) -> (f64, ChannelGroup) {
    match task {
        MentalTask::FootImagery => (11.0, ChannelGroup::Central),
        MentalTask::TongueImagery => (23.0, ChannelGroup::Central),
        MentalTask::VisualImagery => (15.0, ChannelGroup::Occipital),
        MentalTask::Arithmetic => (7.0, ChannelGroup::Frontal),
    }
}

/// Eyes-closed occipital alpha frequency.
pub const ALPHA_HZ: f64 = 10.0;
const POWERLINE_HZ: f64 = 50.0;
const DRIFT_HZ: [f64; 2] = [0.25, 0.45];
/// Pink-noise sinusoid bank: component count and frequency range.
const NOISE_BANK: usize = 30;
const NOISE_BAND: (f64, f64) = (0.5, 45.0);
/// Blink artefacts stay inside the first and last `BLINK_EDGE` samples.
pub const BLINK_EDGE: usize = 128;
const BLINK_WIDTH: usize = 64;

/// Order-probe motif: three tone bursts whose order is the class cue.
pub const PROBE_FREQS_HZ: [f64; 3] = [8.0, 14.0, 20.0];
pub const PROBE_BURST_SAMPLES: usize = 200;
pub const PROBE_GAP_SAMPLES: usize = 56;
const PROBE_ANCHORS: [usize; 3] = [128, 604, 1080];

// Stream tags keep the component RNGs independent of draw order.
const TAG_NOISE: u64 = 1;
const TAG_DRIFT: u64 = 2;
const TAG_LINE: u64 = 3;
const TAG_BLINK: u64 = 4;
const TAG_SIGNAL: u64 = 5;
const TAG_SESSION: u64 = 6;
const TAG_STAGE: u64 = 7;
const TAG_DIRECT: u64 = 8;
const TAG_PROBE: u64 = 9;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, tags: [u64; 3]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn stream(seed: u64, tag: u64, lane: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, [tag, lane, 0]))
}

/// Within-group spatial taper so the montage has structure to unmix.
fn taper(i: usize, n: usize) -> f64 {
    0.6 + 0.4 * math::sin(PI * (i as f64 + 0.5) / n as f64)
}

/// Add `amp * sin(2*pi*freq*t/fs + phase)` to a row via the rotation
/// recurrence (no per-sample trig).
fn add_tone(row: &mut [f64], fs: f64, freq: f64, phase: f64, amp: f64) {
    let step = 2.0 * PI * freq / fs;
    let (mut s, mut c) = (math::sin(phase), math::cos(phase));
    let (ds, dc) = (math::sin(step), math::cos(step));
    for x in row {
        *x += amp * s;
        let ns = s * dc + c * ds;
        c = c * dc - s * ds;
        s = ns;
    }
}

/// Add a Hann-windowed tone burst over `row[start..start + len]`.
fn add_burst(row: &mut [f64], fs: f64, freq: f64, start: usize, len: usize, amp: f64) {
    let step = 2.0 * PI * freq / fs;
    let (mut s, mut c) = (0.0, 1.0);
    let (ds, dc) = (math::sin(step), math::cos(step));
    for (n, x) in row[start..start + len].iter_mut().enumerate() {
        let w = 0.5 * (1.0 - math::cos(2.0 * PI * n as f64 / (len - 1) as f64));
        *x += amp * w * s;
        let ns = s * dc + c * ds;
        c = c * dc - s * ds;
        s = ns;
    }
}

/// Pink noise, drift, and powerline hum on every channel, scaled by the
/// difficulty.
fn add_nuisance(data: &mut Mat, cfg: &SynthConfig, seed: u64) {
    let scale = cfg.difficulty;
    if scale == 0.0 {
        return;
    }
    let fs = cfg.sampling_rate_hz as f64;
    let (f_lo, f_hi) = NOISE_BAND;
    let df = (f_hi - f_lo) / (NOISE_BANK - 1) as f64;
    // Normalise the bank so the summed variance is noise_amp^2.
    let inv_sum: f64 = (0..NOISE_BANK).map(|k| 1.0 / (f_lo + k as f64 * df)).sum();
    let bank_norm = math::sqrt(2.0 / inv_sum);
    for ch in 0..data.rows() {
        let mut rng = stream(seed, TAG_NOISE, ch as u64);
        let row = data.row_mut(ch);
        for k in 0..NOISE_BANK {
            let f = f_lo + k as f64 * df;
            let amp = scale * cfg.noise_amp * bank_norm / math::sqrt(f);
            add_tone(row, fs, f, rng.gen_range(0.0..2.0 * PI), amp);
        }
    }
    let mut drift_rng = stream(seed, TAG_DRIFT, 0);
    let drift_phases = [drift_rng.gen_range(0.0..2.0 * PI), drift_rng.gen_range(0.0..2.0 * PI)];
    let mut line_rng = stream(seed, TAG_LINE, 0);
    let line_phase = line_rng.gen_range(0.0..2.0 * PI);
    for ch in 0..data.rows() {
        let line_gain: f64 = line_rng.gen_range(0.8..1.2);
        let row = data.row_mut(ch);
        for (f, phase) in DRIFT_HZ.iter().zip(drift_phases) {
            add_tone(row, fs, *f, phase, 0.5 * scale * cfg.drift_amp);
        }
        add_tone(row, fs, POWERLINE_HZ, line_phase, scale * cfg.powerline_amp * line_gain);
    }
}

/// Blink artefacts: one Hann bump inside each `BLINK_EDGE`-sample end of
/// the segment, on the frontal channels only.
fn add_blinks(data: &mut Mat, cfg: &SynthConfig, seed: u64) {
    let scale = cfg.difficulty;
    if scale == 0.0 {
        return;
    }
    let total = data.cols();
    let mut rng = stream(seed, TAG_BLINK, 0);
    let starts = [
        rng.gen_range(0..=BLINK_EDGE - BLINK_WIDTH),
        rng.gen_range(total - BLINK_EDGE..=total - BLINK_WIDTH),
    ];
    let group = ChannelGroup::Frontal.range(data.rows());
    let n = group.len();
    for (gi, ch) in group.enumerate() {
        let gain = scale * cfg.blink_amp * taper(gi, n);
        let row = data.row_mut(ch);
        for &start in &starts {
            for (k, x) in row[start..start + BLINK_WIDTH].iter_mut().enumerate() {
                let w = 0.5 * (1.0 - math::cos(2.0 * PI * k as f64 / (BLINK_WIDTH - 1) as f64));
                *x += gain * w;
            }
        }
    }
}

fn add_group_tone(data: &mut Mat, group: ChannelGroup, fs: f64, freq: f64, phase: f64, amp: f64) {
    let range = group.range(data.rows());
    let n = range.len();
    for (gi, ch) in range.enumerate() {
        let gain = amp * taper(gi, n);
        add_tone(data.row_mut(ch), fs, freq, phase, gain);
    }
}

/// One staged segment: nuisance, the task fingerprint, alpha when the eyes
/// are closed, blinks when they are open. `freq_shift` models the
/// session-to-session drift of the signature frequencies.
fn render_stage(cfg: &SynthConfig, task: MentalTask, eye: EyeState, seed: u64, freq_shift: f64) -> Mat {
    let fs = cfg.sampling_rate_hz as f64;
    let mut data = Mat::zeros(cfg.n_channels, STAGE_SAMPLES);
    add_nuisance(&mut data, cfg, seed);
    let mut sig_rng = stream(seed, TAG_SIGNAL, 0);
    let (freq, group) = task_signature(task);
    let phase = sig_rng.gen_range(0.0..2.0 * PI);
    add_group_tone(&mut data, group, fs, freq + freq_shift, phase, cfg.signature_amp);
    match eye {
        EyeState::Closed => {
            let phase = sig_rng.gen_range(0.0..2.0 * PI);
            add_group_tone(
                &mut data,
                ChannelGroup::Occipital,
                fs,
                ALPHA_HZ + freq_shift,
                phase,
                cfg.alpha_amp,
            );
        }
        EyeState::Open => add_blinks(&mut data, cfg, seed),
    }
    data
}

/// The direct paradigm's per-character fingerprint: a 6x6 grid of central
/// and occipital tone pairs.
pub fn direct_signature(char_idx: usize) -> [(f64, ChannelGroup); 2] {
    [
        (6.0 + 4.0 * (char_idx / 6) as f64, ChannelGroup::Central),
        (8.0 + 4.0 * (char_idx % 6) as f64, ChannelGroup::Occipital),
    ]
}

fn render_direct(cfg: &SynthConfig, char_idx: usize, seed: u64, freq_shift: f64) -> Mat {
    let fs = cfg.sampling_rate_hz as f64;
    let mut data = Mat::zeros(cfg.n_channels, DIRECT_SAMPLES);
    add_nuisance(&mut data, cfg, seed);
    let mut sig_rng = stream(seed, TAG_SIGNAL, 0);
    for (freq, group) in direct_signature(char_idx) {
        let phase = sig_rng.gen_range(0.0..2.0 * PI);
        add_group_tone(&mut data, group, fs, freq + freq_shift, phase, cfg.signature_amp);
    }
    data
}

/// Per-session montage gains and signature frequency drift.
fn session_profile(cfg: &SynthConfig, session: usize) -> (Vec<f64>, f64) {
    let mut rng = stream(cfg.seed, TAG_SESSION, session as u64);
    let gains = (0..cfg.n_channels).map(|_| rng.gen_range(0.9..1.1)).collect();
    let shift = rng.gen_range(-0.25..0.25);
    (gains, shift)
}

fn apply_gains(data: &mut Mat, gains: &[f64]) {
    for (ch, &g) in gains.iter().enumerate() {
        for x in data.row_mut(ch) {
            *x *= g;
        }
    }
}

/// One staged segment with unit montage gains and no frequency drift.
pub fn generate_stage(
    cfg: &SynthConfig,
    task: MentalTask,
    eye: EyeState,
    seed: u64,
) -> Result<EegRecording, SynthError> {
    cfg.validate()?;
    let data = render_stage(cfg, task, eye, seed, 0.0);
    Ok(EegRecording::new(data, cfg.sampling_rate_hz)?)
}

/// The full staged protocol: every configured session spells the whole
/// alphabet, three stages per character, with per-session montage gains
/// and signature drift.
pub fn generate_session_set(
    cfg: &SynthConfig,
    table: &CodebookTable,
) -> Result<SessionDataset, SynthError> {
    cfg.validate()?;
    let mut segments =
        Vec::with_capacity(cfg.sessions * table.entries().len() * STAGES_PER_CHARACTER);
    for session in 0..cfg.sessions {
        let (gains, shift) = session_profile(cfg, session);
        for entry in table.entries() {
            let ci = char_index(entry.character).expect("codebook characters are in the alphabet");
            for (stage, &(task, eye)) in entry.stages.iter().enumerate() {
                let seed = derive_seed(
                    cfg.seed,
                    [TAG_STAGE, session as u64, (ci * STAGES_PER_CHARACTER + stage) as u64],
                );
                let mut data = render_stage(cfg, task, eye, seed, shift);
                apply_gains(&mut data, &gains);
                let rec = EegRecording::new(data, cfg.sampling_rate_hz)?;
                segments.push(StageSegment::new(
                    rec,
                    task,
                    eye,
                    entry.character,
                    session as u8,
                    stage as u8,
                )?);
            }
        }
    }
    Ok(SessionDataset::new(Paradigm::MentalTask, segments)?)
}

/// The direct protocol: one long segment per character per session. The
/// task and eye fields on the segments are inert placeholders; direct
/// decoding uses only the character label.
pub fn generate_direct_set(cfg: &SynthConfig) -> Result<SessionDataset, SynthError> {
    cfg.validate()?;
    let mut segments = Vec::with_capacity(cfg.sessions * ALPHABET.len());
    for session in 0..cfg.sessions {
        let (gains, shift) = session_profile(cfg, session);
        for (ci, &character) in ALPHABET.iter().enumerate() {
            let seed = derive_seed(cfg.seed, [TAG_DIRECT, session as u64, ci as u64]);
            let mut data = render_direct(cfg, ci, seed, shift);
            apply_gains(&mut data, &gains);
            let rec = EegRecording::new(data, cfg.sampling_rate_hz)?;
            segments.push(StageSegment::new(
                rec,
                MentalTask::FootImagery,
                EyeState::Closed,
                character,
                session as u8,
                0,
            )?);
        }
    }
    Ok(SessionDataset::new(Paradigm::Direct, segments)?)
}

/// Burst schedule for one order-probe segment: `(start, frequency)` per
/// burst. Both classes play the same three bursts, class B in reverse
/// order; the anchor rotates with the repetition index so burst position
/// carries no class information.
pub fn probe_burst_schedule(class_b: bool, rep: usize) -> [(usize, f64); 3] {
    let anchor = PROBE_ANCHORS[rep % PROBE_ANCHORS.len()];
    let mut out = [(0, 0.0); 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let freq = if class_b { PROBE_FREQS_HZ[2 - k] } else { PROBE_FREQS_HZ[k] };
        *slot = (anchor + k * (PROBE_BURST_SAMPLES + PROBE_GAP_SAMPLES), freq);
    }
    out
}

/// Temporal-order probe corpus: two classes, 'A' and 'B', that differ only
/// in the order of the same three tone bursts. Labels ride on the task
/// field (foot for 'A', tongue for 'B'); the eye field is an inert
/// placeholder.
pub fn generate_order_probe(cfg: &SynthConfig) -> Result<SessionDataset, SynthError> {
    cfg.validate()?;
    let fs = cfg.sampling_rate_hz as f64;
    let mut segments = Vec::with_capacity(cfg.sessions * 2 * cfg.probe_reps);
    for session in 0..cfg.sessions {
        let (gains, shift) = session_profile(cfg, session);
        for class in 0..2u8 {
            for rep in 0..cfg.probe_reps {
                let seed = derive_seed(
                    cfg.seed,
                    [TAG_PROBE, session as u64, class as u64 * 4096 + rep as u64],
                );
                let mut data = Mat::zeros(cfg.n_channels, STAGE_SAMPLES);
                add_nuisance(&mut data, cfg, seed);
                for (start, freq) in probe_burst_schedule(class == 1, rep) {
                    let range = ChannelGroup::Central.range(cfg.n_channels);
                    let n = range.len();
                    for (gi, ch) in range.enumerate() {
                        add_burst(
                            data.row_mut(ch),
                            fs,
                            freq + shift,
                            start,
                            PROBE_BURST_SAMPLES,
                            cfg.signature_amp * taper(gi, n),
                        );
                    }
                }
                apply_gains(&mut data, &gains);
                let rec = EegRecording::new(data, cfg.sampling_rate_hz)?;
                let (task, character) = if class == 0 {
                    (MentalTask::FootImagery, 'A')
                } else {
                    (MentalTask::TongueImagery, 'B')
                };
                segments.push(StageSegment::new(
                    rec,
                    task,
                    EyeState::Closed,
                    character,
                    session as u8,
                    0,
                )?);
            }
        }
    }
    let ds = SessionDataset {
        paradigm: Paradigm::MentalTask,
        alphabet: alloc::vec!['A', 'B'],
        segments,
    };
    ds.validate_structure()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess_pipeline, PreprocessConfig};
    use proptest::prelude::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig { n_channels: 8, sessions: 2, ..Default::default() }
    }

    /// Mean-square power of the tone component at one frequency, via
    /// quadrature projection (exact for integer cycle counts).
    fn band_power(x: &[f64], fs: f64, freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &v) in x.iter().enumerate() {
            let w = 2.0 * PI * freq * n as f64 / fs;
            re += v * w.cos();
            im += v * w.sin();
        }
        2.0 * (re * re + im * im) / (x.len() * x.len()) as f64
    }

    #[test]
    fn stage_generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Open, 42).unwrap();
        let b = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Open, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Open, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.n_channels(), 8);
        assert_eq!(a.n_samples(), STAGE_SAMPLES);
    }

    #[test]
    fn blinks_stay_inside_the_segment_edges() {
        let with = SynthConfig { difficulty: 1.0, ..small_cfg() };
        let without = SynthConfig { blink_amp: 0.0, ..with.clone() };
        let a = generate_stage(&with, MentalTask::Arithmetic, EyeState::Open, 7).unwrap();
        let b = generate_stage(&without, MentalTask::Arithmetic, EyeState::Open, 7).unwrap();
        let mut saw_blink = false;
        for ch in 0..a.n_channels() {
            let (ra, rb) = (a.mat().row(ch), b.mat().row(ch));
            for t in 0..STAGE_SAMPLES {
                let diff = (ra[t] - rb[t]).abs();
                if diff > 0.0 {
                    saw_blink = true;
                    assert!(
                        t < BLINK_EDGE || t >= STAGE_SAMPLES - BLINK_EDGE,
                        "blink energy at sample {t}"
                    );
                    assert!(
                        ChannelGroup::Frontal.range(8).contains(&ch),
                        "blink energy on channel {ch}"
                    );
                }
            }
        }
        assert!(saw_blink);
    }

    #[test]
    fn closed_eyes_render_no_blinks() {
        let big = SynthConfig { difficulty: 1.0, blink_amp: 50.0, ..small_cfg() };
        let none = SynthConfig { blink_amp: 0.0, ..big.clone() };
        let a = generate_stage(&big, MentalTask::FootImagery, EyeState::Closed, 3).unwrap();
        let b = generate_stage(&none, MentalTask::FootImagery, EyeState::Closed, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn difficulty_zero_renders_the_pure_signature() {
        let cfg = SynthConfig { difficulty: 0.0, ..small_cfg() };
        let rec = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Open, 5).unwrap();
        let fs = cfg.sampling_rate_hz as f64;
        for ch in ChannelGroup::Frontal.range(8).chain(ChannelGroup::Occipital.range(8)) {
            assert!(rec.mat().row(ch).iter().all(|&x| x == 0.0), "channel {ch} not silent");
        }
        for ch in ChannelGroup::Central.range(8) {
            let row = rec.mat().row(ch);
            let total: f64 = row.iter().map(|&x| x * x).sum::<f64>() / row.len() as f64;
            let at_sig = band_power(row, fs, 11.0);
            assert!(at_sig > 0.0);
            assert!((at_sig / total - 1.0).abs() < 1e-3, "channel {ch} is impure");
        }
    }

    #[test]
    fn alpha_appears_only_with_closed_eyes() {
        let cfg = SynthConfig { difficulty: 0.0, ..small_cfg() };
        let fs = cfg.sampling_rate_hz as f64;
        let closed = generate_stage(&cfg, MentalTask::Arithmetic, EyeState::Closed, 9).unwrap();
        let open = generate_stage(&cfg, MentalTask::Arithmetic, EyeState::Open, 9).unwrap();
        let occ = ChannelGroup::Occipital.range(8);
        for ch in occ {
            assert!(band_power(closed.mat().row(ch), fs, ALPHA_HZ) > 0.1);
            assert!(open.mat().row(ch).iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn channel_groups_tile_the_montage() {
        assert_eq!(ChannelGroup::Frontal.range(32), 0..8);
        assert_eq!(ChannelGroup::Central.range(32), 8..20);
        assert_eq!(ChannelGroup::Occipital.range(32), 20..32);
        for c in 4..40 {
            let (f, m, o) = (
                ChannelGroup::Frontal.range(c),
                ChannelGroup::Central.range(c),
                ChannelGroup::Occipital.range(c),
            );
            assert!(!f.is_empty() && !m.is_empty() && !o.is_empty());
            assert_eq!(f.end, m.start);
            assert_eq!(m.end, o.start);
            assert_eq!(o.end, c);
        }
    }

    /// Standardisation rescales each channel, so retention is measured on
    /// the signature's share of channel power, not its absolute power.
    #[test]
    fn pipeline_retains_the_in_band_power_share() {
        let cfg = SynthConfig { difficulty: 0.5, ..small_cfg() };
        let fs = cfg.sampling_rate_hz as f64;
        let raw = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Closed, 21).unwrap();
        let clean = preprocess_pipeline(&raw, &PreprocessConfig::default()).unwrap();
        let share = |rec: &crate::domain::EegRecording, ch: usize| {
            let row = rec.mat().row(ch);
            let total: f64 = row.iter().map(|&x| x * x).sum::<f64>() / row.len() as f64;
            band_power(row, fs, 11.0) / total
        };
        for ch in ChannelGroup::Central.range(8) {
            assert!(
                share(&clean, ch) >= 0.5 * share(&raw, ch),
                "channel {ch} lost its signature share"
            );
        }
    }

    #[test]
    fn pipeline_keeps_the_signature_and_drops_the_hum() {
        let cfg = SynthConfig { difficulty: 1.0, ..small_cfg() };
        let fs = cfg.sampling_rate_hz as f64;
        let raw = generate_stage(&cfg, MentalTask::FootImagery, EyeState::Open, 11).unwrap();
        let clean = preprocess_pipeline(&raw, &PreprocessConfig::default()).unwrap();
        let ch = ChannelGroup::Central.range(8).next().unwrap();
        let pre_ratio = band_power(raw.mat().row(ch), fs, 11.0)
            / band_power(raw.mat().row(ch), fs, POWERLINE_HZ);
        let post_ratio = band_power(clean.mat().row(ch), fs, 11.0)
            / band_power(clean.mat().row(ch), fs, POWERLINE_HZ);
        assert!(post_ratio > 100.0, "hum survived: ratio {post_ratio}");
        assert!(post_ratio > 10.0 * pre_ratio);
    }

    #[test]
    fn session_set_is_complete_and_deterministic() {
        let cfg = small_cfg();
        let table = CodebookTable::default();
        let ds = generate_session_set(&cfg, &table).unwrap();
        assert_eq!(ds.segments.len(), 2 * 36 * 3);
        ds.validate_complete().unwrap();
        let again = generate_session_set(&cfg, &table).unwrap();
        assert_eq!(ds, again);
        // Montage gains and frequency drift separate the sessions.
        let a = ds.stage_triple(0, 'A').unwrap();
        let b = ds.stage_triple(1, 'A').unwrap();
        assert_ne!(a[0].recording, b[0].recording);
    }

    #[test]
    fn direct_set_is_complete_with_long_segments() {
        let cfg = small_cfg();
        let ds = generate_direct_set(&cfg).unwrap();
        assert_eq!(ds.segments.len(), 2 * 36);
        assert_eq!(ds.segments[0].recording.n_samples(), DIRECT_SAMPLES);
        ds.validate_complete().unwrap();
    }

    #[test]
    fn probe_schedules_reverse_between_classes_and_rotate() {
        for rep in 0..6 {
            let a = probe_burst_schedule(false, rep);
            let b = probe_burst_schedule(true, rep);
            for k in 0..3 {
                assert_eq!(a[k].0, b[k].0, "offsets must match across classes");
                assert_eq!(a[k].1, b[2 - k].1, "class B must reverse the tones");
            }
            let gap = a[1].0 - a[0].0;
            assert_eq!(gap, PROBE_BURST_SAMPLES + PROBE_GAP_SAMPLES);
            assert!(a[2].0 + PROBE_BURST_SAMPLES <= STAGE_SAMPLES);
        }
        assert_ne!(probe_burst_schedule(false, 0)[0].0, probe_burst_schedule(false, 1)[0].0);
    }

    #[test]
    fn probe_bursts_land_where_scheduled() {
        let cfg = SynthConfig { difficulty: 0.0, ..small_cfg() };
        let ds = generate_order_probe(&cfg).unwrap();
        let fs = cfg.sampling_rate_hz as f64;
        let seg = &ds.segments[0];
        let rep = 0;
        let ch = ChannelGroup::Central.range(8).next().unwrap();
        let row = seg.recording.mat().row(ch);
        for (start, freq) in probe_burst_schedule(false, rep) {
            let inside = band_power(&row[start..start + PROBE_BURST_SAMPLES], fs, freq);
            let after = start + PROBE_BURST_SAMPLES;
            let outside = band_power(&row[after..after + PROBE_BURST_SAMPLES], fs, freq);
            assert!(inside > 10.0 * outside, "burst at {freq} Hz not localised");
        }
    }

    #[test]
    fn probe_classes_have_matching_spectra() {
        let cfg = SynthConfig { difficulty: 0.0, probe_reps: 6, ..small_cfg() };
        let ds = generate_order_probe(&cfg).unwrap();
        assert_eq!(ds.segments.len(), 2 * 2 * 6);
        let fs = cfg.sampling_rate_hz as f64;
        let mean_power = |character: char, freq: f64| -> f64 {
            let mut total = 0.0;
            let mut count = 0;
            for seg in ds.segments.iter().filter(|s| s.character == character) {
                for ch in ChannelGroup::Central.range(8) {
                    total += band_power(seg.recording.mat().row(ch), fs, freq);
                    count += 1;
                }
            }
            total / count as f64
        };
        for f in PROBE_FREQS_HZ {
            let (a, b) = (mean_power('A', f), mean_power('B', f));
            let rel = (a - b).abs() / a.max(b);
            assert!(rel < 0.02, "class spectra differ by {rel} at {f} Hz");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn any_stage_is_finite_and_deterministic(
            channels in 4usize..12,
            difficulty in 0.0f64..=1.0,
            seed in any::<u64>(),
            task_code in 0u8..4,
            open in any::<bool>(),
        ) {
            let cfg = SynthConfig { n_channels: channels, difficulty, ..Default::default() };
            let task = MentalTask::from_code(task_code).unwrap();
            let eye = if open { EyeState::Open } else { EyeState::Closed };
            let a = generate_stage(&cfg, task, eye, seed).unwrap();
            prop_assert_eq!(a.n_channels(), channels);
            prop_assert_eq!(a.n_samples(), STAGE_SAMPLES);
            prop_assert!(a.mat().is_finite());
            let b = generate_stage(&cfg, task, eye, seed).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
