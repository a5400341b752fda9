//! Run configuration: one TOML file, every key defaulted, flags win.
//!
//! Unknown keys are rejected so a typo cannot silently fall back to a
//! default. Every command prints the fully resolved configuration, which
//! parses back to the same run.

use std::fs;
use std::path::{Path, PathBuf};

use mindspell_core::decoder::DecoderSettings;
use mindspell_core::preprocess::PreprocessConfig;
use mindspell_core::synth::SynthConfig;
use mindspell_core::tsld::{TrainSettings, TsldConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs, merged from defaults, file, and flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub decoder: DecoderSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Defaults when `path` is `None`; otherwise the parsed file over the
    /// defaults, section by section.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// The full configuration as TOML, for reproducible logs.
    pub fn resolved(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// File locations; flags override each entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Dataset directory most commands read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Checkpoint file for decode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Output file or directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Codebook CSV; the built-in table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codebook: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub channels: usize,
    pub sampling_rate_hz: u32,
    pub sessions: usize,
    pub difficulty: f64,
    pub seed: u64,
    pub signature_amp: f64,
    pub alpha_amp: f64,
    pub noise_amp: f64,
    pub drift_amp: f64,
    pub powerline_amp: f64,
    pub blink_amp: f64,
    pub probe_reps: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        SynthSection {
            channels: c.n_channels,
            sampling_rate_hz: c.sampling_rate_hz,
            sessions: c.sessions,
            difficulty: c.difficulty,
            seed: c.seed,
            signature_amp: c.signature_amp,
            alpha_amp: c.alpha_amp,
            noise_amp: c.noise_amp,
            drift_amp: c.drift_amp,
            powerline_amp: c.powerline_amp,
            blink_amp: c.blink_amp,
            probe_reps: c.probe_reps,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SynthConfig {
        SynthConfig {
            n_channels: self.channels,
            sampling_rate_hz: self.sampling_rate_hz,
            sessions: self.sessions,
            difficulty: self.difficulty,
            seed: self.seed,
            signature_amp: self.signature_amp,
            alpha_amp: self.alpha_amp,
            noise_amp: self.noise_amp,
            drift_amp: self.drift_amp,
            powerline_amp: self.powerline_amp,
            blink_amp: self.blink_amp,
            probe_reps: self.probe_reps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub ems_alpha: f64,
    pub ems_eps: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let c = PreprocessConfig::default();
        PreprocessSection {
            band_low_hz: c.band_low_hz,
            band_high_hz: c.band_high_hz,
            filter_order: c.filter_order,
            ems_alpha: c.ems_alpha,
            ems_eps: c.ems_eps,
        }
    }
}

impl PreprocessSection {
    pub fn to_core(&self) -> PreprocessConfig {
        PreprocessConfig {
            band_low_hz: self.band_low_hz,
            band_high_hz: self.band_high_hz,
            filter_order: self.filter_order,
            ems_alpha: self.ems_alpha,
            ems_eps: self.ems_eps,
        }
    }
}

/// Architecture knobs. Channel count, class counts, and head layout come
/// from the dataset and flags, not from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub temporal_filters: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub tied_temporal: bool,
    pub spatial_filters: usize,
    pub hidden: usize,
    pub use_gru: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let c = TsldConfig::default();
        NetworkSection {
            temporal_filters: c.temporal_filters,
            temporal_kernel: c.temporal_kernel,
            temporal_stride: c.temporal_stride,
            tied_temporal: c.tied_temporal,
            spatial_filters: c.spatial_filters,
            hidden: c.hidden,
            use_gru: c.use_gru,
        }
    }
}

impl NetworkSection {
    pub fn to_core(&self, n_channels: usize, task_classes: usize, direct_mode: bool) -> TsldConfig {
        TsldConfig {
            n_channels,
            temporal_filters: self.temporal_filters,
            temporal_kernel: self.temporal_kernel,
            temporal_stride: self.temporal_stride,
            tied_temporal: self.tied_temporal,
            spatial_filters: self.spatial_filters,
            hidden: self.hidden,
            task_classes,
            eye_classes: mindspell_core::EyeState::ALL.len(),
            direct_mode,
            use_gru: self.use_gru,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub window_len: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainSettings::default();
        TrainSection {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            window_len: c.window_len,
            seed: c.seed,
            jobs: c.jobs,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            window_len: self.window_len,
            seed: self.seed,
            jobs: self.jobs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub window_len: usize,
    pub shift: usize,
    pub include_tail: bool,
    pub soft_vote: bool,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let c = DecoderSettings::default();
        DecoderSection {
            window_len: c.window_len,
            shift: c.shift,
            include_tail: c.include_tail,
            soft_vote: c.soft_vote,
        }
    }
}

impl DecoderSection {
    pub fn to_core(&self) -> DecoderSettings {
        DecoderSettings {
            window_len: self.window_len,
            shift: self.shift,
            include_tail: self.include_tail,
            soft_vote: self.soft_vote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Training seeds; every cross-validation fold runs once per seed.
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { seeds: vec![0, 1, 2] }
    }
}
