//! Signal conditioning applied to every recording before the network sees
//! it: linear detrend, 4–38 Hz zero-phase band-pass, common average
//! reference, exponential moving standardization.

pub mod filter;

use alloc::vec::Vec;

use crate::domain::{DomainError, EegRecording};
use crate::mat::Mat;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("band edges {low}..{high} Hz invalid for sampling rate {fs} Hz")]
    BadBand { low: f64, high: f64, fs: u32 },
    #[error("filter order must be at least 1")]
    BadOrder,
    #[error("standardization decay must lie in (0, 1), got {0}")]
    BadDecay(f64),
    #[error("standardization floor must be positive, got {0}")]
    BadFloor(f64),
    #[error("input too short: need more than {needed} samples, found {found}")]
    InputTooShort { needed: usize, found: usize },
    #[error("common average reference needs at least two channels, found {0}")]
    TooFewChannels(usize),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Knobs for the conditioning chain. Defaults match the recording protocol
/// at 256 Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    /// Forgetting factor of the moving mean/variance.
    pub ems_alpha: f64,
    /// Lower bound on the moving standard deviation.
    pub ems_eps: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low_hz: 4.0,
            band_high_hz: 38.0,
            filter_order: 4,
            ems_alpha: 1e-3,
            ems_eps: 1e-4,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, sampling_rate_hz: u32) -> Result<(), PreprocessError> {
        let nyquist = sampling_rate_hz as f64 / 2.0;
        if !(self.band_low_hz > 0.0
            && self.band_low_hz < self.band_high_hz
            && self.band_high_hz < nyquist)
        {
            return Err(PreprocessError::BadBand {
                low: self.band_low_hz,
                high: self.band_high_hz,
                fs: sampling_rate_hz,
            });
        }
        if self.filter_order == 0 {
            return Err(PreprocessError::BadOrder);
        }
        if !(self.ems_alpha > 0.0 && self.ems_alpha < 1.0) {
            return Err(PreprocessError::BadDecay(self.ems_alpha));
        }
        if !(self.ems_eps > 0.0) {
            return Err(PreprocessError::BadFloor(self.ems_eps));
        }
        Ok(())
    }
}

/// Remove each channel's least-squares line over the sample index.
pub fn detrend(rec: &EegRecording) -> Result<EegRecording, PreprocessError> {
    let t = rec.n_samples();
    if t < 2 {
        return Err(PreprocessError::InputTooShort { needed: 1, found: t });
    }
    let t_mean = (t as f64 - 1.0) / 2.0;
    // sum over (i - t_mean)^2 has the closed form T (T² - 1) / 12.
    let sxx = t as f64 * (t as f64 * t as f64 - 1.0) / 12.0;
    let mut out = Mat::zeros(rec.n_channels(), t);
    for c in 0..rec.n_channels() {
        let x = rec.channel(c);
        let mean = x.iter().sum::<f64>() / t as f64;
        let mut sxy = 0.0;
        for (i, &v) in x.iter().enumerate() {
            sxy += (i as f64 - t_mean) * (v - mean);
        }
        let slope = sxy / sxx;
        let intercept = mean - slope * t_mean;
        let row = out.row_mut(c);
        for (i, (&v, o)) in x.iter().zip(row.iter_mut()).enumerate() {
            *o = v - (slope * i as f64 + intercept);
        }
    }
    Ok(rec.with_data(out)?)
}

/// Zero-phase Butterworth band-pass over every channel.
pub fn bandpass(
    rec: &EegRecording,
    cfg: &PreprocessConfig,
) -> Result<EegRecording, PreprocessError> {
    cfg.validate(rec.sampling_rate_hz())?;
    let sections = filter::butterworth_bandpass(
        cfg.filter_order,
        cfg.band_low_hz,
        cfg.band_high_hz,
        rec.sampling_rate_hz() as f64,
    );
    let needed = filter::pad_len(&sections);
    let mut out = Mat::zeros(rec.n_channels(), rec.n_samples());
    for c in 0..rec.n_channels() {
        let y = filter::filtfilt(&sections, rec.channel(c)).ok_or(
            PreprocessError::InputTooShort { needed, found: rec.n_samples() },
        )?;
        out.row_mut(c).copy_from_slice(&y);
    }
    Ok(rec.with_data(out)?)
}

/// Subtract the instantaneous cross-channel mean from every channel.
pub fn common_average_reference(rec: &EegRecording) -> Result<EegRecording, PreprocessError> {
    let channels = rec.n_channels();
    if channels < 2 {
        return Err(PreprocessError::TooFewChannels(channels));
    }
    let t = rec.n_samples();
    let mut mean = Vec::with_capacity(t);
    mean.resize(t, 0.0);
    for c in 0..channels {
        for (m, &v) in mean.iter_mut().zip(rec.channel(c)) {
            *m += v;
        }
    }
    let inv = 1.0 / channels as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    let mut out = Mat::zeros(channels, t);
    for c in 0..channels {
        let row = out.row_mut(c);
        for ((o, &v), &m) in row.iter_mut().zip(rec.channel(c)).zip(mean.iter()) {
            *o = v - m;
        }
    }
    Ok(rec.with_data(out)?)
}

/// Exponential moving standardization, per channel.
///
/// Running sums are weight-normalised so early samples see their true
/// (short) history instead of a zero-initialised one: with d = 1 - alpha,
///
/// ```text
/// w_t = 1 + d w_{t-1}        (weight mass)
/// s_t = x_t + d s_{t-1}      (weighted sum)       m_t = s_t / w_t
/// q_t = (x_t - m_t)² + d q_{t-1}                  v_t = q_t / w_t
/// y_t = (x_t - m_t) / max(sqrt(v_t), eps)
/// ```
///
/// The first sample is therefore exactly zero (its mean is itself).
pub fn exp_moving_standardize(
    rec: &EegRecording,
    cfg: &PreprocessConfig,
) -> Result<EegRecording, PreprocessError> {
    cfg.validate(rec.sampling_rate_hz())?;
    let d = 1.0 - cfg.ems_alpha;
    let mut out = Mat::zeros(rec.n_channels(), rec.n_samples());
    for c in 0..rec.n_channels() {
        let row = out.row_mut(c);
        let (mut w, mut s, mut q) = (0.0, 0.0, 0.0);
        for (&x, o) in rec.channel(c).iter().zip(row.iter_mut()) {
            w = 1.0 + d * w;
            s = x + d * s;
            let m = s / w;
            let dev = x - m;
            q = dev * dev + d * q;
            let v = q / w;
            *o = dev / math::sqrt(v).max(cfg.ems_eps);
        }
    }
    Ok(rec.with_data(out)?)
}

/// Stages of [`preprocess_pipeline`], in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineStage {
    Detrended,
    Bandpassed,
    Referenced,
    Standardized,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 4] = [
        PipelineStage::Detrended,
        PipelineStage::Bandpassed,
        PipelineStage::Referenced,
        PipelineStage::Standardized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::Detrended => "detrended",
            PipelineStage::Bandpassed => "bandpassed",
            PipelineStage::Referenced => "referenced",
            PipelineStage::Standardized => "standardized",
        }
    }
}

/// The full conditioning chain: detrend, band-pass, common average
/// reference, moving standardization.
pub fn preprocess_pipeline(
    rec: &EegRecording,
    cfg: &PreprocessConfig,
) -> Result<EegRecording, PreprocessError> {
    preprocess_pipeline_with(rec, cfg, |_, _| {})
}

/// Same as [`preprocess_pipeline`] but calls `inspect` with each
/// intermediate result, for debugging and stage dumps.
pub fn preprocess_pipeline_with(
    rec: &EegRecording,
    cfg: &PreprocessConfig,
    mut inspect: impl FnMut(PipelineStage, &EegRecording),
) -> Result<EegRecording, PreprocessError> {
    let stage = detrend(rec)?;
    inspect(PipelineStage::Detrended, &stage);
    let stage = bandpass(&stage, cfg)?;
    inspect(PipelineStage::Bandpassed, &stage);
    let stage = common_average_reference(&stage)?;
    inspect(PipelineStage::Referenced, &stage);
    let stage = exp_moving_standardize(&stage, cfg)?;
    inspect(PipelineStage::Standardized, &stage);
    Ok(stage)
}
