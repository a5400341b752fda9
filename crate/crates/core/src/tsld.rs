//! The TSLD network: temporal convolution, spatial mixing, a GRU over the
//! step sequence, and per-step task / eye classifier heads whose softmax
//! outputs are averaged over time.
//!
//! Parameters live in one flat `f64` vector with a named-tensor layout, so
//! the optimiser, checkpoint IO and finite-difference checks all operate on
//! the same buffer. Gradients are computed analytically by [`backward`];
//! [`train`] runs Adam over randomly offset windows.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{char_index, EyeState, LabeledWindow, StageSegment};
use crate::mat::Mat;
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TsldError {
    #[error("configuration: {0}")]
    BadConfig(&'static str),
    #[error("window has {found} channels, network expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("window of {found} samples is shorter than the {kernel}-sample kernel")]
    WindowTooShort { kernel: usize, found: usize },
    #[error("segment of {found} samples cannot fit a {window}-sample training window")]
    SegmentTooShort { window: usize, found: usize },
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("staged-paradigm training window is missing its eye label")]
    MissingEyeLabel,
    #[error("non-finite activation at step {step}")]
    NonFinite { step: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("parameter vector has {found} values, layout needs {expected}")]
    ParamSize { expected: usize, found: usize },
    #[error("checkpoint tensor {0:?} does not fit this configuration")]
    UnknownTensor(alloc::string::String),
    #[error("no training segments")]
    EmptyTrainingSet,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsldConfig {
    pub n_channels: usize,
    /// Temporal filters per channel (F).
    pub temporal_filters: usize,
    /// Temporal kernel length in samples.
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    /// One kernel bank shared by all channels when true.
    pub tied_temporal: bool,
    /// Spatial mixing outputs (F').
    pub spatial_filters: usize,
    /// GRU (or adapter) state size.
    pub hidden: usize,
    pub task_classes: usize,
    pub eye_classes: usize,
    /// Single 36-way task head, no eye head.
    pub direct_mode: bool,
    /// Replace the GRU with a per-step linear adapter when false.
    pub use_gru: bool,
}

impl Default for TsldConfig {
    fn default() -> Self {
        TsldConfig {
            n_channels: 32,
            temporal_filters: 16,
            temporal_kernel: 25,
            temporal_stride: 1,
            tied_temporal: true,
            spatial_filters: 16,
            hidden: 32,
            task_classes: 4,
            eye_classes: 2,
            direct_mode: false,
            use_gru: true,
        }
    }
}

impl TsldConfig {
    /// The default architecture for the direct paradigm: one 36-way head.
    pub fn direct_default() -> Self {
        TsldConfig { task_classes: 36, direct_mode: true, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TsldError> {
        if self.n_channels == 0 {
            return Err(TsldError::BadConfig("n_channels must be at least 1"));
        }
        if self.temporal_filters == 0 || self.spatial_filters == 0 || self.hidden == 0 {
            return Err(TsldError::BadConfig("filter and hidden sizes must be at least 1"));
        }
        if self.temporal_kernel == 0 || self.temporal_stride == 0 {
            return Err(TsldError::BadConfig("kernel and stride must be at least 1"));
        }
        if self.task_classes < 2 {
            return Err(TsldError::BadConfig("task head needs at least 2 classes"));
        }
        if !self.direct_mode && self.eye_classes != 2 {
            return Err(TsldError::BadConfig("eye head is binary"));
        }
        Ok(())
    }

    /// Steps the temporal convolution produces for a `t`-sample window.
    pub fn conv_steps(&self, t: usize) -> Result<usize, TsldError> {
        if t < self.temporal_kernel {
            return Err(TsldError::WindowTooShort { kernel: self.temporal_kernel, found: t });
        }
        Ok((t - self.temporal_kernel) / self.temporal_stride + 1)
    }

    fn has_eye_head(&self) -> bool {
        !self.direct_mode
    }
}

/// One tensor's slot in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in of the uniform initialiser; 0 means zero-initialised.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The named-tensor layout of the flat parameter vector, in storage order.
pub fn tensor_specs(cfg: &TsldConfig) -> Vec<TensorSpec> {
    let (c, f, k) = (cfg.n_channels, cfg.temporal_filters, cfg.temporal_kernel);
    let (fp, h) = (cfg.spatial_filters, cfg.hidden);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut push = |name: &'static str, shape: Vec<usize>, fan_in: usize| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec { name, shape, offset, fan_in });
        offset += len;
    };

    if cfg.tied_temporal {
        push("temporal_w", vec![f, k], k);
    } else {
        push("temporal_w", vec![c, f, k], k);
    }
    push("temporal_b", vec![f], 0);
    push("spatial_w", vec![fp, c, f], c * f);
    push("spatial_b", vec![fp], 0);
    if cfg.use_gru {
        push("gru_wz", vec![h, fp], fp);
        push("gru_uz", vec![h, h], h);
        push("gru_bz", vec![h], 0);
        push("gru_wr", vec![h, fp], fp);
        push("gru_ur", vec![h, h], h);
        push("gru_br", vec![h], 0);
        push("gru_wh", vec![h, fp], fp);
        push("gru_uh", vec![h, h], h);
        push("gru_bh", vec![h], 0);
    } else {
        push("adapter_w", vec![h, fp], fp);
        push("adapter_b", vec![h], 0);
    }
    push("task_w", vec![cfg.task_classes, h], h);
    push("task_b", vec![cfg.task_classes], 0);
    if cfg.has_eye_head() {
        push("eye_w", vec![cfg.eye_classes, h], h);
        push("eye_b", vec![cfg.eye_classes], 0);
    }
    specs
}

/// Total parameter count of a configuration.
pub fn param_count(cfg: &TsldConfig) -> usize {
    tensor_specs(cfg).iter().map(TensorSpec::len).sum()
}

/// Network parameters: a configuration plus its flat value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TsldParams {
    cfg: TsldConfig,
    data: Vec<f64>,
}

fn take<'a>(data: &mut &'a [f64], n: usize) -> &'a [f64] {
    let (head, tail) = data.split_at(n);
    *data = tail;
    head
}

/// Borrowed per-tensor slices in layout order. Slices of absent tensors are
/// empty.
struct Views<'a> {
    tw: &'a [f64],
    tb: &'a [f64],
    sw: &'a [f64],
    sb: &'a [f64],
    wz: &'a [f64],
    uz: &'a [f64],
    bz: &'a [f64],
    wr: &'a [f64],
    ur: &'a [f64],
    br: &'a [f64],
    wh: &'a [f64],
    uh: &'a [f64],
    bh: &'a [f64],
    aw: &'a [f64],
    ab: &'a [f64],
    kw: &'a [f64],
    kb: &'a [f64],
    ew: &'a [f64],
    eb: &'a [f64],
}

fn views<'a>(cfg: &TsldConfig, mut data: &'a [f64]) -> Views<'a> {
    let (c, f, k) = (cfg.n_channels, cfg.temporal_filters, cfg.temporal_kernel);
    let (fp, h) = (cfg.spatial_filters, cfg.hidden);
    let banks = if cfg.tied_temporal { 1 } else { c };
    let tw = take(&mut data, banks * f * k);
    let tb = take(&mut data, f);
    let sw = take(&mut data, fp * c * f);
    let sb = take(&mut data, fp);
    let (wz, uz, bz, wr, ur, br, wh, uh, bh, aw, ab);
    if cfg.use_gru {
        wz = take(&mut data, h * fp);
        uz = take(&mut data, h * h);
        bz = take(&mut data, h);
        wr = take(&mut data, h * fp);
        ur = take(&mut data, h * h);
        br = take(&mut data, h);
        wh = take(&mut data, h * fp);
        uh = take(&mut data, h * h);
        bh = take(&mut data, h);
        aw = &data[..0];
        ab = &data[..0];
    } else {
        wz = &data[..0];
        uz = &data[..0];
        bz = &data[..0];
        wr = &data[..0];
        ur = &data[..0];
        br = &data[..0];
        wh = &data[..0];
        uh = &data[..0];
        bh = &data[..0];
        aw = take(&mut data, h * fp);
        ab = take(&mut data, h);
    }
    let kw = take(&mut data, cfg.task_classes * h);
    let kb = take(&mut data, cfg.task_classes);
    let (ew, eb) = if cfg.has_eye_head() {
        (take(&mut data, cfg.eye_classes * h), take(&mut data, cfg.eye_classes))
    } else {
        (&data[..0], &data[..0])
    };
    debug_assert!(data.is_empty());
    Views { tw, tb, sw, sb, wz, uz, bz, wr, ur, br, wh, uh, bh, aw, ab, kw, kb, ew, eb }
}

impl TsldParams {
    /// Fresh parameters: weights uniform in ±1/sqrt(fan_in), biases zero,
    /// drawn from a counter-based stream so the same seed always gives the
    /// same values on every platform.
    pub fn init(cfg: &TsldConfig, seed: u64) -> Result<Self, TsldError> {
        cfg.validate()?;
        let specs = tensor_specs(cfg);
        let total: usize = specs.iter().map(TensorSpec::len).sum();
        let mut data = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &specs {
            if spec.fan_in == 0 {
                continue;
            }
            let bound = 1.0 / math::sqrt(spec.fan_in as f64);
            for v in &mut data[spec.offset..spec.offset + spec.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(TsldParams { cfg: *cfg, data })
    }

    /// Wrap an existing flat vector (checkpoint restore).
    pub fn from_flat(cfg: &TsldConfig, data: Vec<f64>) -> Result<Self, TsldError> {
        cfg.validate()?;
        let expected = param_count(cfg);
        if data.len() != expected {
            return Err(TsldError::ParamSize { expected, found: data.len() });
        }
        Ok(TsldParams { cfg: *cfg, data })
    }

    pub fn config(&self) -> &TsldConfig {
        &self.cfg
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The tensor named by `spec` within this parameter vector.
    pub fn tensor(&self, spec: &TensorSpec) -> &[f64] {
        &self.data[spec.offset..spec.offset + spec.len()]
    }
}

/// Everything the backward pass needs from one forward run.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Mat,
    /// Steps after the temporal convolution (T').
    pub steps: usize,
    /// Temporal-convolution output, row (channel * F + filter), length T'.
    conv: Vec<f64>,
    /// Spatial-mixing output, row per spatial filter, length T'.
    mixed: Vec<f64>,
    /// GRU gate activations, step-major [T', H]; empty without the GRU.
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    /// Recurrent (or adapter) state, step-major [T', H].
    hidden: Vec<f64>,
    /// Per-step softmax outputs, step-major [T', classes].
    task_probs: Vec<f64>,
    eye_probs: Vec<f64>,
    /// Temporal averages of the per-step softmax outputs.
    pub task_mean: Vec<f64>,
    pub eye_mean: Vec<f64>,
}

impl ForwardTrace {
    /// Task probabilities of step `t`.
    pub fn task_probs_at(&self, t: usize) -> &[f64] {
        let k = self.task_mean.len();
        &self.task_probs[t * k..(t + 1) * k]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(acc: &mut [f64], scale: f64, src: &[f64]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a += scale * s;
    }
}

/// In-place stable softmax.
fn softmax(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Run the network over one window (channels x samples).
pub fn forward(window: &Mat, params: &TsldParams) -> Result<ForwardTrace, TsldError> {
    let cfg = &params.cfg;
    if window.rows() != cfg.n_channels {
        return Err(TsldError::ChannelMismatch {
            expected: cfg.n_channels,
            found: window.rows(),
        });
    }
    let steps = cfg.conv_steps(window.cols())?;
    let v = views(cfg, &params.data);
    let (c, f, k, s) = (
        cfg.n_channels,
        cfg.temporal_filters,
        cfg.temporal_kernel,
        cfg.temporal_stride,
    );
    let (fp, h) = (cfg.spatial_filters, cfg.hidden);
    let (kt, ke) = (cfg.task_classes, cfg.eye_classes);

    // Temporal convolution, valid region only.
    let mut conv = vec![0.0; c * f * steps];
    for ch in 0..c {
        let x = window.row(ch);
        for fi in 0..f {
            let bank = if cfg.tied_temporal { fi } else { ch * f + fi };
            let w = &v.tw[bank * k..(bank + 1) * k];
            let b = v.tb[fi];
            let out = &mut conv[(ch * f + fi) * steps..(ch * f + fi + 1) * steps];
            for (t, o) in out.iter_mut().enumerate() {
                *o = b + dot(&x[t * s..t * s + k], w);
            }
        }
    }

    // Spatial mixing across all (channel, filter) rows, per step.
    let cf = c * f;
    let mut mixed = vec![0.0; fp * steps];
    for g in 0..fp {
        let row = &mut mixed[g * steps..(g + 1) * steps];
        row.fill(v.sb[g]);
        let wrow = &v.sw[g * cf..(g + 1) * cf];
        for (i, &wv) in wrow.iter().enumerate() {
            axpy(row, wv, &conv[i * steps..(i + 1) * steps]);
        }
    }

    // Recurrence over steps.
    let gru = cfg.use_gru;
    let mut z = vec![0.0; if gru { steps * h } else { 0 }];
    let mut r = vec![0.0; if gru { steps * h } else { 0 }];
    let mut cand = vec![0.0; if gru { steps * h } else { 0 }];
    let mut hidden = vec![0.0; steps * h];
    let mut task_probs = vec![0.0; steps * kt];
    let mut eye_probs = vec![0.0; if cfg.has_eye_head() { steps * ke } else { 0 }];
    let mut task_mean = vec![0.0; kt];
    let mut eye_mean = vec![0.0; if cfg.has_eye_head() { ke } else { 0 }];

    let mut u = vec![0.0; fp];
    let mut h_prev = vec![0.0; h];
    let mut rh = vec![0.0; h];
    for t in 0..steps {
        for (g, uv) in u.iter_mut().enumerate() {
            *uv = mixed[g * steps + t];
        }
        {
            let ht = &mut hidden[t * h..(t + 1) * h];
            if gru {
                let zt = &mut z[t * h..(t + 1) * h];
                let rt = &mut r[t * h..(t + 1) * h];
                let ct = &mut cand[t * h..(t + 1) * h];
                for j in 0..h {
                    zt[j] = math::sigmoid(
                        v.bz[j] + dot(&v.wz[j * fp..(j + 1) * fp], &u)
                            + dot(&v.uz[j * h..(j + 1) * h], &h_prev),
                    );
                    rt[j] = math::sigmoid(
                        v.br[j] + dot(&v.wr[j * fp..(j + 1) * fp], &u)
                            + dot(&v.ur[j * h..(j + 1) * h], &h_prev),
                    );
                }
                for j in 0..h {
                    rh[j] = rt[j] * h_prev[j];
                }
                for j in 0..h {
                    ct[j] = math::tanh(
                        v.bh[j] + dot(&v.wh[j * fp..(j + 1) * fp], &u)
                            + dot(&v.uh[j * h..(j + 1) * h], &rh),
                    );
                    ht[j] = (1.0 - zt[j]) * h_prev[j] + zt[j] * ct[j];
                }
            } else {
                for j in 0..h {
                    ht[j] = v.ab[j] + dot(&v.aw[j * fp..(j + 1) * fp], &u);
                }
            }
            if ht.iter().any(|x| !x.is_finite()) {
                return Err(TsldError::NonFinite { step: t });
            }
            h_prev.copy_from_slice(ht);

            let tp = &mut task_probs[t * kt..(t + 1) * kt];
            for (cl, o) in tp.iter_mut().enumerate() {
                *o = v.kb[cl] + dot(&v.kw[cl * h..(cl + 1) * h], ht);
            }
            softmax(tp);
            for (m, &p) in task_mean.iter_mut().zip(tp.iter()) {
                *m += p;
            }
            if cfg.has_eye_head() {
                let ep = &mut eye_probs[t * ke..(t + 1) * ke];
                for (cl, o) in ep.iter_mut().enumerate() {
                    *o = v.eb[cl] + dot(&v.ew[cl * h..(cl + 1) * h], ht);
                }
                softmax(ep);
                for (m, &p) in eye_mean.iter_mut().zip(ep.iter()) {
                    *m += p;
                }
            }
        }
    }
    let inv = 1.0 / steps as f64;
    for m in task_mean.iter_mut() {
        *m *= inv;
    }
    for m in eye_mean.iter_mut() {
        *m *= inv;
    }

    Ok(ForwardTrace {
        input: window.clone(),
        steps,
        conv,
        mixed,
        z,
        r,
        cand,
        hidden,
        task_probs,
        eye_probs,
        task_mean,
        eye_mean,
    })
}

/// Labels for one training window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLabels {
    /// Task-head class: the task code in the staged paradigm, the alphabet
    /// index in the direct paradigm.
    pub task_class: usize,
    /// Eye-head class; must be present exactly when the eye head exists.
    pub eye: Option<EyeState>,
}

/// Task and eye cross-entropy on the pooled probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    /// Zero in direct mode (no eye head).
    pub eye: f64,
}

impl LossBreakdown {
    /// The trained objective: task plus eye term (unit weight).
    pub fn total(&self) -> f64 {
        self.task + self.eye
    }
}

/// Negative log likelihood of the labels under the pooled probabilities.
pub fn loss(
    trace: &ForwardTrace,
    cfg: &TsldConfig,
    labels: WindowLabels,
) -> Result<LossBreakdown, TsldError> {
    if labels.task_class >= cfg.task_classes {
        return Err(TsldError::LabelOutOfRange {
            label: labels.task_class,
            classes: cfg.task_classes,
        });
    }
    let task = -math::ln(trace.task_mean[labels.task_class]);
    let eye = if cfg.has_eye_head() {
        let e = labels.eye.ok_or(TsldError::MissingEyeLabel)?;
        -math::ln(trace.eye_mean[e.code() as usize])
    } else {
        0.0
    };
    Ok(LossBreakdown { task, eye })
}

/// Analytic gradient of [`loss`] with respect to every parameter, as a flat
/// vector in the layout of [`tensor_specs`]. `trace` must come from
/// [`forward`] on the same `params`.
pub fn backward(
    trace: &ForwardTrace,
    params: &TsldParams,
    labels: WindowLabels,
) -> Result<Vec<f64>, TsldError> {
    let cfg = &params.cfg;
    if labels.task_class >= cfg.task_classes {
        return Err(TsldError::LabelOutOfRange {
            label: labels.task_class,
            classes: cfg.task_classes,
        });
    }
    let eye_label = if cfg.has_eye_head() {
        Some(labels.eye.ok_or(TsldError::MissingEyeLabel)?.code() as usize)
    } else {
        None
    };

    let v = views(cfg, &params.data);
    let steps = trace.steps;
    let (c, f, k, s) = (
        cfg.n_channels,
        cfg.temporal_filters,
        cfg.temporal_kernel,
        cfg.temporal_stride,
    );
    let (fp, h) = (cfg.spatial_filters, cfg.hidden);
    let (kt, ke) = (cfg.task_classes, cfg.eye_classes);
    let cf = c * f;

    let mut grad = vec![0.0; params.data.len()];
    // Split the gradient buffer into disjoint per-tensor slices, mirroring
    // the layout order of `views`. Absent tensors get empty slices.
    let gru = cfg.use_gru;
    let banks = if cfg.tied_temporal { 1 } else { c };
    let zero_if = |cond: bool, n: usize| if cond { n } else { 0 };
    let rest: &mut [f64] = &mut grad;
    let (d_tw, rest) = rest.split_at_mut(banks * f * k);
    let (d_tb, rest) = rest.split_at_mut(f);
    let (d_sw, rest) = rest.split_at_mut(fp * cf);
    let (d_sb, rest) = rest.split_at_mut(fp);
    let (d_wz, rest) = rest.split_at_mut(zero_if(gru, h * fp));
    let (d_uz, rest) = rest.split_at_mut(zero_if(gru, h * h));
    let (d_bz, rest) = rest.split_at_mut(zero_if(gru, h));
    let (d_wr, rest) = rest.split_at_mut(zero_if(gru, h * fp));
    let (d_ur, rest) = rest.split_at_mut(zero_if(gru, h * h));
    let (d_br, rest) = rest.split_at_mut(zero_if(gru, h));
    let (d_wh, rest) = rest.split_at_mut(zero_if(gru, h * fp));
    let (d_uh, rest) = rest.split_at_mut(zero_if(gru, h * h));
    let (d_bh, rest) = rest.split_at_mut(zero_if(gru, h));
    let (d_aw, rest) = rest.split_at_mut(zero_if(!gru, h * fp));
    let (d_ab, rest) = rest.split_at_mut(zero_if(!gru, h));
    let (d_kw, rest) = rest.split_at_mut(kt * h);
    let (d_kb, rest) = rest.split_at_mut(kt);
    let (d_ew, rest) = rest.split_at_mut(zero_if(cfg.has_eye_head(), ke * h));
    let (d_eb, rest) = rest.split_at_mut(zero_if(cfg.has_eye_head(), ke));
    debug_assert!(rest.is_empty());

    // Head stage: per-step softmax backprop into hidden-state gradients.
    let g_task = -1.0 / (steps as f64 * trace.task_mean[labels.task_class]);
    let g_eye = eye_label.map(|e| -1.0 / (steps as f64 * trace.eye_mean[e]));
    let mut d_hidden = vec![0.0; steps * h];
    let mut dlogit = vec![0.0; kt.max(ke)];
    for t in 0..steps {
        let ht = &trace.hidden[t * h..(t + 1) * h];
        let dh = &mut d_hidden[t * h..(t + 1) * h];

        let p = &trace.task_probs[t * kt..(t + 1) * kt];
        let inner = g_task * p[labels.task_class];
        for (j, dl) in dlogit[..kt].iter_mut().enumerate() {
            let gj = if j == labels.task_class { g_task } else { 0.0 };
            *dl = p[j] * (gj - inner);
        }
        for j in 0..kt {
            let dl = dlogit[j];
            d_kb[j] += dl;
            axpy(&mut d_kw[j * h..(j + 1) * h], dl, ht);
            axpy(dh, dl, &v.kw[j * h..(j + 1) * h]);
        }

        if let Some(e) = eye_label {
            let ge = g_eye.expect("eye gradient present with eye label");
            let p = &trace.eye_probs[t * ke..(t + 1) * ke];
            let inner = ge * p[e];
            for (j, dl) in dlogit[..ke].iter_mut().enumerate() {
                let gj = if j == e { ge } else { 0.0 };
                *dl = p[j] * (gj - inner);
            }
            for j in 0..ke {
                let dl = dlogit[j];
                d_eb[j] += dl;
                axpy(&mut d_ew[j * h..(j + 1) * h], dl, ht);
                axpy(dh, dl, &v.ew[j * h..(j + 1) * h]);
            }
        }
    }

    // Recurrence stage: backprop through time into the mixed signal.
    let mut d_mixed = vec![0.0; fp * steps];
    let mut u = vec![0.0; fp];
    if cfg.use_gru {
        let mut carry = vec![0.0; h];
        let mut dz = vec![0.0; h];
        let mut dr = vec![0.0; h];
        let mut dcand = vec![0.0; h];
        let mut drh = vec![0.0; h];
        let mut rhbuf = vec![0.0; h];
        let mut du = vec![0.0; fp];
        let zeros = vec![0.0; h];
        for t in (0..steps).rev() {
            for (g, uv) in u.iter_mut().enumerate() {
                *uv = trace.mixed[g * steps + t];
            }
            let h_prev: &[f64] =
                if t == 0 { &zeros } else { &trace.hidden[(t - 1) * h..t * h] };
            let zt = &trace.z[t * h..(t + 1) * h];
            let rt = &trace.r[t * h..(t + 1) * h];
            let ct = &trace.cand[t * h..(t + 1) * h];
            // Total gradient reaching h_t: local head term plus carry.
            for j in 0..h {
                carry[j] += d_hidden[t * h + j];
            }
            for j in 0..h {
                dz[j] = carry[j] * (ct[j] - h_prev[j]) * zt[j] * (1.0 - zt[j]);
                dcand[j] = carry[j] * zt[j] * (1.0 - ct[j] * ct[j]);
                rhbuf[j] = rt[j] * h_prev[j];
            }
            // dr comes through U_h's input (r ⊙ h_prev).
            for (j, o) in drh.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..h {
                    acc += v.uh[i * h + j] * dcand[i];
                }
                *o = acc;
            }
            for j in 0..h {
                dr[j] = drh[j] * h_prev[j] * rt[j] * (1.0 - rt[j]);
            }

            du.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..h {
                d_bz[j] += dz[j];
                d_br[j] += dr[j];
                d_bh[j] += dcand[j];
                axpy(&mut d_wz[j * fp..(j + 1) * fp], dz[j], &u);
                axpy(&mut d_wr[j * fp..(j + 1) * fp], dr[j], &u);
                axpy(&mut d_wh[j * fp..(j + 1) * fp], dcand[j], &u);
                axpy(&mut d_uz[j * h..(j + 1) * h], dz[j], h_prev);
                axpy(&mut d_ur[j * h..(j + 1) * h], dr[j], h_prev);
                axpy(&mut d_uh[j * h..(j + 1) * h], dcand[j], &rhbuf);
                axpy(&mut du, dz[j], &v.wz[j * fp..(j + 1) * fp]);
                axpy(&mut du, dr[j], &v.wr[j * fp..(j + 1) * fp]);
                axpy(&mut du, dcand[j], &v.wh[j * fp..(j + 1) * fp]);
            }
            for (g, &dv) in du.iter().enumerate() {
                d_mixed[g * steps + t] = dv;
            }
            // Gradient flowing to h_{t-1}.
            for j in 0..h {
                let mut acc = carry[j] * (1.0 - zt[j]) + drh[j] * rt[j];
                for i in 0..h {
                    acc += v.uz[i * h + j] * dz[i] + v.ur[i * h + j] * dr[i];
                }
                carry[j] = acc;
            }
        }
    } else {
        for t in 0..steps {
            for (g, uv) in u.iter_mut().enumerate() {
                *uv = trace.mixed[g * steps + t];
            }
            let dh = &d_hidden[t * h..(t + 1) * h];
            for j in 0..h {
                d_ab[j] += dh[j];
                axpy(&mut d_aw[j * fp..(j + 1) * fp], dh[j], &u);
            }
            for g in 0..fp {
                let mut acc = 0.0;
                for j in 0..h {
                    acc += v.aw[j * fp + g] * dh[j];
                }
                d_mixed[g * steps + t] = acc;
            }
        }
    }

    // Spatial stage.
    let mut d_conv = vec![0.0; cf * steps];
    for g in 0..fp {
        let dm = &d_mixed[g * steps..(g + 1) * steps];
        d_sb[g] += dm.iter().sum::<f64>();
        let wrow = &v.sw[g * cf..(g + 1) * cf];
        let drow = &mut d_sw[g * cf..(g + 1) * cf];
        for i in 0..cf {
            drow[i] += dot(dm, &trace.conv[i * steps..(i + 1) * steps]);
            axpy(&mut d_conv[i * steps..(i + 1) * steps], wrow[i], dm);
        }
    }

    // Temporal stage.
    for ch in 0..c {
        let x = trace.input.row(ch);
        for fi in 0..f {
            let dout = &d_conv[(ch * f + fi) * steps..(ch * f + fi + 1) * steps];
            d_tb[fi] += dout.iter().sum::<f64>();
            let bank = if cfg.tied_temporal { fi } else { ch * f + fi };
            let dw = &mut d_tw[bank * k..(bank + 1) * k];
            for (t, &d) in dout.iter().enumerate() {
                if d != 0.0 {
                    axpy(dw, d, &x[t * s..t * s + k]);
                }
            }
        }
    }

    Ok(grad)
}

/// Cut a uniformly random `window_len`-sample window from a segment,
/// labelled with the stage's task code and eye state. A segment exactly
/// `window_len` long always yields offset 0.
pub fn sample_training_window(
    segment: &StageSegment,
    window_len: usize,
    rng: &mut impl Rng,
) -> Result<LabeledWindow, TsldError> {
    let total = segment.recording.n_samples();
    if total < window_len {
        return Err(TsldError::SegmentTooShort { window: window_len, found: total });
    }
    let offset = if total == window_len { 0 } else { rng.gen_range(0..=total - window_len) };
    Ok(LabeledWindow {
        window: segment.recording.mat().slice_cols(offset, window_len),
        task_class: segment.task.code() as usize,
        eye: Some(segment.eye),
    })
}

/// Optimiser schedule and data-sampling knobs for [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Training window length in samples.
    pub window_len: usize,
    pub seed: u64,
    /// Worker threads for per-sample gradients; 0 means one per core.
    /// Results are identical for every value.
    pub jobs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            window_len: 1000,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainSettings {
    fn validate(&self, cfg: &TsldConfig) -> Result<(), TsldError> {
        if self.batch_size == 0 {
            return Err(TsldError::BadConfig("batch size must be at least 1"));
        }
        if self.window_len < cfg.temporal_kernel {
            return Err(TsldError::BadConfig("training window shorter than the kernel"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TsldError::BadConfig("learning rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TsldError::BadConfig("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(TsldError::BadConfig("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias correction over the flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], s: &TrainSettings) {
        self.t += 1;
        let bc1 = 1.0 - math::powf(s.beta1, self.t as f64);
        let bc2 = 1.0 - math::powf(s.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = s.beta1 * self.m[i] + (1.0 - s.beta1) * g;
            self.v[i] = s.beta2 * self.v[i] + (1.0 - s.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= s.learning_rate * mhat / (math::sqrt(vhat) + s.adam_eps);
        }
    }
}

/// Which split an [`EpochRecord`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

/// Per-epoch metrics on one split, measured on centre windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss_task: f64,
    /// NaN in direct mode (no eye head).
    pub loss_eye: f64,
    pub acc_task: f64,
    /// NaN in direct mode.
    pub acc_eye: f64,
}

/// Result of [`train`]: the best-validation parameters and the full metric
/// history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TsldParams,
    /// Epoch (1-based) whose validation loss selected `params`.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Class labels a segment contributes under this configuration.
fn segment_labels(cfg: &TsldConfig, seg: &StageSegment) -> Result<WindowLabels, TsldError> {
    if cfg.direct_mode {
        let idx = char_index(seg.character)
            .expect("segment constructors validate the character");
        if idx >= cfg.task_classes {
            return Err(TsldError::LabelOutOfRange { label: idx, classes: cfg.task_classes });
        }
        Ok(WindowLabels { task_class: idx, eye: None })
    } else {
        Ok(WindowLabels {
            task_class: seg.task.code() as usize,
            eye: Some(seg.eye),
        })
    }
}

/// Mean losses and accuracies over centre windows of `segments`.
fn split_metrics(
    params: &TsldParams,
    segments: &[&StageSegment],
    window_len: usize,
    epoch: usize,
    split: Split,
) -> Result<EpochRecord, TsldError> {
    let cfg = &params.cfg;
    let mut loss_task = 0.0;
    let mut loss_eye = 0.0;
    let mut hit_task = 0usize;
    let mut hit_eye = 0usize;
    for seg in segments {
        let total = seg.recording.n_samples();
        if total < window_len {
            return Err(TsldError::SegmentTooShort { window: window_len, found: total });
        }
        let offset = (total - window_len) / 2;
        let window = seg.recording.mat().slice_cols(offset, window_len);
        let labels = segment_labels(cfg, seg)?;
        let trace = forward(&window, params)?;
        let l = loss(&trace, cfg, labels)?;
        loss_task += l.task;
        loss_eye += l.eye;
        if argmax(&trace.task_mean) == labels.task_class {
            hit_task += 1;
        }
        if let Some(e) = labels.eye {
            if cfg.has_eye_head() && argmax(&trace.eye_mean) == e.code() as usize {
                hit_eye += 1;
            }
        }
    }
    let n = segments.len() as f64;
    Ok(EpochRecord {
        epoch,
        split,
        loss_task: loss_task / n,
        loss_eye: if cfg.has_eye_head() { loss_eye / n } else { f64::NAN },
        acc_task: hit_task as f64 / n,
        acc_eye: if cfg.has_eye_head() { hit_eye as f64 / n } else { f64::NAN },
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One gradient-sample work item: segment index and window offset, drawn
/// ahead of the batch so results do not depend on worker count.
struct Draw {
    segment: usize,
    offset: usize,
}

fn batch_gradient(
    params: &TsldParams,
    segments: &[&StageSegment],
    draws: &[Draw],
    window_len: usize,
    jobs: usize,
) -> Result<Vec<f64>, TsldError> {
    let one = |d: &Draw| -> Result<Vec<f64>, TsldError> {
        let seg = segments[d.segment];
        let window = seg.recording.mat().slice_cols(d.offset, window_len);
        let labels = segment_labels(&params.cfg, seg)?;
        let trace = forward(&window, params)?;
        backward(&trace, params, labels)
    };

    let grads = run_draws(draws, jobs, &one)?;
    let mut mean = vec![0.0; params.data.len()];
    for g in &grads {
        axpy(&mut mean, 1.0 / draws.len() as f64, g);
    }
    Ok(mean)
}

#[cfg(feature = "std")]
fn run_draws(
    draws: &[Draw],
    jobs: usize,
    one: &(dyn Fn(&Draw) -> Result<Vec<f64>, TsldError> + Sync),
) -> Result<Vec<Vec<f64>>, TsldError> {
    let workers = if jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        jobs
    };
    let workers = workers.min(draws.len()).max(1);
    if workers == 1 {
        return draws.iter().map(one).collect();
    }
    let mut slots: Vec<Option<Result<Vec<f64>, TsldError>>> = Vec::new();
    slots.resize_with(draws.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut i = w;
                while i < draws.len() {
                    out.push((i, one(&draws[i])));
                    i += workers;
                }
                out
            }));
        }
        for hnd in handles {
            for (i, res) in hnd.join().expect("gradient worker panicked") {
                slots[i] = Some(res);
            }
        }
    });
    // Collect in draw order so summation order is fixed.
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

#[cfg(not(feature = "std"))]
fn run_draws(
    draws: &[Draw],
    _jobs: usize,
    one: &dyn Fn(&Draw) -> Result<Vec<f64>, TsldError>,
) -> Result<Vec<Vec<f64>>, TsldError> {
    draws.iter().map(one).collect()
}

/// Train with Adam. Each epoch visits every training segment once in a
/// shuffled order, drawing one uniformly random window per visit, and then
/// measures both splits on centre windows. Returns the parameters of the
/// epoch with the lowest validation loss (training loss when `val` is
/// empty). Segments must already be preprocessed.
pub fn train(
    cfg: &TsldConfig,
    train_segments: &[&StageSegment],
    val_segments: &[&StageSegment],
    settings: &TrainSettings,
) -> Result<TrainOutcome, TsldError> {
    cfg.validate()?;
    settings.validate(cfg)?;
    if train_segments.is_empty() {
        return Err(TsldError::EmptyTrainingSet);
    }
    for seg in train_segments.iter().chain(val_segments) {
        segment_labels(cfg, seg)?;
        if seg.recording.n_samples() < settings.window_len {
            return Err(TsldError::SegmentTooShort {
                window: settings.window_len,
                found: seg.recording.n_samples(),
            });
        }
    }

    let mut params = TsldParams::init(cfg, settings.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut adam = Adam::new(params.data.len());
    let mut order: Vec<usize> = (0..train_segments.len()).collect();

    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(2 * settings.epochs);

    for epoch in 1..=settings.epochs {
        // Fisher-Yates over the visit order.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(settings.batch_size) {
            let draws: Vec<Draw> = chunk
                .iter()
                .map(|&si| {
                    let total = train_segments[si].recording.n_samples();
                    let max_off = total - settings.window_len;
                    let offset = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
                    Draw { segment: si, offset }
                })
                .collect();
            let grad = batch_gradient(
                &params,
                train_segments,
                &draws,
                settings.window_len,
                settings.jobs,
            )
            .map_err(|e| match e {
                TsldError::NonFinite { .. } => TsldError::Diverged { epoch },
                other => other,
            })?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TsldError::Diverged { epoch });
            }
            adam.step(&mut params.data, &grad, settings);
        }

        let train_rec = split_metrics(
            &params,
            train_segments,
            settings.window_len,
            epoch,
            Split::Train,
        )
        .map_err(divergence_at(epoch))?;
        history.push(train_rec);
        let selector = if val_segments.is_empty() {
            train_rec
        } else {
            let val_rec = split_metrics(
                &params,
                val_segments,
                settings.window_len,
                epoch,
                Split::Validation,
            )
            .map_err(divergence_at(epoch))?;
            history.push(val_rec);
            val_rec
        };
        let total = selector.loss_task
            + if cfg.has_eye_head() { selector.loss_eye } else { 0.0 };
        if !total.is_finite() {
            return Err(TsldError::Diverged { epoch });
        }
        if total < best_loss {
            best_loss = total;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainOutcome { params: best_params, best_epoch, history })
}

fn divergence_at(epoch: usize) -> impl Fn(TsldError) -> TsldError {
    move |e| match e {
        TsldError::NonFinite { .. } => TsldError::Diverged { epoch },
        other => other,
    }
}
