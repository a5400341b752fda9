//! Report files: training history, decode report, metrics, curves.
//!
//! CSV cells never need quoting here (names, digits, floats), so rows are
//! plain joins. Floats print through Rust's shortest round-trip formatter,
//! making reports byte-stable across runs; NaN cells print as `NaN` in CSV
//! and `null` in JSON.

use mindspell_core::eval::{
    CrossValidationReport, ParadigmComparison, SessionPoint, REFERENCE_TOP_K,
};
use mindspell_core::tsld::EpochRecord;
use serde::Serialize;

/// Column header of the training history CSV.
pub const HISTORY_HEADER: &str = "epoch,split,loss_mt,loss_es,acc_task,acc_eye";
/// Column header of the decode report CSV.
pub const DECODE_HEADER: &str =
    "character_gt,character_pred,stage_index,task_gt,task_pred,eye_gt,eye_pred,adjusted_prob";
/// Column header of the per-fold metrics CSV.
pub const METRICS_HEADER: &str =
    "paradigm,held_out_session,seed,top1,top3,top5,stage_task_accuracy,eye_accuracy,best_epoch";
/// Column header of the long-format accuracy curve CSV.
pub const CURVE_HEADER: &str = "session,metric,mean,sd";

/// One row per epoch per split, in training order.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.split.name(),
            r.loss_task,
            r.loss_eye,
            r.acc_task,
            r.acc_eye
        ));
    }
    out
}

/// One decode report row: a stage decision in the staged paradigm, a whole
/// character in the direct paradigm (stage_index 0, eye columns empty).
#[derive(Debug, Clone)]
pub struct DecodeRow {
    pub character_gt: char,
    pub character_pred: char,
    pub stage_index: u8,
    pub task_gt: String,
    pub task_pred: String,
    pub eye_gt: String,
    pub eye_pred: String,
    /// Vote share behind the row's winning decision.
    pub adjusted_prob: f64,
}

pub fn decode_csv(rows: &[DecodeRow]) -> String {
    let mut out = String::from(DECODE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.character_gt,
            r.character_pred,
            r.stage_index,
            r.task_gt,
            r.task_pred,
            r.eye_gt,
            r.eye_pred,
            r.adjusted_prob
        ));
    }
    out
}

#[derive(Serialize)]
struct SummaryDto {
    mean: f64,
    sd: f64,
}

impl SummaryDto {
    fn of(s: &mindspell_core::eval::Summary) -> Self {
        SummaryDto { mean: s.mean, sd: s.sd }
    }
}

#[derive(Serialize)]
struct FoldDto {
    held_out_session: u8,
    seed: u64,
    top1: f64,
    top3: f64,
    top5: f64,
    stage_task_accuracy: f64,
    eye_accuracy: f64,
    best_epoch: usize,
}

#[derive(Serialize)]
struct ReportDto {
    paradigm: &'static str,
    top1: SummaryDto,
    top3: SummaryDto,
    top5: SummaryDto,
    stage_task_accuracy: SummaryDto,
    eye_accuracy: SummaryDto,
    /// Published character-level top-1/3/5 means, for side-by-side reading.
    reference_top_k: [f64; 3],
    folds: Vec<FoldDto>,
}

impl ReportDto {
    fn of(report: &CrossValidationReport) -> Self {
        ReportDto {
            paradigm: report.paradigm.name(),
            top1: SummaryDto::of(&report.top1),
            top3: SummaryDto::of(&report.top3),
            top5: SummaryDto::of(&report.top5),
            stage_task_accuracy: SummaryDto::of(&report.stage_task_accuracy),
            eye_accuracy: SummaryDto::of(&report.eye_accuracy),
            reference_top_k: REFERENCE_TOP_K,
            folds: report
                .folds
                .iter()
                .map(|f| FoldDto {
                    held_out_session: f.held_out_session,
                    seed: f.seed,
                    top1: f.top1,
                    top3: f.top3,
                    top5: f.top5,
                    stage_task_accuracy: f.stage_task_accuracy,
                    eye_accuracy: f.eye_accuracy,
                    best_epoch: f.best_epoch,
                })
                .collect(),
        }
    }
}

/// Cross-validation report as JSON (per-epoch histories omitted).
pub fn metrics_json(report: &CrossValidationReport) -> String {
    serde_json::to_string_pretty(&ReportDto::of(report)).expect("report serializes") + "\n"
}

/// Cross-validation report as CSV, one row per fold.
pub fn metrics_csv(report: &CrossValidationReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for f in &report.folds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            report.paradigm.name(),
            f.held_out_session,
            f.seed,
            f.top1,
            f.top3,
            f.top5,
            f.stage_task_accuracy,
            f.eye_accuracy,
            f.best_epoch
        ));
    }
    out
}

/// Per-session accuracy curve in plot-ready long format.
pub fn curve_csv(points: &[SessionPoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},top1,{},{}\n", p.session, p.top1.mean, p.top1.sd));
        out.push_str(&format!(
            "{},stage_task_accuracy,{},{}\n",
            p.session, p.stage_task_accuracy.mean, p.stage_task_accuracy.sd
        ));
    }
    out
}

#[derive(Serialize)]
struct ComparisonDto {
    staged: ReportDto,
    direct: ReportDto,
    top1_ratio: f64,
}

/// Paradigm comparison as JSON.
pub fn comparison_json(cmp: &ParadigmComparison) -> String {
    let dto = ComparisonDto {
        staged: ReportDto::of(&cmp.staged),
        direct: ReportDto::of(&cmp.direct),
        top1_ratio: cmp.top1_ratio,
    };
    serde_json::to_string_pretty(&dto).expect("comparison serializes") + "\n"
}
