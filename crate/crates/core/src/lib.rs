//! Core algorithms for a mental-imagery EEG character speller.
//!
//! A subject spells one character as three timed imagery stages. Each stage
//! pairs a mental task (foot / tongue motor imagery, visual imagery, mental
//! arithmetic) with an eye state (closed / open), and the codebook maps the
//! three (task, eye) pairs back to one of 36 characters. This crate carries
//! everything needed to go from raw multichannel recordings to a character
//! decision:
//!
//! ```text
//! raw EEG ──▶ preprocess ──▶ network ──▶ sliding-window votes ──▶ codebook ──▶ char
//!            (detrend,      (temporal +  (per-stage task and     (stage
//!             bandpass,      spatial      eye decisions)          triples)
//!             CAR, moving    conv, GRU,
//!             standardize)   dual heads)
//! ```
//!
//! The crate is `no_std`-compatible (`alloc` required): disable default
//! features and enable `libm` for embedded or WASM targets. File formats,
//! configuration and the command line live in the companion `mindspell`
//! crate.
//!
//! Synthetic sessions from [`synth`] stand in for recorded data so the whole
//! pipeline, including training, is testable end to end without hardware.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod codebook;
pub mod decoder;
pub mod domain;
pub mod eval;
pub mod mat;
mod math;
pub mod preprocess;
pub mod synth;
pub mod tsld;

pub use codebook::{CharacterCode, CodebookTable};
pub use domain::{
    EegRecording, EyeState, MentalTask, Paradigm, SessionDataset, StageSegment,
};
pub use mat::Mat;
