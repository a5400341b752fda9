//! Cross-module property tests over the public API.

use mindspell_core::codebook::{CharacterCode, CodebookTable};
use mindspell_core::decoder::{window_offsets, DecoderSettings};
use mindspell_core::preprocess::{preprocess_pipeline, PreprocessConfig};
use mindspell_core::{EegRecording, EyeState, Mat, MentalTask};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A valid table with the 36 distinct task triples dealt to characters in
/// a seeded random order.
fn shuffled_table(seed: u64) -> CodebookTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples: Vec<[MentalTask; 3]> = (0..36)
        .map(|v| {
            [
                MentalTask::from_code((v / 16) as u8).unwrap(),
                MentalTask::from_code(((v / 4) % 4) as u8).unwrap(),
                MentalTask::from_code((v % 4) as u8).unwrap(),
            ]
        })
        .collect();
    triples.shuffle(&mut rng);
    let eyes = [EyeState::Closed, EyeState::Open, EyeState::Closed];
    let entries: Vec<CharacterCode> = mindspell_core::domain::ALPHABET
        .iter()
        .zip(triples)
        .map(|(&character, tasks)| CharacterCode {
            character,
            stages: [(tasks[0], eyes[0]), (tasks[1], eyes[1]), (tasks[2], eyes[2])],
        })
        .collect();
    CodebookTable::from_entries(entries).expect("distinct triples form a valid table")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// decode is a left inverse of encode on every valid table, and
    /// distinct characters never share a codeword.
    #[test]
    fn random_tables_round_trip_injectively(seed in any::<u64>()) {
        let table = shuffled_table(seed);
        for entry in table.entries() {
            prop_assert_eq!(table.decode(&entry.stages), Some(entry.character));
        }
        let csv = table.to_csv();
        let reparsed = CodebookTable::parse_csv(&csv).unwrap();
        prop_assert_eq!(&reparsed, &table);
    }

    /// The pipeline preserves shape and rate, stays finite, and pins the
    /// first standardised sample of every channel to zero.
    #[test]
    fn pipeline_output_is_well_formed(
        channels in 2usize..8,
        samples in 128usize..512,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Mat::from_fn(channels, samples, |_, _| rng.gen_range(-30.0..30.0));
        let rec = EegRecording::new(data, 256).unwrap();
        let out = preprocess_pipeline(&rec, &PreprocessConfig::default()).unwrap();
        prop_assert_eq!(out.n_channels(), channels);
        prop_assert_eq!(out.n_samples(), samples);
        prop_assert_eq!(out.sampling_rate_hz(), 256);
        prop_assert!(out.mat().is_finite());
        for ch in 0..channels {
            prop_assert_eq!(out.mat().at(ch, 0), 0.0);
        }
    }

    /// Window offsets tile the segment: shift-spaced, in bounds, and flush
    /// with the end when the tail window is enabled.
    #[test]
    fn window_offsets_tile_the_segment(
        total in 1000usize..4000,
        shift in 50usize..300,
        include_tail in any::<bool>(),
    ) {
        let s = DecoderSettings { shift, include_tail, ..DecoderSettings::default() };
        let offsets = window_offsets(total, &s).unwrap();
        prop_assert!(!offsets.is_empty());
        prop_assert_eq!(offsets[0], 0);
        for pair in offsets.windows(2) {
            prop_assert!(pair[0] < pair[1]);
            prop_assert!(pair[1] + s.window_len <= total);
        }
        let last = *offsets.last().unwrap();
        if include_tail {
            prop_assert_eq!(last, total - s.window_len);
        } else {
            prop_assert_eq!(last % shift, 0);
            prop_assert!(last + shift + s.window_len > total);
        }
    }
}
