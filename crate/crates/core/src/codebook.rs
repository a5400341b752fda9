//! Character codebook: the mapping between spellable characters and the
//! three (mental task, eye state) stages that encode them.
//!
//! Task triples are codewords over a four-symbol alphabet; the eye-state
//! sequence is one fixed pattern shared by every character, giving the
//! decoder a protocol-level sanity channel on top of the task channel.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::domain::{char_index, DomainError, EyeState, MentalTask, ALPHABET};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodebookError {
    #[error("line {line}: expected 7 comma-separated fields, found {found}")]
    BadFieldCount { line: usize, found: usize },
    #[error("line {line}: character field must be a single character, got {field:?}")]
    BadCharacterField { line: usize, field: String },
    #[error("line {line}: {source}")]
    BadLabel { line: usize, source: DomainError },
    #[error("character {0:?} appears more than once")]
    DuplicateCharacter(char),
    #[error("characters {0:?} and {1:?} share a task sequence")]
    DuplicateTaskSequence(char, char),
    #[error("eye pattern of {0:?} differs from the table's shared pattern")]
    InconsistentEyePattern(char),
    #[error("table covers {0} characters, expected all 36")]
    WrongCharacterCount(usize),
    #[error("character {0:?} is not in the 36-character alphabet")]
    UnknownCharacter(char),
}

/// One character's stage encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharacterCode {
    pub character: char,
    pub stages: [(MentalTask, EyeState); 3],
}

impl CharacterCode {
    pub fn tasks(&self) -> [MentalTask; 3] {
        [self.stages[0].0, self.stages[1].0, self.stages[2].0]
    }

    pub fn eyes(&self) -> [EyeState; 3] {
        [self.stages[0].1, self.stages[1].1, self.stages[2].1]
    }
}

/// A validated 36-character codebook. Entries are stored in alphabet order;
/// task sequences are pairwise distinct and the eye pattern is uniform, so
/// decoding a stage triple is unambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookTable {
    entries: Vec<CharacterCode>,
    eye_pattern: [EyeState; 3],
}

impl Default for CodebookTable {
    /// The shipped codebook. Task triples are the first 36 base-4 strings of
    /// length three in lexicographic order ('A' = foot,foot,foot, ... ,
    /// '9' = visual,foot,arith); eyes follow the closed/open/closed pattern.
    fn default() -> Self {
        let eyes = [EyeState::Closed, EyeState::Open, EyeState::Closed];
        let entries = ALPHABET
            .iter()
            .enumerate()
            .map(|(i, &character)| {
                let digits = [i / 16, (i / 4) % 4, i % 4];
                let mut stages = [(MentalTask::FootImagery, EyeState::Closed); 3];
                for s in 0..3 {
                    stages[s] = (MentalTask::ALL[digits[s]], eyes[s]);
                }
                CharacterCode { character, stages }
            })
            .collect();
        CodebookTable { entries, eye_pattern: eyes }
    }
}

impl CodebookTable {
    /// Build from explicit entries, in any order. Validates full alphabet
    /// coverage, distinct task sequences and a uniform eye pattern.
    pub fn from_entries(mut entries: Vec<CharacterCode>) -> Result<Self, CodebookError> {
        if entries.len() != ALPHABET.len() {
            return Err(CodebookError::WrongCharacterCount(entries.len()));
        }
        for e in &entries {
            if char_index(e.character).is_none() {
                return Err(CodebookError::UnknownCharacter(e.character));
            }
        }
        entries.sort_by_key(|e| char_index(e.character).expect("validated above"));
        for pair in entries.windows(2) {
            if pair[0].character == pair[1].character {
                return Err(CodebookError::DuplicateCharacter(pair[0].character));
            }
        }
        // 36 distinct in-alphabet characters, sorted: exactly the alphabet.
        let eye_pattern = entries[0].eyes();
        for e in &entries[1..] {
            if e.eyes() != eye_pattern {
                return Err(CodebookError::InconsistentEyePattern(e.character));
            }
        }
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                if entries[i].tasks() == entries[j].tasks() {
                    return Err(CodebookError::DuplicateTaskSequence(
                        entries[i].character,
                        entries[j].character,
                    ));
                }
            }
        }
        Ok(CodebookTable { entries, eye_pattern })
    }

    /// Parse the CSV interchange format: one `char,task1,eye1,task2,eye2,
    /// task3,eye3` line per character, `#` comments and blank lines
    /// ignored, task names foot/tongue/visual/arith, eye names closed/open.
    /// An optional header line with those column names is accepted.
    pub fn parse_csv(text: &str) -> Result<Self, CodebookError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(CodebookError::BadFieldCount { line, found: fields.len() });
            }
            if fields[0].eq_ignore_ascii_case("char") {
                continue;
            }
            let mut chars = fields[0].chars();
            let character = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(CodebookError::BadCharacterField {
                        line,
                        field: fields[0].to_string(),
                    })
                }
            };
            let mut stages = [(MentalTask::FootImagery, EyeState::Closed); 3];
            for s in 0..3 {
                let task = MentalTask::from_name(fields[1 + 2 * s])
                    .map_err(|source| CodebookError::BadLabel { line, source })?;
                let eye = EyeState::from_name(fields[2 + 2 * s])
                    .map_err(|source| CodebookError::BadLabel { line, source })?;
                stages[s] = (task, eye);
            }
            entries.push(CharacterCode { character, stages });
        }
        CodebookTable::from_entries(entries)
    }

    /// Render the table in the CSV interchange format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("char,task1,eye1,task2,eye2,task3,eye3\n");
        for e in &self.entries {
            out.push(e.character);
            for (task, eye) in e.stages {
                out.push(',');
                out.push_str(task.name());
                out.push(',');
                out.push_str(eye.name());
            }
            out.push('\n');
        }
        out
    }

    /// Entries in alphabet order.
    pub fn entries(&self) -> &[CharacterCode] {
        &self.entries
    }

    /// The eye-state sequence shared by every character.
    pub fn eye_pattern(&self) -> [EyeState; 3] {
        self.eye_pattern
    }

    /// The stage encoding of `c`.
    pub fn encode(&self, c: char) -> Result<&CharacterCode, CodebookError> {
        let idx = char_index(c).ok_or(CodebookError::UnknownCharacter(c))?;
        Ok(&self.entries[idx])
    }

    /// The character whose encoding matches all three decoded stages
    /// exactly, if any.
    pub fn decode(&self, stages: &[(MentalTask, EyeState); 3]) -> Option<char> {
        self.entries
            .iter()
            .find(|e| &e.stages == stages)
            .map(|e| e.character)
    }
}
