//! Query corpus with expected complexity labels.
//!
//! The corpus is a tab-separated text file (`name`, `ptime|hard`,
//! `label|known|extra`, query). A copy is embedded at build time; other
//! files can be loaded with [`parse_corpus`].

use thiserror::Error;

use crate::invclass::Complexity;
use crate::qcore::{parse_query, Query, QueryError};

pub const BUILTIN: &str = include_str!("../data/corpus.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: expected 4 tab-separated fields, got {got}")]
    Fields { line: usize, got: usize },
    #[error("line {line}: unknown label {label:?} (want ptime or hard)")]
    Label { line: usize, label: String },
    #[error("line {line}: unknown kind {kind:?} (want label, known or extra)")]
    Kind { line: usize, kind: String },
    #[error("line {line} ({name}): {source}")]
    Query {
        line: usize,
        name: String,
        source: QueryError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// The label is a stated result.
    Label,
    /// A stated label this implementation is known not to reproduce.
    Known,
    /// An extra workload; the label is ours.
    Extra,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub query: Query,
    pub expect: Complexity,
    pub kind: EntryKind,
}

impl CorpusEntry {
    /// Whether the label is a stated result (including known mismatches).
    pub fn stated(&self) -> bool {
        self.kind != EntryKind::Extra
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        if l.trim().is_empty() || l.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 4 {
            return Err(CorpusError::Fields { line, got: f.len() });
        }
        let expect = match f[1] {
            "ptime" => Complexity::Ptime,
            "hard" => Complexity::SharpPHard,
            other => {
                return Err(CorpusError::Label {
                    line,
                    label: other.to_string(),
                })
            }
        };
        let kind = match f[2] {
            "label" => EntryKind::Label,
            "known" => EntryKind::Known,
            "extra" => EntryKind::Extra,
            other => {
                return Err(CorpusError::Kind {
                    line,
                    kind: other.to_string(),
                })
            }
        };
        let query = parse_query(f[3]).map_err(|source| CorpusError::Query {
            line,
            name: f[0].to_string(),
            source,
        })?;
        out.push(CorpusEntry {
            name: f[0].to_string(),
            query,
            expect,
            kind,
        });
    }
    Ok(out)
}

/// The embedded corpus.
pub fn corpus() -> Vec<CorpusEntry> {
    parse_corpus(BUILTIN).expect("embedded corpus parses")
}

pub fn entry(name: &str) -> Option<CorpusEntry> {
    corpus().into_iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invclass::make_hk;

    #[test]
    fn parses_and_matches_generated_hk() {
        let c = corpus();
        assert!(c.len() >= 23);
        for k in 0..=3 {
            let e = entry(&format!("h{k}")).unwrap();
            assert_eq!(e.query.to_string(), make_hk(k).to_string());
        }
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(
            parse_corpus("a\tptime\tlabel"),
            Err(CorpusError::Fields { line: 1, got: 3 })
        ));
        assert!(matches!(
            parse_corpus("# c\na\tfast\tlabel\tR(x)"),
            Err(CorpusError::Label { line: 2, .. })
        ));
        assert!(matches!(
            parse_corpus("a\tptime\tmaybe\tR(x)"),
            Err(CorpusError::Kind { .. })
        ));
        assert!(matches!(
            parse_corpus("a\tptime\tlabel\tR(x"),
            Err(CorpusError::Query { .. })
        ));
    }
}
