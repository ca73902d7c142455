//! Report ingestion, text normalization and word-level tokenization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One lowercased word with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn span(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Splits text into tokens. Implementations must be deterministic.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token>;
}

/// Lowercasing word tokenizer.
///
/// A token is a maximal run of alphanumeric characters. A `.` between two
/// digits stays inside the token so decimal sizes like `5.5mm` survive; every
/// other non-alphanumeric character is a dropped separator, which splits
/// `5mm×6mm` into `5mm` and `6mm`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Token> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut tokens = Vec::new();
        let mut start: Option<usize> = None;
        for (k, &(pos, c)) in chars.iter().enumerate() {
            let keep = c.is_alphanumeric()
                || (c == '.'
                    && start.is_some()
                    && k > 0
                    && chars[k - 1].1.is_ascii_digit()
                    && chars.get(k + 1).is_some_and(|&(_, n)| n.is_ascii_digit()));
            match (keep, start) {
                (true, None) => start = Some(pos),
                (false, Some(s)) => {
                    tokens.push(make_token(text, s, pos));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push(make_token(text, s, text.len()));
        }
        tokens
    }
}

fn make_token(text: &str, start: usize, end: usize) -> Token {
    Token {
        text: text[start..end].to_lowercase(),
        start,
        end,
    }
}

/// Tokenizes with [`WordTokenizer`].
pub fn tokenize(s: &str) -> Vec<Token> {
    WordTokenizer.tokenize(s)
}

/// Token texts only.
pub fn token_texts(s: &str) -> Vec<String> {
    tokenize(s).into_iter().map(|t| t.text).collect()
}

/// Lowercases, collapses whitespace runs, trims, and strips trailing periods.
///
/// Trailing periods are stripped repeatedly (with any whitespace between
/// them) so the function is idempotent.
pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let trimmed = out.trim_end().trim_end_matches('.');
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    out
}

/// Sentence ranges (token index ranges) of a tokenized text. A sentence ends
/// at any `.` or `;` that falls between two tokens. Empty sentences are
/// dropped.
pub fn sentence_ranges(text: &str, tokens: &[Token]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut begin = 0;
    for k in 1..tokens.len() {
        let gap = &text[tokens[k - 1].end..tokens[k].start];
        if gap.contains(['.', ';']) {
            out.push(begin..k);
            begin = k;
        }
    }
    if begin < tokens.len() {
        out.push(begin..tokens.len());
    }
    out
}

/// Markers that introduce the conclusion section when a record has no
/// explicit conclusion field. Matched case-insensitively; the last occurrence
/// wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionMarkers {
    pub conclusion: Vec<String>,
}

impl Default for SectionMarkers {
    fn default() -> Self {
        Self {
            conclusion: vec!["impression:".into(), "conclusion:".into()],
        }
    }
}

impl SectionMarkers {
    /// Returns (findings, conclusion) derived from free text. Without a
    /// marker the whole text is the conclusion and findings are empty.
    pub fn split<'a>(&self, text: &'a str) -> (&'a str, &'a str) {
        let lowered = text.to_ascii_lowercase();
        let hit = self
            .conclusion
            .iter()
            .filter(|m| !m.is_empty())
            .filter_map(|m| {
                lowered
                    .rfind(&m.to_ascii_lowercase())
                    .map(|pos| (pos, pos + m.len()))
            })
            .max();
        match hit {
            Some((pos, after)) => {
                let mut findings = text[..pos].trim();
                if findings.to_ascii_lowercase().starts_with("findings:") {
                    findings = findings["findings:".len()..].trim();
                }
                (findings, text[after..].trim())
            }
            None => ("", text.trim()),
        }
    }
}

/// A single radiology report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRecord {
    pub id: String,
    pub raw_text: String,
    pub findings: String,
    pub conclusion: String,
    pub tokens: Vec<Token>,
}

impl ReportRecord {
    /// Builds a record from raw text, deriving sections with `markers` when
    /// they are not given.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        findings: Option<String>,
        conclusion: Option<String>,
        markers: &SectionMarkers,
    ) -> Self {
        let raw_text = text.into();
        let (derived_findings, derived_conclusion) = markers.split(&raw_text);
        let findings = findings.unwrap_or_else(|| derived_findings.to_string());
        let conclusion = conclusion.unwrap_or_else(|| derived_conclusion.to_string());
        let tokens = tokenize(&raw_text);
        Self {
            id: id.into(),
            raw_text,
            findings,
            conclusion,
            tokens,
        }
    }

    /// Record with default section markers.
    pub fn from_text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(id, text, None, None, &SectionMarkers::default())
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    findings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conclusion: Option<String>,
}

/// Ordered collection of reports with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<ReportRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<ReportRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (pos, r) in records.iter().enumerate() {
            if r.id.is_empty() {
                return Err(Error::MalformedLine {
                    line: pos + 1,
                    message: "empty id".into(),
                });
            }
            if index.insert(r.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId {
                    id: r.id.clone(),
                    line: pos + 1,
                });
            }
        }
        Ok(Self { records, index })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ReportRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ReportRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&ReportRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Parses line-delimited JSON records. Blank lines are skipped; line
    /// numbers in errors are 1-based.
    pub fn parse<R: BufRead>(reader: R, markers: &SectionMarkers) -> Result<Self> {
        let mut records = Vec::new();
        let mut index = HashMap::new();
        for (k, line) in reader.lines().enumerate() {
            let line_no = k + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RecordLine =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if raw.id.is_empty() {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: "empty id".into(),
                });
            }
            if index.insert(raw.id.clone(), records.len()).is_some() {
                return Err(Error::DuplicateId {
                    id: raw.id,
                    line: line_no,
                });
            }
            records.push(ReportRecord::new(
                raw.id,
                raw.text,
                raw.findings,
                raw.conclusion,
                markers,
            ));
        }
        Ok(Self { records, index })
    }

    /// Serializes every record on its own line, with all four fields written
    /// explicitly.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = RecordLine {
                id: r.id.clone(),
                text: r.raw_text.clone(),
                findings: Some(r.findings.clone()),
                conclusion: Some(r.conclusion.clone()),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a ReportRecord;
    type IntoIter = std::slice::Iter<'a, ReportRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    load_corpus_with(path, &SectionMarkers::default())
}

pub fn load_corpus_with(path: impl AsRef<Path>, markers: &SectionMarkers) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    Corpus::parse(BufReader::new(file), markers).map_err(|e| e.at_path(path))
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::from(e).at_path(path))?;
    let mut out = std::io::BufWriter::new(file);
    corpus.write(&mut out)?;
    out.flush()?;
    Ok(())
}
