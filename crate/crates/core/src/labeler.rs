//! Keyword-based pathology labeler with sentence-scoped negation, and the
//! healthy-report detector used by the false-negative rules.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{sentence_ranges, token_texts, ReportRecord};
use crate::error::{Error, Result};

/// The six evaluated pathology entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pathology {
    Nodule,
    Opacity,
    PleuralEffusion,
    Emphysema,
    Inflammation,
    Calcification,
}

impl Pathology {
    pub const ALL: [Pathology; 6] = [
        Pathology::Nodule,
        Pathology::Opacity,
        Pathology::PleuralEffusion,
        Pathology::Emphysema,
        Pathology::Inflammation,
        Pathology::Calcification,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pathology::Nodule => "nodule",
            Pathology::Opacity => "opacity",
            Pathology::PleuralEffusion => "pleural_effusion",
            Pathology::Emphysema => "emphysema",
            Pathology::Inflammation => "inflammation",
            Pathology::Calcification => "calcification",
        }
    }

    /// Plain-language name, as used inside prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Pathology::PleuralEffusion => "pleural effusion",
            other => other.name(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pathology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Pathology::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown pathology {s:?}")))
    }
}

const DEFAULT_KEYWORDS: [(Pathology, &[&str]); 6] = [
    (Pathology::Nodule, &["nodule", "nodules", "nodular"]),
    (
        Pathology::Opacity,
        &[
            "opacity",
            "opacities",
            "decreased translucency",
            "increased density",
            "airspace disease",
            "air-space disease",
            "air space disease",
            "infiltrate",
            "infiltration",
            "interstitial marking",
            "interstitial pattern",
            "interstitial lung",
            "reticular pattern",
            "reticular marking",
            "reticulation",
            "parenchymal scarring",
            "peribronchial thickening",
            "wall thickening",
            "scar",
        ],
    ),
    (
        Pathology::PleuralEffusion,
        &["pleural fluid", "pleural effusion"],
    ),
    (Pathology::Emphysema, &["emphysema"]),
    (
        Pathology::Inflammation,
        &[
            "inflammation",
            "pneumonia",
            "infection",
            "infectious process",
            "infectious",
        ],
    ),
    (
        Pathology::Calcification,
        &["calcification", "calcifications"],
    ),
];

/// Entity → keyword lists. Keywords are matched as whole-token sequences
/// after running them through the corpus tokenizer, so `air-space disease`
/// and `air space disease` are the same pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<Pathology, Vec<String>>",
    into = "BTreeMap<Pathology, Vec<String>>"
)]
pub struct KeywordTable {
    entries: BTreeMap<Pathology, Vec<String>>,
}

impl KeywordTable {
    pub fn new(entries: BTreeMap<Pathology, Vec<String>>) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for p in Pathology::ALL {
            let words = entries
                .get(&p)
                .ok_or_else(|| Error::Config(format!("keyword table has no entry for {p}")))?;
            let words: Vec<String> = words.iter().map(|w| w.trim().to_lowercase()).collect();
            if words.is_empty() {
                return Err(Error::Config(format!("keyword list for {p} is empty")));
            }
            if let Some(bad) = words.iter().find(|w| token_texts(w).is_empty()) {
                return Err(Error::Config(format!(
                    "keyword {bad:?} for {p} contains no word characters"
                )));
            }
            clean.insert(p, words);
        }
        Ok(Self { entries: clean })
    }

    pub fn keywords(&self, p: Pathology) -> &[String] {
        &self.entries[&p]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pathology, &[String])> {
        self.entries.iter().map(|(p, w)| (*p, w.as_slice()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::from_json(&text).map_err(|e| e.at_path(path))
    }
}

impl Default for KeywordTable {
    fn default() -> Self {
        let entries = DEFAULT_KEYWORDS
            .iter()
            .map(|(p, words)| (*p, words.iter().map(|w| w.to_string()).collect()))
            .collect();
        Self { entries }
    }
}

impl TryFrom<BTreeMap<Pathology, Vec<String>>> for KeywordTable {
    type Error = Error;

    fn try_from(entries: BTreeMap<Pathology, Vec<String>>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<KeywordTable> for BTreeMap<Pathology, Vec<String>> {
    fn from(t: KeywordTable) -> Self {
        t.entries
    }
}

/// Negation cues and the tokens that end a cue's scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationRules {
    pub cues: Vec<String>,
    pub scope_breakers: Vec<String>,
}

impl Default for NegationRules {
    fn default() -> Self {
        Self {
            cues: ["no", "without", "no evident", "free of", "negative for"]
                .map(String::from)
                .to_vec(),
            scope_breakers: ["but", "however"].map(String::from).to_vec(),
        }
    }
}

impl NegationRules {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(path))
    }
}

/// Key phrases marking a report conclusion as healthy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthPhrases {
    pub phrases: Vec<String>,
}

impl Default for HealthPhrases {
    fn default() -> Self {
        Self {
            phrases: vec![
                "show no obvious abnormality".into(),
                "show no active lesion".into(),
            ],
        }
    }
}

/// One keyword hit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub keyword: String,
    /// Byte span in the report's raw text.
    pub span: Range<usize>,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathologyLabels {
    present: [bool; 6],
    evidence: [Vec<Evidence>; 6],
}

impl PathologyLabels {
    pub fn is_present(&self, p: Pathology) -> bool {
        self.present[p.index()]
    }

    pub fn evidence(&self, p: Pathology) -> &[Evidence] {
        &self.evidence[p.index()]
    }

    pub fn as_array(&self) -> [bool; 6] {
        self.present
    }

    pub fn present_entities(&self) -> Vec<Pathology> {
        Pathology::ALL
            .into_iter()
            .filter(|p| self.is_present(*p))
            .collect()
    }
}

fn find_subsequence<S: AsRef<str>>(haystack: &[S], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| {
            haystack[i..i + needle.len()]
                .iter()
                .zip(needle)
                .all(|(h, n)| h.as_ref() == n)
        })
        .collect()
}

/// Whether the keyword match starting at token `match_start` of `sentence` is
/// negated: some cue ends at or before the match and no scope breaker sits
/// between the cue and the match.
pub fn is_negated<S: AsRef<str>>(
    match_start: usize,
    sentence: &[S],
    rules: &NegationRules,
) -> bool {
    let prefix = &sentence[..match_start.min(sentence.len())];
    rules.cues.iter().any(|cue| {
        let cue = token_texts(cue);
        find_subsequence(prefix, &cue).into_iter().any(|at| {
            prefix[at + cue.len()..]
                .iter()
                .all(|t| !rules.scope_breakers.iter().any(|b| b == t.as_ref()))
        })
    })
}

/// Labeler bundling the keyword table, negation rules and health phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeler {
    pub keywords: KeywordTable,
    pub negation: NegationRules,
    pub health: HealthPhrases,
}

impl Labeler {
    pub fn new(keywords: KeywordTable) -> Self {
        Self {
            keywords,
            ..Self::default()
        }
    }

    pub fn extract(&self, r: &ReportRecord) -> PathologyLabels {
        let mut labels = PathologyLabels::default();
        let words = r.token_texts();
        let compiled: Vec<(Pathology, &str, Vec<String>)> = self
            .keywords
            .iter()
            .flat_map(|(p, kws)| kws.iter().map(move |k| (p, k.as_str(), token_texts(k))))
            .collect();
        for sentence in sentence_ranges(&r.raw_text, &r.tokens) {
            let sent_words = &words[sentence.clone()];
            for (p, keyword, pattern) in &compiled {
                for at in find_subsequence(sent_words, pattern) {
                    let first = &r.tokens[sentence.start + at];
                    let last = &r.tokens[sentence.start + at + pattern.len() - 1];
                    let negated = is_negated(at, sent_words, &self.negation);
                    labels.evidence[p.index()].push(Evidence {
                        keyword: keyword.to_string(),
                        span: first.start..last.end,
                        negated,
                    });
                    if !negated {
                        labels.present[p.index()] = true;
                    }
                }
            }
        }
        for ev in labels.evidence.iter_mut() {
            ev.sort_by(|a, b| {
                (a.span.start, a.span.end, &a.keyword).cmp(&(b.span.start, b.span.end, &b.keyword))
            });
        }
        labels
    }

    pub fn is_healthy(&self, r: &ReportRecord) -> bool {
        contains_health_phrase(&r.conclusion, &self.health)
    }
}

fn contains_health_phrase(conclusion: &str, health: &HealthPhrases) -> bool {
    let words = token_texts(&crate::corpus::normalize_text(conclusion));
    health
        .phrases
        .iter()
        .map(|p| token_texts(&crate::corpus::normalize_text(p)))
        .any(|p| !find_subsequence(&words, &p).is_empty())
}

/// Labels `r` with the default negation rules.
pub fn extract_labels(r: &ReportRecord, kt: &KeywordTable) -> PathologyLabels {
    Labeler::new(kt.clone()).extract(r)
}

/// Whether the report's conclusion contains a default health key phrase.
pub fn is_healthy_report(r: &ReportRecord) -> bool {
    contains_health_phrase(&r.conclusion, &HealthPhrases::default())
}
