//! Entity-focused masking.
//!
//! Entity/attribute phrases are masked as whole units with probability
//! `entity_rate`, the remaining tokens independently with probability
//! `random_rate`, and the result is trimmed to a global budget. A phrase is
//! never partially masked, so no attribute word survives next to its masked
//! entity.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, unit_f64};

pub const DEFAULT_MASK_SYMBOL: &str = "[MASK]";

/// Entity and attribute vocabularies. Tokens that look like sizes (`5mm`,
/// `12`, `3.5cm`, `mm`) count as attributes when `size_tokens` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseLexicon {
    pub entities: Vec<Vec<String>>,
    pub attributes: Vec<Vec<String>>,
    #[serde(default = "default_true")]
    pub size_tokens: bool,
}

fn default_true() -> bool {
    true
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|w| w.to_string()).collect()
}

impl Default for PhraseLexicon {
    fn default() -> Self {
        Self {
            entities: vec![
                words(&[
                    "nodule", "nodules", "nodular", "mass", "masses", "lesion", "lesions",
                ]),
                words(&[
                    "opacity",
                    "opacities",
                    "infiltrate",
                    "infiltration",
                    "reticulation",
                    "scar",
                    "scarring",
                    "thickening",
                    "consolidation",
                ]),
                words(&["effusion", "effusions", "fluid"]),
                words(&["emphysema", "bulla", "bullae"]),
                words(&["inflammation", "pneumonia", "infection", "infectious"]),
                words(&["calcification", "calcifications"]),
            ],
            attributes: vec![
                words(&[
                    "left",
                    "right",
                    "upper",
                    "lower",
                    "middle",
                    "lobe",
                    "lobes",
                    "lung",
                    "lungs",
                    "bilateral",
                    "pleural",
                    "apical",
                    "basal",
                    "subpleural",
                ]),
                words(&[
                    "solid",
                    "ground",
                    "glass",
                    "part",
                    "mixed",
                    "calcified",
                    "patchy",
                    "cystic",
                    "spiculated",
                ]),
            ],
            size_tokens: true,
        }
    }
}

impl PhraseLexicon {
    pub fn validate(&self) -> Result<()> {
        if self.entities.iter().all(Vec::is_empty) {
            return Err(Error::Config("lexicon has no entity words".into()));
        }
        let bad = self
            .entities
            .iter()
            .chain(&self.attributes)
            .flatten()
            .find(|w| w.is_empty() || w.to_lowercase() != **w);
        match bad {
            Some(w) => Err(Error::Config(format!(
                "lexicon word {w:?} must be non-empty and lowercase"
            ))),
            None => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        let lex: Self = serde_json::from_str(&text).map_err(|e| Error::from(e).at_path(path))?;
        lex.validate().map_err(|e| e.at_path(path))?;
        Ok(lex)
    }

    fn compile(&self) -> CompiledLexicon<'_> {
        CompiledLexicon {
            entities: self.entities.iter().flatten().map(String::as_str).collect(),
            attributes: self
                .attributes
                .iter()
                .flatten()
                .map(String::as_str)
                .collect(),
            size_tokens: self.size_tokens,
        }
    }
}

struct CompiledLexicon<'a> {
    entities: HashSet<&'a str>,
    attributes: HashSet<&'a str>,
    size_tokens: bool,
}

impl CompiledLexicon<'_> {
    fn is_entity(&self, t: &str) -> bool {
        self.entities.contains(t)
    }

    fn is_member(&self, t: &str) -> bool {
        self.is_entity(t) || self.attributes.contains(t) || (self.size_tokens && is_size_token(t))
    }
}

/// `12`, `5mm`, `3.5cm`, or a bare `mm`/`cm`.
pub fn is_size_token(t: &str) -> bool {
    let unitless = t
        .strip_suffix("mm")
        .or_else(|| t.strip_suffix("cm"))
        .unwrap_or(t);
    if unitless.is_empty() {
        return t == "mm" || t == "cm";
    }
    let mut parts = unitless.splitn(2, '.');
    let whole = parts.next().unwrap_or("");
    let frac = parts.next();
    !whole.is_empty()
        && whole.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

/// Maximal runs of lexicon tokens that contain at least one entity token.
pub fn find_phrases<S: AsRef<str>>(tokens: &[S], lex: &PhraseLexicon) -> Vec<Range<usize>> {
    let lex = lex.compile();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !lex.is_member(tokens[i].as_ref()) {
            i += 1;
            continue;
        }
        let start = i;
        let mut has_entity = false;
        while i < tokens.len() && lex.is_member(tokens[i].as_ref()) {
            has_entity |= lex.is_entity(tokens[i].as_ref());
            i += 1;
        }
        if has_entity {
            out.push(start..i);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRates {
    pub entity_rate: f64,
    pub random_rate: f64,
    pub max_mask_fraction: f64,
}

impl Default for MaskRates {
    fn default() -> Self {
        Self {
            entity_rate: 0.5,
            random_rate: 0.15,
            max_mask_fraction: 0.30,
        }
    }
}

impl MaskRates {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.entity_rate) || !in_unit(self.random_rate) {
            return Err(Error::InvalidArgument(format!(
                "mask rates must lie in [0, 1], got entity {} random {}",
                self.entity_rate, self.random_rate
            )));
        }
        if !(self.max_mask_fraction > 0.0 && self.max_mask_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max mask fraction must lie in (0, 1], got {}",
                self.max_mask_fraction
            )));
        }
        Ok(())
    }

    /// `ceil(max_mask_fraction * n)`, ignoring representation error in the
    /// product (0.3 * 10 is 3, not 4).
    pub fn budget(&self, n: usize) -> usize {
        let raw = self.max_mask_fraction * n as f64;
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            raw.ceil() as usize
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanTag {
    EntityPhrase,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
    pub tag: SpanTag,
}

impl MaskSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub token_count: usize,
    pub spans: Vec<MaskSpan>,
    pub seed: u64,
    pub rates: MaskRates,
}

impl MaskPlan {
    pub fn masked_count(&self) -> usize {
        self.spans.iter().map(MaskSpan::len).sum()
    }

    pub fn masked_positions(&self) -> Vec<bool> {
        let mut out = vec![false; self.token_count];
        for s in &self.spans {
            out[s.start..s.end].iter_mut().for_each(|m| *m = true);
        }
        out
    }
}

/// Draws a mask plan. One uniform is consumed per phrase (in order), then one
/// per non-phrase token (in order), so the plan depends only on the inputs
/// and `seed`.
pub fn plan_mask<S: AsRef<str>>(
    tokens: &[S],
    lex: &PhraseLexicon,
    rates: &MaskRates,
    seed: u64,
) -> Result<MaskPlan> {
    rates.validate()?;
    let n = tokens.len();
    let phrases = find_phrases(tokens, lex);
    let mut in_phrase = vec![false; n];
    for p in &phrases {
        in_phrase[p.clone()].iter_mut().for_each(|f| *f = true);
    }

    let mut rng = seeded(seed);
    let mut spans = Vec::new();
    for p in &phrases {
        if unit_f64(&mut rng) < rates.entity_rate {
            spans.push(MaskSpan {
                start: p.start,
                end: p.end,
                tag: SpanTag::EntityPhrase,
            });
        }
    }
    for (i, _) in in_phrase.iter().enumerate().filter(|(_, f)| !**f) {
        if unit_f64(&mut rng) < rates.random_rate {
            spans.push(MaskSpan {
                start: i,
                end: i + 1,
                tag: SpanTag::Random,
            });
        }
    }
    spans.sort_by_key(|s| s.start);

    let budget = rates.budget(n);
    let mut total: usize = spans.iter().map(MaskSpan::len).sum();
    while total > budget {
        let victim = spans
            .iter()
            .rposition(|s| s.tag == SpanTag::Random)
            .or_else(|| spans.len().checked_sub(1))
            .expect("over budget implies a span exists");
        total -= spans.remove(victim).len();
    }

    Ok(MaskPlan {
        token_count: n,
        spans,
        seed,
        rates: *rates,
    })
}

/// Replaces every masked token with `mask_symbol`.
pub fn apply_mask<S: AsRef<str>>(
    tokens: &[S],
    plan: &MaskPlan,
    mask_symbol: &str,
) -> Result<Vec<String>> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    for s in &plan.spans {
        if s.start >= s.end || s.end > out.len() {
            return Err(Error::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: out.len(),
            });
        }
        for t in &mut out[s.start..s.end] {
            *t = mask_symbol.to_string();
        }
    }
    Ok(out)
}
