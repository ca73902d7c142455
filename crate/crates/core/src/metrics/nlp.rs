use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Gaussian length-penalty width used by CIDEr-D.
pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;
/// Search budget for the METEOR chunk minimization before falling back to the
/// best alignment found so far.
const METEOR_NODE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct NlpScores {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: f64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    out
}

/// Sentence BLEU-4 without smoothing: any zero n-gram precision gives 0.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() {
        log::warn!("BLEU-4 of an empty candidate is 0");
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / MAX_N as f64).exp()
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1. Written as `2·LCS/(|c|+|r|)`, which equals `2PR/(P+R)`.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    2.0 * l as f64 / (candidate.len() + reference.len()) as f64
}

/// Document frequencies of 1..4-grams over reference documents. A document
/// is the set of references for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiderStats {
    df: BTreeMap<Vec<String>, usize>,
    num_docs: usize,
}

impl CiderStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[Vec<Vec<S>>]) -> Self {
        if docs.len() < 2 {
            log::warn!(
                "CIDEr document frequencies over {} document(s) are degenerate",
                docs.len()
            );
        }
        let mut df = BTreeMap::new();
        for doc in docs {
            let mut seen = BTreeSet::new();
            for reference in doc {
                for n in 1..=MAX_N {
                    for g in ngram_counts(reference, n).into_keys() {
                        seen.insert(g.into_iter().map(str::to_string).collect::<Vec<_>>());
                    }
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self {
            df,
            num_docs: docs.len(),
        }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn document_frequency(&self, ngram: &[&str]) -> usize {
        let key: Vec<String> = ngram.iter().map(|s| s.to_string()).collect();
        self.df.get(&key).copied().unwrap_or(0)
    }

    fn idf(&self, ngram: &[&str]) -> f64 {
        let ref_len = (self.num_docs.max(1) as f64).ln();
        ref_len - (self.document_frequency(ngram).max(1) as f64).ln()
    }

    fn tfidf<'a, S: AsRef<str>>(
        &self,
        tokens: &'a [S],
    ) -> [(BTreeMap<Vec<&'a str>, f64>, f64); MAX_N] {
        std::array::from_fn(|k| {
            let vec: BTreeMap<Vec<&str>, f64> = ngram_counts(tokens, k + 1)
                .into_iter()
                .map(|(g, tf)| {
                    let w = tf as f64 * self.idf(&g);
                    (g, w)
                })
                .collect();
            let norm = vec.values().map(|w| w * w).sum::<f64>().sqrt();
            (vec, norm)
        })
    }
}

/// CIDEr-D with the standard `σ = 6` length penalty, scaled by 10.
pub fn cider<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], stats: &CiderStats) -> f64 {
    cider_with_sigma(candidate, references, stats, CIDER_SIGMA)
}

pub fn cider_with_sigma<S: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<S>],
    stats: &CiderStats,
    sigma: f64,
) -> f64 {
    if references.is_empty() {
        return 0.0;
    }
    let hyp = stats.tfidf(candidate);
    let mut per_ref: Vec<f64> = references
        .iter()
        .map(|reference| {
            let rv = stats.tfidf(reference);
            let delta = candidate.len() as f64 - reference.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
            let total: f64 = hyp
                .iter()
                .zip(&rv)
                .map(|((hv, hn), (rvec, rn))| {
                    let mut val: f64 = hv
                        .iter()
                        .map(|(g, h)| {
                            let r = rvec.get(g).copied().unwrap_or(0.0);
                            h.min(r) * r
                        })
                        .sum();
                    if *hn != 0.0 && *rn != 0.0 {
                        val /= hn * rn;
                    }
                    val * penalty
                })
                .sum();
            total / MAX_N as f64
        })
        .collect();
    // summing in sorted order makes the mean independent of reference order
    per_ref.sort_by(f64::total_cmp);
    10.0 * per_ref.iter().sum::<f64>() / references.len() as f64
}

struct ChunkSearch {
    cand: Vec<usize>,
    refs: Vec<usize>,
    positions: Vec<Vec<usize>>,
    used: Vec<bool>,
    skips_left: Vec<usize>,
    best: usize,
    nodes: usize,
}

impl ChunkSearch {
    fn search(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        self.nodes += 1;
        if self.nodes > METEOR_NODE_BUDGET {
            return;
        }
        let w = self.cand[i];
        let cont = prev.map(|p| p + 1);
        if let Some(j) = cont {
            if j < self.refs.len() && self.refs[j] == w && !self.used[j] {
                self.used[j] = true;
                self.search(i + 1, Some(j), chunks);
                self.used[j] = false;
            }
        }
        for k in 0..self.positions[w].len() {
            let j = self.positions[w][k];
            if self.used[j] || Some(j) == cont {
                continue;
            }
            self.used[j] = true;
            self.search(i + 1, Some(j), chunks + 1);
            self.used[j] = false;
        }
        if self.skips_left[w] > 0 {
            self.skips_left[w] -= 1;
            self.search(i + 1, None, chunks);
            self.skips_left[w] += 1;
        }
    }
}

fn intern<'a, S: AsRef<str>>(vocab: &mut BTreeMap<&'a str, usize>, tokens: &'a [S]) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| {
            let next = vocab.len();
            *vocab.entry(t.as_ref()).or_insert(next)
        })
        .collect()
}

/// Exact-match unigram alignment: returns `(matches, chunks)` where matches
/// is maximal and chunks is minimal among maximal alignments.
///
/// Chunk minimization is a branch-and-bound search; on very long inputs with
/// many repeated words it stops after a fixed node budget and reports the
/// best alignment found.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> (usize, usize) {
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    let cand = intern(&mut vocab, candidate);
    let refs = intern(&mut vocab, reference);
    let v = vocab.len();
    let mut positions = vec![Vec::new(); v];
    for (j, &w) in refs.iter().enumerate() {
        positions[w].push(j);
    }
    let mut cand_count = vec![0usize; v];
    for &w in &cand {
        cand_count[w] += 1;
    }
    let matches: usize = (0..v).map(|w| cand_count[w].min(positions[w].len())).sum();
    if matches == 0 {
        return (0, 0);
    }
    let skips_left = (0..v)
        .map(|w| cand_count[w] - cand_count[w].min(positions[w].len()))
        .collect();
    let mut s = ChunkSearch {
        cand,
        refs,
        positions,
        used: vec![false; reference.len()],
        skips_left,
        best: usize::MAX,
        nodes: 0,
    };
    s.search(0, None, 0);
    if s.nodes > METEOR_NODE_BUDGET {
        log::warn!(
            "METEOR chunk search hit its node budget ({} x {} tokens); chunk count is an upper bound",
            candidate.len(),
            reference.len()
        );
    }
    (matches, s.best)
}

/// METEOR with exact unigram matching only (no stemming or synonyms).
pub fn meteor_simple<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let (m, chunks) = meteor_alignment(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlpEval {
    pub per_report: Vec<(String, NlpScores)>,
    /// Mean of the per-report scores.
    pub mean: NlpScores,
}

/// Scores every generated report against the reference with the same id.
/// CIDEr document frequencies come from the reference corpus, one document
/// per report.
pub fn eval_nlp(generated: &Corpus, reference: &Corpus) -> Result<NlpEval> {
    let missing_in_generated: Vec<String> = reference
        .iter()
        .filter(|r| generated.get(&r.id).is_none())
        .map(|r| r.id.clone())
        .collect();
    let missing_in_reference: Vec<String> = generated
        .iter()
        .filter(|r| reference.get(&r.id).is_none())
        .map(|r| r.id.clone())
        .collect();
    if !missing_in_generated.is_empty() || !missing_in_reference.is_empty() {
        return Err(Error::IdMismatch {
            missing_in_generated,
            missing_in_reference,
        });
    }
    let docs: Vec<Vec<Vec<&str>>> = reference.iter().map(|r| vec![r.token_texts()]).collect();
    let stats = CiderStats::from_documents(&docs);
    let mut per_report = Vec::with_capacity(reference.len());
    let mut sum = NlpScores::default();
    for (truth, doc) in reference.iter().zip(&docs) {
        let cand = generated.get(&truth.id).expect("ids checked").token_texts();
        let reference_tokens = &doc[0];
        let s = NlpScores {
            bleu4: bleu4(&cand, reference_tokens),
            rouge_l: rouge_l(&cand, reference_tokens),
            cider: cider(&cand, doc, &stats),
            meteor: meteor_simple(&cand, reference_tokens),
        };
        sum.bleu4 += s.bleu4;
        sum.rouge_l += s.rouge_l;
        sum.cider += s.cider;
        sum.meteor += s.meteor;
        per_report.push((truth.id.clone(), s));
    }
    let n = per_report.len().max(1) as f64;
    Ok(NlpEval {
        per_report,
        mean: NlpScores {
            bleu4: sum.bleu4 / n,
            rouge_l: sum.rouge_l / n,
            cider: sum.cider / n,
            meteor: sum.meteor / n,
        },
    })
}
