//! Shared helpers and brute-force oracles for the integration tests. The
//! oracles are written independently of the library code paths: naive loops,
//! dense vectors and exhaustive search.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use ctalign::embed::EmbeddingMatrix;
use ctalign::rng::{normal_vec, seeded, unit_f64, SeededRng};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn random_matrix(rng: &mut SeededRng, rows: usize, dim: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, dim, normal_vec(rng, rows * dim)).unwrap()
}

pub fn rng(seed: u64) -> SeededRng {
    seeded(seed)
}

pub fn below(rng: &mut SeededRng, n: usize) -> usize {
    ((unit_f64(rng) * n as f64) as usize).min(n - 1)
}

/// Random orthonormal `d x d` matrix (row-major) from Gram-Schmidt on a
/// Gaussian matrix.
pub fn random_rotation(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v = normal_vec(rng, d);
        for b in &q {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q.into_iter().flatten().collect()
}

pub fn rotate(m: &EmbeddingMatrix, rot: &[f64]) -> EmbeddingMatrix {
    m.matmul(rot, m.dim()).unwrap()
}

/// Multiplies each row by a positive factor in [0.1, 10).
pub fn rescale_rows(m: &EmbeddingMatrix, rng: &mut SeededRng) -> EmbeddingMatrix {
    let mut data = Vec::with_capacity(m.data().len());
    for row in m.iter_rows() {
        let s = 0.1 + 9.9 * unit_f64(rng);
        data.extend(row.iter().map(|v| v * s));
    }
    EmbeddingMatrix::new(m.rows(), m.dim(), data).unwrap()
}

pub fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Top-k by repeated linear scans for the maximum; ties keep the lower index.
pub fn brute_retrieve(
    q: &EmbeddingMatrix,
    g: &EmbeddingMatrix,
    k: usize,
) -> Vec<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for qi in 0..q.rows() {
        let scores: Vec<f64> = (0..g.rows())
            .map(|j| brute_cosine(q.row(qi), g.row(j)))
            .collect();
        let mut taken = vec![false; g.rows()];
        let mut ranked = Vec::new();
        for _ in 0..k.min(g.rows()) {
            let mut best: Option<usize> = None;
            for j in 0..g.rows() {
                if taken[j] {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) if scores[j] > scores[b] => best = Some(j),
                    _ => {}
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            ranked.push((b, scores[b]));
        }
        out.push(ranked);
    }
    out
}

fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].to_vec())
        .collect()
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn brute_bleu4(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut precisions = Vec::new();
    for n in 1..=4 {
        let cg = grams(c, n);
        let rg = grams(r, n);
        if cg.is_empty() {
            return 0.0;
        }
        let mut seen: Vec<&Vec<String>> = Vec::new();
        let mut clipped = 0;
        for g in &cg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            clipped += count(&cg, g).min(count(&rg, g));
        }
        if clipped == 0 {
            return 0.0;
        }
        precisions.push(clipped as f64 / cg.len() as f64);
    }
    let geo = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    let bp = if c.len() < r.len() {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    } else {
        1.0
    };
    bp * geo.exp()
}

/// Full-table LCS; the F-measure is formed from the exact rational
/// 2·LCS/(|c|+|r|), which equals 2PR/(P+R).
pub fn brute_rouge_l(c: &[String], r: &[String]) -> f64 {
    let mut t = vec![vec![0usize; r.len() + 1]; c.len() + 1];
    for i in 1..=c.len() {
        for j in 1..=r.len() {
            t[i][j] = if c[i - 1] == r[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    let l = t[c.len()][r.len()];
    if l == 0 {
        return 0.0;
    }
    (2 * l) as f64 / (c.len() + r.len()) as f64
}

/// Enumerates every partial matching of candidate positions to equal
/// reference positions; keeps the maximum match count and, among those,
/// the fewest chunks.
pub fn brute_meteor_alignment(c: &[String], r: &[String]) -> (usize, usize) {
    fn chunks(pairs: &[(usize, usize)]) -> usize {
        let mut n = 0;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if k == 0 || !(pairs[k - 1].0 + 1 == i && pairs[k - 1].1 + 1 == j) {
                n += 1;
            }
        }
        n
    }
    fn go(
        i: usize,
        c: &[String],
        r: &[String],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == c.len() {
            let m = pairs.len();
            let ch = chunks(pairs);
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        go(i + 1, c, r, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && c[i] == r[j] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, c, r, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(
        0,
        c,
        r,
        &mut vec![false; r.len()],
        &mut Vec::new(),
        &mut best,
    );
    best
}

pub fn brute_meteor(c: &[String], r: &[String]) -> f64 {
    let (m, ch) = brute_meteor_alignment(c, r);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / c.len() as f64;
    let rr = m / r.len() as f64;
    let fmean = 10.0 * p * rr / (rr + 9.0 * p);
    fmean * (1.0 - 0.5 * (ch as f64 / m).powi(3))
}

/// CIDEr-D on dense tf-idf vectors indexed by every n-gram in the corpus and
/// candidate.
pub fn brute_cider(
    c: &[String],
    refs: &[Vec<String>],
    docs: &[Vec<Vec<String>>],
    sigma: f64,
) -> f64 {
    let num_docs = docs.len() as f64;
    let mut total = 0.0;
    for r in refs {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let mut vocab: Vec<Vec<String>> = Vec::new();
            for g in grams(c, n).into_iter().chain(grams(r, n)) {
                if !vocab.contains(&g) {
                    vocab.push(g);
                }
            }
            let idf: Vec<f64> = vocab
                .iter()
                .map(|g| {
                    let df = docs
                        .iter()
                        .filter(|d| d.iter().any(|x| count(&grams(x, n), g) > 0))
                        .count();
                    num_docs.ln() - (df.max(1) as f64).ln()
                })
                .collect();
            let vc: Vec<f64> = vocab
                .iter()
                .zip(&idf)
                .map(|(g, w)| count(&grams(c, n), g) as f64 * w)
                .collect();
            let vr: Vec<f64> = vocab
                .iter()
                .zip(&idf)
                .map(|(g, w)| count(&grams(r, n), g) as f64 * w)
                .collect();
            let nc = vc.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nr = vr.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut val: f64 = vc.iter().zip(&vr).map(|(a, b)| a.min(*b) * b).sum();
            if nc != 0.0 && nr != 0.0 {
                val /= nc * nr;
            }
            let delta = c.len() as f64 - r.len() as f64;
            per_n += val * (-(delta * delta) / (2.0 * sigma * sigma)).exp();
        }
        total += per_n / 4.0;
    }
    10.0 * total / refs.len() as f64
}

pub fn random_tokens(rng: &mut SeededRng, vocab: &[&str], min: usize, max: usize) -> Vec<String> {
    let len = min + below(rng, max - min + 1);
    (0..len)
        .map(|_| vocab[below(rng, vocab.len())].to_string())
        .collect()
}

/// Parses the labeler fixture table into id -> (six labels, negated hits).
pub fn labeler_expectations() -> BTreeMap<String, ([bool; 6], usize)> {
    let text = std::fs::read_to_string(fixture("labeler_labels.tsv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let names: Vec<ctalign::labeler::Pathology> =
        header[1..7].iter().map(|h| h.parse().unwrap()).collect();
    let mut out = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let mut labels = [false; 6];
        for (k, p) in names.iter().enumerate() {
            labels[p.index()] = cols[k + 1] == "1";
        }
        out.insert(cols[0].to_string(), (labels, cols[7].parse().unwrap()));
    }
    out
}
