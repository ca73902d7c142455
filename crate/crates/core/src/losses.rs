//! Training objectives: the robust contrastive loss with false-negative
//! corrected positive sets, its InfoNCE special case, and the dual
//! (pairwise + relation) distillation loss. All gradients are analytic.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, ReportRecord};
use crate::embed::{check_same_shape, unit_rows, EmbeddingMatrix, RelationMatrix};
use crate::error::{Error, Result};
use crate::labeler::HealthPhrases;

/// Default contrastive temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Per-sample positive text sets. `sets[i]` is sorted, deduplicated, and
/// always contains `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct PositiveSetMap {
    sets: Vec<Vec<usize>>,
}

impl PositiveSetMap {
    /// Validates and canonicalizes (sorts, dedups) the given sets.
    pub fn new(mut sets: Vec<Vec<usize>>) -> Result<Self> {
        let n = sets.len();
        for (i, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&bad) = set.iter().find(|&&j| j >= n) {
                return Err(Error::InvalidArgument(format!(
                    "positive set {i} references index {bad}, batch size is {n}"
                )));
            }
            if set.binary_search(&i).is_err() {
                return Err(Error::InvalidArgument(format!(
                    "positive set {i} does not contain its own pair"
                )));
            }
        }
        Ok(Self { sets })
    }

    /// Every sample positive only with its own pair.
    pub fn singletons(n: usize) -> Self {
        Self {
            sets: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Samples sharing the same `Some` key are mutually positive; `None`
    /// samples are singletons.
    pub fn from_group_keys<K: Eq + Hash>(keys: &[Option<K>]) -> Self {
        let mut groups: HashMap<&K, Vec<usize>> = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            if let Some(k) = k {
                groups.entry(k).or_default().push(i);
            }
        }
        let sets = keys
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                Some(k) => groups[k].clone(),
                None => vec![i],
            })
            .collect();
        Self { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Positive image sets per text: `j -> { i : j in P_i }`.
    pub fn transpose(&self) -> Self {
        let mut sets = vec![Vec::new(); self.sets.len()];
        for (i, set) in self.sets.iter().enumerate() {
            for &j in set {
                sets[j].push(i);
            }
        }
        Self { sets }
    }

    pub fn is_symmetric(&self) -> bool {
        self.sets
            .iter()
            .enumerate()
            .all(|(i, set)| set.iter().all(|&j| self.sets[j].binary_search(&i).is_ok()))
    }
}

impl TryFrom<Vec<Vec<usize>>> for PositiveSetMap {
    type Error = Error;

    fn try_from(sets: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(sets)
    }
}

impl From<PositiveSetMap> for Vec<Vec<usize>> {
    fn from(p: PositiveSetMap) -> Self {
        p.sets
    }
}

/// Applies the two false-negative correction rules to a batch of reports.
///
/// Healthy reports (a health key phrase in the conclusion) are all mutually
/// positive. Abnormal reports are positive only with abnormal reports whose
/// normalized text is byte-identical.
pub fn build_positive_sets(batch: &[ReportRecord]) -> PositiveSetMap {
    build_positive_sets_with(batch, &HealthPhrases::default())
}

pub fn build_positive_sets_with(batch: &[ReportRecord], health: &HealthPhrases) -> PositiveSetMap {
    let labeler = crate::labeler::Labeler {
        health: health.clone(),
        ..Default::default()
    };
    #[derive(PartialEq, Eq, Hash)]
    enum Key {
        Healthy,
        Text(String),
    }
    let keys: Vec<Option<Key>> = batch
        .iter()
        .map(|r| {
            Some(if labeler.is_healthy(r) {
                Key::Healthy
            } else {
                Key::Text(normalize_text(&r.raw_text))
            })
        })
        .collect();
    PositiveSetMap::from_group_keys(&keys)
}

/// A named additive component of a loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerm {
    pub name: &'static str,
    pub value: f64,
}

/// Loss value with gradients for each input, in argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<EmbeddingMatrix>,
    pub terms: Vec<LossTerm>,
}

impl LossValue {
    pub fn grad(&self, input: usize) -> &EmbeddingMatrix {
        &self.grads[input]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveOptions {
    pub temperature: f64,
    /// Averages the image→text loss with the text→image loss.
    pub symmetric: bool,
}

impl Default for ContrastiveOptions {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            symmetric: false,
        }
    }
}

/// One direction of the contrastive loss over the similarity matrix
/// `s[i][k] = a_i · b_k`. Returns the loss and `dL/ds`.
fn directional_loss(sim: &[f64], n: usize, positives: &PositiveSetMap, t: f64) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut grad = vec![0.0; n * n];
    let scale = 1.0 / (n as f64 * t);
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let logits: Vec<f64> = row.iter().map(|s| s / t).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let lse = max + sum.ln();
        let pos = positives.get(i);
        let weight = 1.0 / pos.len() as f64;
        let term: f64 = pos.iter().map(|&j| lse - logits[j]).sum::<f64>() * weight;
        total += term;
        let g = &mut grad[i * n..(i + 1) * n];
        for (k, e) in exps.iter().enumerate() {
            g[k] = e / sum * scale;
        }
        for &j in pos {
            g[j] -= weight * scale;
        }
    }
    (total / n as f64, grad)
}

/// Chain rule through `u = x / |x|`: `dL/dx = (g - (g·u) u) / |x|`.
fn backprop_normalize(units: &[f64], norms: &[f64], grad_units: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; units.len()];
    for (i, norm) in norms.iter().enumerate() {
        let u = &units[i * dim..(i + 1) * dim];
        let g = &grad_units[i * dim..(i + 1) * dim];
        let proj: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &gu), &uu) in out[i * dim..(i + 1) * dim].iter_mut().zip(g).zip(u) {
            *o = (gu - proj * uu) / norm;
        }
    }
    out
}

/// Robust contrastive loss (image → text), averaging the log-softmax over
/// each sample's positive set:
///
/// `L = -(1/N) Σ_i (1/|P_i|) Σ_{j∈P_i} log softmax_k(cos(I_i, T_k)/t)[j]`
pub fn roco_loss(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    positives: &PositiveSetMap,
    temperature: f64,
) -> Result<LossValue> {
    roco_loss_with(
        img,
        txt,
        positives,
        &ContrastiveOptions {
            temperature,
            symmetric: false,
        },
    )
}

pub fn roco_loss_with(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    positives: &PositiveSetMap,
    opts: &ContrastiveOptions,
) -> Result<LossValue> {
    let t = opts.temperature;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {t}"
        )));
    }
    check_same_shape(img, txt, "image vs text embeddings")?;
    let n = img.rows();
    let d = img.dim();
    if positives.len() != n {
        return Err(Error::DimMismatch {
            context: "positive sets vs batch size",
            left: positives.len(),
            right: n,
        });
    }
    let (u, u_norms) = unit_rows(img, "image embeddings")?;
    let (v, v_norms) = unit_rows(txt, "text embeddings")?;

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            sim[i * n + k] = crate::embed::dot(&u[i * d..(i + 1) * d], &v[k * d..(k + 1) * d]);
        }
    }

    let (i2t, mut g) = directional_loss(&sim, n, positives, t);
    let mut terms = vec![LossTerm {
        name: "image_to_text",
        value: i2t,
    }];
    let value = if opts.symmetric {
        let mut sim_t = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                sim_t[k * n + i] = sim[i * n + k];
            }
        }
        let (t2i, g_t) = directional_loss(&sim_t, n, &positives.transpose(), t);
        for i in 0..n {
            for k in 0..n {
                g[i * n + k] = 0.5 * (g[i * n + k] + g_t[k * n + i]);
            }
        }
        terms.push(LossTerm {
            name: "text_to_image",
            value: t2i,
        });
        0.5 * (i2t + t2i)
    } else {
        i2t
    };

    let mut gu = vec![0.0; n * d];
    let mut gv = vec![0.0; n * d];
    for i in 0..n {
        for k in 0..n {
            let gik = g[i * n + k];
            if gik == 0.0 {
                continue;
            }
            for c in 0..d {
                gu[i * d + c] += gik * v[k * d + c];
                gv[k * d + c] += gik * u[i * d + c];
            }
        }
    }
    let grad_img = EmbeddingMatrix::new(n, d, backprop_normalize(&u, &u_norms, &gu, d))?;
    let grad_txt = EmbeddingMatrix::new(n, d, backprop_normalize(&v, &v_norms, &gv, d))?;
    Ok(LossValue {
        value,
        grads: vec![grad_img, grad_txt],
        terms,
    })
}

/// Standard InfoNCE: the robust loss with every positive set `{i}`.
pub fn infonce_loss(
    img: &EmbeddingMatrix,
    txt: &EmbeddingMatrix,
    temperature: f64,
) -> Result<LossValue> {
    roco_loss(
        img,
        txt,
        &PositiveSetMap::singletons(img.rows()),
        temperature,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::InvalidArgument(format!(
                "reduction must be sum or mean, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

/// Dual distillation loss: squared pairwise residual plus squared residual
/// between the student's and teacher's relation matrices.
///
/// The teacher is frozen, so its gradient (second entry of `grads`) is zero.
pub fn distill_loss(
    student: &EmbeddingMatrix,
    teacher: &EmbeddingMatrix,
    reduction: Reduction,
) -> Result<LossValue> {
    check_same_shape(student, teacher, "student vs teacher embeddings")?;
    let m = student.rows();
    let d = student.dim();
    let (u, norms) = unit_rows(student, "student embeddings")?;
    let (tu, _) = unit_rows(teacher, "teacher embeddings")?;
    let p_student = RelationMatrix::from_units(&u, m, d);
    let p_teacher = RelationMatrix::from_units(&tu, m, d);

    let (c_pair, c_rel) = match reduction {
        Reduction::Sum => (1.0, 1.0),
        Reduction::Mean => (1.0 / (m * d) as f64, 1.0 / (m * m) as f64),
    };

    let residual: Vec<f64> = student
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(a, b)| a - b)
        .collect();
    let pairwise = c_pair * residual.iter().map(|r| r * r).sum::<f64>();
    let rel_diff: Vec<f64> = p_student
        .values()
        .iter()
        .zip(p_teacher.values())
        .map(|(a, b)| a - b)
        .collect();
    let relation = c_rel * rel_diff.iter().map(|r| r * r).sum::<f64>();

    // dL/du_i = 4 c Σ_j D_ij u_j  (D symmetric)
    let mut gu = vec![0.0; m * d];
    for i in 0..m {
        for j in 0..m {
            let w = 4.0 * c_rel * rel_diff[i * m + j];
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                gu[i * d + c] += w * u[j * d + c];
            }
        }
    }
    let mut grad = backprop_normalize(&u, &norms, &gu, d);
    for (g, r) in grad.iter_mut().zip(&residual) {
        *g += 2.0 * c_pair * r;
    }

    Ok(LossValue {
        value: pairwise + relation,
        grads: vec![
            EmbeddingMatrix::new(m, d, grad)?,
            EmbeddingMatrix::zeros(m, d),
        ],
        terms: vec![
            LossTerm {
                name: "pairwise",
                value: pairwise,
            },
            LossTerm {
                name: "relation",
                value: relation,
            },
        ],
    })
}
