//! Desk-scale end-to-end trainer.
//!
//! Synthetic paired image/text features feed two linear encoders trained
//! with the contrastive objective (robust or plain InfoNCE) plus the dual
//! distillation loss against a frozen, perfectly class-separated teacher.

use serde::{Deserialize, Serialize};

use crate::embed::{relation_matrix, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::losses::{
    distill_loss, infonce_loss, roco_loss_with, ContrastiveOptions, LossValue, PositiveSetMap,
    Reduction,
};
use crate::retrieval::retrieve;
use crate::rng::{normal, normal_vec, seeded, shuffle, unit_f64};

/// Class id reserved for healthy samples.
pub const HEALTHY_CLASS: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Healthy reports carry fixed content with no per-sample detail.
    pub duplicate_text: bool,
    /// Per-sample wording noise on healthy texts, independent of the image.
    /// Zero makes every healthy text row identical.
    pub healthy_text_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            samples: 200,
            image_dim: 16,
            text_dim: 16,
            noise: 0.5,
            seed: 0,
            duplicate_text: true,
            healthy_text_noise: 0.0,
        }
    }
}

impl SyntheticSpec {
    /// Setting used by the RoCo vs InfoNCE comparison: healthy reports share
    /// fixed content but differ in wording.
    pub fn ablation_default() -> Self {
        Self {
            healthy_text_noise: 1.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub image_features: EmbeddingMatrix,
    pub text_features: EmbeddingMatrix,
    pub class_of: Vec<usize>,
    pub image_prototypes: EmbeddingMatrix,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    /// The samples in `range`, keeping prototypes and spec.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let idx: Vec<usize> = range.collect();
        Ok(Self {
            spec: self.spec.clone(),
            image_features: self.image_features.select_rows(&idx)?,
            text_features: self.text_features.select_rows(&idx)?,
            class_of: idx.iter().map(|&i| self.class_of[i]).collect(),
            image_prototypes: self.image_prototypes.clone(),
        })
    }

    pub fn is_healthy(&self, i: usize) -> bool {
        self.class_of[i] == HEALTHY_CLASS
    }

    /// Group keys for the false-negative rules: all healthy samples share a
    /// group, and abnormal samples group only with identical text rows.
    pub fn positive_groups(&self, indices: &[usize]) -> Vec<Option<GroupKey>> {
        indices
            .iter()
            .map(|&i| {
                Some(if self.is_healthy(i) {
                    GroupKey::Healthy
                } else {
                    GroupKey::Text(
                        self.text_features
                            .row(i)
                            .iter()
                            .map(|v| v.to_bits())
                            .collect(),
                    )
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Healthy,
    Text(Vec<u64>),
}

/// Builds a labelled synthetic dataset.
///
/// Each class has an image and a text prototype. A sample's image is its
/// image prototype plus `noise` times a per-sample detail vector; the text is
/// the text prototype plus `noise` times a fixed linear map of the same
/// detail, so pairs are identifiable. With `duplicate_text`, healthy texts
/// drop the detail and keep only the prototype plus optional wording noise.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.classes < 2 || spec.samples < spec.classes {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes and samples >= classes, got {} classes / {} samples",
            spec.classes, spec.samples
        )));
    }
    if spec.image_dim == 0 || spec.text_dim == 0 {
        return Err(Error::InvalidArgument(
            "feature dims must be positive".into(),
        ));
    }
    for (name, v) in [
        ("noise", spec.noise),
        ("healthy_text_noise", spec.healthy_text_noise),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be >= 0, got {v}"
            )));
        }
    }
    let (p, q) = (spec.image_dim, spec.text_dim);
    let mut rng = seeded(spec.seed);
    let img_protos = normal_vec(&mut rng, spec.classes * p);
    let txt_protos = normal_vec(&mut rng, spec.classes * q);
    let detail_map: Vec<f64> = normal_vec(&mut rng, q * p)
        .into_iter()
        .map(|v| v / (p as f64).sqrt())
        .collect();

    let mut images = Vec::with_capacity(spec.samples * p);
    let mut texts = Vec::with_capacity(spec.samples * q);
    let mut class_of = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let c = i % spec.classes;
        class_of.push(c);
        let detail = normal_vec(&mut rng, p);
        images.extend((0..p).map(|a| img_protos[c * p + a] + spec.noise * detail[a]));
        if c == HEALTHY_CLASS && spec.duplicate_text {
            let wording = normal_vec(&mut rng, q);
            texts.extend((0..q).map(|b| txt_protos[b] + spec.healthy_text_noise * wording[b]));
        } else {
            texts.extend((0..q).map(|b| {
                let mapped: f64 = (0..p).map(|a| detail_map[b * p + a] * detail[a]).sum();
                txt_protos[c * q + b] + spec.noise * mapped
            }));
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        image_features: EmbeddingMatrix::new(spec.samples, p, images)?,
        text_features: EmbeddingMatrix::new(spec.samples, q, texts)?,
        class_of,
        image_prototypes: EmbeddingMatrix::new(spec.classes, p, img_protos)?,
    })
}

/// Frozen teacher embeddings: a seeded random linear map applied to each
/// sample's noise-free class prototype, rows scaled to unit norm.
pub fn make_teacher(dataset: &SyntheticDataset, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "teacher dim must be positive".into(),
        ));
    }
    let p = dataset.image_prototypes.dim();
    let mut rng = seeded(seed ^ 0x0074_6561_6368_6572);
    let map = normal_vec(&mut rng, p * dim);
    let per_class = dataset
        .image_prototypes
        .matmul(&map, dim)?
        .normalize_rows()?;
    let rows: Vec<usize> = dataset.class_of.clone();
    per_class.select_rows(&rows)
}

/// `x Wᵀ + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearEncoder {
    pub fn new_random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim)
                .map(|_| normal(&mut rng) * scale)
                .collect(),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if x.dim() != self.in_dim {
            return Err(Error::DimMismatch {
                context: "encoder input dim",
                left: x.dim(),
                right: self.in_dim,
            });
        }
        let mut out = Vec::with_capacity(x.rows() * self.out_dim);
        for row in x.iter_rows() {
            for a in 0..self.out_dim {
                let w = &self.weight[a * self.in_dim..(a + 1) * self.in_dim];
                out.push(self.bias[a] + w.iter().zip(row).map(|(w, x)| w * x).sum::<f64>());
            }
        }
        EmbeddingMatrix::new(x.rows(), self.out_dim, out)
    }

    /// One gradient step given `dL/d(output)` for the batch `x`.
    fn step(&mut self, x: &EmbeddingMatrix, grad_out: &EmbeddingMatrix, lr: f64) {
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.out_dim];
        for (xr, gr) in x.iter_rows().zip(grad_out.iter_rows()) {
            for (a, &g) in gr.iter().enumerate() {
                gb[a] += g;
                for (c, &xv) in xr.iter().enumerate() {
                    gw[a * self.in_dim + c] += g * xv;
                }
            }
        }
        for (w, g) in self.weight.iter_mut().zip(gw) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub lambda_dist: f64,
    pub seed: u64,
    /// Positive sets from the false-negative rules; off means InfoNCE.
    pub use_roco: bool,
    pub use_distill: bool,
    pub symmetric: bool,
    pub embed_dim: usize,
    pub distill_reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.02,
            batch_size: 50,
            temperature: crate::losses::DEFAULT_TEMPERATURE,
            lambda_dist: 1.0,
            seed: 0,
            use_roco: true,
            use_distill: true,
            symmetric: false,
            embed_dim: 8,
            distill_reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size and embed_dim must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.lambda_dist >= 0.0 && self.lambda_dist.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_dist must be >= 0, got {}",
                self.lambda_dist
            )));
        }
        Ok(())
    }
}

/// Full-dataset losses at one point in training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub contrastive: f64,
    pub distill: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub grouped_recall_at_1: f64,
    pub relation_distance_initial: f64,
    pub relation_distance_final: f64,
    pub contrastive_initial: f64,
    pub contrastive_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub image_encoder: LinearEncoder,
    pub text_encoder: LinearEncoder,
    pub image_embeddings: EmbeddingMatrix,
    pub text_embeddings: EmbeddingMatrix,
    pub teacher: EmbeddingMatrix,
    /// Entry 0 is the untrained model; entry `e` follows epoch `e`.
    pub trace: Vec<EpochLoss>,
    pub summary: EvalSummary,
}

struct Objective<'a> {
    dataset: &'a SyntheticDataset,
    teacher: &'a EmbeddingMatrix,
    config: &'a TrainConfig,
}

impl Objective<'_> {
    fn positives(&self, indices: &[usize]) -> PositiveSetMap {
        if self.config.use_roco {
            PositiveSetMap::from_group_keys(&self.dataset.positive_groups(indices))
        } else {
            PositiveSetMap::singletons(indices.len())
        }
    }

    /// Losses and embedding gradients on the given samples.
    fn evaluate(
        &self,
        indices: &[usize],
        img_emb: &EmbeddingMatrix,
        txt_emb: &EmbeddingMatrix,
    ) -> Result<(LossValue, Option<LossValue>)> {
        let opts = ContrastiveOptions {
            temperature: self.config.temperature,
            symmetric: self.config.symmetric,
        };
        let contrastive = roco_loss_with(img_emb, txt_emb, &self.positives(indices), &opts)?;
        let distill = if self.config.use_distill {
            let teacher = self.teacher.select_rows(indices)?;
            Some(distill_loss(
                img_emb,
                &teacher,
                self.config.distill_reduction,
            )?)
        } else {
            None
        };
        Ok((contrastive, distill))
    }

    fn full_loss(
        &self,
        epoch: usize,
        img: &LinearEncoder,
        txt: &LinearEncoder,
    ) -> Result<EpochLoss> {
        let all: Vec<usize> = (0..self.dataset.len()).collect();
        let ie = img.forward(&self.dataset.image_features)?;
        let te = txt.forward(&self.dataset.text_features)?;
        let (c, d) = self.evaluate(&all, &ie, &te)?;
        let distill = d.map_or(0.0, |d| d.value);
        Ok(EpochLoss {
            epoch,
            contrastive: c.value,
            distill,
            total: c.value + self.config.lambda_dist * distill,
        })
    }
}

/// Image→text recall@1 where a hit is the paired text, any healthy text for
/// a healthy query, or a byte-identical text.
pub fn grouped_recall_at_1(
    dataset: &SyntheticDataset,
    image_embeddings: &EmbeddingMatrix,
    text_embeddings: &EmbeddingMatrix,
) -> Result<f64> {
    let results = retrieve(image_embeddings, text_embeddings, 1)?;
    let hits = results
        .iter()
        .filter(|r| {
            let (i, j) = (r.query_index, r.matched_index);
            i == j
                || (dataset.is_healthy(i) && dataset.is_healthy(j))
                || dataset.text_features.row(i) == dataset.text_features.row(j)
        })
        .count();
    Ok(hits as f64 / results.len() as f64)
}

pub fn train(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let teacher = make_teacher(dataset, config.embed_dim, config.seed)?;
    let mut img_enc = LinearEncoder::new_random(
        dataset.image_features.dim(),
        config.embed_dim,
        config.seed.wrapping_mul(2).wrapping_add(1),
    );
    let mut txt_enc = LinearEncoder::new_random(
        dataset.text_features.dim(),
        config.embed_dim,
        config.seed.wrapping_mul(2).wrapping_add(2),
    );
    let objective = Objective {
        dataset,
        teacher: &teacher,
        config,
    };

    let initial_student = img_enc.forward(&dataset.image_features)?;
    let teacher_relation = relation_matrix(&teacher)?;
    let relation_distance_initial =
        relation_matrix(&initial_student)?.frobenius_distance(&teacher_relation)?;

    let mut trace = vec![objective.full_loss(0, &img_enc, &txt_enc)?];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = seeded(config.seed ^ 0x0053_4855_4646_4c45);
    for epoch in 1..=config.epochs {
        shuffle(&mut rng, &mut order);
        for batch in order.chunks(config.batch_size) {
            let x_img = dataset.image_features.select_rows(batch)?;
            let x_txt = dataset.text_features.select_rows(batch)?;
            let ie = img_enc.forward(&x_img)?;
            let te = txt_enc.forward(&x_txt)?;
            let (c, d) = objective.evaluate(batch, &ie, &te)?;
            let mut g_img = c.grads[0].clone();
            if let Some(d) = &d {
                for (g, dg) in g_img.data_mut().iter_mut().zip(d.grads[0].data()) {
                    *g += config.lambda_dist * dg;
                }
            }
            img_enc.step(&x_img, &g_img, config.learning_rate);
            txt_enc.step(&x_txt, &c.grads[1], config.learning_rate);
        }
        let loss = objective.full_loss(epoch, &img_enc, &txt_enc)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: loss.total,
            });
        }
        trace.push(loss);
    }

    let image_embeddings = img_enc.forward(&dataset.image_features)?;
    let text_embeddings = txt_enc.forward(&dataset.text_features)?;
    let summary = EvalSummary {
        grouped_recall_at_1: grouped_recall_at_1(dataset, &image_embeddings, &text_embeddings)?,
        relation_distance_initial,
        relation_distance_final: relation_matrix(&image_embeddings)?
            .frobenius_distance(&teacher_relation)?,
        contrastive_initial: trace[0].contrastive,
        contrastive_final: trace[trace.len() - 1].contrastive,
    };
    Ok(TrainOutcome {
        image_encoder: img_enc,
        text_encoder: txt_enc,
        image_embeddings,
        text_embeddings,
        teacher,
        trace,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub seed: u64,
    pub recall_roco: f64,
    pub recall_infonce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub runs: Vec<AblationRun>,
    /// Seeds where the robust loss strictly beats InfoNCE.
    pub wins: usize,
    pub mean_margin: f64,
}

/// Trains with and without false-negative correction for each seed and
/// compares grouped recall@1 on a held-out split of `spec.samples` fresh
/// samples drawn from the same prototypes.
pub fn ablation(
    spec: &SyntheticSpec,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs at least one seed".into(),
        ));
    }
    let n = spec.samples;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let full = make_synthetic(&SyntheticSpec {
            seed,
            samples: 2 * n,
            ..spec.clone()
        })?;
        let train_set = full.subset(0..n)?;
        let test_set = full.subset(n..2 * n)?;
        let mut recall = [0.0; 2];
        for (slot, use_roco) in [true, false].into_iter().enumerate() {
            let out = train(
                &train_set,
                &TrainConfig {
                    seed,
                    use_roco,
                    ..config.clone()
                },
            )?;
            let ie = out.image_encoder.forward(&test_set.image_features)?;
            let te = out.text_encoder.forward(&test_set.text_features)?;
            recall[slot] = grouped_recall_at_1(&test_set, &ie, &te)?;
        }
        runs.push(AblationRun {
            seed,
            recall_roco: recall[0],
            recall_infonce: recall[1],
        });
    }
    let wins = runs
        .iter()
        .filter(|r| r.recall_roco > r.recall_infonce)
        .count();
    let mean_margin = runs
        .iter()
        .map(|r| r.recall_roco - r.recall_infonce)
        .sum::<f64>()
        / runs.len() as f64;
    Ok(AblationSummary {
        runs,
        wins,
        mean_margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradLoss {
    Roco,
    Infonce,
    Distill,
}

impl std::str::FromStr for GradLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roco" => Ok(GradLoss::Roco),
            "infonce" => Ok(GradLoss::Infonce),
            "distill" => Ok(GradLoss::Distill),
            other => Err(Error::InvalidArgument(format!(
                "loss must be roco, infonce or distill, got {other:?}"
            ))),
        }
    }
}

/// Relative error with a small absolute floor in the denominator.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: GradLoss,
    pub rows: usize,
    pub dim: usize,
    pub seed: u64,
    pub max_relative_error: f64,
}

/// Random positive sets: samples fall into a few groups, some of which are
/// merged, others left as singletons.
fn random_positive_sets(n: usize, rng: &mut crate::rng::SeededRng) -> PositiveSetMap {
    let keys: Vec<Option<usize>> = (0..n)
        .map(|_| {
            let u = unit_f64(rng);
            if u < 0.5 {
                None
            } else {
                Some((u * 6.0) as usize)
            }
        })
        .collect();
    PositiveSetMap::from_group_keys(&keys)
}

/// Compares analytic gradients against central finite differences on
/// seeded normal inputs, over every input matrix that receives a gradient.
pub fn gradcheck(loss: GradLoss, rows: usize, dim: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let a = EmbeddingMatrix::new(rows, dim, normal_vec(&mut rng, rows * dim))?;
    let b = EmbeddingMatrix::new(rows, dim, normal_vec(&mut rng, rows * dim))?;
    let positives = match loss {
        GradLoss::Roco => random_positive_sets(rows, &mut rng),
        _ => PositiveSetMap::singletons(rows),
    };
    let t = GRADCHECK_TEMPERATURE;
    let eval = |a: &EmbeddingMatrix, b: &EmbeddingMatrix| -> Result<LossValue> {
        match loss {
            GradLoss::Roco => crate::losses::roco_loss(a, b, &positives, t),
            GradLoss::Infonce => infonce_loss(a, b, t),
            GradLoss::Distill => distill_loss(a, b, Reduction::Sum),
        }
    };
    let base = eval(&a, &b)?;
    let inputs = if loss == GradLoss::Distill { 1 } else { 2 };
    let mut worst: f64 = 0.0;
    for which in 0..inputs {
        for k in 0..rows * dim {
            let mut plus = [a.clone(), b.clone()];
            let mut minus = [a.clone(), b.clone()];
            plus[which].data_mut()[k] += GRADCHECK_STEP;
            minus[which].data_mut()[k] -= GRADCHECK_STEP;
            let fp = eval(&plus[0], &plus[1])?.value;
            let fm = eval(&minus[0], &minus[1])?.value;
            let numeric = (fp - fm) / (2.0 * GRADCHECK_STEP);
            worst = worst.max(relative_error(base.grads[which].data()[k], numeric));
        }
    }
    Ok(GradCheckReport {
        loss,
        rows,
        dim,
        seed,
        max_relative_error: worst,
    })
}
