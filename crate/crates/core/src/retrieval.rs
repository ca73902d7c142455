//! Exhaustive cosine retrieval and prompt-based zero-shot scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, dot, l2_norm, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_index: usize,
    pub matched_index: usize,
    pub score: f64,
    /// The best `k` gallery entries, best first, ties by lower index.
    pub top_k: Vec<(usize, f64)>,
}

fn row_norms(m: &EmbeddingMatrix, name: &'static str) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(row, r)| {
            let n = l2_norm(r);
            if n == 0.0 {
                Err(Error::ZeroRow { matrix: name, row })
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// For every query row, ranks all gallery rows by cosine similarity.
///
/// Exact ties resolve to the lower gallery index.
pub fn retrieve(
    queries: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<RetrievalResult>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if queries.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            context: "query vs gallery dim",
            left: queries.dim(),
            right: gallery.dim(),
        });
    }
    let q_norms = row_norms(queries, "queries")?;
    let g_norms = row_norms(gallery, "gallery")?;
    let keep = k.min(gallery.rows());

    let results = (0..queries.rows())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut scored: Vec<(usize, f64)> = gallery
                .iter_rows()
                .zip(&g_norms)
                .enumerate()
                .map(|(j, (g, gn))| (j, (dot(q, g) / (q_norms[qi] * gn)).clamp(-1.0, 1.0)))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(keep);
            RetrievalResult {
                query_index: qi,
                matched_index: scored[0].0,
                score: scored[0].1,
                top_k: scored,
            }
        })
        .collect();
    Ok(results)
}

/// Presence probability from a two-way softmax over prompt similarities.
pub fn zero_shot_probability(
    image: &[f64],
    positive: &[f64],
    negative: &[f64],
    temperature: f64,
) -> Result<f64> {
    let pos = cosine_similarity(image, positive)?;
    let neg = cosine_similarity(image, negative)?;
    zero_shot_from_similarities(pos, neg, temperature)
}

/// `exp(pos/t) / (exp(pos/t) + exp(neg/t))`, evaluated as a logistic of the
/// similarity gap so it cannot overflow.
pub fn zero_shot_from_similarities(pos: f64, neg: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(1.0 / (1.0 + ((neg - pos) / temperature).exp()))
}

/// Positive and negative prompt templates, each with one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive_template: String,
    pub negative_template: String,
}

impl Default for PromptPair {
    fn default() -> Self {
        Self {
            positive_template: "this is a chest CT with {} in lung".into(),
            negative_template: "this is a chest CT with no evident {} in lung".into(),
        }
    }
}

impl PromptPair {
    pub fn new(positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let pair = Self {
            positive_template: positive.into(),
            negative_template: negative.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("positive", &self.positive_template),
            ("negative", &self.negative_template),
        ] {
            let n = t.matches("{}").count();
            if n != 1 {
                return Err(Error::InvalidArgument(format!(
                    "{name} template {t:?} must contain exactly one {{}} placeholder, found {n}"
                )));
            }
        }
        Ok(())
    }

    /// Substitutes `entity` into both templates.
    pub fn render(&self, entity: &str) -> Result<(String, String)> {
        self.validate()?;
        if entity.is_empty() {
            log::warn!("rendering prompts with an empty entity");
        }
        Ok((
            self.positive_template.replacen("{}", entity, 1),
            self.negative_template.replacen("{}", entity, 1),
        ))
    }
}

pub fn render_prompts(pp: &PromptPair, entity: &str) -> Result<(String, String)> {
    pp.render(entity)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn retrieve_fixtures() {
        let r = retrieve(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0], &[0.9, 0.1]]), 1).unwrap();
        assert_eq!(r[0].matched_index, 1);
        assert!((r[0].score - 0.993_88).abs() < 1e-5);

        let gallery = m(&[&[0.0, 1.0], &[1.0, 1.0], &[-1.0, 0.5], &[0.3, -0.7]]);
        let r = retrieve(&m(&[&[0.3, -0.7]]), &gallery, 2).unwrap();
        assert_eq!(r[0].matched_index, 3);
        assert_eq!(r[0].score, 1.0);
        assert_eq!(r[0].top_k.len(), 2);

        let ties = m(&[&[0.0, 1.0], &[2.0, 0.0], &[2.0, 0.0]]);
        let r = retrieve(&m(&[&[1.0, 0.0]]), &ties, 5).unwrap();
        assert_eq!(r[0].matched_index, 1);
        assert_eq!(
            r[0].top_k.iter().map(|x| x.0).collect::<Vec<_>>(),
            [1, 2, 0]
        );
    }

    #[test]
    fn retrieve_errors() {
        let q = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            retrieve(&q, &m(&[&[1.0, 0.0, 0.0]]), 1),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            retrieve(&q, &m(&[&[0.0, 0.0]]), 1),
            Err(Error::ZeroRow {
                matrix: "gallery",
                row: 0
            })
        ));
        assert!(matches!(
            retrieve(&q, &q, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_shot_fixtures() {
        assert_eq!(zero_shot_from_similarities(0.3, 0.3, 1.0).unwrap(), 0.5);
        let p = zero_shot_from_similarities(1.0, 0.0, 1.0).unwrap();
        assert!((p - 0.731_06).abs() < 1e-5);
        let q = zero_shot_from_similarities(0.0, 1.0, 1.0).unwrap();
        assert!((q - 0.268_94).abs() < 1e-5);
        assert!(zero_shot_from_similarities(0.0, 1.0, 0.0).is_err());
        let p = zero_shot_probability(&[1.0, 0.0], &[2.0, 0.0], &[0.0, 3.0], 1.0).unwrap();
        assert!((p - 0.731_058_578_6).abs() < 1e-9);
        assert!(zero_shot_probability(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn prompt_rendering() {
        let pp = PromptPair::default();
        assert_eq!(
            pp.render("nodule").unwrap(),
            (
                "this is a chest CT with nodule in lung".to_string(),
                "this is a chest CT with no evident nodule in lung".to_string()
            )
        );
        assert_eq!(pp.render("").unwrap().0, "this is a chest CT with  in lung");
        assert!(PromptPair::new("no placeholder", "with {}").is_err());
        assert!(PromptPair::new("{} and {}", "with {}").is_err());
    }
}
