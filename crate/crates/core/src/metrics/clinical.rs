use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::labeler::{Labeler, Pathology};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Per-entity confusion counts, indexed by [`Pathology::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub entities: [ClassCounts; 6],
}

impl ConfusionCounts {
    pub fn get(&self, p: Pathology) -> ClassCounts {
        self.entities[p.index()]
    }

    pub fn get_mut(&mut self, p: Pathology) -> &mut ClassCounts {
        &mut self.entities[p.index()]
    }
}

/// Precision, recall and F1. A `*_undefined` flag marks a 0/0 that was
/// replaced by 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl Scores {
    pub fn from_counts(c: &ClassCounts) -> Self {
        let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
        let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
        let (f1, f1_undefined) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Self {
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntityScores {
    pub entity: Pathology,
    pub counts: ClassCounts,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prf1Report {
    pub entities: Vec<EntityScores>,
    /// Unweighted means over the six entities.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub fn prf1(counts: &ConfusionCounts) -> Prf1Report {
    let entities: Vec<EntityScores> = Pathology::ALL
        .into_iter()
        .map(|p| EntityScores {
            entity: p,
            counts: counts.get(p),
            scores: Scores::from_counts(&counts.get(p)),
        })
        .collect();
    let mean = |f: fn(&Scores) -> f64| {
        entities.iter().map(|e| f(&e.scores)).sum::<f64>() / entities.len() as f64
    };
    Prf1Report {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        entities,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEval {
    pub counts: ConfusionCounts,
    pub report: Prf1Report,
}

/// Labels both corpora and accumulates confusion counts with the reference
/// labels as ground truth. The corpora must contain the same ids.
pub fn eval_reports(
    generated: &Corpus,
    reference: &Corpus,
    labeler: &Labeler,
) -> Result<ReportEval> {
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
    let mut counts = ConfusionCounts::default();
    for truth_record in reference {
        let truth = labeler.extract(truth_record);
        let pred = labeler.extract(generated.get(&truth_record.id).expect("ids checked"));
        for p in Pathology::ALL {
            counts
                .get_mut(p)
                .record(pred.is_present(p), truth.is_present(p));
        }
    }
    Ok(ReportEval {
        report: prf1(&counts),
        counts,
    })
}
