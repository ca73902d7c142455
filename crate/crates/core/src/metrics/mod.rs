//! Evaluation: per-pathology precision/recall/F1 over labeler output, and
//! text-generation metrics (BLEU-4, ROUGE-L, CIDEr-D, exact-match METEOR).

mod clinical;
mod nlp;

pub use clinical::{
    eval_reports, prf1, ClassCounts, ConfusionCounts, EntityScores, Prf1Report, ReportEval, Scores,
};
pub use nlp::{
    bleu4, cider, cider_with_sigma, eval_nlp, meteor_alignment, meteor_simple, rouge_l, CiderStats,
    NlpEval, NlpScores, CIDER_SIGMA,
};
