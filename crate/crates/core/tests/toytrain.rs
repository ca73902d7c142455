mod common;

use ctalign::embed::EmbeddingMatrix;
use ctalign::toytrain::{
    ablation, grouped_recall_at_1, make_synthetic, train, SyntheticSpec, TrainConfig,
};

/// Frobenius distance between the cosine relation matrices of two embedding
/// sets, from scratch.
fn relation_distance(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.rows() {
            let d =
                common::brute_cosine(a.row(i), a.row(j)) - common::brute_cosine(b.row(i), b.row(j));
            sum += d * d;
        }
    }
    sum.sqrt()
}

#[test]
fn default_run_halves_the_loss_and_matches_the_teacher_better() {
    let data = make_synthetic(&SyntheticSpec::default()).unwrap();
    let config = TrainConfig::default();
    let out = train(&data, &config).unwrap();

    assert_eq!(out.trace.len(), config.epochs + 1);
    assert!(out
        .trace
        .iter()
        .all(|e| e.contrastive.is_finite() && e.distill.is_finite() && e.total.is_finite()));

    let s = &out.summary;
    assert_eq!(s.contrastive_initial, out.trace[0].contrastive);
    assert_eq!(s.contrastive_final, out.trace.last().unwrap().contrastive);
    assert!(
        s.contrastive_final <= 0.5 * s.contrastive_initial,
        "{} -> {}",
        s.contrastive_initial,
        s.contrastive_final
    );

    let fin = relation_distance(&out.image_embeddings, &out.teacher);
    assert!((fin - s.relation_distance_final).abs() < 1e-9 * fin.max(1.0));
    assert!(s.relation_distance_final < s.relation_distance_initial);

    let recall = grouped_recall_at_1(&data, &out.image_embeddings, &out.text_embeddings).unwrap();
    assert_eq!(recall, s.grouped_recall_at_1);
    assert!((0.0..=1.0).contains(&recall));
}

#[test]
fn training_is_deterministic() {
    let spec = SyntheticSpec {
        samples: 60,
        ..SyntheticSpec::default()
    };
    let data = make_synthetic(&spec).unwrap();
    let config = TrainConfig {
        epochs: 20,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let a = train(&data, &config).unwrap();
    let b = train(&data, &config).unwrap();
    assert_eq!(a, b);
    let other = train(&data, &TrainConfig { seed: 1, ..config }).unwrap();
    assert_ne!(a.image_embeddings, other.image_embeddings);
}

#[test]
fn ablation_summary_is_consistent() {
    let spec = SyntheticSpec {
        samples: 60,
        ..SyntheticSpec::ablation_default()
    };
    let config = TrainConfig {
        epochs: 30,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let summary = ablation(&spec, &config, &[0, 1]).unwrap();
    assert_eq!(summary.runs.len(), 2);
    let wins = summary
        .runs
        .iter()
        .filter(|r| r.recall_roco > r.recall_infonce)
        .count();
    assert_eq!(wins, summary.wins);
    let margin: f64 = summary
        .runs
        .iter()
        .map(|r| r.recall_roco - r.recall_infonce)
        .sum::<f64>()
        / 2.0;
    assert!((margin - summary.mean_margin).abs() < 1e-12);
    assert!(ablation(&spec, &config, &[]).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let data = make_synthetic(&SyntheticSpec {
        samples: 20,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for bad in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            temperature: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(train(&data, &bad).is_err(), "{bad:?}");
    }
    assert!(make_synthetic(&SyntheticSpec {
        classes: 0,
        ..SyntheticSpec::default()
    })
    .is_err());
}
