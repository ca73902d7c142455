mod common;

use ctalign::corpus::token_texts;
use ctalign::efm::{
    apply_mask, find_phrases, plan_mask, MaskPlan, MaskRates, PhraseLexicon, SpanTag,
};
use ctalign::error::Error;
use proptest::prelude::*;

const SENTENCE: [&str; 7] = ["solid", "nodule", "in", "the", "right", "upper", "lung"];

fn rates(entity_rate: f64, random_rate: f64) -> MaskRates {
    MaskRates {
        entity_rate,
        random_rate,
        ..MaskRates::default()
    }
}

fn fixture_tokens() -> Vec<String> {
    token_texts(&std::fs::read_to_string(common::fixture("efm_report.txt")).unwrap())
}

/// Checks every structural invariant of a plan against the phrases of its
/// token stream.
fn check_plan(tokens: &[String], lex: &PhraseLexicon, plan: &MaskPlan) {
    let phrases = find_phrases(tokens, lex);
    assert_eq!(plan.token_count, tokens.len());
    assert!(plan.masked_count() <= plan.rates.budget(tokens.len()));
    for w in plan.spans.windows(2) {
        assert!(
            w[0].end <= w[1].start,
            "overlap or disorder: {:?}",
            plan.spans
        );
    }
    for s in &plan.spans {
        assert!(s.start < s.end && s.end <= tokens.len());
        match s.tag {
            SpanTag::EntityPhrase => assert!(phrases.contains(&(s.start..s.end))),
            SpanTag::Random => {
                assert_eq!(s.len(), 1);
                assert!(phrases.iter().all(|p| !p.contains(&s.start)));
            }
        }
    }
    // No phrase is partially masked.
    let masked = plan.masked_positions();
    for p in &phrases {
        let hits = masked[p.clone()].iter().filter(|m| **m).count();
        assert!(hits == 0 || hits == p.len(), "partial phrase {p:?}");
    }
}

#[test]
fn phrase_examples() {
    let lex = PhraseLexicon::default();
    assert_eq!(find_phrases(&SENTENCE, &lex), vec![0..2]);
    assert_eq!(find_phrases(&["nodule"], &lex), vec![0..1]);
    assert!(find_phrases(&["in", "the"], &lex).is_empty());
    let sizes = token_texts("5mm 6mm nodule in the lung");
    assert_eq!(find_phrases(&sizes, &lex), vec![0..3]);
    let decimal = token_texts("a 3.5 cm mass");
    assert_eq!(find_phrases(&decimal, &lex), vec![1..4]);
}

#[test]
fn forced_and_empty_plans() {
    let lex = PhraseLexicon::default();
    let plan = plan_mask(&SENTENCE, &lex, &rates(1.0, 0.0), 9).unwrap();
    assert_eq!(plan.spans.len(), 1);
    assert_eq!((plan.spans[0].start, plan.spans[0].end), (0, 2));
    assert_eq!(plan.spans[0].tag, SpanTag::EntityPhrase);

    let empty = plan_mask(&SENTENCE, &lex, &rates(0.0, 0.0), 9).unwrap();
    assert!(empty.spans.is_empty());
    assert_eq!(apply_mask(&SENTENCE, &empty, "[MASK]").unwrap(), SENTENCE);
}

#[test]
fn apply_examples() {
    let lex = PhraseLexicon::default();
    let plan = plan_mask(&SENTENCE, &lex, &rates(1.0, 0.0), 0).unwrap();
    assert_eq!(
        apply_mask(&SENTENCE, &plan, "[MASK]").unwrap(),
        ["[MASK]", "[MASK]", "in", "the", "right", "upper", "lung"]
    );
    let mut bad = plan.clone();
    bad.spans[0].start = 6;
    bad.spans[0].end = 8;
    assert!(matches!(
        apply_mask(&SENTENCE, &bad, "[MASK]"),
        Err(Error::SpanOutOfRange {
            start: 6,
            end: 8,
            len: 7
        })
    ));
}

#[test]
fn rejects_bad_rates() {
    let lex = PhraseLexicon::default();
    for r in [rates(1.5, 0.0), rates(0.5, -0.1)] {
        assert!(plan_mask(&SENTENCE, &lex, &r, 0).is_err());
    }
    let zero_budget = MaskRates {
        max_mask_fraction: 0.0,
        ..MaskRates::default()
    };
    assert!(plan_mask(&SENTENCE, &lex, &zero_budget, 0).is_err());
}

#[test]
fn golden_plan_for_fixture_report() {
    let tokens = fixture_tokens();
    let plan = plan_mask(&tokens, &PhraseLexicon::default(), &rates(0.5, 0.15), 42).unwrap();
    let golden: MaskPlan = serde_json::from_str(
        &std::fs::read_to_string(common::fixture("efm_golden_plan.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(plan, golden);
}

#[test]
fn plans_are_deterministic() {
    let tokens = fixture_tokens();
    let lex = PhraseLexicon::default();
    for seed in 0..50 {
        let a = plan_mask(&tokens, &lex, &MaskRates::default(), seed).unwrap();
        let b = plan_mask(&tokens, &lex, &MaskRates::default(), seed).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn seeded_plans_never_leak() {
    let tokens = fixture_tokens();
    let lex = PhraseLexicon::default();
    for seed in 0..1000 {
        let plan = plan_mask(&tokens, &lex, &MaskRates::default(), seed).unwrap();
        check_plan(&tokens, &lex, &plan);
    }
}

#[test]
fn budget_drops_random_spans_first() {
    let tokens = fixture_tokens();
    let lex = PhraseLexicon::default();
    let tight = MaskRates {
        entity_rate: 1.0,
        random_rate: 1.0,
        max_mask_fraction: 0.5,
    };
    let plan = plan_mask(&tokens, &lex, &tight, 3).unwrap();
    check_plan(&tokens, &lex, &plan);
    // Phrases alone cover 20 of 48 tokens, within the 24-token budget, so
    // every phrase survives and the remainder is random fill.
    let phrase_tokens: usize = find_phrases(&tokens, &lex).iter().map(|p| p.len()).sum();
    assert_eq!(phrase_tokens, 20);
    let entity: usize = plan
        .spans
        .iter()
        .filter(|s| s.tag == SpanTag::EntityPhrase)
        .map(|s| s.len())
        .sum();
    assert_eq!(entity, 20);
    assert_eq!(plan.masked_count(), 24);

    let tiny = MaskRates {
        max_mask_fraction: 0.05,
        ..tight
    };
    let plan = plan_mask(&tokens, &lex, &tiny, 3).unwrap();
    check_plan(&tokens, &lex, &plan);
    assert!(plan.spans.iter().all(|s| s.tag == SpanTag::EntityPhrase));
    assert!(plan.masked_count() <= 3);
}

#[test]
fn entity_tokens_masked_more_often_than_common_tokens() {
    let lex = PhraseLexicon::default();
    let r = MaskRates::default();
    let trials = 10_000;
    let mut entity_hits = 0usize;
    let mut common_hits = 0usize;
    for seed in 0..trials {
        let m = plan_mask(&SENTENCE, &lex, &r, seed)
            .unwrap()
            .masked_positions();
        entity_hits += m[0] as usize + m[1] as usize;
        common_hits += m[2] as usize + m[3] as usize;
    }
    let entity_freq = entity_hits as f64 / (2 * trials) as f64;
    let common_freq = common_hits as f64 / (2 * trials) as f64;
    assert!(
        entity_freq >= 2.0 * common_freq,
        "entity {entity_freq} vs common {common_freq}"
    );
}

fn vocab() -> Vec<&'static str> {
    vec![
        "solid", "nodule", "mass", "in", "the", "right", "left", "upper", "lobe", "lung", "5mm",
        "3.5", "cm", "ground", "glass", "opacity", "effusion", "pleural", "no", "is", "normal",
        "and",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_streams_respect_invariants(
        idx in proptest::collection::vec(0usize..22, 0..40),
        entity_rate in 0.0f64..=1.0,
        random_rate in 0.0f64..=1.0,
        frac in 0.01f64..=1.0,
        seed in any::<u64>(),
    ) {
        let words = vocab();
        let tokens: Vec<String> = idx.iter().map(|&i| words[i].to_string()).collect();
        let lex = PhraseLexicon::default();
        let r = MaskRates { entity_rate, random_rate, max_mask_fraction: frac };
        let plan = plan_mask(&tokens, &lex, &r, seed).unwrap();
        check_plan(&tokens, &lex, &plan);
        let masked = apply_mask(&tokens, &plan, "[MASK]").unwrap();
        prop_assert_eq!(masked.len(), tokens.len());
        prop_assert_eq!(plan, plan_mask(&tokens, &lex, &r, seed).unwrap());
    }
}
