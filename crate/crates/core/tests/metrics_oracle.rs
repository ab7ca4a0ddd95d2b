mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdner::metrics::{entity_level, parse_tsv, render, token_level, ReportFormat};
use rdner::{EntityType, IobTag};

/// Gold and predicted corpora of a few short sentences; predictions are a
/// noisy copy of gold so that matches are common.
fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Vec<IobTag>>, Vec<Vec<IobTag>>) {
    let n = rng.gen_range(1..=5);
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for _ in 0..n {
        let len = rng.gen_range(0..=8);
        let g = if rng.gen_bool(0.8) {
            random_valid_tags(rng, len)
        } else {
            random_tags(rng, len)
        };
        let p = g
            .iter()
            .map(|&t| if rng.gen_bool(0.3) { random_tag(rng) } else { t })
            .collect();
        gold.push(g);
        pred.push(p);
    }
    (gold, pred)
}

#[test]
fn reports_equal_span_set_oracle_on_1000_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let (gold, pred) = random_corpus(&mut rng);
        let e = entity_level(&gold, &pred).unwrap();
        check_report(&e, &entity_counts(&gold, &pred)).unwrap_or_else(|m| panic!("entity trial {trial}: {m}"));
        let t = token_level(&gold, &pred).unwrap();
        check_report(&t, &token_counts(&gold, &pred)).unwrap_or_else(|m| panic!("token trial {trial}: {m}"));
    }
}

#[test]
fn hand_counted_entity_example() {
    use EntityType::*;
    use IobTag::*;
    // gold {(SIGN,0,2),(DISEASE,3,4)}, pred {(SIGN,0,2),(DISEASE,3,5)}
    let gold = vec![vec![B(Sign), I(Sign), O, B(Disease), O]];
    let pred = vec![vec![B(Sign), I(Sign), O, B(Disease), I(Disease)]];
    let r = entity_level(&gold, &pred).unwrap();
    assert_eq!(r.per_label["SIGN"].f1, 1.0);
    assert_eq!(r.per_label["DISEASE"].f1, 0.0);
    assert_eq!(r.micro.f1, 0.5);
}

#[test]
fn published_entity_table_is_reproduced() {
    let (gold, pred) = published_fixture();
    let report = entity_level(&gold, &pred).unwrap();
    let text = render(&report, ReportFormat::Table);
    assert!(text.contains("0.8247"));
    let tsv = render(&report, ReportFormat::Tsv);
    let lines: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(lines.len(), PUBLISHED_ROWS.len());
    for (line, (label, p, r, f, support)) in lines.iter().zip(PUBLISHED_ROWS) {
        assert_eq!(*line, format!("{label}\t{p}\t{r}\t{f}\t{support}"));
    }
}

#[test]
fn tsv_round_trips_to_four_decimals() {
    let (gold, pred) = published_fixture();
    let report = entity_level(&gold, &pred).unwrap();
    let parsed = parse_tsv(&render(&report, ReportFormat::Tsv)).unwrap();
    let rf1 = report.per_label["RAREDISEASE"].f1;
    let row = parsed.iter().find(|(l, _)| l == "RAREDISEASE").unwrap();
    assert!((row.1.f1 - rf1).abs() <= 5e-5);
    assert_eq!(row.1.support, 1095);
}

#[test]
fn single_label_report_has_four_rows() {
    let gold = vec![vec![IobTag::B(EntityType::Sign)]];
    let report = entity_level(&gold, &gold).unwrap();
    let tsv = render(&report, ReportFormat::Tsv);
    assert_eq!(tsv.lines().count(), 1 + 4);
    let jl = render(&report, ReportFormat::JsonLines);
    for line in jl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["level"], "entity");
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let gold = vec![vec![IobTag::O, IobTag::O]];
    let pred = vec![vec![IobTag::O]];
    assert!(entity_level(&gold, &pred).is_err());
    assert!(token_level(&gold, &[]).is_err());
}

proptest! {
    #[test]
    fn gold_against_itself_is_perfect(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold: Vec<Vec<IobTag>> = (0..4).map(|_| random_valid_tags(&mut rng, 6)).collect();
        let r = entity_level(&gold, &gold).unwrap();
        prop_assert!(r.per_label.values().all(|s| s.f1 == 1.0 && s.precision == 1.0));
        if r.micro.support > 0 {
            prop_assert_eq!(r.micro.f1, 1.0);
        }
    }

    #[test]
    fn averages_respect_their_definitions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gold, pred) = random_corpus(&mut rng);
        for r in [entity_level(&gold, &pred).unwrap(), token_level(&gold, &pred).unwrap()] {
            let supported: Vec<_> = r.per_label.values().filter(|s| s.support > 0).collect();
            let total: usize = r.per_label.values().map(|s| s.support).sum();
            prop_assert_eq!(r.weighted.support, total);
            if supported.is_empty() {
                continue;
            }
            let lo = supported.iter().map(|s| s.f1).fold(f64::INFINITY, f64::min);
            let hi = supported.iter().map(|s| s.f1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.macro_avg.f1 >= lo - 1e-12 && r.macro_avg.f1 <= hi + 1e-12);
            let weighted: f64 = r.per_label.values().map(|s| s.support as f64 * s.f1).sum::<f64>() / total as f64;
            prop_assert_eq!(r.weighted.f1, weighted);
            for s in r.per_label.values() {
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn one_to_one_predictions_equalize_micro_scores(seed in any::<u64>()) {
        // relabeling types while keeping boundaries gives as many predictions as gold
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gold: Vec<Vec<IobTag>> = (0..3).map(|_| random_valid_tags(&mut rng, 7)).collect();
        let swap = |t: IobTag| match t {
            IobTag::B(EntityType::Sign) => IobTag::B(EntityType::Symptom),
            IobTag::I(EntityType::Sign) => IobTag::I(EntityType::Symptom),
            other => other,
        };
        let pred: Vec<Vec<IobTag>> = gold.iter().map(|s| s.iter().map(|&t| swap(t)).collect()).collect();
        let r = entity_level(&gold, &pred).unwrap();
        prop_assert_eq!(r.micro.precision, r.micro.recall);
        // 2PR/(P+R) at P = R rounds in the last place
        prop_assert!((r.micro.recall - r.micro.f1).abs() < 1e-15);
    }
}
