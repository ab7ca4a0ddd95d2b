mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdner::brat::{parse_brat_pair, resolve_overlaps, to_ann, BratOptions};
use rdner::iob::{decode, encode, encode_spans, validate};
use rdner::synthetic::{generate, SyntheticConfig};
use rdner::tokenizer::tokenize_document;
use rdner::{Document, EntityAnnotation, EntityType, IobTag, SpanFragment};

/// Positions that break IOB2, by definition.
fn violations(tags: &[IobTag]) -> Vec<usize> {
    (0..tags.len())
        .filter(|&i| match tags[i] {
            IobTag::I(x) => i == 0 || (tags[i - 1] != IobTag::B(x) && tags[i - 1] != IobTag::I(x)),
            _ => false,
        })
        .collect()
}

#[test]
fn decode_then_encode_is_exact_on_10000_valid_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let len = rng.gen_range(0..=20);
        let tags = random_valid_tags(&mut rng, len);
        assert!(validate(&tags).is_empty());
        assert_eq!(encode_spans(len, &decode(&tags)), tags);
    }
}

#[test]
fn decode_is_total_on_10000_invalid_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut invalid = 0;
    while invalid < 10_000 {
        let len = rng.gen_range(1..=20);
        let tags = random_tags(&mut rng, len);
        let flagged = validate(&tags);
        assert_eq!(flagged, violations(&tags));
        if flagged.is_empty() {
            continue;
        }
        invalid += 1;
        let spans = decode(&tags);
        // repaired spans are disjoint, in order, and cover every non-O tag
        let mut covered = 0;
        let mut last_end = 0;
        for s in &spans {
            assert!(s.start >= last_end && s.start < s.end && s.end <= len);
            last_end = s.end;
            covered += s.end - s.start;
        }
        assert_eq!(covered, tags.iter().filter(|&&t| t != IobTag::O).count());
        // and re-encoding yields a valid sequence
        assert!(validate(&encode_spans(len, &spans)).is_empty());
    }
}

#[test]
fn i_after_o_is_flagged() {
    let tags = [IobTag::O, IobTag::I(EntityType::RareDisease)];
    assert_eq!(validate(&tags), vec![1]);
}

#[test]
fn synthetic_documents_survive_brat_round_trip_and_encoding() {
    let cfg = SyntheticConfig {
        size: 40,
        discontinuous_fraction: 0.3,
        overlap_fraction: 0.3,
        ..Default::default()
    };
    for (_, doc) in generate(&cfg) {
        let ann = to_ann(&doc);
        let parsed = parse_brat_pair(doc.text(), &ann, &doc.doc_id, &BratOptions::default()).unwrap();
        assert_eq!(parsed.document.entities, doc.entities);
        assert_eq!(to_ann(&parsed.document), ann);

        let resolved = resolve_overlaps(parsed.document).document;
        for (i, a) in resolved.entities.iter().enumerate() {
            for b in &resolved.entities[i + 1..] {
                assert!(!a.overlaps(b));
            }
        }
        for sentence in tokenize_document(resolved.text()) {
            let tagged = encode(&sentence, &resolved.entities).unwrap();
            assert_eq!(tagged.tags.len(), sentence.tokens.len());
            for t in &sentence.tokens {
                assert_eq!(&resolved.slice(t.start, t.end), &t.surface);
            }
        }
    }
}

fn arbitrary_document(seed: u64) -> Document {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..rng.gen_range(3..30))
        .map(|i| format!("w{i}é"))
        .collect();
    let text = words.join(" ");
    let n_chars = text.chars().count();
    let mut doc = Document::new(format!("d{seed}"), text);
    for k in 0..rng.gen_range(0..8) {
        let mut fragments = Vec::new();
        let mut pos = rng.gen_range(0..n_chars - 1);
        for _ in 0..rng.gen_range(1..=2) {
            if pos >= n_chars - 1 {
                break;
            }
            let end = rng.gen_range(pos + 1..=n_chars.min(pos + 8));
            fragments.push(SpanFragment::new(pos, end));
            pos = end + 1;
        }
        let surface = doc.fragments_text(&fragments);
        doc.entities.push(EntityAnnotation {
            id: format!("T{}", k + 1),
            entity_type: EntityType::ALL[rng.gen_range(0..4)],
            fragments,
            surface,
        });
    }
    doc
}

proptest! {
    #[test]
    fn resolution_leaves_no_overlaps_and_keeps_the_longest(seed in any::<u64>()) {
        let doc = arbitrary_document(seed);
        let longest = doc.entities.iter().map(|e| e.covered_len()).max();
        let before = doc.entities.len();
        let resolved = resolve_overlaps(doc);
        let kept = &resolved.document.entities;
        prop_assert_eq!(kept.len() + resolved.log.len(), before);
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(!a.overlaps(b));
                prop_assert!(a.start() <= b.start());
            }
        }
        prop_assert_eq!(kept.iter().map(|e| e.covered_len()).max(), longest);
        for d in &resolved.log {
            let winner = kept.iter().find(|k| k.id == d.kept_id).unwrap();
            prop_assert!(winner.overlaps(&d.dropped));
            prop_assert!(winner.covered_len() >= d.dropped.covered_len());
        }
    }

    #[test]
    fn brat_round_trip_on_arbitrary_documents(seed in any::<u64>()) {
        let doc = arbitrary_document(seed);
        let ann = to_ann(&doc);
        let parsed = parse_brat_pair(doc.text(), &ann, &doc.doc_id, &BratOptions::default()).unwrap();
        prop_assert_eq!(&parsed.document.entities, &doc.entities);
    }
}
