mod common;

use common::*;
use ndarray::s;
use rdner::embeddings::random_table;
use rdner::iob::validate;
use rdner::metrics::entity_level;
use rdner::neural::{fit, fit_with_validator, BiLstmTagger, FitConfig, HeadKind};
use rdner::{EntityType, IobTag, Sentence, TaggedSentence};

fn vocabulary(data: &[TaggedSentence]) -> Vec<String> {
    let mut v: Vec<String> = Vec::new();
    for s in data {
        for t in &s.tokens {
            if !v.contains(&t.surface) {
                v.push(t.surface.clone());
            }
        }
    }
    v
}

fn tiny_tagger(head: HeadKind, data: &[TaggedSentence], seed: u64) -> BiLstmTagger {
    let table = random_table(&vocabulary(data), 4, seed).unwrap();
    let mut tagger = BiLstmTagger::new(table, true, 3, head, seed);
    if head == HeadKind::Crf {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed + 1);
        tagger.head.transitions = random_matrix(&mut rng, 9, 9, 0.5);
    }
    tagger
}

fn three_token_batch() -> Vec<TaggedSentence> {
    vec![
        TaggedSentence {
            tokens: Sentence::from_words(&["Aldren", "syndrome", "causes"]).tokens,
            tags: vec![IobTag::B(EntityType::RareDisease), IobTag::I(EntityType::RareDisease), IobTag::O],
        },
        TaggedSentence {
            tokens: Sentence::from_words(&["mild", "headache"]).tokens,
            tags: vec![IobTag::O, IobTag::B(EntityType::Symptom)],
        },
    ]
}

/// Largest relative error between the analytic gradient and central
/// differences, over every parameter of every group.
fn worst_gradient_error(mut tagger: BiLstmTagger, batch: &[TaggedSentence]) -> (f64, usize) {
    let (_, grads) = tagger.loss_and_gradient(batch).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (group, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = tagger.params_mut()[group][i];
            let mut eval = |delta: f64| {
                tagger.params_mut()[group][i] = orig + delta;
                tagger.loss(batch).unwrap()
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            tagger.params_mut()[group][i] = orig;
            worst = worst.max(relative_error(g[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn softmax_gradients_match_finite_differences() {
    let batch = three_token_batch();
    let tagger = tiny_tagger(HeadKind::Softmax, &batch, 1);
    let (worst, n) = worst_gradient_error(tagger, &batch);
    assert!(n > 200);
    assert!(worst < 1e-3, "max relative error {worst:e}");
}

#[test]
fn crf_head_gradients_match_finite_differences() {
    let batch = three_token_batch();
    let tagger = tiny_tagger(HeadKind::Crf, &batch, 2);
    let (worst, n) = worst_gradient_error(tagger, &batch);
    assert!(n > 280);
    assert!(worst < 1e-3, "max relative error {worst:e}");
}

#[test]
fn frozen_embeddings_have_no_gradient_block() {
    let batch = three_token_batch();
    let mut tagger = tiny_tagger(HeadKind::Softmax, &batch, 3);
    tagger.train_embeddings = false;
    let (_, grads) = tagger.loss_and_gradient(&batch).unwrap();
    assert!(grads.embedding.is_none());
    assert_eq!(grads.slices().len(), tagger.params_mut().len());
}

#[test]
fn uniform_logits_give_ln_nine_and_predict_o() {
    let batch = three_token_batch();
    let mut tagger = tiny_tagger(HeadKind::Softmax, &batch, 4);
    tagger.head.w.fill(0.0);
    tagger.head.b.fill(0.0);
    assert!((tagger.loss(&batch).unwrap() - 9f64.ln()).abs() < 1e-12);
    for s in &batch {
        assert!(tagger.predict(&s.tokens, false).unwrap().iter().all(|&t| t == IobTag::O));
    }
}

#[test]
fn crf_head_equals_softmax_on_single_tokens() {
    let batch: Vec<TaggedSentence> = ["fever", "Aldren", "the"]
        .iter()
        .zip([IobTag::B(EntityType::Symptom), IobTag::B(EntityType::RareDisease), IobTag::O])
        .map(|(w, t)| TaggedSentence {
            tokens: Sentence::from_words(&[*w]).tokens,
            tags: vec![t],
        })
        .collect();
    let softmax = tiny_tagger(HeadKind::Softmax, &batch, 5);
    let mut crf = softmax.clone();
    crf.head.kind = HeadKind::Crf;
    let a = softmax.loss(&batch).unwrap();
    let b = crf.loss(&batch).unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn reversing_input_and_swapping_directions_reverses_scores() {
    let batch = three_token_batch();
    let tagger = tiny_tagger(HeadKind::Crf, &batch, 6);
    let h = tagger.hidden_dim();
    let mut swapped = tagger.clone();
    std::mem::swap(&mut swapped.forward_cell, &mut swapped.backward_cell);
    let w = tagger.head.w.clone();
    swapped.head.w.slice_mut(s![.., ..h]).assign(&w.slice(s![.., h..]));
    swapped.head.w.slice_mut(s![.., h..]).assign(&w.slice(s![.., ..h]));

    let tokens = &batch[0].tokens;
    let mut reversed = tokens.clone();
    reversed.reverse();
    let a = tagger.forward_sentence(tokens).unwrap();
    let b = swapped.forward_sentence(&reversed).unwrap();
    let b_rev = b.slice(s![..;-1, ..]);
    for (x, y) in a.iter().zip(b_rev.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one_and_shapes_hold() {
    let batch = three_token_batch();
    let tagger = tiny_tagger(HeadKind::Softmax, &batch, 7);
    let p = tagger.forward_sentence(&batch[0].tokens).unwrap();
    assert_eq!(p.dim(), (3, 9));
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
    let one = Sentence::from_words(&["unseen"]).tokens;
    assert_eq!(tagger.forward_sentence(&one).unwrap().dim(), (1, 9));
    assert!(tagger.forward_sentence(&[]).is_err());
}

#[test]
fn loss_is_invariant_to_batch_order() {
    let data = toy_corpus(21, 12);
    let tagger = tiny_tagger(HeadKind::Crf, &data, 8);
    let mut reversed = data.clone();
    reversed.reverse();
    let a = tagger.loss(&data).unwrap();
    let b = tagger.loss(&reversed).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let data = toy_corpus(22, 8);
    let tagger = tiny_tagger(HeadKind::Softmax, &data, 9);
    let (_, mut grads) = tagger.loss_and_gradient(&data).unwrap();
    let before = grads.norm();
    let clip = before / 10.0;
    assert_eq!(grads.clip(clip), before);
    assert!(grads.norm() <= clip + 1e-12);
}

#[test]
fn constrained_crf_predictions_are_valid() {
    let data = toy_corpus(23, 30);
    for seed in 0..10 {
        let mut tagger = tiny_tagger(HeadKind::Crf, &data, seed);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        tagger.head.transitions = random_matrix(&mut rng, 9, 9, 5.0);
        tagger.head.b = ndarray::Array1::from_iter((0..9).map(|i| if i % 2 == 0 { -3.0 } else { 3.0 }));
        for s in &data {
            assert!(validate(&tagger.predict(&s.tokens, true).unwrap()).is_empty());
        }
    }
}

fn toy_fit(head: HeadKind) -> (f64, f64) {
    let train = toy_corpus(31, 120);
    let val = toy_corpus(32, 30);
    let table = random_table(&vocabulary(&train), 16, 5).unwrap();
    let mut tagger = BiLstmTagger::new(table, true, 16, head, 5);
    let config = FitConfig {
        learning_rate: 0.01,
        max_epochs: 30,
        batch_size: 8,
        seed: 5,
        ..Default::default()
    };
    let history = fit(&mut tagger, &train, &val, &config).unwrap();
    assert!(history.stopped_epoch <= 30);
    let gold: Vec<Vec<IobTag>> = val.iter().map(|s| s.tags.clone()).collect();
    let pred: Vec<Vec<IobTag>> = val.iter().map(|s| tagger.predict(&s.tokens, true).unwrap()).collect();
    let f1 = entity_level(&gold, &pred).unwrap().micro.f1;
    let best = history.epochs[history.best_epoch - 1].val_loss;
    (f1, best)
}

#[test]
fn toy_corpus_is_learned_by_both_heads() {
    for head in [HeadKind::Softmax, HeadKind::Crf] {
        let (f1, _) = toy_fit(head);
        assert!(f1 >= 0.95, "{head:?}: F1 {f1}");
    }
}

#[test]
fn fitting_is_deterministic() {
    let a = toy_fit(HeadKind::Softmax).1;
    let b = toy_fit(HeadKind::Softmax).1;
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn scripted_validation_trace_restores_epoch_two() {
    let data = toy_corpus(41, 10);
    let mut tagger = tiny_tagger(HeadKind::Crf, &data, 10);
    let trace = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.1, 0.1];
    let mut seen: Vec<BiLstmTagger> = Vec::new();
    let config = FitConfig {
        learning_rate: 0.05,
        patience: 4,
        ..Default::default()
    };
    let history = fit_with_validator(&mut tagger, &data, &config, |t| {
        seen.push(t.clone());
        trace[seen.len() - 1]
    })
    .unwrap();
    assert_eq!(history.stopped_epoch, 6);
    assert_eq!(history.best_epoch, 2);
    assert_eq!(history.epochs.len(), 6);
    assert_eq!(tagger, seen[1]);
    assert_ne!(tagger, seen[5]);
    let csv = history.to_csv();
    assert!(csv.lines().last().unwrap().starts_with("6,"));
}

#[test]
fn early_stopping_never_returns_a_worse_epoch() {
    let train = toy_corpus(42, 40);
    let val = toy_corpus(43, 10);
    let mut tagger = tiny_tagger(HeadKind::Softmax, &train, 11);
    let config = FitConfig {
        learning_rate: 0.05,
        max_epochs: 8,
        patience: 2,
        ..Default::default()
    };
    let history = fit(&mut tagger, &train, &val, &config).unwrap();
    let best = history.epochs[history.best_epoch - 1].val_loss;
    assert!(history.epochs.iter().all(|e| e.val_loss >= best));
    assert_eq!(tagger.loss(&val).unwrap(), best);
}

#[test]
fn save_and_load_round_trip() {
    let data = three_token_batch();
    for head in [HeadKind::Softmax, HeadKind::Crf] {
        let tagger = tiny_tagger(head, &data, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        tagger.save(&path).unwrap();
        let loaded = BiLstmTagger::load(&path).unwrap();
        assert_eq!(loaded, tagger);
        assert_eq!(
            rdner::container::peek_kind(&path).unwrap(),
            head.model_kind()
        );
    }
}

#[test]
fn oov_tokens_are_embedded_without_failure() {
    let data = three_token_batch();
    let tagger = tiny_tagger(HeadKind::Softmax, &data, 13);
    let unseen = Sentence::from_words(&["never", "seen", "before"]).tokens;
    let p = tagger.predict(&unseen, false).unwrap();
    assert_eq!(p.len(), 3);
}
