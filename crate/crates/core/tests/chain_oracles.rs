mod common;

use common::*;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdner::crf::chain::{self, Constraints};
use rdner::iob::validate;
use rdner::IobTag;

fn random_chain(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let t = rng.gen_range(1..=6);
    let l = rng.gen_range(1..=5);
    let scale = rng.gen_range(0.1..5.0);
    (random_matrix(rng, t, l, scale), random_matrix(rng, l, l, scale))
}

#[test]
fn viterbi_and_log_z_match_enumeration_on_1000_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    for trial in 0..1000 {
        let (s, tr) = random_chain(&mut rng);
        let (path, score) = chain::viterbi(s.view(), tr.view(), None).unwrap();
        let (best, best_score) = brute_force_argmax(&s, &tr);
        assert_eq!(path, best, "trial {trial}");
        assert!((score - best_score).abs() < 1e-9, "trial {trial}");
        let z = chain::log_partition(s.view(), tr.view()).unwrap();
        assert!((z - brute_force_log_z(&s, &tr)).abs() < 1e-8, "trial {trial}");
    }
}

#[test]
fn forward_and_backward_agree_and_marginals_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let (s, tr) = random_chain(&mut rng);
        let f = chain::log_partition(s.view(), tr.view()).unwrap();
        let b = chain::log_partition_backward(s.view(), tr.view()).unwrap();
        assert!((f - b).abs() < 1e-10);
        let m = chain::marginals(s.view(), tr.view()).unwrap();
        for row in m.unary.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
        }
        let pair_total: f64 = m.pairwise.sum();
        assert!((pair_total - (s.nrows() - 1) as f64).abs() < 1e-9);
    }
}

#[test]
fn marginals_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (s, tr) = random_chain(&mut rng);
        let (t, l) = s.dim();
        let z = brute_force_log_z(&s, &tr);
        let mut unary = Array2::<f64>::zeros((t, l));
        for p in all_paths(t, l) {
            let w = (path_score(&s, &tr, &p) - z).exp();
            for (i, &y) in p.iter().enumerate() {
                unary[[i, y]] += w;
            }
        }
        let m = chain::marginals(s.view(), tr.view()).unwrap();
        for (a, b) in m.unary.iter().zip(unary.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn uniform_scores_give_t_log_l() {
    let s = Array2::<f64>::zeros((4, 9));
    let tr = Array2::<f64>::zeros((9, 9));
    let z = chain::log_partition(s.view(), tr.view()).unwrap();
    assert!((z - 4.0 * 9f64.ln()).abs() < 1e-12);
}

#[test]
fn single_token_log_z_is_log_sum_exp_of_scores() {
    let s = array![[0.5, -1.0, 2.0]];
    let tr = Array2::<f64>::zeros((3, 3));
    let expected = (0.5f64.exp() + (-1f64).exp() + 2f64.exp()).ln();
    assert!((chain::log_partition(s.view(), tr.view()).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn large_scores_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = random_matrix(&mut rng, 6, 5, 1e3);
    let tr = random_matrix(&mut rng, 5, 5, 1e3);
    let z = chain::log_partition(s.view(), tr.view()).unwrap();
    assert!(z.is_finite());
    assert!((z - brute_force_log_z(&s, &tr)).abs() < 1e-8 * z.abs().max(1.0));
}

#[test]
fn emission_dominant_example() {
    let s = array![[1.0, 0.0], [0.0, 1.0]];
    let tr = Array2::<f64>::zeros((2, 2));
    assert_eq!(chain::viterbi(s.view(), tr.view(), None).unwrap().0, vec![0, 1]);
}

#[test]
fn ties_go_to_the_lower_label() {
    let s = Array2::<f64>::zeros((3, 4));
    let tr = Array2::<f64>::zeros((4, 4));
    assert_eq!(chain::viterbi(s.view(), tr.view(), None).unwrap().0, vec![0, 0, 0]);
}

#[test]
fn empty_sequence_is_an_error() {
    let s = Array2::<f64>::zeros((0, 3));
    let tr = Array2::<f64>::zeros((3, 3));
    assert!(chain::log_partition(s.view(), tr.view()).is_err());
    assert!(chain::viterbi(s.view(), tr.view(), None).is_err());
}

proptest! {
    #[test]
    fn viterbi_score_is_its_own_path_score(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, tr) = random_chain(&mut rng);
        let (path, score) = chain::viterbi(s.view(), tr.view(), None).unwrap();
        let recomputed = chain::sequence_score(s.view(), tr.view(), &path);
        prop_assert!((score - recomputed).abs() < 1e-9);
    }

    #[test]
    fn constrained_decoding_is_valid_iob2(seed in any::<u64>(), t in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_matrix(&mut rng, t, 9, 4.0);
        let tr = random_matrix(&mut rng, 9, 9, 4.0);
        let c = Constraints::iob2(&IobTag::ALL);
        let (path, _) = chain::viterbi(s.view(), tr.view(), Some(&c)).unwrap();
        let tags: Vec<IobTag> = path.into_iter().map(|i| IobTag::ALL[i]).collect();
        prop_assert!(validate(&tags).is_empty());
    }

    #[test]
    fn constrained_viterbi_is_the_best_valid_path(seed in any::<u64>(), t in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_matrix(&mut rng, t, 9, 3.0);
        let tr = random_matrix(&mut rng, 9, 9, 3.0);
        let c = Constraints::iob2(&IobTag::ALL);
        let (path, score) = chain::viterbi(s.view(), tr.view(), Some(&c)).unwrap();
        let best = all_paths(t, 9)
            .into_iter()
            .filter(|p| {
                let tags: Vec<IobTag> = p.iter().map(|&i| IobTag::ALL[i]).collect();
                validate(&tags).is_empty()
            })
            .map(|p| path_score(&s, &tr, &p))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((score - best).abs() < 1e-9);
        prop_assert!((chain::sequence_score(s.view(), tr.view(), &path) - best).abs() < 1e-9);
    }
}
