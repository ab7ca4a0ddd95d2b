//! Independent oracles shared by the integration tests: exhaustive path
//! enumeration, declarative span extraction, finite differences.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rdner::{EntityType, IobTag};

/// Finite-difference step used by every gradient oracle.
pub const FD_STEP: f64 = 1e-5;

/// Absolute floor of the relative-error denominator. Central differences at
/// `FD_STEP` carry roughly `eps / FD_STEP ≈ 1e-11` of rounding noise per unit
/// of function value, so gradients far below the floor are compared in
/// absolute terms instead.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &mut [f64], i: usize) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

/// Every label path of length `t` over `l` labels, in lexicographic order.
pub fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(l.pow(t as u32));
    let mut path = vec![0; t];
    loop {
        out.push(path.clone());
        let mut k = t;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            path[k] += 1;
            if path[k] < l {
                break;
            }
            path[k] = 0;
        }
    }
}

pub fn path_score(scores: &Array2<f64>, trans: &Array2<f64>, path: &[usize]) -> f64 {
    let mut s = scores[[0, path[0]]];
    for t in 1..path.len() {
        s += trans[[path[t - 1], path[t]]] + scores[[t, path[t]]];
    }
    s
}

/// Best path by enumeration and its score.
pub fn brute_force_argmax(scores: &Array2<f64>, trans: &Array2<f64>) -> (Vec<usize>, f64) {
    let (t, l) = scores.dim();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for p in all_paths(t, l) {
        let s = path_score(scores, trans, &p);
        if s > best.1 {
            best = (p, s);
        }
    }
    best
}

/// `log Σ_paths exp(score)` by enumeration, shifted by the maximum.
pub fn brute_force_log_z(scores: &Array2<f64>, trans: &Array2<f64>) -> f64 {
    let (t, l) = scores.dim();
    let all: Vec<f64> = all_paths(t, l)
        .iter()
        .map(|p| path_score(scores, trans, p))
        .collect();
    let m = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + all.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

pub fn random_tag<R: Rng>(rng: &mut R) -> IobTag {
    IobTag::ALL[rng.gen_range(0..IobTag::ALL.len())]
}

/// Arbitrary (possibly invalid) tag sequence.
pub fn random_tags<R: Rng>(rng: &mut R, len: usize) -> Vec<IobTag> {
    (0..len).map(|_| random_tag(rng)).collect()
}

/// Valid IOB2 sequence: `I-X` only after `B-X` or `I-X`.
pub fn random_valid_tags<R: Rng>(rng: &mut R, len: usize) -> Vec<IobTag> {
    let mut out: Vec<IobTag> = Vec::with_capacity(len);
    for _ in 0..len {
        let ty = EntityType::ALL[rng.gen_range(0..4)];
        let continuing = out.last().and_then(|t| t.entity_type());
        let tag = match rng.gen_range(0..3) {
            0 => IobTag::O,
            1 => IobTag::B(ty),
            _ => match continuing {
                Some(prev) => IobTag::I(prev),
                None => IobTag::B(ty),
            },
        };
        out.push(tag);
    }
    out
}

/// Spans of a tag sequence by definition rather than by scanning: `[s, e)`
/// of type X is an entity iff it starts with `B-X` or with an `I-X` that does
/// not continue an X run, every inner tag is `I-X`, and the tag at `e` (if
/// any) is not `I-X`.
pub fn spans_by_definition(tags: &[IobTag]) -> BTreeSet<(EntityType, usize, usize)> {
    let mut out = BTreeSet::new();
    let n = tags.len();
    for ty in EntityType::ALL {
        for s in 0..n {
            let opens = match tags[s] {
                IobTag::B(t) => t == ty,
                IobTag::I(t) => {
                    t == ty && (s == 0 || tags[s - 1] != IobTag::B(ty) && tags[s - 1] != IobTag::I(ty))
                }
                IobTag::O => false,
            };
            if !opens {
                continue;
            }
            for e in s + 1..=n {
                let inner = tags[s + 1..e].iter().all(|&t| t == IobTag::I(ty));
                let closed = e == n || tags[e] != IobTag::I(ty);
                if inner && closed {
                    out.insert((ty, s, e));
                }
            }
        }
    }
    out
}

/// `(true positives, predicted, gold)` per label.
pub type CountTable = BTreeMap<String, (usize, usize, usize)>;

pub fn entity_counts(gold: &[Vec<IobTag>], pred: &[Vec<IobTag>]) -> CountTable {
    let mut table: CountTable = EntityType::ALL
        .iter()
        .map(|t| (t.to_string(), (0, 0, 0)))
        .collect();
    for (g, p) in gold.iter().zip(pred) {
        let gs = spans_by_definition(g);
        let ps = spans_by_definition(p);
        for s in &gs {
            table.get_mut(s.0.as_str()).unwrap().2 += 1;
        }
        for s in &ps {
            table.get_mut(s.0.as_str()).unwrap().1 += 1;
        }
        for s in gs.intersection(&ps) {
            table.get_mut(s.0.as_str()).unwrap().0 += 1;
        }
    }
    table
}

pub fn token_counts(gold: &[Vec<IobTag>], pred: &[Vec<IobTag>]) -> CountTable {
    let mut table: CountTable = IobTag::ALL[1..]
        .iter()
        .map(|t| (t.to_string(), (0, 0, 0)))
        .collect();
    // set of (sentence, position, tag) triples on each side
    let triples = |seqs: &[Vec<IobTag>]| -> BTreeSet<(usize, usize, String)> {
        seqs.iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.iter()
                    .enumerate()
                    .filter(|(_, t)| **t != IobTag::O)
                    .map(move |(j, t)| (i, j, t.to_string()))
            })
            .collect()
    };
    let g = triples(gold);
    let p = triples(pred);
    for x in &g {
        table.get_mut(&x.2).unwrap().2 += 1;
    }
    for x in &p {
        table.get_mut(&x.2).unwrap().1 += 1;
    }
    for x in g.intersection(&p) {
        table.get_mut(&x.2).unwrap().0 += 1;
    }
    table
}

/// `(precision, recall, f1)` with zero-division giving zero.
pub fn prf(tp: usize, pred: usize, gold: usize) -> (f64, f64, f64) {
    let p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
    let r = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Compare a report against an oracle count table. Per-label
/// rows, micro, macro and weighted scores must all match exactly.
pub fn check_report(report: &rdner::metrics::EvalReport, table: &CountTable) -> Result<(), String> {
    let mut supported = Vec::new();
    let (mut tp, mut pr, mut go) = (0, 0, 0);
    for (label, &(t, p, g)) in table {
        tp += t;
        pr += p;
        go += g;
        let expected = prf(t, p, g);
        match report.per_label.get(label) {
            None if p == 0 && g == 0 => {}
            None => return Err(format!("missing row {label}")),
            Some(s) => {
                if (s.precision, s.recall, s.f1) != expected || s.support != g {
                    return Err(format!("{label}: {s:?} vs {expected:?} support {g}"));
                }
            }
        }
        if g > 0 {
            supported.push((expected, g));
        }
    }
    let micro = prf(tp, pr, go);
    let m = &report.micro;
    if (m.precision, m.recall, m.f1) != micro {
        return Err(format!("micro {m:?} vs {micro:?}"));
    }
    let k = supported.len().max(1) as f64;
    let macro_f1 = supported.iter().map(|(s, _)| s.2).sum::<f64>() / k;
    let weighted_f1 = if go == 0 {
        0.0
    } else {
        supported.iter().map(|(s, g)| s.2 * *g as f64).sum::<f64>() / go as f64
    };
    if report.macro_avg.f1 != macro_f1 || report.weighted.f1 != weighted_f1 {
        return Err(format!(
            "averages {} {} vs {macro_f1} {weighted_f1}",
            report.macro_avg.f1, report.weighted.f1
        ));
    }
    if report.weighted.support != go {
        return Err("weighted support".into());
    }
    Ok(())
}

/// Separable toy corpus: every entity type has its own trigger words and the
/// filler vocabulary never overlaps them.
pub fn toy_corpus(seed: u64, n: usize) -> Vec<rdner::TaggedSentence> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    const FILLER: &[&str] = &["the", "patient", "had", "with", "and", "a", "mild", "history", "of", "reported"];
    const TRIGGERS: &[(&[&str], EntityType)] = &[
        (&["Aldren", "syndrome"], EntityType::RareDisease),
        (&["Velnar", "ataxia"], EntityType::RareDisease),
        (&["influenza"], EntityType::Disease),
        (&["asthma"], EntityType::Disease),
        (&["hypotonia"], EntityType::Sign),
        (&["scoliosis"], EntityType::Sign),
        (&["headache"], EntityType::Symptom),
        (&["nausea"], EntityType::Symptom),
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut words: Vec<&str> = Vec::new();
            let mut tags = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                for _ in 0..rng.gen_range(1..=3) {
                    words.push(FILLER.choose(&mut rng).unwrap());
                    tags.push(IobTag::O);
                }
                let (trigger, ty) = TRIGGERS.choose(&mut rng).unwrap();
                for (i, w) in trigger.iter().enumerate() {
                    words.push(w);
                    tags.push(if i == 0 { IobTag::B(*ty) } else { IobTag::I(*ty) });
                }
            }
            if rng.gen_bool(0.5) {
                words.push(FILLER.choose(&mut rng).unwrap());
                tags.push(IobTag::O);
            }
            rdner::TaggedSentence {
                tokens: rdner::Sentence::from_words(&words).tokens,
                tags,
            }
        })
        .collect()
}

/// Entity counts `(type, true positives, predicted, gold)` whose scores
/// reproduce the published CRF entity-level table.
pub const PUBLISHED_COUNTS: [(EntityType, usize, usize, usize); 4] = [
    (EntityType::Disease, 223, 319, 454),
    (EntityType::RareDisease, 894, 1073, 1095),
    (EntityType::Sign, 382, 719, 958),
    (EntityType::Symptom, 28, 36, 54),
];

/// Published rows: label, precision, recall, f1, support.
pub const PUBLISHED_ROWS: [(&str, &str, &str, &str, usize); 7] = [
    ("DISEASE", "0.6991", "0.4912", "0.5770", 454),
    ("RAREDISEASE", "0.8332", "0.8164", "0.8247", 1095),
    ("SIGN", "0.5313", "0.3987", "0.4556", 958),
    ("SYMPTOM", "0.7778", "0.5185", "0.6222", 54),
    ("micro-avg", "0.7112", "0.5963", "0.6487", 2561),
    ("macro-avg", "0.7103", "0.5562", "0.6199", 2561),
    ("macro-weighted", "0.6953", "0.5963", "0.6384", 2561),
];

/// Single-token sentences realizing [`PUBLISHED_COUNTS`]: matched mentions,
/// missed mentions (gold only) and spurious mentions (prediction only).
pub fn published_fixture() -> (Vec<Vec<IobTag>>, Vec<Vec<IobTag>>) {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (ty, tp, predicted, g) in PUBLISHED_COUNTS {
        let b = IobTag::B(ty);
        for _ in 0..tp {
            gold.push(vec![b]);
            pred.push(vec![b]);
        }
        for _ in 0..g - tp {
            gold.push(vec![b]);
            pred.push(vec![IobTag::O]);
        }
        for _ in 0..predicted - tp {
            gold.push(vec![IobTag::O]);
            pred.push(vec![b]);
        }
    }
    (gold, pred)
}
