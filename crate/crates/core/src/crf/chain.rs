//! Dynamic programs over a dense linear chain: `T × L` state scores plus an
//! `L × L` transition matrix (`transitions[[from, to]]`). Shared by the
//! feature-based CRF and the neural CRF head.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::iob::IobTag;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("empty sequence")]
    Empty,
    #[error("shape mismatch: scores have {scores} labels, transitions are {rows}x{cols}")]
    Shape {
        scores: usize,
        rows: usize,
        cols: usize,
    },
}

/// `ln Σ exp(x)` without overflow. Returns `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64
where
    I::IntoIter: Clone,
{
    let it = xs.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check(scores: &ArrayView2<f64>, transitions: &ArrayView2<f64>) -> Result<(), ChainError> {
    if scores.nrows() == 0 {
        return Err(ChainError::Empty);
    }
    let l = scores.ncols();
    if transitions.dim() != (l, l) {
        return Err(ChainError::Shape {
            scores: l,
            rows: transitions.nrows(),
            cols: transitions.ncols(),
        });
    }
    Ok(())
}

/// Forward log-potentials `alpha[t][y]`.
pub fn forward(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
) -> Result<Array2<f64>, ChainError> {
    check(&scores, &transitions)?;
    let (t_len, l) = scores.dim();
    let mut alpha = Array2::zeros((t_len, l));
    alpha.row_mut(0).assign(&scores.row(0));
    for t in 1..t_len {
        for y in 0..l {
            let prev = alpha.row(t - 1);
            let acc = log_sum_exp((0..l).map(|p| prev[p] + transitions[[p, y]]));
            alpha[[t, y]] = scores[[t, y]] + acc;
        }
    }
    Ok(alpha)
}

/// Backward log-potentials `beta[t][y]`, with `beta[T-1][y] = 0`.
pub fn backward(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
) -> Result<Array2<f64>, ChainError> {
    check(&scores, &transitions)?;
    let (t_len, l) = scores.dim();
    let mut beta = Array2::zeros((t_len, l));
    for t in (0..t_len - 1).rev() {
        for y in 0..l {
            let acc = log_sum_exp(
                (0..l).map(|n| transitions[[y, n]] + scores[[t + 1, n]] + beta[[t + 1, n]]),
            );
            beta[[t, y]] = acc;
        }
    }
    Ok(beta)
}

/// `log Z` by the forward recursion.
pub fn log_partition(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
) -> Result<f64, ChainError> {
    let alpha = forward(scores, transitions)?;
    Ok(log_sum_exp(alpha.row(alpha.nrows() - 1).iter().copied()))
}

/// `log Z` by the backward recursion.
pub fn log_partition_backward(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
) -> Result<f64, ChainError> {
    let beta = backward(scores, transitions)?;
    Ok(log_sum_exp(
        (0..scores.ncols()).map(|y| scores[[0, y]] + beta[[0, y]]),
    ))
}

#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `P(y_t = y)`, shape `T × L`.
    pub unary: Array2<f64>,
    /// `Σ_t P(y_{t-1} = a, y_t = b)`, shape `L × L`.
    pub pairwise: Array2<f64>,
}

/// Forward-backward posteriors.
pub fn marginals(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
) -> Result<Marginals, ChainError> {
    let alpha = forward(scores, transitions)?;
    let beta = backward(scores, transitions)?;
    let (t_len, l) = scores.dim();
    let log_z = log_sum_exp(alpha.row(t_len - 1).iter().copied());
    let unary = (&alpha + &beta).mapv(|v| (v - log_z).exp());
    let mut pairwise = Array2::zeros((l, l));
    for t in 1..t_len {
        for a in 0..l {
            let base = alpha[[t - 1, a]] - log_z;
            for b in 0..l {
                pairwise[[a, b]] +=
                    (base + transitions[[a, b]] + scores[[t, b]] + beta[[t, b]]).exp();
            }
        }
    }
    Ok(Marginals {
        log_z,
        unary,
        pairwise,
    })
}

/// Unnormalized score of one label path.
pub fn sequence_score(scores: ArrayView2<f64>, transitions: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        s += scores[[t, y]];
        if t > 0 {
            s += transitions[[labels[t - 1], y]];
        }
    }
    s
}

/// Hard structural constraints applied at decode time.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub allowed_start: Vec<bool>,
    /// `allowed[[from, to]]`.
    pub allowed: Array2<bool>,
}

impl Constraints {
    /// IOB2: `I-X` only after `B-X` or `I-X`, never first.
    pub fn iob2(labels: &[IobTag]) -> Self {
        let l = labels.len();
        let allowed_start = labels.iter().map(|t| t.may_follow(None)).collect();
        let allowed = Array2::from_shape_fn((l, l), |(a, b)| labels[b].may_follow(Some(labels[a])));
        Constraints {
            allowed_start,
            allowed,
        }
    }
}

/// Highest-scoring label path and its score. Ties go to the lower label
/// index, both at each back-pointer and at the final position.
pub fn viterbi(
    scores: ArrayView2<f64>,
    transitions: ArrayView2<f64>,
    constraints: Option<&Constraints>,
) -> Result<(Vec<usize>, f64), ChainError> {
    check(&scores, &transitions)?;
    let (t_len, l) = scores.dim();
    let trans = |a: usize, b: usize| match constraints {
        Some(c) if !c.allowed[[a, b]] => f64::NEG_INFINITY,
        _ => transitions[[a, b]],
    };
    let mut delta = Array2::from_elem((t_len, l), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((t_len, l));
    for y in 0..l {
        let ok = constraints.is_none_or(|c| c.allowed_start[y]);
        if ok {
            delta[[0, y]] = scores[[0, y]];
        }
    }
    for t in 1..t_len {
        for y in 0..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for p in 0..l {
                let v = delta[[t - 1, p]] + trans(p, y);
                if v > best {
                    best = v;
                    arg = p;
                }
            }
            delta[[t, y]] = best + scores[[t, y]];
            back[[t, y]] = arg;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for y in 0..l {
        if delta[[t_len - 1, y]] > best {
            best = delta[[t_len - 1, y]];
            last = y;
        }
    }
    let mut path = vec![last; t_len];
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    Ok((path, best))
}
