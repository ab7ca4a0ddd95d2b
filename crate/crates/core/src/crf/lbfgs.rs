//! Limited-memory BFGS with a strong-Wolfe line search, switching to the
//! orthant-wise variant (OWL-QN) when an L1 penalty is present.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `(f[k - period] - f[k]) / |f[k]| < tol`.
    pub tol: f64,
    pub period: usize,
    /// Stop when `‖g‖ / max(1, ‖x‖) < epsilon`.
    pub epsilon: f64,
    /// L1 coefficient; the objective passed in must be the smooth part only.
    pub l1: f64,
    pub max_linesearch: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 6,
            max_iterations: 100,
            tol: 1e-5,
            period: 10,
            epsilon: 1e-5,
            l1: 0.0,
            max_linesearch: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientNorm,
    ObjectiveChange,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    /// Objective including the L1 term.
    pub value: f64,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Error)]
pub enum LbfgsError {
    #[error("line search failed at iteration {iteration}: objective {value}, gradient norm {grad_norm}, {evaluations} evaluations, last step {step}")]
    LineSearch {
        iteration: usize,
        value: f64,
        grad_norm: f64,
        evaluations: usize,
        step: f64,
    },
    #[error("objective is not finite at iteration {iteration}")]
    NonFinite { iteration: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// OWL-QN pseudo-gradient of `f + c‖x‖₁`.
fn pseudo_gradient(x: &[f64], g: &[f64], c: f64, out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = if x[i] > 0.0 {
            g[i] + c
        } else if x[i] < 0.0 {
            g[i] - c
        } else if g[i] + c < 0.0 {
            g[i] + c
        } else if g[i] - c > 0.0 {
            g[i] - c
        } else {
            0.0
        };
    }
}

struct Probe {
    alpha: f64,
    value: f64,
    deriv: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimize `f`, which writes the gradient into its second argument and
/// returns the objective value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, config: &LbfgsConfig) -> Result<Minimum, LbfgsError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let owl = config.l1 > 0.0;
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if owl {
        fx += config.l1 * l1_norm(&x);
    }
    if !fx.is_finite() {
        return Err(LbfgsError::NonFinite { iteration: 0 });
    }
    let mut pg = g.clone();
    if owl {
        pseudo_gradient(&x, &g, config.l1, &mut pg);
    }
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);

    let converged = |pg: &[f64], x: &[f64]| norm(pg) / norm(x).max(1.0) <= config.epsilon;
    if converged(&pg, &x) {
        return Ok(Minimum {
            x,
            value: fx,
            history,
            iterations: 0,
            termination: Termination::GradientNorm,
        });
    }

    let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
    let mut iteration = 0;
    let termination = loop {
        if iteration >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iteration += 1;

        if owl {
            // keep only components that descend along the pseudo-gradient
            for i in 0..n {
                if d[i] * pg[i] >= 0.0 {
                    d[i] = 0.0;
                }
            }
        }
        let mut dphi0 = dot(&pg, &d);
        if dphi0 >= 0.0 {
            // not a descent direction: restart from steepest descent
            pairs.clear();
            d = pg.iter().map(|v| -v).collect();
            dphi0 = dot(&pg, &d);
        }
        let step0 = if iteration == 1 { 1.0 / norm(&d) } else { 1.0 };

        let probe = if owl {
            backtracking_owl(&mut f, &x, fx, &pg, &d, step0, config)
        } else {
            strong_wolfe(&mut f, &x, fx, dphi0, &d, step0, config)
        };
        let probe = match probe {
            Ok(p) => p,
            Err((evaluations, step)) => {
                return Err(LbfgsError::LineSearch {
                    iteration,
                    value: fx,
                    grad_norm: norm(&pg),
                    evaluations,
                    step,
                })
            }
        };
        if !probe.value.is_finite() {
            return Err(LbfgsError::NonFinite { iteration });
        }

        let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        x = probe.x;
        g = probe.grad;
        fx = probe.value;
        pg.copy_from_slice(&g);
        if owl {
            pseudo_gradient(&x, &g, config.l1, &mut pg);
        }
        history.push(fx);

        if converged(&pg, &x) {
            break Termination::GradientNorm;
        }
        if history.len() > config.period {
            let past = history[history.len() - 1 - config.period];
            if (past - fx) / fx.abs().max(f64::MIN_POSITIVE) < config.tol {
                break Termination::ObjectiveChange;
            }
        }

        let ys = dot(&y, &s);
        if ys > 0.0 {
            if pairs.len() == config.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, ys));
        }
        d = two_loop(&pg, &pairs);
    };

    Ok(Minimum {
        x,
        value: fx,
        history,
        iterations: iteration,
        termination,
    })
}

/// `-H·grad` from the stored curvature pairs.
fn two_loop(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, ys)) in pairs.iter().enumerate().rev() {
        let a = dot(s, &q) / ys;
        alphas[k] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((_, y, ys)) = pairs.back() {
        let gamma = ys / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, ys)) in pairs.iter().enumerate() {
        let b = dot(y, &q) / ys;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[k] - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn evaluate<F>(f: &mut F, x: &[f64], d: &[f64], alpha: f64) -> Probe
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let xn: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let mut grad = vec![0.0; x.len()];
    let value = f(&xn, &mut grad);
    Probe {
        alpha,
        value,
        deriv: dot(&grad, d),
        x: xn,
        grad,
    }
}

/// Bracketing + zoom line search with cubic interpolation. On exhaustion a
/// step that satisfies sufficient decrease is still accepted.
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    dphi0: f64,
    d: &[f64],
    step0: f64,
    config: &LbfgsConfig,
) -> Result<Probe, (usize, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let armijo = |p: &Probe| p.value <= f0 + C1 * p.alpha * dphi0;
    let curvature = |p: &Probe| p.deriv.abs() <= -C2 * dphi0;
    let mut evaluations = 0;

    let mut prev = Probe {
        alpha: 0.0,
        value: f0,
        deriv: dphi0,
        x: x.to_vec(),
        grad: Vec::new(),
    };
    let mut alpha = step0;
    let (mut lo, mut hi) = loop {
        if evaluations >= config.max_linesearch {
            return Err((evaluations, alpha));
        }
        let p = evaluate(f, x, d, alpha);
        evaluations += 1;
        if !p.value.is_finite() {
            // overshoot into a non-finite region: shrink
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if !armijo(&p) || (evaluations > 1 && p.value >= prev.value) {
            break (prev, p);
        }
        if curvature(&p) {
            return Ok(p);
        }
        if p.deriv >= 0.0 {
            break (p, prev);
        }
        alpha = p.alpha * 2.0;
        prev = p;
    };

    while evaluations < config.max_linesearch {
        let (a_min, a_max) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let width = a_max - a_min;
        let mut a = cubic_min(&lo, &hi);
        if !(a.is_finite() && a > a_min + 0.1 * width && a < a_max - 0.1 * width) {
            a = 0.5 * (a_min + a_max);
        }
        let p = evaluate(f, x, d, a);
        evaluations += 1;
        if !p.value.is_finite() || !armijo(&p) || p.value >= lo.value {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(p);
            }
            if p.deriv * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
        if width < 1e-16 * a_max.max(1.0) {
            break;
        }
    }
    if lo.alpha > 0.0 && lo.value < f0 {
        Ok(lo)
    } else {
        Err((evaluations, hi.alpha))
    }
}

fn cubic_min(a: &Probe, b: &Probe) -> f64 {
    let d1 = a.deriv + b.deriv - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.deriv * b.deriv;
    if disc < 0.0 {
        return f64::NAN;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    b.alpha - (b.alpha - a.alpha) * (b.deriv + d2 - d1) / (b.deriv - a.deriv + 2.0 * d2)
}

/// Backtracking along `d`, projecting each trial onto the orthant of the
/// current point (or of the negative pseudo-gradient where `x` is zero).
fn backtracking_owl<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    pg: &[f64],
    d: &[f64],
    step0: f64,
    config: &LbfgsConfig,
) -> Result<Probe, (usize, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let orthant: Vec<f64> = x
        .iter()
        .zip(pg)
        .map(|(&xi, &gi)| if xi != 0.0 { xi.signum() } else { -gi.signum() })
        .collect();
    let mut alpha = step0;
    for evaluations in 1..=config.max_linesearch {
        let xn: Vec<f64> = (0..x.len())
            .map(|i| {
                let v = x[i] + alpha * d[i];
                if v * orthant[i] <= 0.0 {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        let mut grad = vec![0.0; x.len()];
        let value = f(&xn, &mut grad) + config.l1 * l1_norm(&xn);
        let decrease: f64 = (0..x.len()).map(|i| pg[i] * (xn[i] - x[i])).sum();
        if value.is_finite() && value <= f0 + C1 * decrease {
            return Ok(Probe {
                alpha,
                value,
                deriv: 0.0,
                x: xn,
                grad,
            });
        }
        if evaluations == config.max_linesearch {
            break;
        }
        alpha *= 0.5;
    }
    Err((config.max_linesearch, alpha))
}
