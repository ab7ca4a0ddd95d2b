//! LSTM cell with explicit backpropagation through time.
//!
//! Gate blocks are stacked along the first axis in the order input, forget,
//! output, candidate: `w` is `[4H × input]`, `u` is `[4H × H]`, `b` is `[4H]`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LstmCell {
    /// All-zero cell.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            w: Array2::zeros((4 * hidden_dim, input_dim)),
            u: Array2::zeros((4 * hidden_dim, hidden_dim)),
            b: Array1::zeros(4 * hidden_dim),
        }
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_dim, hidden_dim);
        let limit_w = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let limit_u = (6.0 / (2 * hidden_dim) as f64).sqrt();
        cell.w.mapv_inplace(|_| rng.gen_range(-limit_w..limit_w));
        cell.u.mapv_inplace(|_| rng.gen_range(-limit_u..limit_u));
        cell.b
            .slice_mut(s![hidden_dim..2 * hidden_dim])
            .fill(1.0);
        cell
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }

    fn check(&self) -> Result<(), NeuralError> {
        let h = self.hidden_dim();
        if self.w.nrows() != 4 * h || self.u.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(NeuralError::Shape(format!(
                "cell blocks disagree: w {:?}, u {:?}, b {}",
                self.w.dim(),
                self.u.dim(),
                self.b.len()
            )));
        }
        Ok(())
    }

    /// Apply gate nonlinearities to pre-activations `z` in place and return
    /// the new cell state.
    fn gates(&self, z: &mut Array1<f64>, c_prev: ArrayView1<f64>) -> Array1<f64> {
        let h = self.hidden_dim();
        z.slice_mut(s![..3 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![3 * h..]).mapv_inplace(f64::tanh);
        let i = z.slice(s![..h]);
        let f = z.slice(s![h..2 * h]);
        let g = z.slice(s![3 * h..]);
        &f * &c_prev + &i * &g
    }
}

/// One recurrence step: returns `(h, c)`.
pub fn lstm_step(
    cell: &LstmCell,
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>), NeuralError> {
    cell.check()?;
    let h = cell.hidden_dim();
    if x.len() != cell.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(NeuralError::Shape(format!(
            "step inputs x {}, h {}, c {} for cell {}x{}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            cell.input_dim(),
            h
        )));
    }
    let mut z = cell.w.dot(&x) + cell.u.dot(&h_prev) + &cell.b;
    let c = cell.gates(&mut z, c_prev);
    let o = z.slice(s![2 * h..3 * h]);
    let hn = &o * &c.mapv(f64::tanh);
    Ok((hn, c))
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SequenceTrace {
    pub inputs: Array2<f64>,
    /// Post-nonlinearity gates, `T × 4H`.
    pub gates: Array2<f64>,
    pub cells: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Run the cell over the rows of `inputs` from first to last, starting from
/// zero state.
pub fn run_sequence(cell: &LstmCell, inputs: ArrayView2<f64>) -> SequenceTrace {
    let t_len = inputs.nrows();
    let h = cell.hidden_dim();
    let zx = inputs.dot(&cell.w.t()) + &cell.b;
    let mut gates = Array2::zeros((t_len, 4 * h));
    let mut cells = Array2::zeros((t_len, h));
    let mut hidden = Array2::zeros((t_len, h));
    let mut h_prev = Array1::zeros(h);
    let mut c_prev = Array1::zeros(h);
    for t in 0..t_len {
        let mut z = &zx.row(t) + &cell.u.dot(&h_prev);
        let c = cell.gates(&mut z, c_prev.view());
        let hn = &z.slice(s![2 * h..3 * h]) * &c.mapv(f64::tanh);
        gates.row_mut(t).assign(&z);
        cells.row_mut(t).assign(&c);
        hidden.row_mut(t).assign(&hn);
        h_prev = hn;
        c_prev = c;
    }
    SequenceTrace {
        inputs: inputs.to_owned(),
        gates,
        cells,
        hidden,
    }
}

/// Gradients of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradients {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl CellGradients {
    pub fn zeros_like(cell: &LstmCell) -> Self {
        CellGradients {
            w: Array2::zeros(cell.w.dim()),
            u: Array2::zeros(cell.u.dim()),
            b: Array1::zeros(cell.b.len()),
        }
    }
}

/// Backpropagate `d_hidden` (`T × H`, gradient w.r.t. every hidden output)
/// through the sequence. Accumulates into `grads` and returns the gradient
/// w.r.t. the inputs.
pub fn backprop_sequence(
    cell: &LstmCell,
    trace: &SequenceTrace,
    d_hidden: ArrayView2<f64>,
    grads: &mut CellGradients,
) -> Array2<f64> {
    let t_len = trace.inputs.nrows();
    let h = cell.hidden_dim();
    let mut dz_all = Array2::zeros((t_len, 4 * h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    for t in (0..t_len).rev() {
        let act = trace.gates.row(t);
        let (i, f, o, g) = (
            act.slice(s![..h]),
            act.slice(s![h..2 * h]),
            act.slice(s![2 * h..3 * h]),
            act.slice(s![3 * h..]),
        );
        let c = trace.cells.row(t);
        let tanh_c = c.mapv(f64::tanh);
        let dh = &d_hidden.row(t) + &dh_next;
        let d_o = &dh * &tanh_c;
        let dc = &dh * &o * &tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
        let c_prev = if t > 0 {
            trace.cells.row(t - 1).to_owned()
        } else {
            Array1::zeros(h)
        };
        let mut dz = dz_all.row_mut(t);
        for k in 0..h {
            dz[k] = dc[k] * g[k] * i[k] * (1.0 - i[k]);
            dz[h + k] = dc[k] * c_prev[k] * f[k] * (1.0 - f[k]);
            dz[2 * h + k] = d_o[k] * o[k] * (1.0 - o[k]);
            dz[3 * h + k] = dc[k] * i[k] * (1.0 - g[k] * g[k]);
        }
        dc_next = &dc * &f;
        dh_next = cell.u.t().dot(&dz_all.row(t));
    }
    grads.w += &dz_all.t().dot(&trace.inputs);
    if t_len > 1 {
        let h_prev = trace.hidden.slice(s![..t_len - 1, ..]);
        let dz_tail = dz_all.slice(s![1.., ..]);
        grads.u += &dz_tail.t().dot(&h_prev);
    }
    grads.b += &dz_all.sum_axis(Axis(0));
    dz_all.dot(&cell.w)
}
