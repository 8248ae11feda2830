//! Single-direction LSTM with gates ordered input, forget, cell, output.

use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `4H × input_dim`
    pub input_weights: Matrix<T>,
    /// `4H × H`
    pub recurrent_weights: Matrix<T>,
    /// `4H`
    pub bias: Vec<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_weights: Matrix::zeros(4 * hidden, input_dim),
            recurrent_weights: Matrix::zeros(4 * hidden, hidden),
            bias: vec![T::zero(); 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.recurrent_weights.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_weights.cols()
    }
}

/// Per-step activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LstmTrace<T> {
    /// post-activation gates `[i | f | g | o]`, one `4H` vector per step
    pub gates: Vec<Vec<T>>,
    pub cells: Vec<Vec<T>>,
    pub hidden: Vec<Vec<T>>,
}

pub(crate) fn run<T: Scalar>(p: &LstmParams<T>, inputs: &[Vec<T>]) -> LstmTrace<T> {
    let h_dim = p.hidden();
    let mut trace = LstmTrace {
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
    };
    let mut h = vec![T::zero(); h_dim];
    let mut c = vec![T::zero(); h_dim];
    for x in inputs {
        let mut z = p.bias.clone();
        p.input_weights.mul_vec_into(x, &mut z);
        p.recurrent_weights.mul_vec_into(&h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if k / h_dim == 2 { v.tanh() } else { v.sigmoid() };
        }
        let (i, rest) = z.split_at(h_dim);
        let (f, rest) = rest.split_at(h_dim);
        let (g, o) = rest.split_at(h_dim);
        for u in 0..h_dim {
            c[u] = f[u] * c[u] + i[u] * g[u];
            h[u] = o[u] * c[u].tanh();
        }
        trace.gates.push(z);
        trace.cells.push(c.clone());
        trace.hidden.push(h.clone());
    }
    trace
}

/// Backpropagation through time. `d_hidden[t]` is the loss gradient arriving
/// at `hidden[t]` from outside the recurrence. Accumulates into `grads` and
/// returns the gradient with respect to each input.
pub(crate) fn backprop<T: Scalar>(
    p: &LstmParams<T>,
    inputs: &[Vec<T>],
    trace: &LstmTrace<T>,
    d_hidden: &[Vec<T>],
    grads: &mut LstmParams<T>,
) -> Vec<Vec<T>> {
    let h_dim = p.hidden();
    let len = inputs.len();
    let zero = vec![T::zero(); h_dim];
    let mut d_inputs = vec![vec![T::zero(); p.input_dim()]; len];
    let mut dh_next = vec![T::zero(); h_dim];
    let mut dc_next = vec![T::zero(); h_dim];
    let mut dz = vec![T::zero(); 4 * h_dim];
    for t in (0..len).rev() {
        let gates = &trace.gates[t];
        let c = &trace.cells[t];
        let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zero };
        let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zero };
        for u in 0..h_dim {
            let (i, f, g, o) = (gates[u], gates[h_dim + u], gates[2 * h_dim + u], gates[3 * h_dim + u]);
            let dh = d_hidden[t][u] + dh_next[u];
            let tc = c[u].tanh();
            let d_o = dh * tc;
            let dc = dh * o * (T::one() - tc * tc) + dc_next[u];
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[u];
            dc_next[u] = dc * f;
            dz[u] = d_i * i * (T::one() - i);
            dz[h_dim + u] = d_f * f * (T::one() - f);
            dz[2 * h_dim + u] = d_g * (T::one() - g * g);
            dz[3 * h_dim + u] = d_o * o * (T::one() - o);
        }
        grads.input_weights.add_outer(&dz, &inputs[t]);
        grads.recurrent_weights.add_outer(&dz, h_prev);
        for (b, &d) in grads.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        p.input_weights.tmul_vec_into(&dz, &mut d_inputs[t]);
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        p.recurrent_weights.tmul_vec_into(&dz, &mut dh_next);
    }
    d_inputs
}
