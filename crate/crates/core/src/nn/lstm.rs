//! LSTM cell unrolled over a sequence, with backpropagation through time.
//!
//! Gate order in the stacked weight matrices is input, forget, cell, output.
//! Shared by the `lstm` model layer and the recurrent autoencoder.

#[derive(Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a [f32],
    pub w_hh: &'a [f32],
    pub bias: &'a [f32],
    pub inputs: usize,
    pub hidden: usize,
}

/// Gradient accumulators matching [`LstmWeights`].
pub struct LstmGrads<'a> {
    pub w_ih: &'a mut [f32],
    pub w_hh: &'a mut [f32],
    pub bias: &'a mut [f32],
}

/// Everything the backward pass needs from a forward unroll.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: usize,
    hidden: usize,
    inputs: Vec<f32>,
    /// Activated gates per step, `4 * hidden` each.
    gates: Vec<f32>,
    /// Cell states per step.
    cells: Vec<f32>,
    /// Hidden states per step.
    outputs: Vec<f32>,
}

impl LstmTrace {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Hidden states, `steps x hidden` row-major.
    pub fn outputs(&self) -> &[f32] {
        &self.outputs
    }

    pub fn output_at(&self, t: usize) -> &[f32] {
        &self.outputs[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn last_output(&self) -> &[f32] {
        self.output_at(self.steps - 1)
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Runs the cell over `xs` (`steps x inputs`) from zero state.
pub fn forward(w: LstmWeights<'_>, xs: &[f32], steps: usize) -> LstmTrace {
    let (n_in, h) = (w.inputs, w.hidden);
    debug_assert_eq!(xs.len(), steps * n_in);
    let mut gates = vec![0.0; steps * 4 * h];
    let mut cells = vec![0.0; steps * h];
    let mut outputs = vec![0.0; steps * h];
    let mut z = vec![0.0f32; 4 * h];
    for t in 0..steps {
        let x = &xs[t * n_in..(t + 1) * n_in];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut acc = w.bias[r] + dot(&w.w_ih[r * n_in..(r + 1) * n_in], x);
            if t > 0 {
                let h_prev = &outputs[(t - 1) * h..t * h];
                acc += dot(&w.w_hh[r * h..(r + 1) * h], h_prev);
            }
            *zr = acc;
        }
        let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let c_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            g[j] = i_g;
            g[h + j] = f_g;
            g[2 * h + j] = c_g;
            g[3 * h + j] = o_g;
            let c_prev = if t > 0 { cells[(t - 1) * h + j] } else { 0.0 };
            let c = f_g * c_prev + i_g * c_g;
            cells[t * h + j] = c;
            outputs[t * h + j] = o_g * c.tanh();
        }
    }
    LstmTrace {
        steps,
        hidden: h,
        inputs: xs.to_vec(),
        gates,
        cells,
        outputs,
    }
}

/// Backpropagates `d_outputs` (gradient on every hidden state, `steps x
/// hidden`) through the unroll. Parameter gradients are accumulated into
/// `grads`; the returned vector is the gradient on the inputs.
pub fn backward(
    w: LstmWeights<'_>,
    trace: &LstmTrace,
    d_outputs: &[f32],
    grads: LstmGrads<'_>,
) -> Vec<f32> {
    let (n_in, h, steps) = (w.inputs, w.hidden, trace.steps);
    debug_assert_eq!(d_outputs.len(), steps * h);
    let mut d_inputs = vec![0.0; steps * n_in];
    let mut dh_next = vec![0.0f32; h];
    let mut dc_next = vec![0.0f32; h];
    let mut dz = vec![0.0f32; 4 * h];
    for t in (0..steps).rev() {
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let c = trace.cells[t * h + j];
            let c_prev = if t > 0 { trace.cells[(t - 1) * h + j] } else { 0.0 };
            let tc = c.tanh();
            let dh = d_outputs[t * h + j] + dh_next[j];
            let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
            dz[j] = dc * c_g * i_g * (1.0 - i_g);
            dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
            dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
            dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        let x = &trace.inputs[t * n_in..(t + 1) * n_in];
        let dx = &mut d_inputs[t * n_in..(t + 1) * n_in];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            grads.bias[r] += dzr;
            let wi = &w.w_ih[r * n_in..(r + 1) * n_in];
            let gi = &mut grads.w_ih[r * n_in..(r + 1) * n_in];
            for k in 0..n_in {
                gi[k] += dzr * x[k];
                dx[k] += dzr * wi[k];
            }
            if t > 0 {
                let h_prev = &trace.outputs[(t - 1) * h..t * h];
                let wh = &w.w_hh[r * h..(r + 1) * h];
                let gh = &mut grads.w_hh[r * h..(r + 1) * h];
                for k in 0..h {
                    gh[k] += dzr * h_prev[k];
                    dh_next[k] += dzr * wh[k];
                }
            }
        }
    }
    d_inputs
}
