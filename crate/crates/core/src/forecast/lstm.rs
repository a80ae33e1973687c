//! LSTM cell with single-query attention pooling and a linear output head.
//!
//! Gate pre-activations act on the concatenation `[h_{t-1}, x_t]`, hidden
//! part first. Weight matrices are stored row-major with one row per hidden
//! unit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attention_pool, AttentionBackward};
use super::ForecastError;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All trainable parameters. Gradients share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w_f: Vec<f64>,
    pub b_f: Vec<f64>,
    pub w_i: Vec<f64>,
    pub b_i: Vec<f64>,
    pub w_c: Vec<f64>,
    pub b_c: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    /// Attention scoring vector.
    pub w_a: Vec<f64>,
    pub b_a: f64,
    /// Output head, `output_dim x hidden_dim`.
    pub w_y: Vec<f64>,
    pub b_y: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        let z = hidden_dim + input_dim;
        let gate = || vec![0.0; hidden_dim * z];
        let bias = || vec![0.0; hidden_dim];
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w_f: gate(),
            b_f: bias(),
            w_i: gate(),
            b_i: bias(),
            w_c: gate(),
            b_c: bias(),
            w_o: gate(),
            b_o: bias(),
            w_a: bias(),
            b_a: 0.0,
            w_y: vec![0.0; output_dim * hidden_dim],
            b_y: vec![0.0; output_dim],
        }
    }

    /// Every parameter uniform in `[-0.5, 0.5] / sqrt(input_dim + hidden_dim)`.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim);
        let scale = 1.0 / ((input_dim + hidden_dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        p.for_each_mut(|v| *v = rng.random_range(-0.5..=0.5) * scale);
        p
    }

    fn z_dim(&self) -> usize {
        self.hidden_dim + self.input_dim
    }

    /// Named views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_f", &self.w_f),
            ("b_f", &self.b_f),
            ("w_i", &self.w_i),
            ("b_i", &self.b_i),
            ("w_c", &self.w_c),
            ("b_c", &self.b_c),
            ("w_o", &self.w_o),
            ("b_o", &self.b_o),
            ("w_a", &self.w_a),
            ("b_a", std::slice::from_ref(&self.b_a)),
            ("w_y", &self.w_y),
            ("b_y", &self.b_y),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_f", &mut self.w_f),
            ("b_f", &mut self.b_f),
            ("w_i", &mut self.w_i),
            ("b_i", &mut self.b_i),
            ("w_c", &mut self.w_c),
            ("b_c", &mut self.b_c),
            ("w_o", &mut self.w_o),
            ("b_o", &mut self.b_o),
            ("w_a", &mut self.w_a),
            ("b_a", std::slice::from_mut(&mut self.b_a)),
            ("w_y", &mut self.w_y),
            ("b_y", &mut self.b_y),
        ]
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(&mut f);
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &LstmParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.for_each_mut(|v| *v *= alpha);
    }

    fn check_shapes(&self) -> Result<(), ForecastError> {
        let (h, z, m) = (self.hidden_dim, self.z_dim(), self.output_dim);
        let expected = [h * z, h, h * z, h, h * z, h, h * z, h, h, 1, m * h, m];
        for ((name, t), want) in self.tensors().into_iter().zip(expected) {
            if t.len() != want {
                return Err(ForecastError::Dimension(format!(
                    "{name} has {} entries, expected {want}",
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Post-activation gate values from one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateActivations {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub candidate: Vec<f64>,
    pub output: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], z: &[f64], out: &mut [f64]) {
    let cols = z.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * cols..(j + 1) * cols];
        *o = b[j] + row.iter().zip(z).map(|(a, x)| a * x).sum::<f64>();
    }
}

/// One gated update of the cell.
pub fn lstm_step(
    params: &LstmParams,
    x: &[f64],
    state: &LstmState,
) -> Result<(LstmState, GateActivations), ForecastError> {
    let h = params.hidden_dim;
    if x.len() != params.input_dim {
        return Err(ForecastError::Dimension(format!(
            "input has {} entries, expected {}",
            x.len(),
            params.input_dim
        )));
    }
    if state.h.len() != h || state.c.len() != h {
        return Err(ForecastError::Dimension(format!(
            "state has dims ({}, {}), expected {h}",
            state.h.len(),
            state.c.len()
        )));
    }
    params.check_shapes()?;
    let z: Vec<f64> = state.h.iter().chain(x).copied().collect();
    let mut f = vec![0.0; h];
    let mut i = vec![0.0; h];
    let mut c = vec![0.0; h];
    let mut o = vec![0.0; h];
    affine(&params.w_f, &params.b_f, &z, &mut f);
    affine(&params.w_i, &params.b_i, &z, &mut i);
    affine(&params.w_c, &params.b_c, &z, &mut c);
    affine(&params.w_o, &params.b_o, &z, &mut o);
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    c.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));

    let cell: Vec<f64> = (0..h).map(|j| f[j] * state.c[j] + i[j] * c[j]).collect();
    let hidden: Vec<f64> = (0..h).map(|j| o[j] * cell[j].tanh()).collect();
    Ok((
        LstmState { h: hidden, c: cell },
        GateActivations {
            forget: f,
            input: i,
            candidate: c,
            output: o,
        },
    ))
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `states[0]` is the zero initial state; `states[t+1]` follows input `t`.
    pub states: Vec<LstmState>,
    pub gates: Vec<GateActivations>,
    pub attention: Vec<f64>,
    pub context: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Runs the cell over `inputs` from a zero state, pools the hidden states
/// with attention and applies the output head.
pub fn forward_trace(
    params: &LstmParams,
    inputs: &[Vec<f64>],
) -> Result<ForwardTrace, ForecastError> {
    if inputs.is_empty() {
        return Err(ForecastError::Dimension("empty window".into()));
    }
    let mut states = vec![LstmState::zeros(params.hidden_dim)];
    let mut gates = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (next, g) = lstm_step(params, x, states.last().expect("nonempty"))?;
        states.push(next);
        gates.push(g);
    }
    let hidden: Vec<&[f64]> = states[1..].iter().map(|s| s.h.as_slice()).collect();
    let (context, attention) = attention_pool(&hidden, &params.w_a, params.b_a);
    let mut prediction = vec![0.0; params.output_dim];
    affine(&params.w_y, &params.b_y, &context, &mut prediction);
    Ok(ForwardTrace {
        states,
        gates,
        attention,
        context,
        prediction,
    })
}

pub fn forward(params: &LstmParams, inputs: &[Vec<f64>]) -> Result<Vec<f64>, ForecastError> {
    forward_trace(params, inputs).map(|t| t.prediction)
}

/// Per-window loss `0.5 * |prediction - target|^2`.
pub fn loss(
    params: &LstmParams,
    inputs: &[Vec<f64>],
    target: &[f64],
) -> Result<f64, ForecastError> {
    let pred = forward(params, inputs)?;
    Ok(0.5
        * pred
            .iter()
            .zip(target)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>())
}

/// Exact gradient of [`loss`] by backpropagation through time.
pub fn backward(
    params: &LstmParams,
    inputs: &[Vec<f64>],
    target: &[f64],
) -> Result<(f64, LstmParams), ForecastError> {
    if target.len() != params.output_dim {
        return Err(ForecastError::Dimension(format!(
            "target has {} entries, expected {}",
            target.len(),
            params.output_dim
        )));
    }
    let tr = forward_trace(params, inputs)?;
    let (h, m, zd) = (params.hidden_dim, params.output_dim, params.z_dim());
    let mut g = LstmParams::zeros(params.input_dim, h, m);

    let dy: Vec<f64> = tr
        .prediction
        .iter()
        .zip(target)
        .map(|(p, y)| p - y)
        .collect();
    let loss = 0.5 * dy.iter().map(|d| d * d).sum::<f64>();

    // output head
    let mut dctx = vec![0.0; h];
    for k in 0..m {
        g.b_y[k] = dy[k];
        for j in 0..h {
            g.w_y[k * h + j] = dy[k] * tr.context[j];
            dctx[j] += params.w_y[k * h + j] * dy[k];
        }
    }

    // attention
    let hidden: Vec<&[f64]> = tr.states[1..].iter().map(|s| s.h.as_slice()).collect();
    let AttentionBackward { d_hidden, d_w, d_b } =
        super::attention::attention_backward(&hidden, &params.w_a, &tr.attention, &dctx);
    g.w_a = d_w;
    g.b_a = d_b;

    // recurrence
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut da = [vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for t in (0..inputs.len()).rev() {
        let gt = &tr.gates[t];
        let prev = &tr.states[t];
        let cur = &tr.states[t + 1];
        let z: Vec<f64> = prev.h.iter().chain(&inputs[t]).copied().collect();
        for j in 0..h {
            let dh = d_hidden[t][j] + dh_next[j];
            let tc = cur.c[j].tanh();
            let (f, i, c, o) = (gt.forget[j], gt.input[j], gt.candidate[j], gt.output[j]);
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[0][j] = dc * prev.c[j] * f * (1.0 - f);
            da[1][j] = dc * c * i * (1.0 - i);
            da[2][j] = dc * i * (1.0 - c * c);
            da[3][j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        let mut dz = vec![0.0; zd];
        let grads = [
            (&mut g.w_f, &mut g.b_f, &params.w_f),
            (&mut g.w_i, &mut g.b_i, &params.w_i),
            (&mut g.w_c, &mut g.b_c, &params.w_c),
            (&mut g.w_o, &mut g.b_o, &params.w_o),
        ];
        for ((gw, gb, w), d) in grads.into_iter().zip(&da) {
            for j in 0..h {
                gb[j] += d[j];
                let row = j * zd;
                for k in 0..zd {
                    gw[row + k] += d[j] * z[k];
                    dz[k] += w[row + k] * d[j];
                }
            }
        }
        dh_next.copy_from_slice(&dz[..h]);
    }
    Ok((loss, g))
}
