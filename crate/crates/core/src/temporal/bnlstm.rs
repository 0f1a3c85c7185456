//! LSTM cell with batch normalization on the input-to-hidden and
//! hidden-to-hidden pre-activation streams and on the cell state:
//!
//! ```text
//! [i f o g] = BN_h(Wh h) + BN_x(Wx x) + b
//! c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
//! h' = sigmoid(o) * tanh(BN_c(c'))
//! ```
//!
//! Running statistics are shared across time steps.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::TemporalError;
use crate::rng::SplitMix64;

pub const BN_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.1;
pub const GAMMA_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-feature batch normalization with affine parameters and running
/// estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::from_elem(features, GAMMA_INIT),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Returns `(output, normalized)` where `normalized` is the
    /// pre-`gamma`/`beta` value.
    pub fn forward(&mut self, x: ArrayView2<f64>, mode: Mode) -> Result<(Array2<f64>, Array2<f64>), TemporalError> {
        let (batch, n) = x.dim();
        let (mean, var) = match mode {
            Mode::Train => {
                if batch < 2 {
                    return Err(TemporalError::TrainBatch(batch));
                }
                let mean = x.mean_axis(Axis(0)).expect("batch >= 2");
                let mut var = Array1::<f64>::zeros(n);
                for row in x.rows() {
                    for (v, (&a, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                        *v += (a - m) * (a - m);
                    }
                }
                var /= batch as f64;
                let unbiased = batch as f64 / (batch as f64 - 1.0);
                let m = self.momentum;
                self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
                self.running_var = &self.running_var * (1.0 - m) + &var * (m * unbiased);
                (mean, var)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = x.to_owned();
        for mut row in normalized.rows_mut() {
            for (j, a) in row.iter_mut().enumerate() {
                *a = (*a - mean[j]) * inv_std[j];
            }
        }
        let mut out = normalized.clone();
        for mut row in out.rows_mut() {
            for (j, a) in row.iter_mut().enumerate() {
                *a = self.gamma[j] * *a + self.beta[j];
            }
        }
        Ok((out, normalized))
    }
}

/// Intermediate values of one step, for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub input_gate: Array2<f64>,
    pub forget_gate: Array2<f64>,
    pub output_gate: Array2<f64>,
    pub candidate: Array2<f64>,
    /// Normalized `Wx x` before gamma/beta, `(batch, 4H)`.
    pub normalized_x: Array2<f64>,
    /// Normalized `Wh h` before gamma/beta, `(batch, 4H)`.
    pub normalized_h: Array2<f64>,
    /// Normalized cell state before gamma/beta, `(batch, H)`.
    pub normalized_c: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
    pub trace: StepTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnLstmCell {
    /// `(4H, input)`, gate blocks ordered i, f, o, g.
    pub wx: Array2<f64>,
    /// `(4H, H)`.
    pub wh: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn_x: BatchNorm,
    pub bn_h: BatchNorm,
    pub bn_c: BatchNorm,
    pub mode: Mode,
}

const OPEN_UPPER: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function kept strictly inside `(0, 1)`.
pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, OPEN_UPPER)
}

/// `tanh` kept strictly inside `(-1, 1)`.
fn open_tanh(x: f64) -> f64 {
    x.tanh().clamp(-OPEN_UPPER, OPEN_UPPER)
}

impl BnLstmCell {
    /// All weights and biases zero; normalization at its defaults.
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
            bn_x: BatchNorm::new(4 * hidden),
            bn_h: BatchNorm::new(4 * hidden),
            bn_c: BatchNorm::new(hidden),
            mode: Mode::Infer,
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)` from a seeded stream.
    pub fn seeded(input: usize, hidden: usize, seed: u64) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let mut rng = SplitMix64::derive(seed, 10);
        let kx = 1.0 / (input as f64).sqrt();
        cell.wx.mapv_inplace(|_| rng.uniform(-kx, kx));
        let kh = 1.0 / (hidden as f64).sqrt();
        cell.wh.mapv_inplace(|_| rng.uniform(-kh, kh));
        cell
    }

    pub fn input_size(&self) -> usize {
        self.wx.dim().1
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.dim().1
    }

    pub fn zero_state(&self, batch: usize) -> (Array2<f64>, Array2<f64>) {
        let h = self.hidden_size();
        (Array2::zeros((batch, h)), Array2::zeros((batch, h)))
    }

    pub fn step(&mut self, x: &Array2<f64>, h: &Array2<f64>, c: &Array2<f64>) -> Result<StepOutput, TemporalError> {
        let batch = x.dim().0;
        let hs = self.hidden_size();
        if x.dim().1 != self.input_size() || h.dim() != (batch, hs) || c.dim() != (batch, hs) {
            return Err(TemporalError::Shape(format!(
                "x {:?}, h {:?}, c {:?} for input {} hidden {}",
                x.dim(),
                h.dim(),
                c.dim(),
                self.input_size(),
                hs
            )));
        }
        if batch == 0 {
            return Err(TemporalError::Shape("empty batch".into()));
        }
        let mode = self.mode;
        let (bx, normalized_x) = self.bn_x.forward(x.dot(&self.wx.t()).view(), mode)?;
        let (bh, normalized_h) = self.bn_h.forward(h.dot(&self.wh.t()).view(), mode)?;
        let pre = bx + bh + &self.bias;
        let input_gate = pre.slice(s![.., 0..hs]).mapv(sigmoid);
        let forget_gate = pre.slice(s![.., hs..2 * hs]).mapv(sigmoid);
        let output_gate = pre.slice(s![.., 2 * hs..3 * hs]).mapv(sigmoid);
        let candidate = pre.slice(s![.., 3 * hs..4 * hs]).mapv(open_tanh);
        let c_new = &forget_gate * c + &input_gate * &candidate;
        let (bc, normalized_c) = self.bn_c.forward(c_new.view(), mode)?;
        let h_new = &output_gate * &bc.mapv(open_tanh);
        Ok(StepOutput {
            h: h_new,
            c: c_new,
            trace: StepTrace { input_gate, forget_gate, output_gate, candidate, normalized_x, normalized_h, normalized_c },
        })
    }

    /// Runs a whole sequence (each element `(batch, input)`) from zero
    /// state and returns the final hidden state.
    pub fn run_sequence(&mut self, xs: &[Array2<f64>]) -> Result<Array2<f64>, TemporalError> {
        let batch = xs.first().map_or(0, |x| x.dim().0);
        let (mut h, mut c) = self.zero_state(batch);
        for x in xs {
            let out = self.step(x, &h, &c)?;
            h = out.h;
            c = out.c;
        }
        Ok(h)
    }
}
