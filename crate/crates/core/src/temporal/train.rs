//! Adam training of the linear heads on top of a frozen recurrent cell.

use ndarray::{Array1, Array2, Axis};

use super::bnlstm::{sigmoid, BnLstmCell, Mode};
use super::loss::{binary_cross_entropy, multi_activity_loss, FrameRows, LossBatch};
use super::model::{argmax, softmax, ActivityModel, Linear};
use super::TemporalError;
use crate::rng::SplitMix64;
use crate::synth::{CropDataset, CropSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: usize) -> Self {
        Self { config, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.config;
        self.t += 1;
        let b1t = 1.0 - c.beta1.powi(self.t);
        let b2t = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Samples per minibatch; each minibatch is treated as one frame.
    pub batch_size: usize,
    pub lambda_w: f64,
    pub seed: u64,
    pub moving_average: usize,
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 500,
            batch_size: 8,
            lambda_w: super::loss::DEFAULT_LAMBDA_W,
            seed: 0,
            moving_average: 20,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub primary: f64,
    pub secondary: f64,
    /// Fraction of samples whose confidence falls on the correct side of 0.5.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Full training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub train: Accuracy,
    pub test: Accuracy,
}

impl TrainReport {
    /// Trailing moving averages of the epoch losses.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.epoch_losses.len() < window {
            return Vec::new();
        }
        self.epoch_losses.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }

    pub fn moving_average_non_increasing(&self, window: usize) -> bool {
        self.moving_average(window).windows(2).all(|w| w[1] <= w[0])
    }
}

/// Sets the running statistics of every normalization layer to the average
/// of the batch statistics seen over one train-mode pass in batches of
/// `batch_size`.
pub fn calibrate(cell: &mut BnLstmCell, samples: &[CropSample], batch_size: usize) -> Result<(), TemporalError> {
    let saved = (cell.bn_x.momentum, cell.bn_h.momentum, cell.bn_c.momentum);
    cell.mode = Mode::Train;
    let mut updates = 0usize;
    let mut result = Ok(());
    'outer: for chunk in samples.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let xs = sequence_batch(chunk);
        let (mut h, mut c) = cell.zero_state(chunk.len());
        for x in &xs {
            let m = 1.0 / (updates + 1) as f64;
            cell.bn_x.momentum = m;
            cell.bn_h.momentum = m;
            cell.bn_c.momentum = m;
            match cell.step(x, &h, &c) {
                Ok(out) => {
                    h = out.h;
                    c = out.c;
                }
                Err(e) => {
                    result = Err(e);
                    break 'outer;
                }
            }
            updates += 1;
        }
    }
    cell.bn_x.momentum = saved.0;
    cell.bn_h.momentum = saved.1;
    cell.bn_c.momentum = saved.2;
    cell.mode = Mode::Infer;
    for bn in [&mut cell.bn_x, &mut cell.bn_h, &mut cell.bn_c] {
        bn.running_var.mapv_inplace(|v| v.max(bn.eps));
    }
    result
}

/// Per-time-step input matrices `(batch, feature_dim)`.
fn sequence_batch(samples: &[CropSample]) -> Vec<Array2<f64>> {
    let len = samples.first().map_or(0, |s| s.sequence.len());
    (0..len)
        .map(|t| {
            let dim = samples[0].sequence[t].len();
            Array2::from_shape_fn((samples.len(), dim), |(r, j)| samples[r].sequence[t][j])
        })
        .collect()
}

/// Final hidden states in infer mode, one row per sample.
pub fn hidden_states(cell: &BnLstmCell, samples: &[CropSample]) -> Result<Array2<f64>, TemporalError> {
    let mut cell = cell.clone();
    cell.mode = Mode::Infer;
    if samples.is_empty() {
        return Ok(Array2::zeros((0, cell.hidden_size())));
    }
    if samples.iter().any(|s| s.sequence.len() != samples[0].sequence.len()) {
        return Err(TemporalError::Shape("sequences must share a length".into()));
    }
    cell.run_sequence(&sequence_batch(samples))
}

struct Heads<'a> {
    primary: &'a mut Linear,
    secondary: &'a mut Linear,
    confidence: &'a mut Linear,
}

impl Heads<'_> {
    fn layers(&self) -> [&Linear; 3] {
        [self.primary, self.secondary, self.confidence]
    }

    fn flatten(&self) -> Vec<f64> {
        self.layers().iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut off = 0;
        for l in [&mut *self.primary, &mut *self.secondary, &mut *self.confidence] {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = flat[off];
                off += 1;
            }
        }
    }
}

/// Loss on a set of rows treated as one frame: action terms over
/// pedestrian rows, plus confidence BCE over all rows.
fn frame_loss(model: &ActivityModel, h: &Array2<f64>, samples: &[&CropSample], lambda_w: f64) -> Result<f64, TemporalError> {
    let l = model.logits(h);
    let mut rows = FrameRows { primary: vec![], secondary: vec![], primary_target: vec![], secondary_target: vec![] };
    let mut conf = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for (r, s) in samples.iter().enumerate() {
        conf.push(sigmoid(l.confidence[r]));
        labels.push(s.pedestrian);
        if s.pedestrian {
            rows.primary.push(softmax(l.primary.row(r).as_slice().expect("contiguous")));
            rows.secondary.push(softmax(l.secondary.row(r).as_slice().expect("contiguous")));
            rows.primary_target.push(s.primary);
            rows.secondary_target.push(s.secondary);
        }
    }
    let action = multi_activity_loss(&LossBatch { frames: vec![rows], lambda_w })?;
    Ok(action + binary_cross_entropy(&conf, &labels))
}

/// Gradient of [`frame_loss`] with respect to all head parameters, in the
/// flattening order of [`Heads`].
fn frame_gradient(model: &ActivityModel, h: &Array2<f64>, samples: &[&CropSample], lambda_w: f64) -> Vec<f64> {
    let l = model.logits(h);
    let (np, ns) = (model.n_primary(), model.n_secondary());
    let n = samples.len();
    let peds = samples.iter().filter(|s| s.pedestrian).count() as f64;
    let mut gp = Array2::<f64>::zeros((n, np));
    let mut gs = Array2::<f64>::zeros((n, ns));
    let mut gc = Array2::<f64>::zeros((n, 1));
    for (r, s) in samples.iter().enumerate() {
        if s.pedestrian {
            let p = softmax(l.primary.row(r).as_slice().expect("contiguous"));
            for k in 0..np {
                gp[[r, k]] = (p[k] - f64::from(u8::from(k == s.primary))) / (peds * np as f64);
            }
            let q = softmax(l.secondary.row(r).as_slice().expect("contiguous"));
            for k in 0..ns {
                gs[[r, k]] = lambda_w * (q[k] - f64::from(u8::from(k == s.secondary))) / (peds * ns as f64);
            }
        }
        gc[[r, 0]] = (sigmoid(l.confidence[r]) - f64::from(u8::from(s.pedestrian))) / n as f64;
    }
    let mut out = Vec::new();
    for g in [&gp, &gs, &gc] {
        let gw = g.t().dot(h);
        let gb: Array1<f64> = g.sum_axis(Axis(0));
        out.extend(gw.iter().copied());
        out.extend(gb.iter().copied());
    }
    out
}

pub fn accuracy(model: &ActivityModel, h: &Array2<f64>, samples: &[CropSample]) -> Accuracy {
    let preds = model.predict_from_hidden(h);
    let (mut p, mut s, mut c, mut peds) = (0usize, 0usize, 0usize, 0usize);
    for (pred, sample) in preds.iter().zip(samples) {
        if (pred.confidence >= 0.5) == sample.pedestrian {
            c += 1;
        }
        if sample.pedestrian {
            peds += 1;
            p += usize::from(argmax(&pred.primary) == sample.primary);
            s += usize::from(argmax(&pred.secondary) == sample.secondary);
        }
    }
    let frac = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Accuracy { primary: frac(p, peds), secondary: frac(s, peds), confidence: frac(c, samples.len()) }
}

/// Calibrates the frozen cell, then trains the three heads with Adam on
/// shuffled minibatches. Aborts if the minibatch loss stays above
/// `divergence_factor` times the initial loss for `divergence_patience`
/// consecutive steps.
pub fn train_toy(model: &mut ActivityModel, data: &CropDataset, cfg: &TrainConfig) -> Result<TrainReport, TemporalError> {
    if data.train.is_empty() {
        return Err(TemporalError::Train("empty training set".into()));
    }
    calibrate(&mut model.cell, &data.train, 64)?;
    let h_train = hidden_states(&model.cell, &data.train)?;
    let h_test = hidden_states(&model.cell, &data.test)?;
    let all: Vec<&CropSample> = data.train.iter().collect();
    let initial_loss = frame_loss(model, &h_train, &all, cfg.lambda_w)?;

    let n_params = {
        let heads = Heads { primary: &mut model.primary, secondary: &mut model.secondary, confidence: &mut model.confidence };
        heads.flatten().len()
    };
    let mut adam = Adam::new(cfg.adam, n_params);
    let mut rng = SplitMix64::derive(cfg.seed, 20);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut over = 0usize;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let rows: Vec<&CropSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let h = h_train.select(Axis(0), chunk);
            let loss = frame_loss(model, &h, &rows, cfg.lambda_w)?;
            if !loss.is_finite() || loss > cfg.divergence_factor * initial_loss {
                over += 1;
                if over >= cfg.divergence_patience || !loss.is_finite() {
                    return Err(TemporalError::Diverged { epoch, step: steps, loss, initial: initial_loss });
                }
            } else {
                over = 0;
            }
            let grad = frame_gradient(model, &h, &rows, cfg.lambda_w);
            let mut heads =
                Heads { primary: &mut model.primary, secondary: &mut model.secondary, confidence: &mut model.confidence };
            let mut flat = heads.flatten();
            adam.step(&mut flat, &grad);
            heads.assign(&flat);
            steps += 1;
        }
        let l = frame_loss(model, &h_train, &all, cfg.lambda_w)?;
        log::debug!("epoch {epoch}: loss {l:.6}");
        epoch_losses.push(l);
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
        steps,
        train: accuracy(model, &h_train, &data.train),
        test: accuracy(model, &h_test, &data.test),
    })
}
