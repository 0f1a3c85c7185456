use std::path::Path;

use ndarray::{Array1, Array2};

use super::bnlstm::{BatchNorm, BnLstmCell, Mode};
use super::TemporalError;
use crate::tensor_file::{Tensor, TensorBundle};

pub const DEFAULT_HIDDEN: usize = 64;

/// Dense layer `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Array2::zeros((output, input)), b: Array1::zeros(output) }
    }

    /// Applies the layer to every row of `x`.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub primary: Vec<f64>,
    pub secondary: Vec<f64>,
    pub confidence: f64,
}

impl Prediction {
    pub fn primary_action(&self) -> usize {
        argmax(&self.primary)
    }

    pub fn secondary_action(&self) -> usize {
        argmax(&self.secondary)
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Recurrent cell plus the primary, secondary and confidence heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityModel {
    pub cell: BnLstmCell,
    pub primary: Linear,
    pub secondary: Linear,
    pub confidence: Linear,
}

/// Per-row logits of the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub primary: Array2<f64>,
    pub secondary: Array2<f64>,
    pub confidence: Array1<f64>,
}

impl ActivityModel {
    /// Seeded cell with zero-initialized heads.
    pub fn new(input: usize, hidden: usize, n_primary: usize, n_secondary: usize, seed: u64) -> Self {
        Self {
            cell: BnLstmCell::seeded(input, hidden, seed),
            primary: Linear::zeros(hidden, n_primary),
            secondary: Linear::zeros(hidden, n_secondary),
            confidence: Linear::zeros(hidden, 1),
        }
    }

    pub fn n_primary(&self) -> usize {
        self.primary.b.len()
    }

    pub fn n_secondary(&self) -> usize {
        self.secondary.b.len()
    }

    pub fn logits(&self, hidden: &Array2<f64>) -> HeadLogits {
        HeadLogits {
            primary: self.primary.forward(hidden),
            secondary: self.secondary.forward(hidden),
            confidence: self.confidence.forward(hidden).column(0).to_owned(),
        }
    }

    pub fn predict_from_hidden(&self, hidden: &Array2<f64>) -> Vec<Prediction> {
        let l = self.logits(hidden);
        (0..hidden.dim().0)
            .map(|r| Prediction {
                primary: softmax(l.primary.row(r).as_slice().expect("standard layout")),
                secondary: softmax(l.secondary.row(r).as_slice().expect("standard layout")),
                confidence: super::bnlstm::sigmoid(l.confidence[r]),
            })
            .collect()
    }

    /// One recurrent step over a batch of flattened crops followed by the
    /// heads; returns the new `(h, c)` and per-row predictions.
    pub fn predict(
        &mut self,
        features: &Array2<f64>,
        h: &Array2<f64>,
        c: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Vec<Prediction>), TemporalError> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(TemporalError::NonFinite);
        }
        let out = self.cell.step(features, h, c)?;
        let preds = self.predict_from_hidden(&out.h);
        Ok((out.h, out.c, preds))
    }

    pub fn to_bundle(&self) -> Result<TensorBundle, TemporalError> {
        let mut b = TensorBundle::new();
        let mat = |a: &Array2<f64>| Tensor::f64(vec![a.dim().0, a.dim().1], a.iter().copied().collect());
        let vec1 = |a: &Array1<f64>| Tensor::f64(vec![a.len()], a.to_vec());
        b.insert("cell.wx", mat(&self.cell.wx)?);
        b.insert("cell.wh", mat(&self.cell.wh)?);
        b.insert("cell.bias", vec1(&self.cell.bias)?);
        for (name, bn) in [("bn_x", &self.cell.bn_x), ("bn_h", &self.cell.bn_h), ("bn_c", &self.cell.bn_c)] {
            b.insert(format!("cell.{name}.gamma"), vec1(&bn.gamma)?);
            b.insert(format!("cell.{name}.beta"), vec1(&bn.beta)?);
            b.insert(format!("cell.{name}.running_mean"), vec1(&bn.running_mean)?);
            b.insert(format!("cell.{name}.running_var"), vec1(&bn.running_var)?);
            b.insert(format!("cell.{name}.hyper"), Tensor::f64(vec![2], vec![bn.eps, bn.momentum])?);
        }
        for (name, l) in [("primary", &self.primary), ("secondary", &self.secondary), ("confidence", &self.confidence)] {
            b.insert(format!("head.{name}.w"), mat(&l.w)?);
            b.insert(format!("head.{name}.b"), vec1(&l.b)?);
        }
        Ok(b)
    }

    pub fn from_bundle(mut b: TensorBundle) -> Result<Self, TemporalError> {
        fn mat(b: &mut TensorBundle, name: &str) -> Result<Array2<f64>, TemporalError> {
            let t = b.take(name)?;
            let dims = t.dims().to_vec();
            if dims.len() != 2 {
                return Err(TemporalError::Shape(format!("{name}: expected rank 2, got {dims:?}")));
            }
            Array2::from_shape_vec((dims[0], dims[1]), t.into_f64()?)
                .map_err(|e| TemporalError::Shape(format!("{name}: {e}")))
        }
        fn vec1(b: &mut TensorBundle, name: &str) -> Result<Array1<f64>, TemporalError> {
            Ok(Array1::from(b.take(name)?.into_f64()?))
        }
        fn bn(b: &mut TensorBundle, name: &str) -> Result<BatchNorm, TemporalError> {
            let hyper = vec1(b, &format!("cell.{name}.hyper"))?;
            if hyper.len() != 2 {
                return Err(TemporalError::Shape(format!("{name}.hyper must hold 2 values")));
            }
            let out = BatchNorm {
                gamma: vec1(b, &format!("cell.{name}.gamma"))?,
                beta: vec1(b, &format!("cell.{name}.beta"))?,
                running_mean: vec1(b, &format!("cell.{name}.running_mean"))?,
                running_var: vec1(b, &format!("cell.{name}.running_var"))?,
                eps: hyper[0],
                momentum: hyper[1],
            };
            if out.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(TemporalError::Shape(format!("{name}: running variance must be positive")));
            }
            Ok(out)
        }
        let cell = BnLstmCell {
            wx: mat(&mut b, "cell.wx")?,
            wh: mat(&mut b, "cell.wh")?,
            bias: vec1(&mut b, "cell.bias")?,
            bn_x: bn(&mut b, "bn_x")?,
            bn_h: bn(&mut b, "bn_h")?,
            bn_c: bn(&mut b, "bn_c")?,
            mode: Mode::Infer,
        };
        let mut head = |name: &str| -> Result<Linear, TemporalError> {
            Ok(Linear { w: mat(&mut b, &format!("head.{name}.w"))?, b: vec1(&mut b, &format!("head.{name}.b"))? })
        };
        let model = Self { primary: head("primary")?, secondary: head("secondary")?, confidence: head("confidence")?, cell };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), TemporalError> {
        let c = &self.cell;
        let hs = c.wh.dim().1;
        let ok = c.wh.dim().0 == 4 * hs
            && c.wx.dim().0 == 4 * hs
            && c.bias.len() == 4 * hs
            && c.bn_x.features() == 4 * hs
            && c.bn_h.features() == 4 * hs
            && c.bn_c.features() == hs
            && [&self.primary, &self.secondary, &self.confidence]
                .iter()
                .all(|l| l.w.dim().1 == hs && l.w.dim().0 == l.b.len())
            && self.confidence.b.len() == 1;
        if ok {
            Ok(())
        } else {
            Err(TemporalError::Shape("inconsistent parameter shapes".into()))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TemporalError> {
        Ok(self.to_bundle()?.save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemporalError> {
        Self::from_bundle(TensorBundle::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn zero_heads_are_uniform() {
        let mut m = ActivityModel::new(10, 6, 4, 5, 1);
        let mut rng = SplitMix64::new(2);
        let x = Array2::from_shape_fn((3, 10), |_| rng.uniform(-2.0, 2.0));
        let (h, c) = m.cell.zero_state(3);
        let (_, _, preds) = m.predict(&x, &h, &c).unwrap();
        for p in preds {
            assert!(p.primary.iter().all(|&v| (v - 0.25).abs() < 1e-15));
            assert!(p.secondary.iter().all(|&v| (v - 0.2).abs() < 1e-15));
            assert_eq!(p.confidence, 0.5);
        }
    }

    #[test]
    fn heads_match_scalar_reference() {
        let mut rng = SplitMix64::new(8);
        let mut m = ActivityModel::new(7, 4, 3, 2, 5);
        for l in [&mut m.primary, &mut m.secondary, &mut m.confidence] {
            l.w.mapv_inplace(|_| rng.uniform(-1.0, 1.0));
            l.b.mapv_inplace(|_| rng.uniform(-1.0, 1.0));
        }
        let h = Array2::from_shape_fn((2, 4), |_| rng.uniform(-1.0, 1.0));
        let preds = m.predict_from_hidden(&h);
        for (r, p) in preds.iter().enumerate() {
            let z: Vec<f64> = (0..3)
                .map(|k| m.primary.b[k] + (0..4).map(|j| m.primary.w[[k, j]] * h[[r, j]]).sum::<f64>())
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            for k in 0..3 {
                assert!((p.primary[k] - z[k].exp() / denom).abs() < 1e-6);
            }
            assert!((p.secondary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let zc = m.confidence.b[0] + (0..4).map(|j| m.confidence.w[[0, j]] * h[[r, j]]).sum::<f64>();
            assert!((p.confidence - 1.0 / (1.0 + (-zc).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn bundle_roundtrip() {
        let mut m = ActivityModel::new(9, 3, 4, 5, 11);
        m.primary.w[[1, 2]] = 0.75;
        m.cell.bn_c.running_var[1] = 2.5;
        let bytes = m.to_bundle().unwrap().to_bytes().unwrap();
        let back = ActivityModel::from_bundle(TensorBundle::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut broken = m.to_bundle().unwrap();
        broken.insert("head.primary.w", Tensor::f64(vec![4, 2], vec![0.0; 8]).unwrap());
        assert!(ActivityModel::from_bundle(broken).is_err());
    }
}
