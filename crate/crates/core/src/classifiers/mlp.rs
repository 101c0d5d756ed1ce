//! One-hidden-layer perceptron on structure DC features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_labels, check_rows};
use crate::error::{geometry, Error, Result};
use crate::grader_net::AdamState;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 3e-4,
            batch_size: 8,
            patience: 50,
            max_epochs: 2000,
        }
    }
}

/// Parameters are stored flat: `w1 [hidden][input]`, `b1`, `w2 [classes][hidden]`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpTrainingRecord {
    pub epochs_run: usize,
    pub best_epoch: usize,
}

impl MlpModel {
    pub fn param_count(input_dim: usize, hidden: usize, n_classes: usize) -> usize {
        hidden * input_dim + hidden + n_classes * hidden + n_classes
    }

    pub fn zeros(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden,
            n_classes,
            params: vec![0.0; Self::param_count(input_dim, hidden, n_classes)],
        }
    }

    /// He-normal hidden weights, Glorot-normal output weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut m = Self::zeros(input_dim, hidden, n_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let he = Normal::new(0.0, (2.0 / input_dim as f64).sqrt()).expect("positive sd");
        let glorot = Normal::new(0.0, (2.0 / (hidden + n_classes) as f64).sqrt()).expect("positive sd");
        let ranges = m.layer_ranges();
        for i in ranges[0].1.clone() {
            m.params[i] = he.sample(&mut rng);
        }
        for i in ranges[2].1.clone() {
            m.params[i] = glorot.sample(&mut rng);
        }
        m
    }

    /// Named parameter blocks in storage order.
    pub fn layer_ranges(&self) -> [(&'static str, std::ops::Range<usize>); 4] {
        let (d, h, c) = (self.input_dim, self.hidden, self.n_classes);
        let w1 = 0..h * d;
        let b1 = w1.end..w1.end + h;
        let w2 = b1.end..b1.end + c * h;
        let b2 = w2.end..w2.end + c;
        [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(geometry!("MLP expects {} features, got {}", self.input_dim, x.len()));
        }
        Ok(())
    }

    /// Hidden pre-activations and output logits.
    fn forward_raw(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, h, c) = (self.input_dim, self.hidden, self.n_classes);
        let r = self.layer_ranges();
        let (w1, b1) = (&self.params[r[0].1.clone()], &self.params[r[1].1.clone()]);
        let (w2, b2) = (&self.params[r[2].1.clone()], &self.params[r[3].1.clone()]);
        let pre: Vec<f64> = (0..h)
            .map(|j| b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let logits = (0..c)
            .map(|k| b2[k] + w2[k * h..(k + 1) * h].iter().zip(&pre).map(|(w, v)| w * v.max(0.0)).sum::<f64>())
            .collect();
        (pre, logits)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(softmax(&self.forward_raw(x).1))
    }

    /// Mean cross-entropy over the samples and its gradient.
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let (d, h, c) = (self.input_dim, self.hidden, self.n_classes);
        let r = self.layer_ranges();
        let w2 = &self.params[r[2].1.clone()];
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(labels) {
            self.check_input(x)?;
            let (pre, logits) = self.forward_raw(x);
            let p = softmax(&logits);
            loss -= log_softmax(&logits)[y] * scale;
            let dz: Vec<f64> = (0..c).map(|k| (p[k] - (k == y) as u8 as f64) * scale).collect();
            let mut dh = vec![0.0; h];
            for k in 0..c {
                grad[r[3].1.start + k] += dz[k];
                for j in 0..h {
                    grad[r[2].1.start + k * h + j] += dz[k] * pre[j].max(0.0);
                    dh[j] += w2[k * h + j] * dz[k];
                }
            }
            for j in 0..h {
                if pre[j] <= 0.0 {
                    continue;
                }
                grad[r[1].1.start + j] += dh[j];
                let row = &mut grad[r[0].1.start + j * d..r[0].1.start + (j + 1) * d];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dh[j] * v;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric {
                layer: "mlp".into(),
                message: "non-finite cross-entropy".into(),
            });
        }
        Ok((loss, grad))
    }

    pub fn loss(&self, xs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            self.check_input(x)?;
            loss -= log_softmax(&self.forward_raw(x).1)[y];
        }
        Ok(loss / xs.len() as f64)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Trains with Adam on mini-batches and keeps the weights with the lowest
/// validation loss (the initial weights included). Parameters are rounded to
/// f32 at the end so a saved model predicts exactly like the returned one.
pub fn mlp_train(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    val_x: &[Vec<f64>],
    val_y: &[usize],
    n_classes: usize,
    cfg: &MlpConfig,
    seed_value: u64,
) -> Result<(MlpModel, MlpTrainingRecord)> {
    let dim = check_rows(train_x)?;
    check_labels(train_y, train_x.len(), n_classes)?;
    if val_x.is_empty() {
        return Err(Error::Protocol("MLP validation set is empty".into()));
    }
    if check_rows(val_x)? != dim {
        return Err(geometry!("validation features differ in dimension"));
    }
    check_labels(val_y, val_x.len(), n_classes)?;
    if cfg.batch_size == 0 || cfg.hidden == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Parameter("MLP hidden size, batch size and lr must be positive".into()));
    }
    let mut model = MlpModel::init(dim, cfg.hidden, n_classes, seed::derive(seed_value, stream::MLP));
    let mut rng = seed::rng(seed_value, stream::MLP + 1);
    let mut adam = AdamState::new(model.params.len());
    let mut best = (model.loss(val_x, val_y)?, model.params.clone(), 0usize);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (_, grad) = model.loss_and_grad(&bx, &by)?;
            adam.step(&mut model.params, &grad, cfg.lr)?;
        }
        epochs_run = epoch;
        let val = model.loss(val_x, val_y)?;
        if val < best.0 {
            best = (val, model.params.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    model.params = best.1.iter().map(|&v| v as f32 as f64).collect();
    Ok((
        model,
        MlpTrainingRecord {
            epochs_run,
            best_epoch: best.2,
        },
    ))
}

pub fn mlp_predict_proba(m: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    m.predict_proba(x)
}
