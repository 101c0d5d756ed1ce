//! Training of a single patch grader.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::{tensor_mse, GraderArch, GraderWeights};
use super::tensor::Tensor;
use crate::dc_space::{dc_mixup, DcPoint, DiagnosticClass};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::volume::Dims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraderConfig {
    pub patch_dims: Dims,
    pub base_channels: usize,
    pub levels: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Early-stopping patience (epochs) for a grader trained from scratch.
    pub early_stop_first: usize,
    /// Patience for graders initialized from a trained neighbour.
    pub early_stop_rest: usize,
    /// Hard epoch caps, first grader and transferred graders.
    pub max_epochs_first: usize,
    pub max_epochs_rest: usize,
    pub mixup: bool,
    /// Maximum random shift per axis, in voxels.
    pub translation: usize,
    pub val_fraction: f64,
    /// Project member outputs onto the unit disk at inference.
    pub clamp_output: bool,
}

impl Default for GraderConfig {
    fn default() -> Self {
        Self {
            patch_dims: [16, 24, 16],
            base_channels: 8,
            levels: 2,
            lr: 3e-4,
            batch_size: 16,
            early_stop_first: 400,
            early_stop_rest: 100,
            max_epochs_first: 5000,
            max_epochs_rest: 5000,
            mixup: true,
            translation: 1,
            val_fraction: 0.2,
            clamp_output: false,
        }
    }
}

impl GraderConfig {
    pub fn arch(&self) -> GraderArch {
        GraderArch {
            patch_dims: self.patch_dims,
            base_channels: self.base_channels,
            levels: self.levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Parameter("learning rate and batch size must be positive".into()));
        }
        if self.early_stop_first == 0 || self.early_stop_rest == 0 {
            return Err(Error::Parameter("early-stopping patience must be positive".into()));
        }
        if self.max_epochs_first == 0 || self.max_epochs_rest == 0 {
            return Err(Error::Parameter("epoch caps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Parameter("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training example at a fixed grid location.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// One-channel intensity patch.
    pub input: Tensor,
    /// Two-channel disease-coordinate target.
    pub target: Tensor,
    pub class: DiagnosticClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epochs_run: usize,
    /// 0 means the initial weights were never improved upon.
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub train_size: usize,
    pub val_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedGrader {
    pub weights: GraderWeights,
    pub record: TrainingRecord,
}

/// Class-stratified split; each class contributes `round(n_c * fraction)`
/// samples to validation. Returns (train, validation) indices.
pub fn stratified_split(classes: &[DiagnosticClass], fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in DiagnosticClass::ALL {
        let mut idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == c).collect();
        idx.shuffle(rng);
        let n_val = (idx.len() as f64 * fraction).round() as usize;
        let n_val = n_val.min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Shifts every channel by `shift` voxels, replicating edge voxels into the
/// vacated border.
pub fn translate(t: &Tensor, shift: [isize; 3]) -> Tensor {
    if shift == [0, 0, 0] {
        return t.clone();
    }
    let d = t.dims;
    let src_idx = |p: usize, axis: usize| -> usize { (p as isize - shift[axis]).clamp(0, d[axis] as isize - 1) as usize };
    let mut out = Tensor::zeros(t.channels, d);
    for c in 0..t.channels {
        let src = t.channel(c);
        let dst = out.channel_mut(c);
        for z in 0..d[2] {
            let sz = src_idx(z, 2);
            for y in 0..d[1] {
                let sy = src_idx(y, 1);
                for x in 0..d[0] {
                    dst[x + d[0] * (y + d[1] * z)] = src[src_idx(x, 0) + d[0] * (sy + d[1] * sz)];
                }
            }
        }
    }
    out
}

/// Voxel-wise disease-coordinate mixup of two samples.
pub fn mix_samples(a: &(Tensor, Tensor), b: &(Tensor, Tensor), alpha: f64) -> Result<(Tensor, Tensor)> {
    let n = a.0.voxels();
    let mut input = Tensor::zeros(1, a.0.dims);
    let mut target = Tensor::zeros(2, a.0.dims);
    for v in 0..n {
        let p1 = DcPoint::new(a.1.data[v], a.1.data[n + v]);
        let p2 = DcPoint::new(b.1.data[v], b.1.data[n + v]);
        let (i, p) = dc_mixup(a.0.data[v], p1, b.0.data[v], p2, alpha)?;
        input.data[v] = i;
        target.data[v] = p.x;
        target.data[n + v] = p.y;
    }
    Ok((input, target))
}

fn augment_batch(batch: &[&PatchSample], cfg: &GraderConfig, rng: &mut impl Rng) -> Result<Vec<(Tensor, Tensor)>> {
    let t = cfg.translation as isize;
    let shifted: Vec<(Tensor, Tensor)> = batch
        .iter()
        .map(|s| {
            let shift = [rng.gen_range(-t..=t), rng.gen_range(-t..=t), rng.gen_range(-t..=t)];
            (translate(&s.input, shift), translate(&s.target, shift))
        })
        .collect();
    if !cfg.mixup {
        return Ok(shifted);
    }
    let mut partner: Vec<usize> = (0..shifted.len()).collect();
    partner.shuffle(rng);
    shifted
        .iter()
        .zip(&partner)
        .map(|(s, &j)| {
            // open interval (0, 1)
            let alpha = loop {
                let a: f64 = rng.gen();
                if a > 0.0 {
                    break a;
                }
            };
            mix_samples(s, &shifted[j], alpha)
        })
        .collect()
}

pub fn validation_loss(w: &GraderWeights, samples: &[&PatchSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += tensor_mse(&w.forward_tensor(&s.input)?, &s.target)?;
    }
    Ok(total / samples.len() as f64)
}

fn quantize_f32(params: &mut [f64]) {
    for p in params {
        *p = f64::from(*p as f32);
    }
}

/// Trains one grader and returns the checkpoint with the lowest validation
/// loss (the initial weights count as checkpoint 0). Stored weights are
/// rounded to f32 precision, the precision of the weights file.
pub fn train_grader(
    data: &[PatchSample],
    init: Option<&GraderWeights>,
    cfg: &GraderConfig,
    seed: u64,
) -> Result<TrainedGrader> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("grader training set is empty".into()));
    }
    let transferred = init.is_some();
    let mut weights = match init {
        Some(w) => {
            if w.arch != cfg.arch() {
                return Err(Error::Parameter("initial weights do not match the configured architecture".into()));
            }
            w.clone()
        }
        None => GraderWeights::init(cfg.arch(), seed::derive(seed, stream::GRADER_INIT))?,
    };

    let classes: Vec<DiagnosticClass> = data.iter().map(|s| s.class).collect();
    let mut split_rng = seed::rng(seed, stream::GRADER_SPLIT);
    let (train_idx, mut val_idx) = stratified_split(&classes, cfg.val_fraction, &mut split_rng);
    if val_idx.is_empty() {
        // too few samples to hold any out: validate on the training set
        val_idx = train_idx.clone();
    }
    let val: Vec<&PatchSample> = val_idx.iter().map(|&i| &data[i]).collect();

    let (patience, max_epochs) = if transferred {
        (cfg.early_stop_rest, cfg.max_epochs_rest)
    } else {
        (cfg.early_stop_first, cfg.max_epochs_first)
    };

    let initial_val_loss = validation_loss(&weights, &val)?;
    let mut best = weights.clone();
    let mut best_loss = initial_val_loss;
    let mut best_epoch = 0;
    let mut adam = AdamState::new(weights.params.len());
    let mut rng = seed::rng(seed, stream::GRADER_EPOCH);
    let mut order = train_idx.clone();
    let mut epochs_run = 0;

    for epoch in 1..=max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &data[i]).collect();
            let augmented = augment_batch(&batch, cfg, &mut rng)?;
            let (_, grads) = weights.backward(&augmented)?;
            adam.step(&mut weights.params, &grads, cfg.lr)?;
        }
        epochs_run = epoch;
        let loss = validation_loss(&weights, &val)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                layer: "head".into(),
                message: format!("validation loss became {loss} at epoch {epoch}"),
            });
        }
        if loss < best_loss {
            best_loss = loss;
            best_epoch = epoch;
            best = weights.clone();
        } else if epoch - best_epoch >= patience {
            break;
        }
    }

    quantize_f32(&mut best.params);
    Ok(TrainedGrader {
        weights: best,
        record: TrainingRecord {
            epochs_run,
            best_epoch,
            initial_val_loss,
            best_val_loss: best_loss,
            train_size: train_idx.len(),
            val_size: val.len(),
        },
    })
}
