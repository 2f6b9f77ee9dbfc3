use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{IntegratorModel, IntegratorVariant, MlpProfile, TrainingMeta};
use super::triplets::StyleTriplet;
use crate::error::{Error, Result};

/// Trainer hyperparameters. Stored verbatim in the model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub val_fraction: f64,
    pub variant: IntegratorVariant,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            epochs: 30,
            patience: 5,
            val_fraction: 0.2,
            variant: IntegratorVariant::Residual,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Weights from the epoch with the lowest validation loss.
    pub model: IntegratorModel,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

impl TrainReport {
    /// CSV with header `epoch,train_loss,val_loss`.
    pub fn write_loss_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_loss,val_loss")?;
        for e in &self.history {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(f, "{},{},{}", e.epoch, e.train_loss, val)?;
        }
        f.flush()?;
        Ok(())
    }
}

struct Dataset {
    x: Array2<f32>,
    y: Array2<f32>,
}

impl Dataset {
    fn build(triplets: &[StyleTriplet], profile: &MlpProfile, variant: IntegratorVariant) -> Result<Self> {
        let n = triplets.len();
        let mut x = Array2::<f32>::zeros((n, profile.input_width()));
        let mut y = Array2::<f32>::zeros((n, profile.output_width()));
        let want = (profile.tokens, profile.dim);
        for (i, t) in triplets.iter().enumerate() {
            if t.f_c.shape() != want {
                return Err(Error::invalid(format!(
                    "triplet {i} has shape {:?}, profile expects {want:?}",
                    t.f_c.shape()
                )));
            }
            let tw = profile.output_width();
            let mut row = x.row_mut(i);
            for (k, v) in t.f_c.tokens().iter().chain(t.f_s.tokens().iter()).enumerate() {
                row[k] = *v;
            }
            let mut target = y.row_mut(i);
            let it = t
                .f_c
                .tokens()
                .iter()
                .zip(t.f_s.tokens().iter())
                .zip(t.f_l.tokens().iter());
            for (k, ((c, s), l)) in it.enumerate().take(tw) {
                target[k] = match variant {
                    IntegratorVariant::Residual => c + s - l,
                    IntegratorVariant::Direct => *l,
                };
            }
        }
        Ok(Self { x, y })
    }

    fn len(&self) -> usize {
        self.x.nrows()
    }

    fn select(&self, idx: &[usize]) -> (Array2<f32>, Array2<f32>) {
        (self.x.select(Axis(0), idx), self.y.select(Axis(0), idx))
    }
}

/// Mean squared error per output element.
fn mse(model: &IntegratorModel, data: &Dataset) -> Result<f64> {
    if data.len() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    let chunk = 512;
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(chunk) {
        let (x, y) = data.select(idx);
        let pred = model.forward_batch(x.view())?;
        total += (&pred - &y).iter().map(|d| (*d as f64).powi(2)).sum::<f64>();
    }
    Ok(total / (data.len() * data.y.ncols()) as f64)
}

/// Training loss of `model` on `triplets` under its own variant's target.
pub fn evaluate_loss(model: &IntegratorModel, triplets: &[StyleTriplet]) -> Result<f64> {
    let data = Dataset::build(triplets, &model.profile, model.variant)?;
    mse(model, &data)
}

struct AdamState {
    m_w: Vec<Array2<f32>>,
    v_w: Vec<Array2<f32>>,
    m_b: Vec<Array1<f32>>,
    v_b: Vec<Array1<f32>>,
    t: i32,
}

impl AdamState {
    fn new(model: &IntegratorModel) -> Self {
        let zw = |i: usize| Array2::zeros(model.layers[i].weight.raw_dim());
        let zb = |i: usize| Array1::zeros(model.layers[i].bias.raw_dim());
        Self {
            m_w: (0..3).map(zw).collect(),
            v_w: (0..3).map(zw).collect(),
            m_b: (0..3).map(zb).collect(),
            v_b: (0..3).map(zb).collect(),
            t: 0,
        }
    }
}

fn adam_update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f32, D>,
    g: &ndarray::Array<f32, D>,
    m: &mut ndarray::Array<f32, D>,
    v: &mut ndarray::Array<f32, D>,
    cfg: &TrainConfig,
    t: i32,
) {
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = 1.0 - (cfg.beta1).powi(t);
    let c2 = 1.0 - (cfg.beta2).powi(t);
    let step = (cfg.lr * c2.sqrt() / c1) as f32;
    let eps = (cfg.adam_eps * c2.sqrt()) as f32;
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    });
}

type Grads = [(Array2<f32>, Array1<f32>); 3];

/// Batch loss and its gradients with respect to every layer.
fn gradients(model: &IntegratorModel, x: &Array2<f32>, y: &Array2<f32>) -> (f64, Option<Grads>) {
    let act = model.profile.activation;
    let z1 = model.layers[0].forward(x.view());
    let a1 = z1.mapv(|v| act.apply(v));
    let z2 = model.layers[1].forward(a1.view());
    let a2 = z2.mapv(|v| act.apply(v));
    let out = model.layers[2].forward(a2.view());

    let diff = &out - y;
    let denom = diff.len() as f32;
    let loss = diff.iter().map(|d| (*d as f64).powi(2)).sum::<f64>() / denom as f64;
    if !loss.is_finite() {
        return (loss, None);
    }
    let dy = diff * (2.0 / denom);
    let gw3 = a2.t().dot(&dy);
    let gb3 = dy.sum_axis(Axis(0));
    let mut dz2 = dy.dot(&model.layers[2].weight.t());
    ndarray::Zip::from(&mut dz2).and(&z2).for_each(|d, &z| *d *= act.derivative(z));
    let gw2 = a1.t().dot(&dz2);
    let gb2 = dz2.sum_axis(Axis(0));
    let mut dz1 = dz2.dot(&model.layers[1].weight.t());
    ndarray::Zip::from(&mut dz1).and(&z1).for_each(|d, &z| *d *= act.derivative(z));
    let gw1 = x.t().dot(&dz1);
    let gb1 = dz1.sum_axis(Axis(0));
    (loss, Some([(gw1, gb1), (gw2, gb2), (gw3, gb3)]))
}

/// One optimizer step on a minibatch; returns the batch loss before the update.
fn train_step(model: &mut IntegratorModel, x: &Array2<f32>, y: &Array2<f32>, adam: &mut AdamState, cfg: &TrainConfig) -> f64 {
    let (loss, Some(grads)) = gradients(model, x, y) else {
        return f64::NAN;
    };
    adam.t += 1;
    let t = adam.t;
    for (i, (gw, gb)) in grads.iter().enumerate() {
        let layer = &mut model.layers[i];
        adam_update(&mut layer.weight, gw, &mut adam.m_w[i], &mut adam.v_w[i], cfg, t);
        adam_update(&mut layer.bias, gb, &mut adam.m_b[i], &mut adam.v_b[i], cfg, t);
    }
    let finite = model
        .layers
        .iter()
        .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
    if finite { loss } else { f64::NAN }
}

fn data_hash(train: &[StyleTriplet], val: &[StyleTriplet]) -> String {
    let mut h = Sha256::new();
    h.update((train.len() as u64).to_le_bytes());
    h.update((val.len() as u64).to_le_bytes());
    for t in train.iter().chain(val) {
        for f in [&t.f_c, &t.f_s, &t.f_l] {
            for v in f.tokens() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Seeded holdout split into (train, validation).
pub fn split_holdout(triplets: &[StyleTriplet], val_fraction: f64, seed: u64) -> (Vec<StyleTriplet>, Vec<StyleTriplet>) {
    let n = triplets.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::util::seeded_rng(seed, "holdout"));
    let n_val = if val_fraction <= 0.0 || n < 2 {
        0
    } else {
        ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1)
    };
    let val = idx[..n_val].iter().map(|&i| triplets[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| triplets[i].clone()).collect();
    (train, val)
}

/// Splits `triplets` by `cfg.val_fraction` and trains.
pub fn train_integrator(triplets: &[StyleTriplet], profile: MlpProfile, cfg: &TrainConfig) -> Result<TrainReport> {
    if triplets.len() < 2 {
        return Err(Error::invalid("training needs at least 2 triplets"));
    }
    cfg.validate()?;
    let (train, val) = split_holdout(triplets, cfg.val_fraction, cfg.seed);
    train_integrator_split(&train, &val, profile, cfg)
}

/// Trains on `train`, selecting the best epoch by loss on `val` (or on
/// `train` when `val` is empty).
pub fn train_integrator_split(
    train: &[StyleTriplet],
    val: &[StyleTriplet],
    profile: MlpProfile,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let train_data = Dataset::build(train, &profile, cfg.variant)?;
    let val_data = Dataset::build(val, &profile, cfg.variant)?;
    let mut model = IntegratorModel::init(profile, cfg.variant, cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut rng = crate::util::seeded_rng(cfg.seed, "batches");

    let mut best = model.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let (x, y) = train_data.select(idx);
            let loss = train_step(&mut model, &x, &y, &mut adam, cfg);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    last_stable: Box::new(best),
                });
            }
            sum += loss;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break;
        }
        let train_loss = sum / batches as f64;
        let val_loss = if val_data.len() > 0 { Some(mse(&model, &val_data)?) } else { None };
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        let score = val_loss.unwrap_or(train_loss);
        if !score.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                last_stable: Box::new(best),
            });
        }
        if score < best_score {
            best_score = score;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }

    let final_train_loss = mse(&best, &train_data)?;
    let final_val_loss = if val_data.len() > 0 { Some(mse(&best, &val_data)?) } else { None };
    best.meta = Some(TrainingMeta {
        config: cfg.clone(),
        epochs_run: history.len(),
        best_epoch,
        optimizer_steps: steps,
        train_triplets: train.len(),
        val_triplets: val.len(),
        data_hash: data_hash(train, val),
        final_train_loss,
        final_val_loss,
    });
    Ok(TrainReport {
        model: best,
        history,
        best_epoch,
        stopped_early,
        final_train_loss,
        final_val_loss,
    })
}
