//! Training loop: AdamW with decoupled weight decay under a polynomial
//! learning-rate schedule, with per-method loss routing.
//!
//! Each image in a batch gets its own graph; per-image gradients are summed
//! in batch order and divided by the batch size, so results do not depend on
//! thread count and gradient accumulation over micro-batches is bit-equal to
//! a single full batch.

mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autodiff::{Array, Graph};
use crate::error::{Error, Result};
use crate::losses::{gnll_loss, lc_loss, si_loss, LossConfig};
use crate::metrics::{DepthMetrics, DepthSums, Log10Mode};
use crate::model::{self, DepthNet, HeadSelect, ModelConfig};
use crate::seed;
use crate::synthdata::{augment, ImageSample};
use crate::uq::{Method, UqConfig};

pub use optim::{adamw_step, poly_lr, AdamWHyper, AdamWState};

const STREAM_SHUFFLE: u64 = 0x5348;
const STREAM_AUGMENT: u64 = 0x4155;
const STREAM_DROPOUT: u64 = 0x4452;

/// Learning rate the reference fine-tuning recipe uses.
pub const REFERENCE_BASE_LR: f64 = 6e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub uq: UqConfig,
    pub loss: LossConfig,
    pub base_lr: f64,
    /// Scales `base_lr`; a from-scratch desk model needs a larger step than
    /// a fine-tuned foundation model.
    pub lr_multiplier: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Images per gradient-accumulation chunk; `None` processes the whole
    /// batch at once.
    pub micro_batch: Option<usize>,
    pub power: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub crop: (usize, usize),
    pub flip_prob: f64,
    pub log10_mode: Log10Mode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            uq: UqConfig::default(),
            loss: LossConfig::default(),
            base_lr: REFERENCE_BASE_LR,
            lr_multiplier: 100.0,
            weight_decay: 0.01,
            epochs: 25,
            batch_size: 16,
            micro_batch: None,
            power: 0.9,
            betas: (0.9, 0.999),
            eps: 1e-8,
            crop: (32, 32),
            flip_prob: 0.5,
            log10_mode: Log10Mode::Mae,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the model's head count and output channels set for
    /// `method`.
    pub fn for_method(method: Method) -> Self {
        let mut c = TrainConfig {
            uq: UqConfig::for_method(method),
            ..TrainConfig::default()
        };
        c.sync_model_to_method();
        c
    }

    pub fn sync_model_to_method(&mut self) {
        self.model.num_heads = self.uq.model_heads();
        self.model.head_out_channels = self.uq.method.head_out_channels();
    }

    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.lr_multiplier
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.uq.validate()?;
        self.loss.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad(format!("epochs ({}) and batch_size ({}) must be >= 1", self.epochs, self.batch_size));
        }
        if self.micro_batch == Some(0) {
            return bad("micro_batch must be >= 1".into());
        }
        if !(self.power > 0.0) || !(self.effective_lr() > 0.0) || !(self.weight_decay >= 0.0) {
            return bad(format!(
                "need power > 0, lr > 0, weight_decay >= 0 (got {}, {}, {})",
                self.power,
                self.effective_lr(),
                self.weight_decay
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2) && self.eps > 0.0) {
            return bad(format!("invalid AdamW betas {:?} / eps {}", self.betas, self.eps));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        let f = self.model.downsample_factor();
        if self.crop.0 == 0 || self.crop.1 == 0 || !self.crop.0.is_multiple_of(f) || !self.crop.1.is_multiple_of(f) {
            return bad(format!("crop {:?} must be non-zero and divisible by {f}", self.crop));
        }
        let m = self.uq.method;
        if self.model.head_out_channels != m.head_out_channels() || self.model.num_heads != self.uq.model_heads() {
            return bad(format!(
                "method {m} needs K={} M={}, model has K={} M={}",
                m.head_out_channels(),
                self.uq.model_heads(),
                self.model.head_out_channels,
                self.model.num_heads
            ));
        }
        if m == Method::Mcd && self.model.dropout_rate == 0.0 {
            return bad("MC dropout training needs dropout_rate > 0".into());
        }
        Ok(())
    }

    pub fn hyper(&self, lr: f64) -> AdamWHyper {
        AdamWHyper {
            lr,
            weight_decay: self.weight_decay,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Zero-based head optimized in this step.
    pub head: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub wall_ms: f64,
    pub val: Option<DepthMetrics>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub iterations: Vec<IterLog>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn total_wall_ms(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_ms).sum()
    }

    /// Per-iteration CSV. Contains no timings, so it is reproducible.
    pub fn iterations_csv(&self) -> String {
        let mut s = String::from("iteration,epoch,lr,loss,head\n");
        for r in &self.iterations {
            writeln!(s, "{},{},{:e},{:e},{}", r.iteration, r.epoch, r.lr, r.loss, r.head).unwrap();
        }
        s
    }

    /// Per-epoch validation metrics and wall time.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,wall_ms,val_rmse,val_absrel,val_log10,val_delta1,val_delta2,val_delta3\n");
        for e in &self.epochs {
            write!(s, "{},{:.3}", e.epoch, e.wall_ms).unwrap();
            match e.val {
                Some(v) => writeln!(s, ",{},{},{},{},{},{}", v.rmse, v.absrel, v.log10, v.delta1, v.delta2, v.delta3),
                None => writeln!(s, ",n/a,n/a,n/a,n/a,n/a,n/a"),
            }
            .unwrap();
        }
        s
    }
}

/// Mean loss and summed-then-averaged gradients for one batch. Blocks that
/// are not part of the active head (or encoder) have `None` gradients.
pub fn batch_gradients(
    net: &DepthNet,
    cfg: &TrainConfig,
    batch: &[ImageSample],
    head: usize,
    iteration: usize,
) -> Result<(f64, Vec<Option<Array>>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let chunk = cfg.micro_batch.unwrap_or(batch.len()).max(1);
    let mut loss_sum = 0.0;
    let mut grads: Vec<Option<Array>> = vec![None; net.params().len()];
    for (c, part) in batch.chunks(chunk).enumerate() {
        let results: Vec<(f64, Vec<(usize, Array)>)> = part
            .par_iter()
            .enumerate()
            .map(|(i, s)| image_gradients(net, cfg, s, head, iteration, c * chunk + i))
            .collect::<Result<_>>()?;
        for (loss, gs) in results {
            loss_sum += loss;
            for (b, g) in gs {
                match &mut grads[b] {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v),
                    slot => *slot = Some(g),
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in grads.iter_mut().flatten() {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    Ok((loss_sum * inv, grads))
}

fn image_gradients(
    net: &DepthNet,
    cfg: &TrainConfig,
    sample: &ImageSample,
    head: usize,
    iteration: usize,
    position: usize,
) -> Result<(f64, Vec<(usize, Array)>)> {
    let mut g = Graph::new();
    let b = net.bind(&mut g, true, HeadSelect::One(head))?;
    let x = g.constant(model::image_batch(&sample.image)?);
    let method = cfg.uq.method;
    let dropout = (method == Method::Mcd).then(|| seed::derive(cfg.seed, &[STREAM_DROPOUT, iteration as u64, position as u64]));
    let feats = net.encode(&mut g, &b, x, dropout)?;
    let out = net.decode(&mut g, &b, &feats, head)?;
    let c0 = model::channel_node(&mut g, out, 0)?;
    let depth = model::depth_node(&mut g, c0, net.config().max_depth)?;
    let (gt, mask, lc) = (&sample.depth, &sample.mask, &cfg.loss);
    let loss = match method {
        Method::Lc => {
            let c1 = model::channel_node(&mut g, out, 1)?;
            let conf = model::confidence_node(&mut g, c1)?;
            lc_loss(&mut g, depth, conf, gt, mask, lc)?
        }
        Method::Gnll => {
            let c1 = model::channel_node(&mut g, out, 1)?;
            let var = model::variance_node(&mut g, c1)?;
            gnll_loss(&mut g, depth, var, gt, mask, lc)?
        }
        Method::Baseline | Method::Mcd | Method::Se | Method::Tta => si_loss(&mut g, depth, gt, mask, lc)?,
    };
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    let out = b
        .bound()
        .map(|(block, id)| (block, grads.remove(id).expect("bound leaf has a gradient")))
        .collect();
    Ok((value, out))
}

/// Head that iteration `it` optimizes: round-robin for sub-ensembles,
/// otherwise head 0.
pub fn active_head(method: Method, num_heads: usize, it: usize) -> usize {
    if method == Method::Se {
        it % num_heads
    } else {
        0
    }
}

/// Sample order for an epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[STREAM_SHUFFLE, epoch as u64]));
    order
}

/// Augmented batches of one epoch, in training order.
pub fn epoch_batches(cfg: &TrainConfig, data: &[ImageSample], epoch: usize) -> Result<Vec<Vec<ImageSample>>> {
    let order = epoch_order(cfg.seed, epoch, data.len());
    let augmented: Vec<ImageSample> = order
        .par_iter()
        .map(|&i| {
            let mut rng = seed::rng(cfg.seed, &[STREAM_AUGMENT, epoch as u64, i as u64]);
            augment(&data[i], cfg.crop, cfg.flip_prob, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(augmented.chunks(cfg.batch_size).map(<[ImageSample]>::to_vec).collect())
}

/// Deterministic depth used for validation: dropout off, mean over heads.
pub fn point_depth(net: &DepthNet, image: &Array) -> Result<Array> {
    let out = net.forward(image, false, 0, HeadSelect::All)?;
    let maps = out
        .heads
        .iter()
        .map(|(_, raw)| Ok(model::decode_depth(&model::channel(raw, 0)?, net.config().max_depth)))
        .collect::<Result<Vec<_>>>()?;
    if maps.len() == 1 {
        return Ok(maps.into_iter().next().unwrap());
    }
    let n = maps.len() as f64;
    Ok(Array::from_fn(maps[0].shape(), |i| maps.iter().map(|m| m.data()[i]).sum::<f64>() / n))
}

pub fn validate_net(net: &DepthNet, data: &[ImageSample], mode: Log10Mode) -> Result<DepthMetrics> {
    let sums: Vec<DepthSums> = data
        .par_iter()
        .map(|s| DepthSums::from_image(&point_depth(net, &s.image)?, &s.depth, &s.mask))
        .collect::<Result<_>>()?;
    let mut total = DepthSums::default();
    sums.iter().for_each(|s| total.merge(s));
    total.finish(mode)
}

/// Optimizer plus schedule position.
pub struct Trainer {
    pub net: DepthNet,
    cfg: TrainConfig,
    state: AdamWState,
}

impl Trainer {
    pub fn new(net: DepthNet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if net.config() != &cfg.model {
            return Err(Error::Config("network does not match the training model config".into()));
        }
        let names = (0..net.params().len()).map(|b| net.block_name(b)).collect();
        let state = AdamWState::new(net.params(), names);
        Ok(Trainer { net, cfg, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One optimizer step on `batch` for `head` at learning rate `lr`.
    /// Returns the pre-update batch loss.
    pub fn step(&mut self, batch: &[ImageSample], head: usize, iteration: usize, lr: f64) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.net, &self.cfg, batch, head, iteration)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss} at iteration {iteration}")));
        }
        adamw_step(self.net.params_mut(), &grads, &mut self.state, &self.cfg.hyper(lr))
            .map_err(|e| Error::Numerical(format!("iteration {iteration}: {e}")))?;
        Ok(loss)
    }
}

/// Trains `net` for `cfg.epochs` epochs, validating after each epoch.
/// `on_epoch` observes progress.
pub fn train_net(
    net: DepthNet,
    cfg: &TrainConfig,
    train_data: &[ImageSample],
    val_data: &[ImageSample],
    on_epoch: &mut dyn FnMut(&EpochLog, &[IterLog]),
) -> Result<(DepthNet, TrainLog)> {
    if train_data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut t = Trainer::new(net, cfg.clone())?;
    let per_epoch = train_data.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut log = TrainLog::default();
    let mut it = 0;
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let first = log.iterations.len();
        for batch in epoch_batches(cfg, train_data, epoch)? {
            let lr = poly_lr(it, total, cfg.effective_lr(), cfg.power)?;
            let head = active_head(cfg.uq.method, cfg.model.num_heads, it);
            let loss = t.step(&batch, head, it, lr)?;
            log.iterations.push(IterLog {
                iteration: it,
                epoch,
                lr,
                loss,
                head,
            });
            it += 1;
        }
        let val = if val_data.is_empty() {
            None
        } else {
            Some(validate_net(&t.net, val_data, cfg.log10_mode)?)
        };
        let e = EpochLog {
            epoch,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            val,
        };
        on_epoch(&e, &log.iterations[first..]);
        log.epochs.push(e);
    }
    Ok((t.net, log))
}

/// Builds a fresh network from `cfg.model` and trains it.
pub fn train(cfg: &TrainConfig, train_data: &[ImageSample], val_data: &[ImageSample]) -> Result<(DepthNet, TrainLog)> {
    cfg.validate()?;
    train_net(DepthNet::build(cfg.model.clone())?, cfg, train_data, val_data, &mut |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_split, SceneSpec};

    fn tiny(method: Method) -> TrainConfig {
        let mut c = TrainConfig::for_method(method);
        c.model.input_size = (16, 16);
        c.model.enc_channels = vec![4, 4];
        c.model.bottleneck_channels = 8;
        c.uq.heads = 2;
        c.sync_model_to_method();
        c.epochs = 2;
        c.batch_size = 2;
        c.crop = (8, 8);
        c.seed = 3;
        c
    }

    fn data(n: usize) -> Vec<ImageSample> {
        let spec = SceneSpec {
            size: (16, 16),
            ..SceneSpec::default()
        };
        generate_split(&spec, "train", n).unwrap()
    }

    #[test]
    fn runs_are_bit_identical() {
        let c = tiny(Method::Baseline);
        let d = data(4);
        let (a, la) = train(&c, &d, &d[..1]).unwrap();
        let (b, lb) = train(&c, &d, &d[..1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.iterations, lb.iterations);
        assert_eq!(la.iterations.len(), 4);
    }

    #[test]
    fn lr_follows_schedule() {
        let c = tiny(Method::Baseline);
        let (_, log) = train(&c, &data(5), &[]).unwrap();
        let total = log.iterations.len();
        assert_eq!(total, 6);
        for r in &log.iterations {
            assert_eq!(r.lr, c.effective_lr() * (1.0 - r.iteration as f64 / total as f64).powf(0.9));
        }
        assert!(log.epochs.iter().all(|e| e.val.is_none()));
    }

    #[test]
    fn se_round_robin_and_frozen_heads() {
        let c = tiny(Method::Se);
        let d = data(8);
        let (_, log) = train(&c, &d, &[]).unwrap();
        let heads: Vec<usize> = log.iterations.iter().take(4).map(|r| r.head).collect();
        assert_eq!(heads, [0, 1, 0, 1]);

        let net = DepthNet::build(c.model.clone()).unwrap();
        let (_, grads) = batch_gradients(&net, &c, &d[..2], 1, 0).unwrap();
        for b in net.head_blocks(0) {
            assert!(grads[b].is_none());
        }
        for b in net.encoder_blocks().chain(net.head_blocks(1)) {
            assert!(grads[b].is_some());
        }
    }

    #[test]
    fn micro_batches_match_full_batch() {
        let mut c = tiny(Method::Gnll);
        c.batch_size = 4;
        let d = data(4);
        let net = DepthNet::build(c.model.clone()).unwrap();
        let full = batch_gradients(&net, &c, &d, 0, 0).unwrap();
        c.micro_batch = Some(1);
        assert_eq!(batch_gradients(&net, &c, &d, 0, 0).unwrap(), full);
        c.micro_batch = Some(3);
        assert_eq!(batch_gradients(&net, &c, &d, 0, 0).unwrap(), full);
    }

    #[test]
    fn shuffle_is_pure() {
        assert_eq!(epoch_order(1, 3, 10), epoch_order(1, 3, 10));
        assert_ne!(epoch_order(1, 3, 10), epoch_order(1, 4, 10));
        let c = tiny(Method::Baseline);
        let d = data(4);
        assert_eq!(epoch_batches(&c, &d, 1).unwrap(), epoch_batches(&c, &d, 1).unwrap());
    }

    #[test]
    fn every_method_trains() {
        for m in Method::ALL {
            let c = tiny(m);
            let (net, log) = train(&c, &data(2), &data(1)).unwrap();
            assert_eq!(net.config().head_out_channels, m.head_out_channels());
            assert!(log.iterations.iter().all(|r| r.loss.is_finite()));
        }
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let mut c = tiny(Method::Gnll);
        c.model.head_out_channels = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny(Method::Baseline);
        c.crop = (6, 6);
        assert!(c.validate().is_err());
    }
}
