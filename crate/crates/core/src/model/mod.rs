//! Encoder–decoder depth regressor with a shared encoder and `M` independent
//! decoder heads.
//!
//! Layout for `enc_channels = [c0, c1, ..]` and bottleneck width `B`:
//!
//! * encoder stage `i`: 3×3 conv (stride 1) to `ci` + relu (kept as skip
//!   feature), then 3×3 conv (stride 2) `ci → ci` + relu;
//! * bottleneck: 3×3 conv to `B` + relu, followed by the single dropout site;
//! * each head, per stage in reverse: nearest ×2 upsample, concat with the
//!   matching skip feature, 3×3 conv + relu; finally a 1×1 conv to `K`
//!   output channels.
//!
//! Parameters live in one flat list of blocks in declaration order: encoder
//! layers (weight then bias) followed by each head's layers.

mod checkpoint;

use std::ops::Range;

use rand::Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::seed;

/// Head logits are clamped to this magnitude before activation, so decoded
/// depths, confidences and variances stay strictly inside their ranges.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Nominal `(H, W)` used for FLOP accounting. The network is fully
    /// convolutional and accepts any size divisible by `2^enc_channels.len()`.
    pub input_size: (usize, usize),
    pub enc_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub dropout_rate: f64,
    pub num_heads: usize,
    pub head_out_channels: usize,
    pub max_depth: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (64, 64),
            enc_channels: vec![16, 32],
            bottleneck_channels: 64,
            dropout_rate: 0.10,
            num_heads: 1,
            head_out_channels: 1,
            max_depth: 10.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn downsample_factor(&self) -> usize {
        1 << self.enc_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.enc_channels.is_empty() {
            return fail("enc_channels must not be empty".into());
        }
        if self.enc_channels.contains(&0) || self.bottleneck_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.num_heads == 0 {
            return fail("num_heads must be at least 1".into());
        }
        if !matches!(self.head_out_channels, 1 | 2) {
            return fail(format!("head_out_channels must be 1 or 2, got {}", self.head_out_channels));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return fail(format!("max_depth must be positive, got {}", self.max_depth));
        }
        let f = self.downsample_factor();
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return fail(format!("input size {h}x{w} must be divisible by {f} ({} stride-2 stages)", self.enc_channels.len()));
        }
        Ok(())
    }
}

/// Square-kernel convolution layer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn param_count(&self) -> usize {
        self.cin * self.cout * self.k * self.k + self.cout
    }

    /// Floating-point operations at input size `h × w`: two per
    /// multiply–accumulate plus one bias add per output element.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (ho, wo) = (h / self.stride, w / self.stride);
        let outputs = (self.cout * ho * wo) as u64;
        2 * (self.k * self.k * self.cin) as u64 * outputs + outputs
    }
}

fn encoder_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let mut specs = Vec::new();
    let mut prev = 3;
    for &c in &cfg.enc_channels {
        specs.push(ConvSpec { cin: prev, cout: c, k: 3, stride: 1 });
        specs.push(ConvSpec { cin: c, cout: c, k: 3, stride: 2 });
        prev = c;
    }
    specs.push(ConvSpec { cin: prev, cout: cfg.bottleneck_channels, k: 3, stride: 1 });
    specs
}

fn head_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let mut specs = Vec::new();
    let mut prev = cfg.bottleneck_channels;
    for &c in cfg.enc_channels.iter().rev() {
        specs.push(ConvSpec { cin: prev + c, cout: c, k: 3, stride: 1 });
        prev = c;
    }
    specs.push(ConvSpec { cin: prev, cout: cfg.head_out_channels, k: 1, stride: 1 });
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelect {
    All,
    /// Zero-based head index.
    One(usize),
}

/// Raw `K × H × W` logits, one entry per evaluated head.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeadOutput {
    pub heads: Vec<(usize, Array)>,
}

/// Parameter leaves of one graph, indexed by parameter block.
#[derive(Debug, Clone)]
pub struct Binding {
    ids: Vec<Option<NodeId>>,
}

impl Binding {
    pub fn get(&self, block: usize) -> Option<NodeId> {
        self.ids.get(block).copied().flatten()
    }

    /// `(block, node)` pairs for every bound parameter.
    pub fn bound(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.ids.iter().enumerate().filter_map(|(b, id)| id.map(|n| (b, n)))
    }
}

/// Encoder outputs shared by all heads.
#[derive(Debug, Clone)]
pub struct Features {
    skips: Vec<NodeId>,
    bottleneck: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthNet {
    config: ModelConfig,
    encoder: Vec<ConvSpec>,
    head: Vec<ConvSpec>,
    params: Vec<Array>,
}

fn init_layer(spec: &ConvSpec, rng: &mut impl Rng, out: &mut Vec<Array>) {
    let fan_in = (spec.cin * spec.k * spec.k) as f64;
    let wb = (6.0 / fan_in).sqrt();
    let bb = 1.0 / fan_in.sqrt();
    let wshape = [spec.cout, spec.cin, spec.k, spec.k];
    out.push(Array::from_fn(&wshape, |_| rng.random_range(-wb..wb)));
    out.push(Array::from_fn(&[spec.cout], |_| rng.random_range(-bb..bb)));
}

impl DepthNet {
    /// Builds a network with He-style uniform fan-in initialization. The
    /// encoder and every head draw from independent seed streams.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = encoder_specs(&config);
        let head = head_specs(&config);
        let mut params = Vec::new();
        let mut rng = seed::rng(config.seed, &[0]);
        for spec in &encoder {
            init_layer(spec, &mut rng, &mut params);
        }
        for m in 0..config.num_heads {
            let mut rng = seed::rng(config.seed, &[1, m as u64]);
            for spec in &head {
                init_layer(spec, &mut rng, &mut params);
            }
        }
        Ok(DepthNet {
            config,
            encoder,
            head,
            params,
        })
    }

    /// Wraps existing parameters, checking them against the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: Vec<Array>) -> Result<Self> {
        let mut net = Self::build(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter blocks, got {}",
                net.params.len(),
                params.len()
            )));
        }
        for (i, (p, t)) in params.iter().zip(&net.params).enumerate() {
            if p.shape() != t.shape() {
                return Err(Error::shape(format!("parameter block {i}"), p.shape(), t.shape()));
            }
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array] {
        &mut self.params
    }

    pub fn encoder_specs(&self) -> &[ConvSpec] {
        &self.encoder
    }

    pub fn head_specs(&self) -> &[ConvSpec] {
        &self.head
    }

    pub fn encoder_blocks(&self) -> Range<usize> {
        0..2 * self.encoder.len()
    }

    pub fn head_blocks(&self, m: usize) -> Range<usize> {
        let start = 2 * self.encoder.len() + m * 2 * self.head.len();
        start..start + 2 * self.head.len()
    }

    pub fn block_name(&self, block: usize) -> String {
        let kind = if block.is_multiple_of(2) { "weight" } else { "bias" };
        let enc = 2 * self.encoder.len();
        if block < enc {
            format!("encoder.{}.{kind}", block / 2)
        } else {
            let rel = block - enc;
            let per = 2 * self.head.len();
            format!("head{}.{}.{kind}", rel / per, (rel % per) / 2)
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array::len).sum()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.iter().map(ConvSpec::param_count).sum()
    }

    /// Size of one decoder+head parameter set.
    pub fn head_param_count(&self) -> usize {
        self.head.iter().map(ConvSpec::param_count).sum()
    }

    pub fn encoder_flops(&self, h: usize, w: usize) -> u64 {
        let (mut h, mut w) = (h, w);
        let mut total = 0;
        for spec in &self.encoder {
            total += spec.flops(h, w);
            h /= spec.stride;
            w /= spec.stride;
        }
        total
    }

    pub fn head_flops(&self, h: usize, w: usize) -> u64 {
        let f = self.config.downsample_factor();
        let (mut h, mut w) = (h / f, w / f);
        let mut total = 0;
        for spec in &self.head[..self.head.len() - 1] {
            h *= 2;
            w *= 2;
            total += spec.flops(h, w);
        }
        total + self.head[self.head.len() - 1].flops(h, w)
    }

    /// Adds parameter leaves for the encoder and the selected heads.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool, select: HeadSelect) -> Result<Binding> {
        let heads = self.selected_heads(select)?;
        let mut ids = vec![None; self.params.len()];
        let mut blocks: Vec<usize> = self.encoder_blocks().collect();
        for &m in &heads {
            blocks.extend(self.head_blocks(m));
        }
        for b in blocks {
            ids[b] = Some(g.leaf(self.params[b].clone(), requires_grad));
        }
        Ok(Binding { ids })
    }

    pub fn selected_heads(&self, select: HeadSelect) -> Result<Vec<usize>> {
        match select {
            HeadSelect::All => Ok((0..self.config.num_heads).collect()),
            HeadSelect::One(m) if m < self.config.num_heads => Ok(vec![m]),
            HeadSelect::One(m) => Err(Error::Config(format!(
                "head {m} out of range for a {}-head model",
                self.config.num_heads
            ))),
        }
    }

    fn conv(&self, g: &mut Graph, b: &Binding, block: usize, x: NodeId, stride: usize) -> Result<NodeId> {
        let missing = || Error::Contract(format!("parameter block {block} is not bound"));
        let w = b.get(block).ok_or_else(missing)?;
        let bias = b.get(block + 1).ok_or_else(missing)?;
        g.conv2d(x, w, Some(bias), stride)
    }

    /// Checks a `1 × 3 × H × W` input.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let f = self.config.downsample_factor();
        let ok = shape.len() == 4 && shape[0] == 1 && shape[1] == 3 && shape[2].is_multiple_of(f) && shape[3].is_multiple_of(f);
        if !ok {
            let h = shape.get(2).copied().unwrap_or(f);
            let w = shape.get(3).copied().unwrap_or(f);
            return Err(Error::shape(
                format!("model input (spatial size must be divisible by {f})"),
                shape,
                &[1, 3, h.div_ceil(f) * f, w.div_ceil(f) * f],
            ));
        }
        Ok(())
    }

    /// Runs the shared encoder. With `dropout_seed` set, every bottleneck
    /// activation is zeroed with probability `dropout_rate` and survivors are
    /// scaled by `1 / (1 - dropout_rate)`.
    pub fn encode(&self, g: &mut Graph, b: &Binding, image: NodeId, dropout_seed: Option<u64>) -> Result<Features> {
        self.check_input(g.value(image).shape())?;
        let mut x = image;
        let mut skips = Vec::new();
        let mut block = 0;
        for _ in &self.config.enc_channels {
            let c = self.conv(g, b, block, x, 1)?;
            let s = g.relu(c)?;
            skips.push(s);
            let d = self.conv(g, b, block + 2, s, 2)?;
            x = g.relu(d)?;
            block += 4;
        }
        let c = self.conv(g, b, block, x, 1)?;
        let mut bottleneck = g.relu(c)?;
        if let Some(seed) = dropout_seed {
            let mask = dropout_mask(g.value(bottleneck).shape(), self.config.dropout_rate, seed);
            let m = g.constant(mask);
            bottleneck = g.mul(bottleneck, m)?;
        }
        Ok(Features { skips, bottleneck })
    }

    /// Runs head `m` on encoder features, returning `1 × K × H × W` logits.
    pub fn decode(&self, g: &mut Graph, b: &Binding, feats: &Features, m: usize) -> Result<NodeId> {
        let blocks = self.head_blocks(m);
        let mut block = blocks.start;
        let mut x = feats.bottleneck;
        for skip in feats.skips.iter().rev() {
            let up = g.upsample_nearest(x, 2)?;
            let cat = g.concat(&[up, *skip], 1)?;
            let c = self.conv(g, b, block, cat, 1)?;
            x = g.relu(c)?;
            block += 2;
        }
        self.conv(g, b, block, x, 1)
    }

    /// Inference on a `3 × H × W` image. Encoder features are computed once
    /// and shared by every selected head.
    pub fn forward(&self, image: &Array, dropout_active: bool, rng_seed: u64, select: HeadSelect) -> Result<RawHeadOutput> {
        let heads = self.selected_heads(select)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false, select)?;
        let x = g.constant(image_batch(image)?);
        let feats = self.encode(&mut g, &b, x, dropout_active.then_some(rng_seed))?;
        let mut out = Vec::with_capacity(heads.len());
        for m in heads {
            let y = self.decode(&mut g, &b, &feats, m)?;
            let v = g.value(y);
            let shape = v.shape()[1..].to_vec();
            out.push((m, v.clone().reshape(&shape)?));
        }
        Ok(RawHeadOutput { heads: out })
    }
}

/// Reshapes `3 × H × W` into `1 × 3 × H × W`.
pub fn image_batch(image: &Array) -> Result<Array> {
    if image.ndim() != 3 || image.shape()[0] != 3 {
        return Err(Error::shape("image", image.shape(), &[3, 0, 0]));
    }
    if !image.all_finite() {
        return Err(Error::Numerical("image contains non-finite values".into()));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    image.clone().reshape(&shape)
}

pub fn dropout_mask(shape: &[usize], rate: f64, seed: u64) -> Array {
    let mut rng = seed::rng(seed, &[0xD0]);
    let keep = 1.0 / (1.0 - rate);
    Array::from_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Channel `c` of a `K × H × W` (or `1 × K × H × W`) array as `H × W`.
pub fn channel(raw: &Array, c: usize) -> Result<Array> {
    let s = raw.shape();
    let nd = s.len();
    if nd < 3 || c >= s[nd - 3] {
        return Err(Error::Contract(format!("channel {c} out of range for {s:?}")));
    }
    let (h, w) = (s[nd - 2], s[nd - 1]);
    let data = raw.data()[c * h * w..(c + 1) * h * w].to_vec();
    Array::new(vec![h, w], data)
}

/// Graph version of [`channel`] for a `1 × K × H × W` node.
pub fn channel_node(g: &mut Graph, out: NodeId, c: usize) -> Result<NodeId> {
    let s = g.value(out).shape().to_vec();
    let sl = g.slice(out, 1, c, 1)?;
    g.reshape(sl, &s[2..])
}

fn clamp_logit(x: f64) -> f64 {
    x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

fn clamp_node(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let lo = g.scalar(-LOGIT_CLAMP);
    let a = g.max_elem(x, lo)?;
    let na = g.neg(a)?;
    let b = g.max_elem(na, lo)?;
    g.neg(b)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = max_depth · sigmoid(raw)`, strictly inside `(0, max_depth)`.
pub fn decode_depth(raw: &Array, max_depth: f64) -> Array {
    raw.map(|x| max_depth * sigmoid(clamp_logit(x)))
}

pub fn depth_node(g: &mut Graph, raw: NodeId, max_depth: f64) -> Result<NodeId> {
    let c = clamp_node(g, raw)?;
    let s = g.sigmoid(c)?;
    let m = g.scalar(max_depth);
    g.mul(s, m)
}

/// Learned confidence `C = 1 + exp(raw) > 1`.
pub fn decode_confidence(raw: &Array) -> Array {
    raw.map(|x| 1.0 + clamp_logit(x).exp())
}

pub fn confidence_node(g: &mut Graph, raw: NodeId) -> Result<NodeId> {
    let c = clamp_node(g, raw)?;
    let e = g.exp(c)?;
    let one = g.scalar(1.0);
    g.add(e, one)
}

/// Variance `s² = exp(raw)` from a log-variance logit, floored at `floor`.
pub fn decode_variance(raw: &Array, floor: f64) -> Array {
    raw.map(|x| clamp_logit(x).exp().max(floor))
}

/// Unfloored `exp(raw)`; the loss applies the floor.
pub fn variance_node(g: &mut Graph, raw: NodeId) -> Result<NodeId> {
    let c = clamp_node(g, raw)?;
    g.exp(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(heads: usize, k: usize) -> ModelConfig {
        ModelConfig {
            input_size: (8, 8),
            enc_channels: vec![4, 6],
            bottleneck_channels: 8,
            num_heads: heads,
            head_out_channels: k,
            seed: 11,
            ..ModelConfig::default()
        }
    }

    fn image(h: usize, w: usize, salt: f64) -> Array {
        Array::from_fn(&[3, h, w], |i| ((i as f64 * 0.37 + salt).sin() + 1.0) / 2.0)
    }

    #[test]
    fn build_is_deterministic() {
        let a = DepthNet::build(small(2, 1)).unwrap();
        let b = DepthNet::build(small(2, 1)).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn ten_heads_share_one_encoder() {
        let net = DepthNet::build(ModelConfig { num_heads: 10, ..small(1, 1) }).unwrap();
        let enc = net.encoder_blocks().len();
        let per_head = net.head_blocks(0).len();
        assert_eq!(net.params().len(), enc + 10 * per_head);
    }

    #[test]
    fn heads_are_distinct_elementwise() {
        let net = DepthNet::build(small(2, 1)).unwrap();
        let (h0, h1) = (net.head_blocks(0), net.head_blocks(1));
        for (a, b) in net.params()[h0].iter().zip(&net.params()[h1]) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x != y));
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(DepthNet::build(ModelConfig { enc_channels: vec![], ..small(1, 1) }).is_err());
        assert!(DepthNet::build(ModelConfig { num_heads: 0, ..small(1, 1) }).is_err());
        assert!(DepthNet::build(ModelConfig { head_out_channels: 3, ..small(1, 1) }).is_err());
        assert!(DepthNet::build(ModelConfig { dropout_rate: 1.0, ..small(1, 1) }).is_err());
        assert!(DepthNet::build(ModelConfig { input_size: (10, 8), ..small(1, 1) }).is_err());
    }

    #[test]
    fn single_conv_param_count() {
        // 3·3·3·16 weights + 16 biases.
        assert_eq!(ConvSpec { cin: 3, cout: 16, k: 3, stride: 1 }.param_count(), 448);
    }

    #[test]
    fn param_count_grows_by_one_head_set() {
        let one = DepthNet::build(small(1, 1)).unwrap();
        let two = DepthNet::build(small(2, 1)).unwrap();
        assert_eq!(two.param_count() - one.param_count(), one.head_param_count());
        assert_eq!(one.param_count(), one.encoder_param_count() + one.head_param_count());
    }

    #[test]
    fn eval_forward_is_deterministic_and_dropout_is_seeded() {
        let net = DepthNet::build(small(1, 1)).unwrap();
        let img = image(8, 8, 0.0);
        let a = net.forward(&img, false, 1, HeadSelect::All).unwrap();
        let b = net.forward(&img, false, 2, HeadSelect::All).unwrap();
        assert_eq!(a, b);
        let c = net.forward(&img, true, 5, HeadSelect::All).unwrap();
        let d = net.forward(&img, true, 5, HeadSelect::All).unwrap();
        let e = net.forward(&img, true, 6, HeadSelect::All).unwrap();
        assert_eq!(c, d);
        assert_ne!(c, e);
    }

    #[test]
    fn one_head_backward_touches_only_that_head() {
        let net = DepthNet::build(small(3, 1)).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, true, HeadSelect::One(2)).unwrap();
        let x = g.constant(image_batch(&image(8, 8, 0.3)).unwrap());
        let f = net.encode(&mut g, &b, x, None).unwrap();
        let y = net.decode(&mut g, &b, &f, 2).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        for m in 0..2 {
            for blk in net.head_blocks(m) {
                assert!(b.get(blk).is_none());
            }
        }
        for blk in net.head_blocks(2).chain(net.encoder_blocks()) {
            assert!(grads.contains(b.get(blk).unwrap()));
        }
    }

    #[test]
    fn replacing_a_head_changes_only_its_output() {
        let mut net = DepthNet::build(small(3, 2)).unwrap();
        let img = image(8, 8, 1.0);
        let before = net.forward(&img, false, 0, HeadSelect::All).unwrap();
        for blk in net.head_blocks(1) {
            let p = &mut net.params_mut()[blk];
            *p = p.map(|x| x * 0.5 + 0.01);
        }
        let after = net.forward(&img, false, 0, HeadSelect::All).unwrap();
        assert_eq!(before.heads[0], after.heads[0]);
        assert_ne!(before.heads[1], after.heads[1]);
        assert_eq!(before.heads[2], after.heads[2]);
    }

    #[test]
    fn wrong_input_shape_is_structural_error() {
        let net = DepthNet::build(small(1, 1)).unwrap();
        assert!(matches!(
            net.forward(&Array::zeros(&[3, 6, 8]), false, 0, HeadSelect::All),
            Err(Error::Shape { .. })
        ));
        assert!(net.forward(&Array::zeros(&[1, 8, 8]), false, 0, HeadSelect::All).is_err());
        assert!(net.forward(&image(8, 8, 0.0), false, 0, HeadSelect::One(1)).is_err());
    }

    #[test]
    fn decode_depth_examples() {
        let raw = Array::new(vec![3], vec![0.0, 1e6, 3f64.ln()]).unwrap();
        let y = decode_depth(&raw, 10.0);
        assert_eq!(y.data()[0], 5.0);
        assert!(y.data()[1] < 10.0 && y.data()[1] > 10.0 - 1e-9);
        let y4 = decode_depth(&raw, 4.0);
        assert!((y4.data()[2] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn graph_and_array_activations_agree() {
        let raw = Array::from_fn(&[2, 3], |i| i as f64 * 13.0 - 35.0);
        let mut g = Graph::new();
        let x = g.constant(raw.clone());
        let d = depth_node(&mut g, x, 7.0).unwrap();
        let c = confidence_node(&mut g, x).unwrap();
        let v = variance_node(&mut g, x).unwrap();
        assert_eq!(g.value(d), &decode_depth(&raw, 7.0));
        assert_eq!(g.value(c), &decode_confidence(&raw));
        assert_eq!(g.value(v), &decode_variance(&raw, 0.0));
    }
}
