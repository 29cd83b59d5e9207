//! Prediction-time uncertainty schemes.
//!
//! Learned confidence and GNLL read a second output channel; MC dropout,
//! sub-ensembles and flip test-time augmentation draw several depth samples
//! and reduce them with [`aggregate`]. Uncertainty is a variance `s²` for the
//! sampling methods and GNLL, and `u = 1/C` for learned confidence; in both
//! cases larger means less certain.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::model::{self, DepthNet, HeadSelect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Baseline,
    Lc,
    Gnll,
    Mcd,
    Se,
    Tta,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Baseline, Method::Lc, Method::Gnll, Method::Mcd, Method::Se, Method::Tta];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Lc => "lc",
            Method::Gnll => "gnll",
            Method::Mcd => "mcd",
            Method::Se => "se",
            Method::Tta => "tta",
        }
    }

    /// Output channels the trained network needs.
    pub fn head_out_channels(self) -> usize {
        match self {
            Method::Lc | Method::Gnll => 2,
            _ => 1,
        }
    }

    pub fn has_uncertainty(self) -> bool {
        self != Method::Baseline
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected baseline|lc|gnll|mcd|se|tta)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlipSet {
    pub horizontal: bool,
    pub vertical: bool,
}

impl Default for FlipSet {
    fn default() -> Self {
        FlipSet {
            horizontal: true,
            vertical: true,
        }
    }
}

impl FlipSet {
    pub fn is_empty(&self) -> bool {
        !self.horizontal && !self.vertical
    }

    pub fn count(&self) -> usize {
        self.horizontal as usize + self.vertical as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqConfig {
    pub method: Method,
    /// MC dropout sample count `T`.
    pub samples: usize,
    /// Sub-ensemble head count `M`.
    pub heads: usize,
    pub flips: FlipSet,
    pub base_seed: u64,
}

impl Default for UqConfig {
    fn default() -> Self {
        UqConfig {
            method: Method::Baseline,
            samples: 10,
            heads: 10,
            flips: FlipSet::default(),
            base_seed: 0,
        }
    }
}

impl UqConfig {
    pub fn for_method(method: Method) -> Self {
        UqConfig {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Mcd if self.samples < 2 => Err(Error::Config(format!("MC dropout needs T >= 2, got {}", self.samples))),
            Method::Se if self.heads < 2 => Err(Error::Config(format!("sub-ensemble needs M >= 2, got {}", self.heads))),
            Method::Tta if self.flips.is_empty() => Err(Error::Config("TTA flip set is empty".into())),
            _ => Ok(()),
        }
    }

    /// Number of heads the trained network carries.
    pub fn model_heads(&self) -> usize {
        if self.method == Method::Se {
            self.heads
        } else {
            1
        }
    }

    /// Depth samples drawn per image at prediction time.
    pub fn sample_count(&self) -> usize {
        match self.method {
            Method::Mcd => self.samples,
            Method::Se => self.heads,
            Method::Tta => 1 + self.flips.count(),
            _ => 1,
        }
    }
}

/// `T` depth maps of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<Array>,
}

impl SampleSet {
    pub fn new(samples: Vec<Array>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
        for s in &samples[1..] {
            if s.shape() != first.shape() {
                return Err(Error::shape("sample set", first.shape(), s.shape()));
            }
        }
        if samples.iter().any(|s| !s.all_finite()) {
            return Err(Error::Numerical("non-finite depth sample".into()));
        }
        Ok(SampleSet { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Array] {
        &self.samples
    }
}

/// Per-pixel mean `μ = (1/T) Σ y_t`, accumulated relative to the first
/// sample so identical samples reproduce it exactly.
pub fn aggregate_mean(set: &SampleSet) -> Array {
    let t = set.samples.len() as f64;
    let first = &set.samples[0];
    Array::from_fn(first.shape(), |i| {
        let y0 = first.data()[i];
        y0 + set.samples.iter().map(|s| s.data()[i] - y0).sum::<f64>() / t
    })
}

/// Per-pixel mean and unbiased variance `s² = Σ (y_t − μ)² / (T − 1)`,
/// computed in two passes.
pub fn aggregate(set: &SampleSet) -> Result<(Array, Array)> {
    let t = set.samples.len();
    if t < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: t });
    }
    let mu = aggregate_mean(set);
    let var = Array::from_fn(mu.shape(), |i| {
        let m = mu.data()[i];
        set.samples.iter().map(|s| (s.data()[i] - m).powi(2)).sum::<f64>() / (t - 1) as f64
    });
    Ok((mu, var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWithUncertainty {
    pub depth: Array,
    /// `None` for the baseline, which has no uncertainty estimate.
    pub uncertainty: Option<Array>,
    pub method: Method,
    pub sample_count: usize,
}

fn require_shape(net: &DepthNet, k: usize, m: Option<usize>, what: &str) -> Result<()> {
    let c = net.config();
    if c.head_out_channels != k || m.is_some_and(|m| c.num_heads != m) {
        return Err(Error::Config(format!(
            "{what} needs a network with K={k}{}, got K={} M={}",
            m.map(|m| format!(" M={m}")).unwrap_or_default(),
            c.head_out_channels,
            c.num_heads
        )));
    }
    Ok(())
}

fn single_head(net: &DepthNet, image: &Array) -> Result<Array> {
    let out = net.forward(image, false, 0, HeadSelect::One(0))?;
    Ok(out.heads.into_iter().next().expect("one head").1)
}

fn depth_of(net: &DepthNet, raw: &Array) -> Result<Array> {
    Ok(model::decode_depth(&model::channel(raw, 0)?, net.config().max_depth))
}

pub fn predict_baseline(net: &DepthNet, image: &Array) -> Result<PredictionWithUncertainty> {
    require_shape(net, 1, Some(1), "baseline")?;
    let raw = single_head(net, image)?;
    Ok(PredictionWithUncertainty {
        depth: depth_of(net, &raw)?,
        uncertainty: None,
        method: Method::Baseline,
        sample_count: 1,
    })
}

/// Depth from channel 0 and `u = 1/C` with `C = 1 + exp(channel 1)`.
pub fn predict_lc(net: &DepthNet, image: &Array) -> Result<PredictionWithUncertainty> {
    require_shape(net, 2, None, "learned confidence")?;
    let raw = single_head(net, image)?;
    let conf = model::decode_confidence(&model::channel(&raw, 1)?);
    Ok(PredictionWithUncertainty {
        depth: depth_of(net, &raw)?,
        uncertainty: Some(conf.map(|c| 1.0 / c)),
        method: Method::Lc,
        sample_count: 1,
    })
}

/// Mean from channel 0 and `s² = max(exp(channel 1), floor)`.
pub fn predict_gnll(net: &DepthNet, image: &Array, variance_floor: f64) -> Result<PredictionWithUncertainty> {
    require_shape(net, 2, None, "GNLL")?;
    let raw = single_head(net, image)?;
    Ok(PredictionWithUncertainty {
        depth: depth_of(net, &raw)?,
        uncertainty: Some(model::decode_variance(&model::channel(&raw, 1)?, variance_floor)),
        method: Method::Gnll,
        sample_count: 1,
    })
}

/// `T` dropout-active forwards with seeds `base_seed .. base_seed + T`.
/// Does not reject a zero dropout rate.
pub fn sample_mcd(net: &DepthNet, image: &Array, samples: usize, base_seed: u64) -> Result<SampleSet> {
    let maps = (0..samples as u64)
        .into_par_iter()
        .map(|t| {
            let out = net.forward(image, true, base_seed.wrapping_add(t), HeadSelect::One(0))?;
            depth_of(net, &out.heads[0].1)
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(maps)
}

pub fn predict_mcd(net: &DepthNet, image: &Array, samples: usize, base_seed: u64) -> Result<PredictionWithUncertainty> {
    if net.config().dropout_rate == 0.0 {
        return Err(Error::Config("MC dropout with dropout_rate = 0 is a degenerate sampler".into()));
    }
    if samples < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: samples });
    }
    let set = sample_mcd(net, image, samples, base_seed)?;
    let (mu, var) = aggregate(&set)?;
    Ok(PredictionWithUncertainty {
        depth: mu,
        uncertainty: Some(var),
        method: Method::Mcd,
        sample_count: samples,
    })
}

/// One depth map per head. With `shared_encoder`, encoder features are
/// computed once; otherwise each head reruns the encoder.
pub fn sample_se(net: &DepthNet, image: &Array, shared_encoder: bool) -> Result<SampleSet> {
    let raws: Vec<Array> = if shared_encoder {
        net.forward(image, false, 0, HeadSelect::All)?
            .heads
            .into_iter()
            .map(|(_, a)| a)
            .collect()
    } else {
        (0..net.config().num_heads)
            .map(|m| Ok(net.forward(image, false, 0, HeadSelect::One(m))?.heads.remove(0).1))
            .collect::<Result<_>>()?
    };
    let maps = raws.iter().map(|r| depth_of(net, r)).collect::<Result<Vec<_>>>()?;
    SampleSet::new(maps)
}

pub fn predict_se(net: &DepthNet, image: &Array) -> Result<PredictionWithUncertainty> {
    let m = net.config().num_heads;
    if m < 2 {
        return Err(Error::Config(format!("sub-ensemble needs at least 2 heads, got {m}")));
    }
    let set = sample_se(net, image, true)?;
    let (mu, var) = aggregate(&set)?;
    Ok(PredictionWithUncertainty {
        depth: mu,
        uncertainty: Some(var),
        method: Method::Se,
        sample_count: m,
    })
}

/// Predictions on the identity and each flipped view, mapped back into the
/// original frame.
pub fn sample_tta(net: &DepthNet, image: &Array, flips: FlipSet) -> Result<SampleSet> {
    let mut maps = vec![predict_depth_single(net, image)?];
    if flips.horizontal {
        maps.push(predict_depth_single(net, &image.flip_h()?)?.flip_h()?);
    }
    if flips.vertical {
        maps.push(predict_depth_single(net, &image.flip_v()?)?.flip_v()?);
    }
    SampleSet::new(maps)
}

fn predict_depth_single(net: &DepthNet, image: &Array) -> Result<Array> {
    depth_of(net, &single_head(net, image)?)
}

pub fn predict_tta(net: &DepthNet, image: &Array, flips: FlipSet) -> Result<PredictionWithUncertainty> {
    require_shape(net, 1, Some(1), "TTA")?;
    if flips.is_empty() {
        return Err(Error::Config("TTA flip set is empty".into()));
    }
    let set = sample_tta(net, image, flips)?;
    let (mu, var) = aggregate(&set)?;
    Ok(PredictionWithUncertainty {
        depth: mu,
        uncertainty: Some(var),
        method: Method::Tta,
        sample_count: set.len(),
    })
}

/// Dispatches on `cfg.method`.
pub fn predict(net: &DepthNet, image: &Array, cfg: &UqConfig, variance_floor: f64) -> Result<PredictionWithUncertainty> {
    cfg.validate()?;
    match cfg.method {
        Method::Baseline => predict_baseline(net, image),
        Method::Lc => predict_lc(net, image),
        Method::Gnll => predict_gnll(net, image, variance_floor),
        Method::Mcd => predict_mcd(net, image, cfg.samples, cfg.base_seed),
        Method::Se => predict_se(net, image),
        Method::Tta => predict_tta(net, image, cfg.flips),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn per_pixel(values: &[f64]) -> SampleSet {
        SampleSet::new(values.iter().map(|&v| Array::full(&[1, 1], v)).collect()).unwrap()
    }

    fn net(k: usize, m: usize, dropout: f64) -> DepthNet {
        DepthNet::build(ModelConfig {
            input_size: (8, 8),
            enc_channels: vec![4, 4],
            bottleneck_channels: 8,
            dropout_rate: dropout,
            num_heads: m,
            head_out_channels: k,
            seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn image() -> Array {
        Array::from_fn(&[3, 8, 8], |i| ((i as f64 * 0.91).cos() + 1.0) / 2.0)
    }

    #[test]
    fn aggregate_examples() {
        let (mu, var) = aggregate(&per_pixel(&[2.0, 2.0, 2.0])).unwrap();
        assert_eq!((mu.item(), var.item()), (2.0, 0.0));
        let (mu, var) = aggregate(&per_pixel(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!((mu.item(), var.item()), (2.0, 1.0));
        let (mu, var) = aggregate(&per_pixel(&[0.0, 4.0])).unwrap();
        assert_eq!((mu.item(), var.item()), (2.0, 8.0));
        assert!(matches!(
            aggregate(&per_pixel(&[1.0])),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
        assert_eq!(aggregate_mean(&per_pixel(&[1.5])).item(), 1.5);
    }

    #[test]
    fn baseline_is_deterministic_and_bounded() {
        let n = net(1, 1, 0.1);
        let a = predict_baseline(&n, &image()).unwrap();
        assert_eq!(a, predict_baseline(&n, &image()).unwrap());
        assert!(a.uncertainty.is_none());
        assert!(a.depth.data().iter().all(|&d| d > 0.0 && d < 10.0));
        assert!(predict_baseline(&net(2, 1, 0.1), &image()).is_err());
        assert!(predict_baseline(&net(1, 2, 0.1), &image()).is_err());
    }

    #[test]
    fn lc_and_gnll_need_two_channels() {
        assert!(predict_lc(&net(1, 1, 0.1), &image()).is_err());
        assert!(predict_gnll(&net(1, 1, 0.1), &image(), 1e-6).is_err());
        let p = predict_lc(&net(2, 1, 0.1), &image()).unwrap();
        assert!(p.uncertainty.unwrap().data().iter().all(|&u| u > 0.0 && u < 1.0));
        let p = predict_gnll(&net(2, 1, 0.1), &image(), 1e-6).unwrap();
        assert!(p.uncertainty.unwrap().data().iter().all(|&s| s.is_finite() && s > 0.0));
    }

    #[test]
    fn confidence_and_variance_activations() {
        let raw = Array::new(vec![3], vec![-1e9, 0.0, -20.0]).unwrap();
        let u = model::decode_confidence(&raw).map(|c| 1.0 / c);
        assert!(u.data()[0] < 1.0 && u.data()[0] > 1.0 - 1e-12);
        assert_eq!(u.data()[1], 0.5);
        let s2 = model::decode_variance(&raw, 1e-6);
        assert_eq!(s2.data()[1], 1.0);
        assert_eq!(s2.data()[2], 1e-6);
    }

    #[test]
    fn mcd_seeding_and_degenerate_rate() {
        let n = net(1, 1, 0.2);
        let a = predict_mcd(&n, &image(), 4, 9).unwrap();
        assert_eq!(a, predict_mcd(&n, &image(), 4, 9).unwrap());
        assert_eq!(a.sample_count, 4);
        let zero = net(1, 1, 0.0);
        assert!(matches!(predict_mcd(&zero, &image(), 4, 9), Err(Error::Config(_))));
        let set = sample_mcd(&zero, &image(), 5, 9).unwrap();
        let (_, var) = aggregate(&set).unwrap();
        assert!(var.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_shared_encoder_matches_recompute() {
        let n = net(1, 3, 0.1);
        assert_eq!(sample_se(&n, &image(), true).unwrap(), sample_se(&n, &image(), false).unwrap());
        assert!(predict_se(&net(1, 1, 0.1), &image()).is_err());
    }

    #[test]
    fn se_identical_heads_have_zero_variance() {
        let mut n = net(1, 3, 0.1);
        let src: Vec<Array> = n.params()[n.head_blocks(0)].to_vec();
        for m in 1..3 {
            let r = n.head_blocks(m);
            n.params_mut()[r].clone_from_slice(&src);
        }
        let p = predict_se(&n, &image()).unwrap();
        assert!(p.uncertainty.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(p.sample_count, 3);
    }

    #[test]
    fn tta_symmetric_input_and_constant_net() {
        let n = net(1, 1, 0.1);
        let sym = Array::from_fn(&[3, 8, 8], |i| {
            let x = i % 8;
            let xm = x.min(7 - x) as f64;
            (xm * 0.2 + (i / 64) as f64 * 0.1).sin().abs()
        });
        assert_eq!(sym, sym.flip_h().unwrap());
        let set = sample_tta(&n, &sym, FlipSet::default()).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.samples()[1], set.samples()[0].flip_h().unwrap());

        // All weights zero: output is bias-only and translation invariant.
        let mut c = net(1, 1, 0.1);
        for (i, p) in c.params_mut().iter_mut().enumerate() {
            if i % 2 == 0 {
                *p = Array::zeros(p.shape());
            }
        }
        let p = predict_tta(&c, &image(), FlipSet::default()).unwrap();
        assert_eq!(p.sample_count, 3);
        assert!(p.uncertainty.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(UqConfig { samples: 1, ..UqConfig::for_method(Method::Mcd) }.validate().is_err());
        assert!(UqConfig { heads: 1, ..UqConfig::for_method(Method::Se) }.validate().is_err());
        let no_flips = FlipSet { horizontal: false, vertical: false };
        assert!(UqConfig { flips: no_flips, ..UqConfig::for_method(Method::Tta) }.validate().is_err());
        assert_eq!(UqConfig::default().samples, 10);
        assert_eq!(UqConfig::default().heads, 10);
        assert_eq!(UqConfig::for_method(Method::Tta).sample_count(), 3);
        assert_eq!("GNLL".parse::<Method>().unwrap(), Method::Gnll);
        assert!("foo".parse::<Method>().is_err());
    }
}
