//! Training objectives as graph builders. Each takes prediction nodes of
//! shape `H × W` plus constant ground truth and a validity mask, and returns
//! a scalar node averaged over the `N` valid pixels.
//!
//! Invalid pixels are neutralized with the mask before any `log`, so their
//! predicted values never reach a domain check.

use crate::autodiff::{Array, Graph, NodeId};
use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Scale-invariance weight λ of the log-depth loss.
    pub lambda: f64,
    /// Weight α of the `-log C` confidence regularizer.
    pub alpha: f64,
    /// Lower bound applied to predicted variances.
    pub variance_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.15,
            alpha: 0.2,
            variance_floor: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!(
                "variance_floor must be positive, got {}",
                self.variance_floor
            )));
        }
        Ok(())
    }
}

/// Log-depth differences `d_i = log y_i − log ŷ_i` over valid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLogDiff {
    pub d: Vec<f64>,
    pub n: usize,
}

impl PixelLogDiff {
    pub fn new(y: &Array, target: &Array, mask: &Mask) -> Result<Self> {
        mask.check("prediction", y)?;
        mask.check("ground truth", target)?;
        let mut d = Vec::new();
        for ((&yi, &ti), &valid) in y.data().iter().zip(target.data()).zip(mask.data()) {
            if valid {
                if !(yi > 0.0 && ti > 0.0) {
                    return Err(Error::Domain {
                        node: None,
                        message: format!("non-positive depth pair ({yi}, {ti})"),
                    });
                }
                d.push(yi.ln() - ti.ln());
            }
        }
        if d.is_empty() {
            return Err(Error::EmptyMask("no valid pixels".into()));
        }
        let n = d.len();
        Ok(PixelLogDiff { d, n })
    }

    /// `(1/N) Σ d² − (λ/N²) (Σ d)²`.
    pub fn scale_invariant(&self, lambda: f64) -> f64 {
        let n = self.n as f64;
        let s1: f64 = self.d.iter().map(|d| d * d).sum();
        let s2: f64 = self.d.iter().sum();
        s1 / n - lambda / (n * n) * s2 * s2
    }
}

struct Masked {
    valid: NodeId,
    invalid: NodeId,
    count: usize,
}

fn masked(g: &mut Graph, node: NodeId, target: &Array, mask: &Mask) -> Result<Masked> {
    mask.check("prediction", g.value(node))?;
    mask.check("ground truth", target)?;
    let count = mask.count();
    if count == 0 {
        return Err(Error::EmptyMask("loss over a mask with no valid pixels".into()));
    }
    let m = mask.to_array();
    let inv = m.map(|v| 1.0 - v);
    Ok(Masked {
        valid: g.constant(m),
        invalid: g.constant(inv),
        count,
    })
}

fn require_positive(g: &Graph, node: NodeId, mask: &Mask, what: &str) -> Result<()> {
    let bad = g
        .value(node)
        .data()
        .iter()
        .zip(mask.data())
        .find(|(v, &ok)| ok && !(**v > 0.0));
    if let Some((v, _)) = bad {
        return Err(Error::Domain {
            node: Some(node.index()),
            message: format!("{what} must be positive on valid pixels, found {v}"),
        });
    }
    Ok(())
}

/// Per-pixel masked `d = (log y − log ŷ)·m`.
fn log_diff(g: &mut Graph, y: NodeId, target: &Array, mask: &Mask, mk: &Masked) -> Result<NodeId> {
    require_positive(g, y, mask, "predicted depth")?;
    if let Some(t) = target.data().iter().zip(mask.data()).find(|(t, &ok)| ok && !(**t > 0.0)) {
        return Err(Error::Domain {
            node: Some(y.index()),
            message: format!("ground-truth depth must be positive on valid pixels, found {}", t.0),
        });
    }
    let log_target = Array::from_fn(target.shape(), |i| if mask.data()[i] { target.data()[i].ln() } else { 0.0 });
    let ym = g.mul(y, mk.valid)?;
    let y_safe = g.add(ym, mk.invalid)?;
    let ly = g.log(y_safe)?;
    let lt = g.constant(log_target);
    let diff = g.sub(ly, lt)?;
    g.mul(diff, mk.valid)
}

/// Scale-invariant log loss `(1/N)Σd² − (λ/N²)(Σd)²`.
pub fn si_loss(g: &mut Graph, y: NodeId, target: &Array, mask: &Mask, cfg: &LossConfig) -> Result<NodeId> {
    let mk = masked(g, y, target, mask)?;
    let d = log_diff(g, y, target, mask, &mk)?;
    let n = mk.count as f64;
    let sq = g.square(d)?;
    let s1 = g.sum(sq)?;
    let sd = g.sum(d)?;
    let s2 = g.square(sd)?;
    let a = g.scalar(1.0 / n);
    let b = g.scalar(cfg.lambda / (n * n));
    let t1 = g.mul(s1, a)?;
    let t2 = g.mul(s2, b)?;
    g.sub(t1, t2)
}

/// Learned-confidence loss `(1/N) Σ [C_i·ℓ_i − α log C_i]` with the per-pixel
/// scale-invariant term `ℓ_i = (1−λ) d_i²`.
pub fn lc_loss(
    g: &mut Graph,
    y: NodeId,
    confidence: NodeId,
    target: &Array,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<NodeId> {
    let mk = masked(g, y, target, mask)?;
    mask.check("confidence", g.value(confidence))?;
    require_positive(g, confidence, mask, "confidence")?;
    let d = log_diff(g, y, target, mask, &mk)?;
    let n = mk.count as f64;

    let sq = g.square(d)?;
    let per_pixel = g.scalar(1.0 - cfg.lambda);
    let ell = g.mul(sq, per_pixel)?;
    let weighted = g.mul(confidence, ell)?;

    let cm = g.mul(confidence, mk.valid)?;
    let c_safe = g.add(cm, mk.invalid)?;
    let log_c = g.log(c_safe)?;
    let alpha = g.scalar(cfg.alpha);
    let reg = g.mul(log_c, alpha)?;

    let per = g.sub(weighted, reg)?;
    let total = g.sum(per)?;
    let inv_n = g.scalar(1.0 / n);
    g.mul(total, inv_n)
}

/// Gaussian negative log-likelihood `mean ½[(ŷ−μ)²/s² + log s²]`, with `s²`
/// floored at `cfg.variance_floor`.
pub fn gnll_loss(
    g: &mut Graph,
    mu: NodeId,
    variance: NodeId,
    target: &Array,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<NodeId> {
    let mk = masked(g, mu, target, mask)?;
    mask.check("variance", g.value(variance))?;
    let floor = g.scalar(cfg.variance_floor);
    let s2 = g.max_elem(variance, floor)?;

    let t = g.constant(Array::from_fn(target.shape(), |i| {
        if mask.data()[i] {
            target.data()[i]
        } else {
            0.0
        }
    }));
    let diff = g.sub(t, mu)?;
    let r = g.mul(diff, mk.valid)?;
    let r2 = g.square(r)?;
    let q = g.div(r2, s2)?;
    let ls = g.log(s2)?;
    let lm = g.mul(ls, mk.valid)?;
    let per = g.add(q, lm)?;
    let total = g.sum(per)?;
    let scale = g.scalar(0.5 / mk.count as f64);
    g.mul(total, scale)
}
