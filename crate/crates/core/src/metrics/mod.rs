//! Depth accuracy, uncertainty quality and efficiency measurements.
//!
//! `pred` is the network's depth and `gt` the ground truth throughout.
//! Dataset-level numbers are micro-averages: per-image sums and counts are
//! merged first and ratios formed once at the end.

mod efficiency;
mod report;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::mask::Mask;

pub use efficiency::{benchmark, method_flops, time_runs, EfficiencyReport, TimingStats};
pub use report::{format_report, parse_report, sort_rows, ReportRow, REPORT_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Log10Mode {
    /// Mean absolute log10 error.
    #[default]
    Mae,
    /// Root mean squared log10 error.
    Rmse,
}

impl Log10Mode {
    pub fn name(self) -> &'static str {
        match self {
            Log10Mode::Mae => "mae",
            Log10Mode::Rmse => "rmse",
        }
    }
}

impl fmt::Display for Log10Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Log10Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(Log10Mode::Mae),
            "rmse" => Ok(Log10Mode::Rmse),
            _ => Err(Error::Config(format!("log10_mode must be mae or rmse, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub absrel: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

fn check_pair(pred: &Array, gt: &Array, mask: &Mask) -> Result<()> {
    mask.check("prediction", pred)?;
    mask.check("ground truth", gt)?;
    for (i, ((&p, &g), &ok)) in pred.data().iter().zip(gt.data()).zip(mask.data()).enumerate() {
        if ok && !(p > 0.0 && g > 0.0 && p.is_finite() && g.is_finite()) {
            return Err(Error::Domain {
                node: None,
                message: format!("depth pair ({p}, {g}) at pixel {i} is not positive and finite"),
            });
        }
    }
    Ok(())
}

fn within_delta(p: f64, g: f64, k: u32) -> bool {
    (p / g).max(g / p) < 1.25f64.powi(k as i32)
}

/// Pixels whose ratio error is below `1.25^k`; invalid pixels are false.
pub fn delta_map(pred: &Array, gt: &Array, mask: &Mask, k: u32) -> Result<Mask> {
    check_pair(pred, gt, mask)?;
    if !(1..=3).contains(&k) {
        return Err(Error::Contract(format!("delta order k must be 1, 2 or 3, got {k}")));
    }
    let data = (0..mask.data().len())
        .map(|i| mask.data()[i] && within_delta(pred.data()[i], gt.data()[i], k))
        .collect();
    Mask::new(mask.height(), mask.width(), data)
}

/// Running sums behind [`DepthMetrics`]; merge across images, then finish.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthSums {
    pub n: usize,
    pub sq_err: f64,
    pub abs_rel: f64,
    pub log10_abs: f64,
    pub log10_sq: f64,
    pub within: [usize; 3],
}

impl DepthSums {
    pub fn from_image(pred: &Array, gt: &Array, mask: &Mask) -> Result<Self> {
        check_pair(pred, gt, mask)?;
        let mut s = DepthSums::default();
        for ((&p, &g), _) in pred.data().iter().zip(gt.data()).zip(mask.data()).filter(|(_, &ok)| ok) {
            s.n += 1;
            s.sq_err += (p - g).powi(2);
            s.abs_rel += (p - g).abs() / g;
            let l = p.log10() - g.log10();
            s.log10_abs += l.abs();
            s.log10_sq += l * l;
            for k in 0..3 {
                s.within[k] += within_delta(p, g, k as u32 + 1) as usize;
            }
        }
        Ok(s)
    }

    pub fn merge(&mut self, other: &DepthSums) {
        self.n += other.n;
        self.sq_err += other.sq_err;
        self.abs_rel += other.abs_rel;
        self.log10_abs += other.log10_abs;
        self.log10_sq += other.log10_sq;
        for k in 0..3 {
            self.within[k] += other.within[k];
        }
    }

    pub fn finish(&self, mode: Log10Mode) -> Result<DepthMetrics> {
        if self.n == 0 {
            return Err(Error::EmptyMask("no valid pixels to evaluate".into()));
        }
        let n = self.n as f64;
        Ok(DepthMetrics {
            rmse: (self.sq_err / n).sqrt(),
            absrel: self.abs_rel / n,
            log10: match mode {
                Log10Mode::Mae => self.log10_abs / n,
                Log10Mode::Rmse => (self.log10_sq / n).sqrt(),
            },
            delta1: self.within[0] as f64 / n,
            delta2: self.within[1] as f64 / n,
            delta3: self.within[2] as f64 / n,
        })
    }
}

pub fn depth_metrics(pred: &Array, gt: &Array, mask: &Mask, mode: Log10Mode) -> Result<DepthMetrics> {
    DepthSums::from_image(pred, gt, mask)?.finish(mode)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Per-image median of the valid uncertainties.
    Median,
    Fixed(f64),
}

/// Accurate/inaccurate × certain/uncertain pixel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UncertaintyCounts {
    pub n_ac: usize,
    pub n_au: usize,
    pub n_ic: usize,
    pub n_iu: usize,
}

impl UncertaintyCounts {
    pub fn total(&self) -> usize {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }

    pub fn merge(&mut self, o: &UncertaintyCounts) {
        self.n_ac += o.n_ac;
        self.n_au += o.n_au;
        self.n_ic += o.n_ic;
        self.n_iu += o.n_iu;
    }

    pub fn metrics(&self) -> UncertaintyMetrics {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        UncertaintyMetrics {
            p_acc_cer: ratio(self.n_ac, self.n_ac + self.n_ic),
            p_unc_ina: ratio(self.n_iu, self.n_ic + self.n_iu),
            pavpu: ratio(self.n_ac + self.n_iu, self.total()),
            counts: *self,
        }
    }
}

/// `None` marks a ratio whose denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyMetrics {
    pub p_acc_cer: Option<f64>,
    pub p_unc_ina: Option<f64>,
    pub pavpu: Option<f64>,
    pub counts: UncertaintyCounts,
}

/// Median of `u` over valid pixels, averaging the middle pair for even counts.
pub fn median_threshold(u: &Array, mask: &Mask) -> Result<f64> {
    mask.check("uncertainty", u)?;
    let mut v: Vec<f64> = u.data().iter().zip(mask.data()).filter(|(_, &ok)| ok).map(|(&x, _)| x).collect();
    if v.is_empty() {
        return Err(Error::EmptyMask("no valid pixels for the uncertainty threshold".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite uncertainty value".into()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// A pixel is certain iff `u < t`; ties count as uncertain.
pub fn uncertainty_counts(acc: &Mask, u: &Array, mask: &Mask, rule: ThresholdRule) -> Result<UncertaintyCounts> {
    if acc.shape() != mask.shape() {
        return Err(Error::shape("accuracy map", &acc.shape(), &mask.shape()));
    }
    let t = match rule {
        ThresholdRule::Median => median_threshold(u, mask)?,
        ThresholdRule::Fixed(t) => {
            mask.check("uncertainty", u)?;
            if mask.count() == 0 {
                return Err(Error::EmptyMask("no valid pixels".into()));
            }
            t
        }
    };
    let mut c = UncertaintyCounts::default();
    for i in (0..u.len()).filter(|&i| mask.data()[i]) {
        match (acc.data()[i], u.data()[i] < t) {
            (true, true) => c.n_ac += 1,
            (true, false) => c.n_au += 1,
            (false, true) => c.n_ic += 1,
            (false, false) => c.n_iu += 1,
        }
    }
    Ok(c)
}

pub fn uncertainty_metrics(acc: &Mask, u: &Array, mask: &Mask, rule: ThresholdRule) -> Result<UncertaintyMetrics> {
    Ok(uncertainty_counts(acc, u, mask, rule)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Sum counts over images, then form ratios.
    #[default]
    Micro,
    /// Mean of per-image ratios over the images where each is defined.
    Macro,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            _ => Err(Error::Config(format!("averaging must be micro or macro, got {s:?}"))),
        }
    }
}

pub fn dataset_uncertainty_metrics(per_image: &[UncertaintyCounts], averaging: Averaging) -> Result<UncertaintyMetrics> {
    if per_image.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut total = UncertaintyCounts::default();
    per_image.iter().for_each(|c| total.merge(c));
    match averaging {
        Averaging::Micro => Ok(total.metrics()),
        Averaging::Macro => {
            let per: Vec<UncertaintyMetrics> = per_image.iter().map(|c| c.metrics()).collect();
            let mean = |f: fn(&UncertaintyMetrics) -> Option<f64>| {
                let v: Vec<f64> = per.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            Ok(UncertaintyMetrics {
                p_acc_cer: mean(|m| m.p_acc_cer),
                p_unc_ina: mean(|m| m.p_unc_ina),
                pavpu: mean(|m| m.pavpu),
                counts: total,
            })
        }
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with tie-averaged ranks. `None` when either
/// input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape("spearman", &[a.len()], &[b.len()]));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: a.len() });
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    Ok((va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt()))
}
