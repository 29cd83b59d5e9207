//! Procedural image/depth scenes with optional heteroscedastic label noise.
//!
//! A scene is a tilted ground plane (depth growing toward the top row)
//! overlaid with rectangles and disks at random depths; the nearest surface
//! wins at each pixel. Shading is `albedo · min_depth / depth` under a fixed
//! global gain, with zero-mean colour tints, so depth is locally recoverable
//! from brightness. Images are quantized to 8 bits and depths to `f32` at
//! generation time, which makes the on-disk round trip exact.

mod dataset;
mod formats;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::seed;

pub use dataset::{read_dataset, write_dataset, ManifestRecord, MANIFEST_FILE};
pub use formats::{
    decode_pfm, decode_pgm, decode_ppm, encode_pfm, encode_pgm, encode_ppm, read_pfm, read_ppm, write_pfm, write_ppm,
};

/// Brightness of a surface at `min_depth` with unit albedo.
const SHADING_GAIN: f64 = 0.85;
const MAX_TINT: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    None,
    /// Constant label-noise standard deviation in meters.
    Homoscedastic(f64),
    /// Standard deviation equal to `factor · clean_depth`.
    Proportional(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub size: (usize, usize),
    pub min_depth: f64,
    pub max_depth: f64,
    /// Inclusive range for the number of foreground primitives.
    pub primitives: (usize, usize),
    pub noise: NoiseMode,
    /// Standard deviation of additive image noise before quantization.
    pub pixel_noise: f64,
    /// Fraction of pixels marked as missing ground truth.
    pub invalid_fraction: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            size: (64, 64),
            min_depth: 0.5,
            max_depth: 10.0,
            primitives: (2, 8),
            noise: NoiseMode::None,
            pixel_noise: 0.002,
            invalid_fraction: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size.0 == 0 || self.size.1 == 0 {
            return bad(format!("scene size {:?} has a zero side", self.size));
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth && self.max_depth.is_finite()) {
            return bad(format!("need 0 < min_depth < max_depth, got [{}, {}]", self.min_depth, self.max_depth));
        }
        if self.primitives.0 > self.primitives.1 {
            return bad(format!("primitive range {:?} is empty", self.primitives));
        }
        match self.noise {
            NoiseMode::Homoscedastic(s) | NoiseMode::Proportional(s) if !(s >= 0.0 && s.is_finite()) => {
                return bad(format!("noise level {s} must be finite and non-negative"));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return bad(format!("invalid_fraction {} outside [0, 1)", self.invalid_fraction));
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return bad(format!("pixel_noise {} must be finite and non-negative", self.pixel_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    /// `[3, H, W]`, values `k/255`.
    pub image: Array,
    /// `[H, W]` meters.
    pub depth: Array,
    pub mask: Mask,
    pub sample_seed: u64,
    /// `[H, W]` standard deviation of the injected label noise.
    pub noise_sigma: Option<Array>,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.depth.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.depth.shape()[1]
    }
}

/// Inverse depth varies linearly over the image, so the plane recedes
/// toward row 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub inv_top: f64,
    pub inv_bottom: f64,
    /// Change of inverse depth from the left edge to the right edge.
    pub inv_tilt: f64,
}

impl GroundPlane {
    pub fn depth(&self, y: usize, x: usize, h: usize, w: usize) -> f64 {
        let v = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.5 };
        let u = if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
        1.0 / (self.inv_top + (self.inv_bottom - self.inv_top) * v + self.inv_tilt * u)
    }
}

/// Coordinates are in pixel units; pixel `(y, x)` is sampled at its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { top: f64, left: f64, bottom: f64, right: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    pub fn covers(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match *self {
            Shape::Rect { top, left, bottom, right } => py >= top && py < bottom && px >= left && px < right,
            Shape::Disk { cy, cx, r } => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub depth: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub ground: GroundPlane,
    pub ground_albedo: [f64; 3],
    pub primitives: Vec<Primitive>,
}

fn tint(rng: &mut impl Rng) -> [f64; 3] {
    let t: [f64; 3] = std::array::from_fn(|_| rng.random_range(-MAX_TINT..MAX_TINT));
    let mean = (t[0] + t[1] + t[2]) / 3.0;
    t.map(|v| 1.0 + v - mean)
}

/// Draws the geometry of a scene; deterministic in `sample_seed`.
pub fn scene_layout(spec: &SceneSpec, sample_seed: u64) -> SceneLayout {
    let mut rng = seed::rng(sample_seed, &[1]);
    let (h, w) = (spec.size.0 as f64, spec.size.1 as f64);
    let (lo, hi) = (spec.min_depth, spec.max_depth);
    let d_top = rng.random_range(lo + 0.6 * (hi - lo)..=hi);
    let d_bottom = rng.random_range(lo..=(lo + 0.1 * (hi - lo)).min(d_top));
    let (inv_top, inv_bottom) = (1.0 / d_top, 1.0 / d_bottom);
    let inv_tilt = rng.random_range(-0.1..=0.1) * (inv_bottom - inv_top);
    let ground = GroundPlane {
        inv_top,
        inv_bottom,
        inv_tilt,
    };
    let ground_albedo = tint(&mut rng);
    let count = rng.random_range(spec.primitives.0..=spec.primitives.1);
    let primitives = (0..count)
        .map(|_| {
            let shape = if rng.random::<bool>() {
                let (rh, rw) = (rng.random_range(0.15..0.45) * h, rng.random_range(0.15..0.45) * w);
                let (top, left) = (rng.random_range(0.0..h - rh), rng.random_range(0.0..w - rw));
                Shape::Rect {
                    top,
                    left,
                    bottom: top + rh,
                    right: left + rw,
                }
            } else {
                Shape::Disk {
                    cy: rng.random_range(0.0..h),
                    cx: rng.random_range(0.0..w),
                    r: rng.random_range(0.08..0.25) * h.min(w),
                }
            };
            Primitive {
                shape,
                depth: rng.random_range(lo..=hi),
                albedo: tint(&mut rng),
            }
        })
        .collect();
    SceneLayout {
        ground,
        ground_albedo,
        primitives,
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders clean depth and per-pixel albedo by nearest-wins occlusion.
pub fn render(layout: &SceneLayout, spec: &SceneSpec) -> (Array, Vec<[f64; 3]>) {
    let (h, w) = spec.size;
    let mut depth = Array::zeros(&[h, w]);
    let mut albedo = vec![layout.ground_albedo; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut d = layout.ground.depth(y, x, h, w).clamp(spec.min_depth, spec.max_depth);
            for p in &layout.primitives {
                if p.depth < d && p.shape.covers(y, x) {
                    d = p.depth;
                    albedo[y * w + x] = p.albedo;
                }
            }
            depth.data_mut()[y * w + x] = d;
        }
    }
    (depth, albedo)
}

/// Generates one sample; deterministic in `(spec, sample_seed)`.
pub fn generate_scene(spec: &SceneSpec, sample_seed: u64) -> Result<ImageSample> {
    spec.validate()?;
    let (h, w) = spec.size;
    let layout = scene_layout(spec, sample_seed);
    let (clean, albedo) = render(&layout, spec);

    let mut pix = seed::rng(sample_seed, &[2]);
    let mut image = Array::zeros(&[3, h, w]);
    for c in 0..3 {
        for i in 0..h * w {
            let shade = SHADING_GAIN * albedo[i][c] * spec.min_depth / clean.data()[i];
            let n: f64 = pix.sample(StandardNormal);
            image.data_mut()[c * h * w + i] = quantize8(shade + spec.pixel_noise * n);
        }
    }

    let sigma = match spec.noise {
        NoiseMode::None => None,
        NoiseMode::Homoscedastic(s) => Some(Array::full(&[h, w], round_f32(s))),
        NoiseMode::Proportional(f) => Some(clean.map(|d| round_f32(f * d))),
    };
    let depth = match &sigma {
        None => clean.map(round_f32),
        Some(sig) => {
            let mut lab = seed::rng(sample_seed, &[3]);
            let mut d = clean.clone();
            for (v, s) in d.data_mut().iter_mut().zip(sig.data()) {
                let n: f64 = lab.sample(StandardNormal);
                *v = round_f32((*v + s * n).clamp(spec.min_depth, spec.max_depth));
            }
            d
        }
    };

    let mut mrng = seed::rng(sample_seed, &[4]);
    let mut valid: Vec<bool> = (0..h * w).map(|_| mrng.random::<f64>() >= spec.invalid_fraction).collect();
    if !valid.contains(&true) {
        valid[0] = true;
    }

    Ok(ImageSample {
        image,
        depth,
        mask: Mask::new(h, w, valid)?,
        sample_seed,
        noise_sigma: sigma,
    })
}

fn split_tag(split: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    split
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of sample `index` in a named split.
pub fn sample_seed(spec_seed: u64, split: &str, index: usize) -> u64 {
    seed::derive(spec_seed, &[split_tag(split), index as u64])
}

/// Generates `n` samples for `split` in parallel; output order and content
/// do not depend on scheduling.
pub fn generate_split(spec: &SceneSpec, split: &str, n: usize) -> Result<Vec<ImageSample>> {
    spec.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| generate_scene(spec, sample_seed(spec.seed, split, i)))
        .collect()
}

fn crop_planes(a: &Array, top: usize, left: usize, ch: usize, cw: usize) -> Array {
    let s = a.shape();
    let (planes, h, w) = if s.len() == 3 { (s[0], s[1], s[2]) } else { (1, s[0], s[1]) };
    let mut out = Vec::with_capacity(planes * ch * cw);
    for p in 0..planes {
        for y in top..top + ch {
            let row = p * h * w + y * w;
            out.extend_from_slice(&a.data()[row + left..row + left + cw]);
        }
    }
    let shape = if s.len() == 3 { vec![planes, ch, cw] } else { vec![ch, cw] };
    Array::new(shape, out).expect("crop shape")
}

/// Crops every plane at `(top, left)` and optionally mirrors them left-right.
pub fn crop_and_flip(sample: &ImageSample, top: usize, left: usize, crop: (usize, usize), flip: bool) -> Result<ImageSample> {
    let (h, w) = (sample.height(), sample.width());
    let (ch, cw) = crop;
    if ch == 0 || cw == 0 || top + ch > h || left + cw > w {
        return Err(Error::Config(format!("crop {ch}x{cw} at ({top}, {left}) does not fit a {h}x{w} sample")));
    }
    let mut out = ImageSample {
        image: crop_planes(&sample.image, top, left, ch, cw),
        depth: crop_planes(&sample.depth, top, left, ch, cw),
        mask: sample.mask.crop(top, left, ch, cw),
        sample_seed: sample.sample_seed,
        noise_sigma: sample.noise_sigma.as_ref().map(|s| crop_planes(s, top, left, ch, cw)),
    };
    if flip {
        out.image = out.image.flip_h()?;
        out.depth = out.depth.flip_h()?;
        out.mask = out.mask.flip_h();
        out.noise_sigma = out.noise_sigma.map(|s| s.flip_h()).transpose()?;
    }
    Ok(out)
}

/// Uniformly placed crop plus a horizontal flip with probability `flip_prob`.
pub fn augment(sample: &ImageSample, crop: (usize, usize), flip_prob: f64, rng: &mut impl Rng) -> Result<ImageSample> {
    let (h, w) = (sample.height(), sample.width());
    if crop.0 > h || crop.1 > w {
        return Err(Error::Config(format!("crop {}x{} larger than sample {h}x{w}", crop.0, crop.1)));
    }
    let top = rng.random_range(0..=h - crop.0);
    let left = rng.random_range(0..=w - crop.1);
    let flip = rng.random::<f64>() < flip_prob;
    crop_and_flip(sample, top, left, crop, flip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(size: usize) -> SceneSpec {
        SceneSpec {
            size: (size, size),
            ..SceneSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(16);
        assert_eq!(generate_scene(&s, 42).unwrap(), generate_scene(&s, 42).unwrap());
        assert_ne!(generate_scene(&s, 42).unwrap(), generate_scene(&s, 43).unwrap());
    }

    #[test]
    fn invariants_hold() {
        let s = spec(32);
        for seed in 0..20 {
            let x = generate_scene(&s, seed).unwrap();
            assert!(x.noise_sigma.is_none());
            assert!(x.mask.count() >= 1);
            assert!(x.depth.data().iter().all(|&d| (0.5..=10.0).contains(&d)));
            assert!(x.image.data().iter().all(|&v| (0.0..=1.0).contains(&v) && (v * 255.0).fract() < 1e-9));
        }
    }

    #[test]
    fn ground_recedes_toward_top() {
        let s = SceneSpec {
            primitives: (0, 0),
            ..spec(16)
        };
        let x = generate_scene(&s, 1).unwrap();
        for col in 0..16 {
            assert!(x.depth.data()[col] > x.depth.data()[15 * 16 + col]);
        }
    }

    #[test]
    fn occlusion_matches_brute_force() {
        let s = spec(16);
        for seed in 0..50 {
            let layout = scene_layout(&s, seed);
            let (depth, _) = render(&layout, &s);
            for y in 0..16 {
                for x in 0..16 {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let g = &layout.ground;
                    let inv = g.inv_top + (g.inv_bottom - g.inv_top) * (y as f64 / 15.0) + g.inv_tilt * (x as f64 / 15.0 - 0.5);
                    let mut best = (1.0 / inv).clamp(0.5, 10.0);
                    for p in &layout.primitives {
                        let inside = match p.shape {
                            Shape::Rect { top, left, bottom, right } => top <= py && py < bottom && left <= px && px < right,
                            Shape::Disk { cy, cx, r } => ((py - cy).hypot(px - cx)) <= r,
                        };
                        if inside {
                            best = best.min(p.depth);
                        }
                    }
                    assert!((depth.data()[y * 16 + x] - best).abs() < 1e-12, "seed {seed} pixel ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn proportional_noise_map() {
        let s = SceneSpec {
            noise: NoiseMode::Proportional(0.05),
            ..spec(16)
        };
        let noisy = generate_scene(&s, 3).unwrap();
        let clean = render(&scene_layout(&s, 3), &s).0;
        let sig = noisy.noise_sigma.unwrap();
        for (a, d) in sig.data().iter().zip(clean.data()) {
            assert_eq!(*a, (0.05 * d) as f32 as f64);
        }
        assert_ne!(noisy.depth, clean.map(round_f32));
        let plain = generate_scene(&spec(16), 3).unwrap();
        assert_eq!(plain.image, noisy.image);
    }

    #[test]
    fn augment_cases() {
        let x = generate_scene(&spec(16), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&x, (16, 16), 0.0, &mut rng).unwrap(), x);
        let once = augment(&x, (16, 16), 1.0, &mut rng).unwrap();
        assert_ne!(once, x);
        assert_eq!(augment(&once, (16, 16), 1.0, &mut rng).unwrap(), x);
        assert!(augment(&x, (17, 16), 0.0, &mut rng).is_err());

        let c = augment(&x, (8, 8), 0.0, &mut rng).unwrap();
        // Locate the crop and check every plane came from the same window.
        let found = (0..=8).flat_map(|t| (0..=8).map(move |l| (t, l))).any(|(t, l)| {
            (0..8).all(|y| {
                (0..8).all(|xx| {
                    c.depth.data()[y * 8 + xx] == x.depth.data()[(t + y) * 16 + l + xx]
                        && c.mask.get(y, xx) == x.mask.get(t + y, l + xx)
                        && (0..3).all(|ch| c.image.data()[ch * 64 + y * 8 + xx] == x.image.data()[ch * 256 + (t + y) * 16 + l + xx])
                })
            })
        });
        assert!(found);
    }

    #[test]
    fn splits_are_seed_stable_and_distinct() {
        let s = spec(16);
        let mean = |v: &[ImageSample]| v.iter().flat_map(|x| x.depth.data()).sum::<f64>();
        let a = generate_split(&s, "train", 8).unwrap();
        assert_eq!(mean(&a), mean(&generate_split(&s, "train", 8).unwrap()));
        assert_ne!(a[0], generate_split(&s, "val", 1).unwrap()[0]);
    }
}
