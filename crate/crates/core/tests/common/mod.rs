//! Helpers shared by the property tests and the acceptance harness. The
//! oracles here are written from the definitions, not from library code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uqdepth::autodiff::{grad_check, Array, Graph, NodeId};
use uqdepth::Mask;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    Array::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Builds a random scalar graph from differentiable ops and returns the
/// largest relative error over all of its leaves.
///
/// Every op is used away from stationary points and second operands are
/// bounded away from zero. Otherwise a gradient component can shrink below
/// the round-off of a central difference at step 1e-5, and the relative
/// error would measure the reference, not the backward pass.
pub fn random_graph_error(r: &mut impl Rng) -> (f64, Vec<&'static str>) {
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let mut ops = Vec::new();
    let mut leaf = |g: &mut Graph, r: &mut ChaCha8Rng, shape: &[usize], away_from_zero: bool| {
        let v = if away_from_zero {
            Array::from_fn(shape, |_| r.random_range(0.5..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 })
        } else {
            uniform(r, shape, -2.0, 2.0)
        };
        let id = g.leaf(v, true);
        leaves.push(id);
        id
    };
    let mut r2 = ChaCha8Rng::seed_from_u64(r.random());
    let r = &mut r2;

    let mut x = match r.random_range(0..4) {
        0 => {
            let (c, co, side) = (r.random_range(1..3), r.random_range(1..3), 2 * r.random_range(2..4));
            let input = leaf(&mut g, r, &[1, c, side, side], false);
            let k = if r.random_bool(0.5) { 3 } else { 1 };
            let w = leaf(&mut g, r, &[co, c, k, k], false);
            let b = leaf(&mut g, r, &[co], false);
            let stride = r.random_range(1..3);
            ops.push(if stride == 2 { "conv2d/2" } else { "conv2d" });
            let y = g.conv2d(input, w, Some(b), stride).unwrap();
            if stride == 2 {
                ops.push("upsample");
                g.upsample_nearest(y, 2).unwrap()
            } else {
                y
            }
        }
        1 => {
            let (m, k, n) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
            let a = leaf(&mut g, r, &[m, k], false);
            let b = leaf(&mut g, r, &[k, n], false);
            ops.push("matmul");
            g.matmul(a, b).unwrap()
        }
        2 => {
            let a = leaf(&mut g, r, &[1, 2, 4, 4], false);
            let b = leaf(&mut g, r, &[1, 1, 4, 4], false);
            ops.push("concat");
            let c = g.concat(&[a, b], 1).unwrap();
            ops.push("slice");
            let s = g.slice(c, 1, 1, 2).unwrap();
            ops.push("flip_h");
            let f = g.flip_h(s).unwrap();
            ops.push("flip_v");
            let v = g.flip_v(f).unwrap();
            ops.push("reshape");
            g.reshape(v, &[2, 16]).unwrap()
        }
        _ => leaf(&mut g, r, &[3, 4], false),
    };

    for _ in 0..r.random_range(2..6) {
        x = rescale(&mut g, x);
        let shape = g.value(x).shape().to_vec();
        x = match r.random_range(0..14) {
            0 => op(&mut ops, "sigmoid", g.sigmoid(x)),
            1 => op(&mut ops, "softplus", g.softplus(x)),
            2 => {
                let s = shift(&mut g, x, 3.0);
                op(&mut ops, "square", g.square(s))
            }
            3 => op(&mut ops, "exp", g.exp(x)),
            4 => {
                let p = positive(&mut g, x, 0.5);
                op(&mut ops, "log", g.log(p))
            }
            5 => {
                let p = positive(&mut g, x, 0.5);
                op(&mut ops, "sqrt", g.sqrt(p))
            }
            6 => {
                let p = positive(&mut g, x, 1.0);
                op(&mut ops, "pow_const", g.pow_const(p, 1.5))
            }
            7 => op(&mut ops, "relu", g.relu(x)),
            8 => op(&mut ops, "neg", g.neg(x)),
            9 => {
                let y = leaf(&mut g, r, &shape, true);
                op(&mut ops, "add", g.add(x, y))
            }
            10 => {
                let y = leaf(&mut g, r, &shape, true);
                op(&mut ops, "sub", g.sub(x, y))
            }
            11 => {
                let y = leaf(&mut g, r, &shape, true);
                let s = shift(&mut g, x, 3.0);
                op(&mut ops, "mul", g.mul(s, y))
            }
            12 => {
                let y = leaf(&mut g, r, &shape, true);
                let d = shift(&mut g, x, 3.0);
                op(&mut ops, "div", g.div(y, d))
            }
            _ => {
                let y = leaf(&mut g, r, &shape, true);
                op(&mut ops, "max_elem", g.max_elem(x, y))
            }
        };
    }
    // A random linear read-out keeps symmetric cancellations out of the root.
    let shape = g.value(x).shape().to_vec();
    let weights = g.constant(uniform(r, &shape, 0.5, 1.5));
    let wx = g.mul(x, weights).unwrap();
    let root = if r.random_bool(0.5) {
        ops.push("sum");
        g.sum(wx).unwrap()
    } else {
        ops.push("mean");
        g.mean(wx).unwrap()
    };

    let worst = leaves
        .iter()
        .map(|&l| grad_check(&mut g, root, l, 1e-5).unwrap())
        .fold(0.0, f64::max);
    (worst, ops)
}

fn op(ops: &mut Vec<&'static str>, name: &'static str, id: uqdepth::Result<NodeId>) -> NodeId {
    ops.push(name);
    id.unwrap()
}

/// `x + c`, which lies in `[c - 2, c + 2]` after [`rescale`].
fn shift(g: &mut Graph, x: NodeId, c: f64) -> NodeId {
    let c = g.scalar(c);
    g.add(x, c).unwrap()
}

/// `softplus(x) + c`: positive with a strictly positive slope.
fn positive(g: &mut Graph, x: NodeId, c: f64) -> NodeId {
    let s = g.softplus(x).unwrap();
    shift(g, s, c)
}

/// Multiplies by a constant so values stay within [-2, 2]; keeps `exp`
/// and friends in a well-conditioned range without changing the op mix.
fn rescale(g: &mut Graph, x: NodeId) -> NodeId {
    let m = g.value(x).data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m <= 2.0 {
        return x;
    }
    let c = g.scalar(2.0 / m);
    g.mul(x, c).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthOracle {
    pub rmse: f64,
    pub absrel: f64,
    pub log10_mae: f64,
    pub log10_rmse: f64,
    pub delta: [f64; 3],
}

/// Direct per-pixel evaluation of the depth metrics.
pub fn depth_oracle(pred: &[f64], gt: &[f64], valid: &[bool]) -> DepthOracle {
    let mut n = 0.0;
    let (mut se, mut rel, mut lmae, mut lsq) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0.0; 3];
    for i in 0..pred.len() {
        if !valid[i] {
            continue;
        }
        let (p, g) = (pred[i], gt[i]);
        n += 1.0;
        se += (p - g) * (p - g);
        rel += (p - g).abs() / g;
        let l = p.log10() - g.log10();
        lmae += l.abs();
        lsq += l * l;
        let ratio = if p / g > g / p { p / g } else { g / p };
        for k in 0..3 {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                hits[k] += 1.0;
            }
        }
    }
    DepthOracle {
        rmse: (se / n).sqrt(),
        absrel: rel / n,
        log10_mae: lmae / n,
        log10_rmse: (lsq / n).sqrt(),
        delta: [hits[0] / n, hits[1] / n, hits[2] / n],
    }
}

/// `(n_ac, n_au, n_ic, n_iu)` with a median threshold found by sorting.
pub fn uncertainty_oracle(accurate: &[bool], u: &[f64], valid: &[bool]) -> [usize; 4] {
    let mut vals: Vec<f64> = (0..u.len()).filter(|&i| valid[i]).map(|i| u[i]).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    let t = if n % 2 == 1 {
        vals[n / 2]
    } else {
        (vals[n / 2 - 1] + vals[n / 2]) / 2.0
    };
    let mut c = [0; 4];
    for i in 0..u.len() {
        if valid[i] {
            let certain = u[i] < t;
            let idx = match (accurate[i], certain) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            c[idx] += 1;
        }
    }
    c
}

/// `(p_acc_cer, p_unc_ina, pavpu)` from counts; `None` on a zero denominator.
pub fn ratios(c: [usize; 4]) -> [Option<f64>; 3] {
    let [ac, au, ic, iu] = c.map(|v| v as f64);
    let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
    [div(ac, ac + ic), div(iu, ic + iu), div(ac + iu, ac + au + ic + iu)]
}

/// Textbook two-pass mean and unbiased variance.
pub fn two_pass(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let t = samples.len() as f64;
    let n = samples[0].len();
    let mean: Vec<f64> = (0..n).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / t).collect();
    let var = (0..n)
        .map(|i| samples.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / (t - 1.0))
        .collect();
    (mean, var)
}

pub fn mask(valid: &[bool], h: usize, w: usize) -> Mask {
    Mask::new(h, w, valid.to_vec()).unwrap()
}

/// Random positive `h × w` prediction, target, uncertainty and mask with at
/// least one valid pixel. About half the predictions fall inside δ₁.
pub fn random_triple(r: &mut impl Rng, h: usize, w: usize) -> (Array, Array, Array, Vec<bool>) {
    let n = h * w;
    let gt = uniform(r, &[h, w], 0.5, 10.0);
    let pred = Array::from_fn(&[h, w], |i| gt.data()[i] * r.random_range(0.6..1.6));
    let u = uniform(r, &[h, w], 0.0, 1.0);
    let mut valid: Vec<bool> = (0..n).map(|_| r.random_bool(0.8)).collect();
    valid[r.random_range(0..n)] = true;
    (pred, gt, u, valid)
}
