//! Raw slice kernels behind the graph ops. Everything here is plain
//! row-major arithmetic with a fixed summation order, so results are
//! bit-reproducible.

use std::borrow::Cow;

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s != 0.0 {
                axpy(s, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`.
pub fn matmul_abt_acc(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(gi, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`.
pub fn matmul_atb_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s != 0.0 {
                axpy(s, gi, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Geometry of a square-kernel convolution with symmetric zero padding `(k-1)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad() - self.k) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

fn im2col<'a>(x: &'a [f64], g: &ConvGeom) -> Cow<'a, [f64]> {
    if g.is_pointwise() {
        return Cow::Borrowed(x);
    }
    let (ho, wo, pad) = (g.out_h(), g.out_w(), g.pad() as isize);
    let npos = ho * wo;
    let mut cols = vec![0.0; g.rows() * npos];
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[r * npos..(r + 1) * npos];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(cols)
}

fn col2im_acc(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo, pad) = (g.out_h(), g.out_w(), g.pad() as isize);
    let npos = ho * wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let r = (ci * g.k + ky) * g.k + kx;
                let src = &cols[r * npos..(r + 1) * npos];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution. `x` is `n×cin×h×w`, `weight` is `cout×cin×k×k`.
pub fn conv2d_forward(x: &[f64], n: usize, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let npos = g.out_h() * g.out_w();
    let in_sz = g.cin * g.h * g.w;
    let mut out = vec![0.0; n * g.cout * npos];
    for b in 0..n {
        let cols = im2col(&x[b * in_sz..(b + 1) * in_sz], g);
        let o = &mut out[b * g.cout * npos..(b + 1) * g.cout * npos];
        if let Some(bias) = bias {
            for (co, chunk) in o.chunks_exact_mut(npos).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        matmul_acc(weight, &cols, g.cout, g.rows(), npos, o);
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    need_input: bool,
) -> ConvGrads {
    let npos = g.out_h() * g.out_w();
    let in_sz = g.cin * g.h * g.w;
    let rows = g.rows();
    let mut dw = vec![0.0; g.cout * rows];
    let mut db = vec![0.0; g.cout];
    let mut dx = need_input.then(|| vec![0.0; n * in_sz]);
    for b in 0..n {
        let cols = im2col(&x[b * in_sz..(b + 1) * in_sz], g);
        let go = &dout[b * g.cout * npos..(b + 1) * g.cout * npos];
        for (co, chunk) in go.chunks_exact(npos).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        matmul_abt_acc(go, &cols, g.cout, rows, npos, &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_sz..(b + 1) * in_sz];
            if g.is_pointwise() {
                matmul_atb_acc(weight, go, g.cout, rows, npos, dxb);
            } else {
                let mut dcols = vec![0.0; rows * npos];
                matmul_atb_acc(weight, go, g.cout, rows, npos, &mut dcols);
                col2im_acc(&dcols, g, dxb);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Nearest-neighbour upsampling of the two trailing axes by `f`.
pub fn upsample_nearest(x: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let row = &plane[(oy / f) * w..(oy / f + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / f]);
            }
        }
    }
    out
}

pub fn upsample_nearest_backward(dout: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / f) * w + ox / f] += src[oy * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (ho, wo, pad) = (g.out_h(), g.out_w(), g.pad() as isize);
        let mut out = vec![0.0; g.cout * ho * wo];
        for co in 0..g.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[co];
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - pad;
                                let ix = (ox * g.stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                    s += w[((co * g.cin + ci) * g.k + ky) * g.k + kx]
                                        * x[(ci * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(k, stride, h, w) in &[(3, 1, 5, 6), (3, 2, 6, 8), (1, 1, 4, 4), (1, 2, 4, 6), (3, 2, 5, 5)] {
            let g = ConvGeom { cin: 2, h, w, cout: 3, k, stride };
            let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
            let wt: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 5 % 7) as f64) * 0.25 - 0.5).collect();
            let b = [0.1, -0.2, 0.3];
            let fast = conv2d_forward(&x, 1, &wt, Some(&b), &g);
            let slow = naive_conv(&x, &wt, &b, &g);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "k={k} s={stride}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn upsample_round_trip_sums() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up = upsample_nearest(&x, 1, 2, 2, 2);
        assert_eq!(up.len(), 16);
        assert_eq!(&up[0..4], &[1.0, 1.0, 2.0, 2.0]);
        let back = upsample_nearest_backward(&up, 1, 2, 2, 2);
        assert_eq!(back, vec![4.0, 8.0, 12.0, 16.0]);
    }
}
