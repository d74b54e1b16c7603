//! Forward and backward kernels behind the graph operations.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn same(kernel: usize) -> Self {
        ConvGeom {
            stride: 1,
            padding: kernel / 2,
            dilation: 1,
        }
    }

    fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    pub fn output_shape(&self, x: Shape, w: Shape) -> Result<Shape> {
        if x.c != w.c {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                w.c, x.c
            )));
        }
        match (self.out_len(x.h, w.h), self.out_len(x.w, w.w)) {
            (Some(h), Some(wd)) => Ok(Shape::new(x.n, w.n, h, wd)),
            _ => Err(Error::shape(format!(
                "conv kernel {}x{} (dilation {}) does not fit input {x}",
                w.h, w.w, self.dilation
            ))),
        }
    }

    fn is_pointwise(&self, w: Shape) -> bool {
        w.h == 1 && w.w == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col(x: &[f64], xs: Shape, ws: Shape, ys: Shape, g: ConvGeom, cols: &mut [f64]) {
    let (kh, kw) = (ws.h, ws.w);
    let p = ys.h * ys.w;
    for ci in 0..xs.c {
        let plane = &x[ci * xs.h * xs.w..(ci + 1) * xs.h * xs.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ys.h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    let out_row = &mut dst[oy * ys.w..(oy + 1) * ys.w];
                    if iy < 0 || iy >= xs.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        *o = if ix < 0 || ix >= xs.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], xs: Shape, ws: Shape, ys: Shape, g: ConvGeom, dx: &mut [f64]) {
    let (kh, kw) = (ws.h, ws.w);
    let p = ys.h * ys.w;
    for ci in 0..xs.c {
        let plane = &mut dx[ci * xs.h * xs.w..(ci + 1) * xs.h * xs.w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ys.h {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= xs.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                    for ox in 0..ys.w {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                        if ix >= 0 && ix < xs.w as isize {
                            dst[ix as usize] += src[oy * ys.w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. Returns the output and, for non-pointwise kernels, the
/// unfolded input columns needed by the backward pass.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    g: ConvGeom,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    let (xs, ws) = (x.shape(), w.shape());
    let ys = g.output_shape(xs, ws)?;
    if let Some(b) = bias {
        b.expect_shape(Shape::new(1, ws.n, 1, 1), "conv bias")?;
    }
    let k = ws.c * ws.h * ws.w;
    let p = ys.plane();
    let mut y = Tensor::zeros(ys);
    let pointwise = g.is_pointwise(ws);
    let mut saved = if pointwise {
        None
    } else {
        Some(vec![0.0; xs.n * k * p])
    };
    for n in 0..xs.n {
        let out = y.sample_mut(n);
        if let Some(b) = bias {
            for (co, chunk) in out.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        match saved.as_mut() {
            None => gemm(ws.n, k, p, w.data(), false, x.sample(n), false, beta, out),
            Some(all) => {
                let cols = &mut all[n * k * p..(n + 1) * k * p];
                im2col(x.sample(n), xs, ws, ys, g, cols);
                gemm(ws.n, k, p, w.data(), false, cols, false, beta, out);
            }
        }
    }
    Ok((y, saved))
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    cols: Option<&[f64]>,
    g: ConvGeom,
    dy: &Tensor,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let (xs, ws, ys) = (x.shape(), w.shape(), dy.shape());
    let k = ws.c * ws.h * ws.w;
    let p = ys.plane();
    let mut dx = need_dx.then(|| Tensor::zeros(xs));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    let mut db = need_db.then(|| Tensor::zeros(Shape::new(1, ws.n, 1, 1)));
    let mut dcols = if need_dx && cols.is_some() {
        vec![0.0; k * p]
    } else {
        Vec::new()
    };
    for n in 0..xs.n {
        let dy_n = dy.sample(n);
        let cols_n = match cols {
            Some(all) => &all[n * k * p..(n + 1) * k * p],
            None => x.sample(n),
        };
        if let Some(dw) = dw.as_mut() {
            gemm(ws.n, p, k, dy_n, false, cols_n, true, 1.0, dw.data_mut());
        }
        if let Some(db) = db.as_mut() {
            for (co, chunk) in dy_n.chunks(p).enumerate() {
                db.data_mut()[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            if cols.is_some() {
                gemm(k, ws.n, p, w.data(), true, dy_n, false, 0.0, &mut dcols);
                col2im(&dcols, xs, ws, ys, g, dx.sample_mut(n));
            } else {
                gemm(k, ws.n, p, w.data(), true, dy_n, false, 1.0, dx.sample_mut(n));
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Source taps for one output coordinate of an align-corners-disabled bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = if i0 + 1 < input { i0 + 1 } else { i0 };
            let l = src - i0 as f64;
            let l = if i1 == i0 { 0.0 } else { l };
            Tap {
                i0,
                i1,
                w0: 1.0 - l,
                w1: l,
            }
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers (`align_corners = false`).
pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if h == 0 || w == 0 || xs.h == 0 || xs.w == 0 {
        return Err(Error::shape(format!("cannot resize {xs} to {h}x{w}")));
    }
    let ty = bilinear_taps(xs.h, h);
    let tx = bilinear_taps(xs.w, w);
    let ys = xs.with_spatial(h, w);
    let mut y = Tensor::zeros(ys);
    let out = y.data_mut();
    for nc in 0..xs.n * xs.c {
        let src = &x.data()[nc * xs.plane()..(nc + 1) * xs.plane()];
        let dst = &mut out[nc * h * w..(nc + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * xs.w..(a.i0 + 1) * xs.w];
            let r1 = &src[a.i1 * xs.w..(a.i1 + 1) * xs.w];
            for (ox, b) in tx.iter().enumerate() {
                dst[oy * w + ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                    + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
            }
        }
    }
    Ok(y)
}

pub fn resize_bilinear_backward(dy: &Tensor, input: Shape) -> Tensor {
    let ds = dy.shape();
    let ty = bilinear_taps(input.h, ds.h);
    let tx = bilinear_taps(input.w, ds.w);
    let mut dx = Tensor::zeros(input);
    let out = dx.data_mut();
    for nc in 0..input.n * input.c {
        let src = &dy.data()[nc * ds.plane()..(nc + 1) * ds.plane()];
        let dst = &mut out[nc * input.plane()..(nc + 1) * input.plane()];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let g = src[oy * ds.w + ox];
                dst[a.i0 * input.w + b.i0] += a.w0 * b.w0 * g;
                dst[a.i0 * input.w + b.i1] += a.w0 * b.w1 * g;
                dst[a.i1 * input.w + b.i0] += a.w1 * b.w0 * g;
                dst[a.i1 * input.w + b.i1] += a.w1 * b.w1 * g;
            }
        }
    }
    dx
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

pub struct GroupNormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn group_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
) -> Result<(Tensor, GroupNormSaved)> {
    let s = x.shape();
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::shape(format!(
            "{groups} groups do not divide {} channels",
            s.c
        )));
    }
    gamma.expect_shape(Shape::new(1, s.c, 1, 1), "group norm scale")?;
    beta.expect_shape(Shape::new(1, s.c, 1, 1), "group norm shift")?;
    let cg = s.c / groups;
    let m = cg * s.plane();
    let mut y = Tensor::zeros(s);
    let mut xhat = vec![0.0; s.numel()];
    let mut inv_std = vec![0.0; s.n * groups];
    for n in 0..s.n {
        for gi in 0..groups {
            let start = n * s.sample() + gi * m;
            let chunk = &x.data()[start..start + m];
            let mean = chunk.iter().sum::<f64>() / m as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            inv_std[n * groups + gi] = inv;
            for (j, &v) in chunk.iter().enumerate() {
                let c = gi * cg + j / s.plane();
                let xh = (v - mean) * inv;
                xhat[start + j] = xh;
                y.data_mut()[start + j] = gamma.data()[c] * xh + beta.data()[c];
            }
        }
    }
    Ok((y, GroupNormSaved { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(
    dy: &Tensor,
    gamma: &Tensor,
    groups: usize,
    saved: &GroupNormSaved,
) -> (Tensor, Tensor, Tensor) {
    let s = dy.shape();
    let cg = s.c / groups;
    let m = cg * s.plane();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    let mut dbeta = Tensor::zeros(Shape::new(1, s.c, 1, 1));
    let mut dxhat = vec![0.0; m];
    for n in 0..s.n {
        for gi in 0..groups {
            let start = n * s.sample() + gi * m;
            let g = &dy.data()[start..start + m];
            let xh = &saved.xhat[start..start + m];
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for j in 0..m {
                let c = gi * cg + j / s.plane();
                dgamma.data_mut()[c] += g[j] * xh[j];
                dbeta.data_mut()[c] += g[j];
                dxhat[j] = g[j] * gamma.data()[c];
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xh[j];
            }
            let inv = saved.inv_std[n * groups + gi];
            let mf = m as f64;
            let out = &mut dx.data_mut()[start..start + m];
            for j in 0..m {
                out[j] = inv / mf * (mf * dxhat[j] - sum_d - xh[j] * sum_dx);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Area-average pooling by an integer factor; used to bring masks down to a
/// pyramid level's resolution.
pub fn area_downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::shape(format!(
            "cannot area-downsample {s} by {factor}"
        )));
    }
    let (h, w) = (s.h / factor, s.w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut y = Tensor::zeros(s.with_spatial(h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        let row = &src[(oy * factor + dy) * s.w..];
                        acc += row[ox * factor..(ox + 1) * factor].iter().sum::<f64>();
                    }
                    y.set(n, c, oy, ox, acc * norm);
                }
            }
        }
    }
    Ok(y)
}
