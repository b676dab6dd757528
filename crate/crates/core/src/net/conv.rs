//! 2-D convolution via im2col + GEMM, plus the weight-free spatial layers.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Row-major `c = a (m x k) * b (k x n) + beta * c`, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Implicit zero padding on each side.
    pub padding: usize,
    /// `cout x (cin * kernel * kernel)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct ConvCache {
    cols: Vec<f64>,
    in_dims: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, kernel: usize, stride: usize, dilation: usize, padding: usize) -> Self {
        Conv2d {
            cin,
            cout,
            kernel,
            stride,
            dilation,
            padding,
            weight: vec![0.0; cout * cin * kernel * kernel],
            bias: vec![0.0; cout],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < span || wp < span {
            return Err(dim_err!("conv kernel span {span} exceeds padded input {hp}x{wp}"));
        }
        Ok(((hp - span) / self.stride + 1, (wp - span) / self.stride + 1))
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
        let (_, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
        let k = self.kernel;
        let npix = oh * ow;
        let mut cols = vec![0.0; self.patch_len() * npix];
        let xd = x.data();
        for ci in 0..self.cin {
            for a in 0..k {
                for b in 0..k {
                    let row = (ci * k + a) * k + b;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    let dy = (a * self.dilation) as isize - self.padding as isize;
                    let dx = (b * self.dilation) as isize - self.padding as isize;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &xd[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if self.stride == 1 {
                            // contiguous copy of the valid span
                            let x0 = (-dx).max(0) as usize;
                            let x1 = ((w as isize - dx).min(ow as isize)).max(0) as usize;
                            if x0 < x1 {
                                let s0 = (x0 as isize + dx) as usize;
                                out_row[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                            }
                        } else {
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride) as isize + dx;
                                if ix >= 0 && ix < w as isize {
                                    *v = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], in_dims: (usize, usize, usize), oh: usize, ow: usize) -> Vec<f64> {
        let (c, h, w) = in_dims;
        let k = self.kernel;
        let npix = oh * ow;
        let mut dx = vec![0.0; c * h * w];
        for ci in 0..self.cin {
            for a in 0..k {
                for b in 0..k {
                    let row = (ci * k + a) * k + b;
                    let src = &cols[row * npix..(row + 1) * npix];
                    let oy_off = (a * self.dilation) as isize - self.padding as isize;
                    let ox_off = (b * self.dilation) as isize - self.padding as isize;
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + oy_off;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride) as isize + ox_off;
                            if ix >= 0 && ix < w as isize {
                                dx[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (c, h, w) = x.chw()?;
        if c != self.cin {
            return Err(dim_err!("conv expects {} input channels, got {c}", self.cin));
        }
        let (oh, ow) = self.out_hw(h, w)?;
        let npix = oh * ow;
        let cols = self.im2col(x, oh, ow);
        let mut out = vec![0.0; self.cout * npix];
        for (o, chunk) in out.chunks_exact_mut(npix).enumerate() {
            chunk.fill(self.bias[o]);
        }
        gemm(
            self.cout,
            self.patch_len(),
            npix,
            &self.weight,
            false,
            &cols,
            false,
            1.0,
            &mut out,
        );
        Ok((
            Tensor::new(vec![self.cout, oh, ow], out)?,
            ConvCache {
                cols,
                in_dims: (c, h, w),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates into `dw` / `db`; returns dL/dx when requested.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dout: &Tensor,
        dw: &mut [f64],
        db: &mut [f64],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (oh, ow) = cache.out_hw;
        if dout.dims() != [self.cout, oh, ow] {
            return Err(dim_err!("conv upstream gradient dims {:?}", dout.dims()));
        }
        let npix = oh * ow;
        let g = dout.data();
        for (o, chunk) in g.chunks_exact(npix).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
        gemm(self.cout, npix, self.patch_len(), g, false, &cache.cols, true, 1.0, dw);
        if !need_input_grad {
            return Ok(None);
        }
        let mut dcols = vec![0.0; self.patch_len() * npix];
        gemm(
            self.patch_len(),
            self.cout,
            npix,
            &self.weight,
            true,
            g,
            false,
            0.0,
            &mut dcols,
        );
        let dx = self.col2im(&dcols, cache.in_dims, oh, ow);
        let (c, h, w) = cache.in_dims;
        Ok(Some(Tensor::new(vec![c, h, w], dx)?))
    }
}

#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut r = i;
    if r < 0 {
        r = -r;
    }
    if r >= n {
        r = 2 * (n - 1) - r;
    }
    r as usize
}

/// Mirror padding without repeating the edge pixel.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if pad >= h || pad >= w {
        return Err(dim_err!("reflection pad {pad} needs input larger than {h}x{w}"));
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let xd = x.data();
    let mut out = vec![0.0; c * hp * wp];
    for ci in 0..c {
        for i in 0..hp {
            let si = reflect_index(i as isize - pad as isize, h);
            for j in 0..wp {
                let sj = reflect_index(j as isize - pad as isize, w);
                out[(ci * hp + i) * wp + j] = xd[(ci * h + si) * w + sj];
            }
        }
    }
    Tensor::new(vec![c, hp, wp], out)
}

pub fn reflect_pad_backward(dout: &Tensor, pad: usize, in_dims: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = in_dims;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    if dout.dims() != [c, hp, wp] {
        return Err(dim_err!("pad upstream gradient dims {:?}", dout.dims()));
    }
    let g = dout.data();
    let mut dx = vec![0.0; c * h * w];
    for ci in 0..c {
        for i in 0..hp {
            let si = reflect_index(i as isize - pad as isize, h);
            for j in 0..wp {
                let sj = reflect_index(j as isize - pad as isize, w);
                dx[(ci * h + si) * w + sj] += g[(ci * hp + i) * wp + j];
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}

/// `x` for `x > 0`, else `e^x - 1`.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// `(C r^2, H, W) -> (C, rH, rW)` with
/// `out[c, h r + i, w r + j] = in[c r^2 + i r + j, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (cr2, h, w) = x.chw()?;
    if r == 0 || cr2 % (r * r) != 0 {
        return Err(dim_err!("{cr2} channels not divisible by ratio^2 = {}", r * r));
    }
    let c = cr2 / (r * r);
    let (oh, ow) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let src_c = ch * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[(ch * oh + y * r + i) * ow + xx * r + j] = xd[(src_c * h + y) * w + xx];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`]; also its backward pass.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, oh, ow) = x.chw()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(dim_err!("{oh}x{ow} not divisible by ratio {r}"));
    }
    let (h, w) = (oh / r, ow / r);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for ch in 0..c {
        for i in 0..r {
            for j in 0..r {
                let dst_c = ch * r * r + i * r + j;
                for y in 0..h {
                    for xx in 0..w {
                        out[(dst_c * h + y) * w + xx] = xd[(ch * oh + y * r + i) * ow + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * r * r, h, w], out)
}
