//! Same-padded 2-D cross-correlation and its adjoints, computed as GEMMs
//! over horizontal strips of the image (im2col per strip).
//!
//! Strips are processed in parallel; every reduction across strips is
//! summed in strip order so results do not depend on the thread count.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements per strip.
const COL_BUDGET: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Kernel layout is `out_ch x in_ch x kh x kw`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize, activation: Activation) -> Self {
        ConvLayer {
            out_ch,
            in_ch,
            kh,
            kw,
            weight: vec![0.0; out_ch * in_ch * kh * kw],
            bias: vec![0.0; out_ch],
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.channels != self.in_ch {
            return Err(Error::Shape(format!(
                "layer expects {} input channels, got {}",
                self.in_ch, input.channels
            )));
        }
        if self.weight.len() != self.out_ch * self.fan_in() || self.bias.len() != self.out_ch {
            return Err(Error::Shape("kernel or bias length does not match layer shape".into()));
        }
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || last(m, k, rsa, csa) < a.len());
    assert!(k == 0 || last(k, n, rsb, csb) < b.len());
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn strips(height: usize, width: usize, rows_per_col: usize) -> Vec<(usize, usize)> {
    let rows = (COL_BUDGET / (rows_per_col * width).max(1)).clamp(1, height.max(1));
    (0..height)
        .step_by(rows)
        .map(|r0| (r0, (r0 + rows).min(height)))
        .collect()
}

/// Copies `src[x + off]` into `dst[x]`, zero where out of range.
#[inline]
fn shifted_copy(dst: &mut [f64], src: &[f64], off: isize) {
    let w = dst.len() as isize;
    for (x, d) in dst.iter_mut().enumerate() {
        let sx = x as isize + off;
        *d = if sx >= 0 && sx < w { src[sx as usize] } else { 0.0 };
    }
}

/// `dst[x + off] += src[x]` where in range.
#[inline]
fn shifted_add(dst: &mut [f64], src: &[f64], off: isize) {
    let w = dst.len() as isize;
    let lo = (-off).max(0) as usize;
    let hi = (w - off).min(w).max(0) as usize;
    if lo >= hi {
        return;
    }
    let d0 = (lo as isize + off) as usize;
    for (d, s) in dst[d0..d0 + hi - lo].iter_mut().zip(&src[lo..hi]) {
        *d += s;
    }
}

/// im2col rows `(c, dy, dx)` for output rows `r0..r1`.
fn im2col(input: &Tensor, layer: &ConvLayer, r0: usize, r1: usize) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let (ph, pw) = ((layer.kh / 2) as isize, (layer.kw / 2) as isize);
    let n = (r1 - r0) * w;
    let mut col = vec![0.0; layer.fan_in() * n];
    let mut rows = col.chunks_mut(n);
    for c in 0..layer.in_ch {
        let plane = input.plane(c);
        for dy in 0..layer.kh {
            for dx in 0..layer.kw {
                let row = rows.next().expect("col has fan_in rows");
                for y in r0..r1 {
                    let sy = y as isize + dy as isize - ph;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    shifted_copy(
                        &mut row[(y - r0) * w..(y - r0 + 1) * w],
                        &plane[sy * w..(sy + 1) * w],
                        dx as isize - pw,
                    );
                }
            }
        }
    }
    col
}

/// Forward pass: cross-correlation with zero "same" padding, bias, activation.
pub fn conv2d(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    layer.check_input(input)?;
    let (h, w) = (input.height, input.width);
    let hw = h * w;
    let k = layer.fan_in();
    let parts: Vec<(usize, usize, Vec<f64>)> = strips(h, w, if layer.is_pointwise() { 1 } else { k })
        .into_par_iter()
        .map(|(r0, r1)| {
            let n = (r1 - r0) * w;
            let mut out = vec![0.0; layer.out_ch * n];
            if layer.is_pointwise() {
                gemm(
                    layer.out_ch, k, n, &layer.weight, k, 1,
                    &input.data[r0 * w..], hw, 1,
                    &mut out, n, 1,
                );
            } else {
                let col = im2col(input, layer, r0, r1);
                gemm(layer.out_ch, k, n, &layer.weight, k, 1, &col, n, 1, &mut out, n, 1);
            }
            for (row, &b) in out.chunks_mut(n).zip(&layer.bias) {
                match layer.activation {
                    Activation::Relu => row.iter_mut().for_each(|v| *v = (*v + b).max(0.0)),
                    Activation::None => row.iter_mut().for_each(|v| *v += b),
                }
            }
            (r0, r1, out)
        })
        .collect();

    let mut output = Tensor::zeros(layer.out_ch, h, w);
    for (r0, r1, out) in parts {
        let n = (r1 - r0) * w;
        for o in 0..layer.out_ch {
            output.data[o * hw + r0 * w..o * hw + r1 * w].copy_from_slice(&out[o * n..(o + 1) * n]);
        }
    }
    Ok(output)
}

struct StripGrads {
    weight: Vec<f64>,
    bias: Vec<f64>,
    /// rows `halo0..` of the input gradient touched by this strip
    halo0: usize,
    input: Option<Vec<f64>>,
    halo_rows: usize,
}

/// Adjoint of [`conv2d`].
///
/// `output` is the forward result; it gates the gradient when the layer
/// uses ReLU. The input gradient is skipped unless `need_input`.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    output: &Tensor,
    layer: &ConvLayer,
    need_input: bool,
) -> Result<ConvGrads> {
    layer.check_input(input)?;
    let (h, w) = (input.height, input.width);
    for t in [grad_out, output] {
        if t.channels != layer.out_ch || t.height != h || t.width != w {
            return Err(Error::Shape(format!(
                "gradient/output {}x{}x{} does not match forward shape {}x{h}x{w}",
                t.channels, t.height, t.width, layer.out_ch
            )));
        }
    }
    let hw = h * w;
    let k = layer.fan_in();
    let (ph, pw) = ((layer.kh / 2) as isize, (layer.kw / 2) as isize);

    let parts: Vec<StripGrads> = strips(h, w, if layer.is_pointwise() { layer.out_ch } else { k.max(layer.out_ch) })
        .into_par_iter()
        .map(|(r0, r1)| {
            let n = (r1 - r0) * w;
            let mut g = vec![0.0; layer.out_ch * n];
            for o in 0..layer.out_ch {
                let src = &grad_out.data[o * hw + r0 * w..o * hw + r1 * w];
                let dst = &mut g[o * n..(o + 1) * n];
                match layer.activation {
                    Activation::Relu => {
                        let act = &output.data[o * hw + r0 * w..o * hw + r1 * w];
                        for ((d, &s), &a) in dst.iter_mut().zip(src).zip(act) {
                            *d = if a > 0.0 { s } else { 0.0 };
                        }
                    }
                    Activation::None => dst.copy_from_slice(src),
                }
            }
            let bias: Vec<f64> = g.chunks(n).map(|r| r.iter().sum()).collect();

            let mut weight = vec![0.0; layer.out_ch * k];
            let col;
            let (col_ref, col_cs): (&[f64], usize) = if layer.is_pointwise() {
                (&input.data[r0 * w..], hw)
            } else {
                col = im2col(input, layer, r0, r1);
                (&col, n)
            };
            // dW = G col^T
            gemm(layer.out_ch, n, k, &g, n, 1, col_ref, 1, col_cs, &mut weight, k, 1);

            if !need_input {
                return StripGrads { weight, bias, halo0: r0, input: None, halo_rows: 0 };
            }
            // dcol = W^T G
            let mut gcol = vec![0.0; k * n];
            gemm(k, layer.out_ch, n, &layer.weight, 1, k, &g, n, 1, &mut gcol, n, 1);
            if layer.is_pointwise() {
                return StripGrads { weight, bias, halo0: r0, input: Some(gcol), halo_rows: r1 - r0 };
            }
            let halo0 = (r0 as isize - ph).max(0) as usize;
            let halo1 = (r1 + layer.kh - 1 - ph as usize).min(h);
            let halo_rows = halo1 - halo0;
            let mut buf = vec![0.0; layer.in_ch * halo_rows * w];
            let mut rows = gcol.chunks(n);
            for c in 0..layer.in_ch {
                let plane = &mut buf[c * halo_rows * w..(c + 1) * halo_rows * w];
                for dy in 0..layer.kh {
                    for dx in 0..layer.kw {
                        let row = rows.next().expect("gcol has fan_in rows");
                        for y in r0..r1 {
                            let sy = y as isize + dy as isize - ph;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize - halo0;
                            shifted_add(
                                &mut plane[sy * w..(sy + 1) * w],
                                &row[(y - r0) * w..(y - r0 + 1) * w],
                                dx as isize - pw,
                            );
                        }
                    }
                }
            }
            StripGrads { weight, bias, halo0, input: Some(buf), halo_rows }
        })
        .collect();

    let mut grads = ConvGrads {
        input: need_input.then(|| Tensor::zeros(layer.in_ch, h, w)),
        weight: vec![0.0; layer.weight.len()],
        bias: vec![0.0; layer.out_ch],
    };
    for part in parts {
        grads.weight.iter_mut().zip(&part.weight).for_each(|(a, b)| *a += b);
        grads.bias.iter_mut().zip(&part.bias).for_each(|(a, b)| *a += b);
        if let (Some(gi), Some(buf)) = (grads.input.as_mut(), part.input) {
            let span = part.halo_rows * w;
            for c in 0..layer.in_ch {
                let dst = &mut gi.data[c * hw + part.halo0 * w..c * hw + part.halo0 * w + span];
                dst.iter_mut()
                    .zip(&buf[c * span..(c + 1) * span])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok(grads)
}
