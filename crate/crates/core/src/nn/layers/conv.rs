use rayon::prelude::*;

use super::{conv_out, scaled_uniform, Param};
use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// 2-D cross-correlation over `[N, C, H, W]` with weights `[O, C, kh, kw]`.
/// No activation is applied here.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub w: Param<T>,
    pub b: Param<T>,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input_shape: Vec<usize>,
    cols: Vec<Vec<T>>,
    out_hw: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `[C, H, W]` sample into `[C·kh·kw, Ho·Wo]`.
fn im2col<T: Scalar>(x: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut col = vec![T::zero(); g.col_rows() * p];
    for ch in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ch * g.kh + i) * g.kw + j;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let src = &x[(ch * g.h + y as usize) * g.w..(ch * g.h + y as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[oy * g.wo + ox] = src[xx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters `[C·kh·kw, Ho·Wo]` back onto `[C, H, W]`.
fn col2im<T: Scalar>(col: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut x = vec![T::zero(); g.c * g.h * g.w];
    for ch in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ch * g.kh + i) * g.kw + j;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (ch * g.h + y as usize) * g.w;
                    for ox in 0..g.wo {
                        let xx = (ox * g.stride + j) as isize - g.padding as isize;
                        if xx >= 0 && xx < g.w as isize {
                            x[base + xx as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: usize) -> Result<Geometry> {
    let mismatch = || Error::Shape {
        op: "conv2d",
        left: x.shape().to_vec(),
        right: w.shape().to_vec(),
    };
    let (&[_, c, h, wd], &[_, wc, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(mismatch());
    };
    if c != wc || stride == 0 {
        return Err(mismatch());
    }
    let ho = conv_out(h, kh, stride, padding).ok_or_else(mismatch)?;
    let wo = conv_out(wd, kw, stride, padding).ok_or_else(mismatch)?;
    Ok(Geometry {
        c,
        h,
        w: wd,
        kh,
        kw,
        stride,
        padding,
        ho,
        wo,
    })
}

/// Forward pass returning the output and the per-sample unfolded inputs.
fn conv_forward_cols<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<Vec<T>>, Geometry)> {
    let g = geometry(x, w, stride, padding)?;
    let (n, o) = (x.shape()[0], w.shape()[0]);
    b.expect_shape("conv2d bias", &[o])?;
    let per_in = g.c * g.h * g.w;
    let (q, p) = (g.col_rows(), g.positions());
    let results: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let col = im2col(&x.data()[s * per_in..(s + 1) * per_in], &g);
            let mut out = vec![T::zero(); o * p];
            matmul(w.data(), &col, &mut out, o, q, p, false);
            for (oc, &bv) in b.data().iter().enumerate() {
                out[oc * p..(oc + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
            (out, col)
        })
        .collect();
    let mut data = Vec::with_capacity(n * o * p);
    let mut cols = Vec::with_capacity(n);
    for (out, col) in results {
        data.extend(out);
        cols.push(col);
    }
    Ok((Tensor::new(vec![n, o, g.ho, g.wo], data)?, cols, g))
}

/// `out[k,l] = Σ_c Σ_i Σ_j w[c,i,j]·a[c, k·s+i−p, l·s+j−p] + b`, output extent
/// `floor((H + 2p − n)/s) + 1`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv_forward_cols(x, w, b, stride, padding).map(|r| r.0)
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let shape = [out_channels, in_channels, kernel.0, kernel.1];
        Self {
            w: Param::new(scaled_uniform(&shape, in_channels * area, out_channels * area, rng)),
            b: Param::new(Tensor::zeros(&[out_channels])),
            stride,
            padding,
            cache: None,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cols, g) = conv_forward_cols(x, &self.w.value, &self.b.value, self.stride, self.padding)?;
        self.cache = Some(ConvCache {
            input_shape: x.shape().to_vec(),
            cols,
            out_hw: (g.ho, g.wo),
        });
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::config("conv2d: backward before forward"))?;
        let n = cache.input_shape[0];
        let o = self.w.value.shape()[0];
        grad.expect_shape("conv2d backward", &[n, o, cache.out_hw.0, cache.out_hw.1])?;
        let probe = Tensor::<T>::zeros(&cache.input_shape);
        let g = geometry(&probe, &self.w.value, self.stride, self.padding)?;
        let (q, p) = (g.col_rows(), g.positions());
        let w = self.w.value.data();

        let parts: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|s| {
                let gs = &grad.data()[s * o * p..(s + 1) * o * p];
                let mut dw = vec![T::zero(); o * q];
                matmul_nt(gs, &cache.cols[s], &mut dw, o, p, q, false);
                let db: Vec<T> = (0..o).map(|oc| gs[oc * p..(oc + 1) * p].iter().copied().sum()).collect();
                let mut dcol = vec![T::zero(); q * p];
                matmul_tn(w, gs, &mut dcol, q, o, p, false);
                (dw, db, col2im(&dcol, &g))
            })
            .collect();

        let mut dx = Vec::with_capacity(n * g.c * g.h * g.w);
        for (dw, db, dxs) in parts {
            for (a, b) in self.w.grad.data_mut().iter_mut().zip(&dw) {
                *a += *b;
            }
            for (a, b) in self.b.grad.data_mut().iter_mut().zip(&db) {
                *a += *b;
            }
            dx.extend(dxs);
        }
        Tensor::new(cache.input_shape.clone(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn unit_filter_is_identity() {
        let x = t(&[1, 1, 2, 3], &[1.0, -2.0, 3.0, 4.0, 5.5, 6.0]);
        let y = conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_filter_sums_window() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        let y = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
        let y = conv2d_forward(&x, &w, &t(&[1], &[1.0]), 1, 0).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn output_extent_with_stride_and_padding() {
        let x = Tensor::<f64>::zeros(&[2, 3, 32, 32]);
        let w = Tensor::<f64>::zeros(&[4, 3, 7, 7]);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[4]), 2, 3).unwrap();
        assert_eq!(y.shape(), &[2, 4, 16, 16]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn multi_channel_hand_case() {
        // Two input channels, 1x1 filter weights (2, -1): out = 2·a − b.
        let x = t(&[1, 2, 1, 2], &[1.0, 2.0, 10.0, 20.0]);
        let y = conv2d_forward(&x, &t(&[1, 2, 1, 1], &[2.0, -1.0]), &t(&[1], &[0.0]), 1, 0).unwrap();
        assert_eq!(y.data(), &[-8.0, -16.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = Geometry {
            c: 2,
            h: 5,
            w: 4,
            kh: 3,
            kw: 3,
            stride: 2,
            padding: 1,
            ho: 3,
            wo: 2,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.positions()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
