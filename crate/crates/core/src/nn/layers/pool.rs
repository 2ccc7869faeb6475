use super::conv_out;
use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Windowed max/average pooling over `[N, C, H, W]`. Padded cells never win a
/// max and are excluded from averages.
#[derive(Debug, Clone)]
pub struct Pool<T: Scalar> {
    kind: PoolKind,
    window: usize,
    stride: usize,
    padding: usize,
    cache: Option<PoolCache<T>>,
}

#[derive(Debug, Clone)]
struct PoolCache<T> {
    input_shape: Vec<usize>,
    /// Max: flat input index per output cell. Avg: unused.
    argmax: Vec<usize>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Pool<T> {
    pub fn new(kind: PoolKind, window: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind,
            window,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn kind(&self) -> PoolKind {
        self.kind
    }

    fn out_dims(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let err = || Error::Shape {
            op: "pool",
            left: shape.to_vec(),
            right: vec![self.window, self.stride],
        };
        let &[n, c, h, w] = shape else { return Err(err()) };
        let ho = conv_out(h, self.window, self.stride, self.padding).ok_or_else(err)?;
        let wo = conv_out(w, self.window, self.stride, self.padding).ok_or_else(err)?;
        Ok((n, c, h, w, ho, wo))
    }

    /// Input rows/cols covered by output cell `(oy, ox)`, clipped to the image.
    fn span(&self, o: usize, extent: usize) -> std::ops::Range<usize> {
        let start = (o * self.stride) as isize - self.padding as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.window as isize).max(0) as usize).min(extent);
        lo..hi
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w, ho, wo) = self.out_dims(x.shape())?;
        let d = x.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::new();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                let rows = self.span(oy, h);
                for ox in 0..wo {
                    let cols = self.span(ox, w);
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = (usize::MAX, T::neg_infinity());
                            for y in rows.clone() {
                                for xx in cols.clone() {
                                    let i = base + y * w + xx;
                                    if best.0 == usize::MAX || d[i] > best.1 {
                                        best = (i, d[i]);
                                    }
                                }
                            }
                            argmax.push(best.0);
                            out.push(best.1);
                        }
                        PoolKind::Avg => {
                            let mut s = T::zero();
                            for y in rows.clone() {
                                for xx in cols.clone() {
                                    s += d[base + y * w + xx];
                                }
                            }
                            out.push(s / T::of_usize(rows.len() * cols.len()));
                        }
                    }
                }
            }
        }
        self.cache = Some(PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
            _marker: Default::default(),
        });
        Tensor::new(vec![n, c, ho, wo], out)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::config("pool: backward before forward"))?;
        let (n, c, h, w, ho, wo) = self.out_dims(&cache.input_shape)?;
        g.expect_shape("pool backward", &[n, c, ho, wo])?;
        let mut dx = Tensor::zeros(&cache.input_shape);
        match self.kind {
            PoolKind::Max => {
                for (&i, &gv) in cache.argmax.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
            }
            PoolKind::Avg => {
                for plane in 0..n * c {
                    let base = plane * h * w;
                    for oy in 0..ho {
                        let rows = self.span(oy, h);
                        for ox in 0..wo {
                            let cols = self.span(ox, w);
                            let gv = g.data()[(plane * ho + oy) * wo + ox] / T::of_usize(rows.len() * cols.len());
                            for y in rows.clone() {
                                for xx in cols.clone() {
                                    dx.data_mut()[base + y * w + xx] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Convenience wrapper for a single pooling pass.
pub fn pool<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize, kind: PoolKind) -> Result<Tensor<T>> {
    Pool::new(kind, window, stride, 0).forward(x)
}

/// Mean over spatial positions: `[N, C, H, W] → [N, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let &[n, c, h, w] = x.shape() else {
            return Err(Error::Shape {
                op: "global_avg_pool",
                left: x.shape().to_vec(),
                right: vec![],
            });
        };
        let area = h * w;
        let denom = T::of_usize(area);
        let out = x.data().chunks(area).map(|p| p.iter().copied().sum::<T>() / denom).collect();
        self.input_shape = Some(x.shape().to_vec());
        Tensor::new(vec![n, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::config("global_avg_pool: backward before forward"))?;
        g.expect_shape("global_avg_pool backward", &shape[..2])?;
        let area = shape[2] * shape[3];
        let denom = T::of_usize(area);
        let data = g
            .data()
            .iter()
            .flat_map(|&gv| std::iter::repeat_n(gv / denom, area))
            .collect();
        Tensor::new(shape.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn max_and_avg_on_two_by_two() {
        assert_eq!(pool(&square(), 2, 2, PoolKind::Max).unwrap().data(), &[4.0]);
        assert_eq!(pool(&square(), 2, 2, PoolKind::Avg).unwrap().data(), &[2.5]);
    }

    #[test]
    fn unit_window_is_identity() {
        assert_eq!(pool(&square(), 1, 1, PoolKind::Max).unwrap(), square());
        assert_eq!(pool(&square(), 1, 1, PoolKind::Avg).unwrap(), square());
    }

    #[test]
    fn padded_max_pool_extent() {
        let x = Tensor::<f64>::zeros(&[1, 2, 16, 16]);
        let y = Pool::new(PoolKind::Max, 3, 2, 1).forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8]);
    }

    #[test]
    fn padded_cells_never_win() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[-5.0, -6.0, -7.0, -8.0]).unwrap();
        let y = Pool::new(PoolKind::Max, 3, 2, 1).forward(&x).unwrap();
        assert_eq!(y.data(), &[-5.0]);
    }

    #[test]
    fn global_average() {
        let mut gap = GlobalAvgPool::default();
        let y = gap.forward(&square()).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[2.5]);
        let dx = gap.backward(&Tensor::<f64>::from_f64(&[1, 1], &[4.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[1.0; 4]);
    }
}
