use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    /// Single row `[1, n]`.
    pub fn row(data: Vec<T>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_shape("add", other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape {
                op,
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row_slice(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Concatenates two `[batch, n]` tensors along the feature axis.
pub fn concat_features<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[0] != b.shape[0] {
        return Err(Error::Shape {
            op: "concat",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (n, wa, wb) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut data = Vec::with_capacity(n * (wa + wb));
    for i in 0..n {
        data.extend_from_slice(a.row_slice(i));
        data.extend_from_slice(b.row_slice(i));
    }
    Tensor::new(vec![n, wa + wb], data)
}

/// Inverse of [`concat_features`]: splits `[batch, wa + wb]` after column `wa`.
pub fn split_features<T: Scalar>(x: &Tensor<T>, wa: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.shape.len() != 2 || wa > x.shape[1] {
        return Err(Error::Shape {
            op: "split",
            left: x.shape.clone(),
            right: vec![wa],
        });
    }
    let (n, w) = (x.shape[0], x.shape[1]);
    let mut a = Vec::with_capacity(n * wa);
    let mut b = Vec::with_capacity(n * (w - wa));
    for i in 0..n {
        let r = x.row_slice(i);
        a.extend_from_slice(&r[..wa]);
        b.extend_from_slice(&r[wa..]);
    }
    Ok((Tensor::new(vec![n, wa], a)?, Tensor::new(vec![n, w - wa], b)?))
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] (+)= aᵀ · b` with `a[k×m]`, `b[k×n]`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m×n] (+)= a · bᵀ` with `a[m×k]`, `b[n×k]`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            if accumulate {
                c[i * n + j] += s;
            } else {
                c[i * n + j] = s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        matmul(&a, &b, &mut c, 2, 3, 2, false);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c2 = [0.0; 4];
        matmul_tn(&at, &b, &mut c2, 2, 3, 2, false);
        assert_eq!(c, c2);
        // bᵀ stored as 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c3 = [0.0; 4];
        matmul_nt(&a, &bt, &mut c3, 2, 3, 2, false);
        assert_eq!(c, c3);
    }

    #[test]
    fn concat_then_split() {
        let a = Tensor::<f64>::from_f64(&[2, 1], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_features(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let (a2, b2) = split_features(&c, 1).unwrap();
        assert_eq!((a2, b2), (a, b));
    }
}
