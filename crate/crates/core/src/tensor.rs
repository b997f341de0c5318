//! Dense rank-4 tensor `[batch, channel, height, width]`, row-major with
//! width fastest, plus the named trainable parameter wrapper.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
    /// Same length as `data` when present; filled by `Tape::backward`.
    pub grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> CoreResult<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(CoreError::ElementCount {
                expected,
                got: data.len(),
            });
        }
        let t = Tensor {
            shape,
            data,
            grad: None,
        };
        t.debug_check_finite("from_vec");
        Ok(t)
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.iter().product()],
            grad: None,
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One contiguous spatial plane (H*W values) of a given (n, c).
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
            grad: None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Convert element type, e.g. to build the 64-bit shadow of a model.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// NaN/Inf is a contract violation; surfaced in debug builds only.
    #[inline]
    pub fn debug_check_finite(&self, ctx: &str) {
        if cfg!(debug_assertions) {
            for (i, v) in self.data.iter().enumerate() {
                debug_assert!(
                    v.is_finite(),
                    "{ctx}: non-finite value {v} at flat index {i} (shape {:?})",
                    self.shape
                );
            }
        }
    }
}

/// A named tensor that may participate in optimizer steps.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value,
            trainable: false,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter {
            name: self.name.clone(),
            value: self.value.cast(),
            trainable: self.trainable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn element_count_checked() {
        let err = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).unwrap_err();
        assert_eq!(
            err,
            CoreError::ElementCount {
                expected: 4,
                got: 3
            }
        );
    }

    #[test]
    fn layout_is_row_major_w_fastest() {
        let t = Tensor::from_fn([2, 3, 4, 5], |n, c, y, x| {
            (((n * 3 + c) * 4 + y) * 5 + x) as f32
        });
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v, i as f32);
        }
        assert_eq!(t.at(1, 2, 3, 4), (t.numel() - 1) as f32);
    }

    #[test]
    fn plane_slices_match_at() {
        let t = Tensor::from_fn([2, 2, 3, 3], |n, c, y, x| (n + 10 * c + 100 * y + 1000 * x) as f64);
        let p = t.plane(1, 1);
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(p[y * 3 + x], t.at(1, 1, y, x));
            }
        }
    }
}
