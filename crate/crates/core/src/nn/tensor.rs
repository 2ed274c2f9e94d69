use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Dense 4-D tensor in NHWC layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(shape_err(
                "Tensor4::from_vec",
                n * h * w * c,
                data.len(),
            ));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, ch: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.index(n, y, x, ch)]
    }

    #[inline]
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[f64] {
        let i = self.index(n, y, x, 0);
        &self.data[i..i + self.c]
    }

    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack<'a>(items: impl IntoIterator<Item = &'a Tensor4>) -> Result<Self> {
        let mut iter = items.into_iter();
        let Some(first) = iter.next() else {
            return Ok(Self::zeros(0, 0, 0, 0));
        };
        let mut out = first.clone();
        for t in iter {
            if (t.h, t.w, t.c) != (first.h, first.w, first.c) {
                return Err(shape_err("Tensor4::stack", first.shape(), t.shape()));
            }
            out.data.extend_from_slice(&t.data);
            out.n += t.n;
        }
        Ok(out)
    }

    /// Returns samples `range` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let len = self.sample_len();
        Self {
            n: end - start,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
