use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

/// Scalar type the network runs on: `f32` for training, `f64` for
/// gradient checking.
pub trait Real: Float + NumAssign + Send + Sync + Debug + Sum + 'static {
    fn of(v: f64) -> Self {
        Self::from(v).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense N x C x H x W array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T = f32> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("tensor dims must be >= 1, got {n}x{c}x{h}x{w}")));
        }
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        Self::new(n, c, h, w, vec![T::zero(); n * c * h * w])
    }

    /// Stacks equally shaped C x H x W samples along a new batch axis.
    pub fn stack(samples: &[&[T]], c: usize, h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for (i, s) in samples.iter().enumerate() {
            if s.len() != c * h * w {
                return Err(Error::Shape(format!(
                    "sample {i} has {} values, expected {c}x{h}x{w}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Self::new(samples.len(), c, h, w, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.c * self.h * self.w;
        &self.data[i * len..(i + 1) * len]
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[((n * self.c + c) * self.h + h) * self.w + w]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor4<U> {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
