use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Complex tensor stored as two real tensors of equal shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "complex",
                left: re.shape().to_vec(),
                right: im.shape().to_vec(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn magnitude(&self) -> Tensor {
        self.re.zip_map(&self.im, f64::hypot)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            re: self.re.map(|x| a * x),
            im: self.im.map(|x| a * x),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            re: self.re.zip_map(&other.re, |a, b| a + b),
            im: self.im.zip_map(&other.im, |a, b| a + b),
        }
    }
}

/// Complex value on a tape, as a pair of real variables.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}
