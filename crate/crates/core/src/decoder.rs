//! Latent-to-data maps consumed by the sampler and the sensitivity probes.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::MlpNetwork;
use crate::tokenizer::TokenizerModel;

/// A batch map from 2D latents to 2D data points.
pub trait LatentDecoder: Sync {
    fn decode(&self, z: &Matrix) -> Result<Matrix>;
}

impl LatentDecoder for MlpNetwork {
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.forward(z, None)
    }
}

impl LatentDecoder for TokenizerModel {
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward(z, None)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityDecoder;

impl LatentDecoder for IdentityDecoder {
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != 2 {
            return Err(Error::shape("IdentityDecoder", 2, z.cols()));
        }
        Ok(z.clone())
    }
}

/// `D(z) = A z + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecoder {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl LinearDecoder {
    pub fn new(a: [[f64; 2]; 2]) -> Self {
        Self { a, b: [0.0; 2] }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.a.iter().flatten().map(|v| v * v).sum()
    }
}

impl LatentDecoder for LinearDecoder {
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != 2 {
            return Err(Error::shape("LinearDecoder", 2, z.cols()));
        }
        let mut out = Matrix::zeros(z.rows(), 2);
        for (o, r) in out.as_mut_slice().chunks_exact_mut(2).zip(z.iter_rows()) {
            for i in 0..2 {
                o[i] = self.a[i][0] * r[0] + self.a[i][1] * r[1] + self.b[i];
            }
        }
        Ok(out)
    }
}

impl<D: LatentDecoder + ?Sized> LatentDecoder for &D {
    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        (**self).decode(z)
    }
}
