//! Measurement channel `y = A(x) + n`, `n ~ N(0, sigma_n^2 I)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::rng::standard_normal;

#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    /// `A = a I`.
    Scale(f64),
    /// Dense linear map, `n x d`.
    Matrix(DMatrix<f64>),
    /// Elementwise `tanh(gain * x)`; the one nonlinear operator supported.
    Tanh { gain: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    operator: Operator,
    noise_std: f64,
    data_dim: usize,
}

impl MeasurementModel {
    pub fn new(operator: Operator, noise_std: f64, data_dim: usize) -> Result<Self> {
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(Error::InvalidRange(format!(
                "measurement noise std must be positive, got {noise_std}"
            )));
        }
        if data_dim == 0 {
            return Err(Error::InvalidRange("data dimension must be positive".into()));
        }
        if let Operator::Matrix(m) = &operator {
            ensure_dim(data_dim, m.ncols())?;
            if m.nrows() == 0 {
                return Err(Error::InvalidRange("operator has no rows".into()));
            }
        }
        Ok(Self {
            operator,
            noise_std,
            data_dim,
        })
    }

    pub fn scaled_identity(a: f64, noise_std: f64, data_dim: usize) -> Result<Self> {
        Self::new(Operator::Scale(a), noise_std, data_dim)
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.operator {
            Operator::Matrix(m) => m.nrows(),
            _ => self.data_dim,
        }
    }

    /// The operator as a dense matrix, if it is linear.
    pub fn as_matrix(&self) -> Option<DMatrix<f64>> {
        match &self.operator {
            Operator::Scale(a) => Some(DMatrix::identity(self.data_dim, self.data_dim) * *a),
            Operator::Matrix(m) => Some(m.clone()),
            Operator::Tanh { .. } => None,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.data_dim);
        match &self.operator {
            Operator::Scale(a) => x.iter().map(|v| a * v).collect(),
            Operator::Matrix(m) => (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum())
                .collect(),
            Operator::Tanh { gain } => x.iter().map(|v| (gain * v).tanh()).collect(),
        }
    }

    /// `J_A(x)^T v`.
    pub fn vjp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.operator {
            Operator::Scale(a) => v.iter().map(|c| a * c).collect(),
            Operator::Matrix(m) => (0..m.ncols())
                .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * v[i]).sum())
                .collect(),
            Operator::Tanh { gain } => x
                .iter()
                .zip(v)
                .map(|(xi, vi)| {
                    let t = (gain * xi).tanh();
                    gain * (1.0 - t * t) * vi
                })
                .collect(),
        }
    }

    /// Draw `y = A(x) + sigma_n * eps`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        ensure_dim(self.data_dim, x.len())?;
        let mut y = self.apply(x.as_slice());
        for v in y.iter_mut() {
            *v += self.noise_std * standard_normal(rng);
        }
        Ok(DVector::from_vec(y))
    }
}
