use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{Matrix, Vector};

use super::{check_pair, normalised_read, KernelKind, Key, Memory, WriteRecord};

/// Additive linear-attention memory: `S ← S + v φ(k)ᵀ`, `z ← z + φ(k)`.
#[derive(Debug, Clone)]
pub struct LinearState {
    s: Matrix,
    z_key: Vector,
    epsilon: f64,
}

impl LinearState {
    pub fn new(d: usize, epsilon: f64) -> Self {
        Self { s: Matrix::zeros(d, d), z_key: Vector::zeros(d), epsilon }
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn z_key(&self) -> &Vector {
        &self.z_key
    }
}

impl Memory for LinearState {
    fn kind(&self) -> KernelKind {
        KernelKind::Linear
    }

    fn dim(&self) -> usize {
        self.s.rows()
    }

    fn write(&mut self, key: Key<'_>, v: &[f64]) -> Result<WriteRecord> {
        check_pair(self.dim(), &key, v)?;
        let feat = key.features();
        let k_hat = feat
            .normalized()
            .ok_or_else(|| Error::InvalidArgument("key feature vector is zero".into()))?;
        self.s.add_outer(1.0, v, &feat);
        self.z_key.add_assign(&feat);
        let residual = Vector::from(v);
        let update_norm = residual.norm() * feat.norm();
        Ok(WriteRecord {
            alpha_hat: k_hat.clone(),
            k_hat,
            write_dir: feat,
            residual,
            update_norm,
            delta: 1.0,
        })
    }

    fn read(&self, q: Key<'_>) -> Result<Vector> {
        ensure_dim(self.dim(), q.len())?;
        Ok(normalised_read(&self.s, &self.z_key, &q.features(), self.epsilon))
    }

    fn state(&self) -> Option<&Matrix> {
        Some(&self.s)
    }
}
