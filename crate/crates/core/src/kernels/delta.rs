use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{Matrix, Vector};

use super::{check_pair, normalised_read, KernelKind, Key, Memory, WriteRecord};

/// Gated delta-rule memory: `S ← β S + (v - S k̂) k̂ᵀ`.
#[derive(Debug, Clone)]
pub struct DeltaState {
    s: Matrix,
    z_key: Vector,
    beta: f64,
    epsilon: f64,
}

impl DeltaState {
    pub fn new(d: usize, beta: f64, epsilon: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { s: Matrix::zeros(d, d), z_key: Vector::zeros(d), beta, epsilon })
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Write with a caller-supplied gate for this step.
    pub fn write_gated(&mut self, key: Key<'_>, v: &[f64], beta: f64) -> Result<WriteRecord> {
        check_beta(beta)?;
        check_pair(self.dim(), &key, v)?;
        let feat = key.features();
        let k_hat = feat
            .normalized()
            .ok_or_else(|| Error::InvalidArgument("key feature vector is zero".into()))?;
        let before = self.s.clone();
        let e = Vector::from(v).sub(&self.s.mul_vec(&k_hat));
        self.s.scale_in_place(beta);
        self.s.add_outer(1.0, &e, &k_hat);
        self.z_key.add_assign(&feat);
        let update_norm = self.s.sub(&before).frobenius_norm();
        Ok(WriteRecord {
            alpha_hat: k_hat.clone(),
            write_dir: k_hat.clone(),
            k_hat,
            residual: e,
            update_norm,
            delta: 1.0,
        })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gate beta must lie in (0, 1], got {beta}")))
    }
}

impl Memory for DeltaState {
    fn kind(&self) -> KernelKind {
        KernelKind::DeltaNet
    }

    fn dim(&self) -> usize {
        self.s.rows()
    }

    fn write(&mut self, key: Key<'_>, v: &[f64]) -> Result<WriteRecord> {
        self.write_gated(key, v, self.beta)
    }

    fn read(&self, q: Key<'_>) -> Result<Vector> {
        ensure_dim(self.dim(), q.len())?;
        Ok(normalised_read(&self.s, &self.z_key, &q.features(), self.epsilon))
    }

    fn state(&self) -> Option<&Matrix> {
        Some(&self.s)
    }
}
