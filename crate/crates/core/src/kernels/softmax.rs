use crate::error::{ensure_dim, Result};
use crate::linalg::{dot, Matrix, Vector};

use super::{check_pair, KernelKind, Key, Memory, WriteRecord};

/// Attention weights `softmax(qᵀk_s / √d)` over `keys`, max-subtracted.
pub fn softmax_weights(q: &[f64], keys: &[Vector]) -> Vec<f64> {
    if keys.is_empty() {
        return Vec::new();
    }
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn attend(q: &[f64], keys: &[Vector], values: &[Vector]) -> Vector {
    let d = values.first().map_or(q.len(), |v| v.dim());
    let mut out = Vector::zeros(d);
    for (w, v) in softmax_weights(q, keys).into_iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    out
}

/// Causal softmax attention over a whole sequence.
pub fn softmax_forward(keys: &[Vector], values: &[Vector], queries: &[Vector]) -> Result<Vec<Vector>> {
    ensure_dim(keys.len(), values.len())?;
    ensure_dim(keys.len(), queries.len())?;
    Ok(queries
        .iter()
        .enumerate()
        .map(|(t, q)| attend(q, &keys[..=t], &values[..=t]))
        .collect())
}

/// Key/value cache read by softmax attention. Keys are used without a feature
/// map.
#[derive(Debug, Clone)]
pub struct SoftmaxCache {
    d: usize,
    keys: Vec<Vector>,
    values: Vec<Vector>,
}

impl SoftmaxCache {
    pub fn new(d: usize) -> Self {
        Self { d, keys: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl Memory for SoftmaxCache {
    fn kind(&self) -> KernelKind {
        KernelKind::Softmax
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn write(&mut self, key: Key<'_>, v: &[f64]) -> Result<WriteRecord> {
        check_pair(self.d, &key, v)?;
        let k = Vector::from(key.source());
        let k_hat = k.normalized().unwrap_or_else(|| Vector::zeros(self.d));
        self.keys.push(k);
        self.values.push(Vector::from(v));
        let residual = Vector::from(v);
        Ok(WriteRecord {
            alpha_hat: k_hat.clone(),
            write_dir: k_hat.clone(),
            k_hat,
            update_norm: residual.norm(),
            residual,
            delta: 1.0,
        })
    }

    fn read(&self, q: Key<'_>) -> Result<Vector> {
        ensure_dim(self.d, q.len())?;
        Ok(attend(q.source(), &self.keys, &self.values))
    }

    fn state(&self) -> Option<&Matrix> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_token_returns_its_value() {
        let k = vec![Vector::from(vec![0.3, -0.2])];
        let v = vec![Vector::from(vec![4.0, 5.0])];
        let q = vec![Vector::from(vec![1.0, 1.0])];
        let out = softmax_forward(&k, &v, &q).unwrap();
        assert_eq!(out[0], v[0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = seeded(8);
        let t = 6;
        let key = Vector::gaussian(&mut rng, 4);
        let keys = vec![key; t];
        let values: Vec<Vector> = (0..t).map(|_| Vector::gaussian(&mut rng, 4)).collect();
        let queries: Vec<Vector> = (0..t).map(|_| Vector::gaussian(&mut rng, 4)).collect();
        let out = softmax_forward(&keys, &values, &queries).unwrap();
        for (i, o) in out.iter().enumerate() {
            let mut mean = Vector::zeros(4);
            for v in &values[..=i] {
                mean.add_assign(v);
            }
            let mean = mean.scaled(1.0 / (i + 1) as f64);
            assert!(o.sub(&mean).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = seeded(12);
        let (t, d) = (8, 5);
        let gen = |rng: &mut _| (0..t).map(|_| Vector::gaussian(rng, d)).collect::<Vec<_>>();
        let (k, v, q) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
        let out = softmax_forward(&k, &v, &q).unwrap();
        for i in 0..t {
            // unstabilised direct evaluation
            let s: Vec<f64> = (0..=i).map(|j| (q[i].dot(&k[j]) / (d as f64).sqrt()).exp()).collect();
            let z: f64 = s.iter().sum();
            for c in 0..d {
                let want: f64 = (0..=i).map(|j| s[j] / z * v[j][c]).sum();
                assert!((out[i][c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = seeded(13);
        let keys: Vec<Vector> = (0..50).map(|_| Vector::gaussian(&mut rng, 16).scaled(30.0)).collect();
        let q = Vector::gaussian(&mut rng, 16);
        let w = softmax_weights(&q, &keys);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_cache_reads_zero() {
        let c = SoftmaxCache::new(3);
        assert_eq!(&*c.read(Key::Raw(&[1.0, 2.0, 3.0])).unwrap(), &[0.0, 0.0, 0.0]);
    }
}
