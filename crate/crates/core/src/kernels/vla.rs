use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng::seeded;

use super::{
    check_pair, normalised_read, sm_update_in_place, HeadConfig, KernelKind, Key, Memory,
    PenaltyDirection, WriteRecord,
};

/// Norms of `A k̂` below this mean the penalty inverse has annihilated the key.
pub const DEGENERATE_ALPHA_NORM: f64 = 1e-12;

/// Memory state of one variational linear attention head.
#[derive(Debug, Clone)]
pub struct VlaState {
    cfg: HeadConfig,
    /// Value-by-key memory.
    s: Matrix,
    /// Penalty inverse.
    a: Matrix,
    /// Sum of feature keys, the output normaliser.
    z_key: Vector,
    t: u64,
    /// `Some(c)` while `A = c I` exactly.
    isotropic: Option<f64>,
    projection: Option<Matrix>,
}

impl VlaState {
    pub fn new(cfg: &HeadConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_h;
        let scale = 1.0 / cfg.lambda0;
        let projection = cfg
            .u_mode
            .uses_projection()
            .then(|| Matrix::gaussian(&mut seeded(cfg.projection_seed), d, d));
        Ok(Self {
            cfg: *cfg,
            s: Matrix::zeros(d, d),
            a: Matrix::scaled_identity(d, scale),
            z_key: Vector::zeros(d),
            t: 0,
            isotropic: Some(scale),
            projection,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn z_key(&self) -> &Vector {
        &self.z_key
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    fn penalty_direction(&self, k_hat: &Vector, source: &[f64]) -> Vector {
        let d = self.cfg.d_h as f64;
        let projected = || {
            let w = self.projection.as_ref().expect("projection built for projected modes");
            w.mul_vec(source).normalized().unwrap_or_else(|| Vector::zeros(source.len()))
        };
        match self.cfg.u_mode {
            PenaltyDirection::UnitKey => k_hat.clone(),
            PenaltyDirection::ScaledKey => k_hat.scaled(1.0 / d.sqrt()),
            PenaltyDirection::Projected => projected(),
            PenaltyDirection::ProjectedScaled => projected().scaled(1.0 / d.sqrt()),
            PenaltyDirection::Zero => Vector::zeros(k_hat.dim()),
        }
    }

    /// Penalty half of a write: advances `A` and `t`, returns `(k̂, α̂, α, δ)`.
    ///
    /// Depends on the keys only, never on `S`, which is what lets the memory
    /// recurrence be evaluated by a scan afterwards.
    pub(crate) fn advance_penalty(
        &mut self,
        key: Key<'_>,
    ) -> Result<(Vector, Vector, Vector, Vector, f64)> {
        let feat = key.features();
        let k_hat = feat
            .normalized()
            .ok_or_else(|| Error::InvalidArgument("key feature vector is zero".into()))?;
        let u = self.penalty_direction(&k_hat, key.source());

        let mut a = self.a.clone();
        let delta = sm_update_in_place(&mut a, &u, self.cfg.epsilon)?;
        let mut isotropic = if u.iter().all(|&x| x == 0.0) { self.isotropic } else { None };
        let t = self.t + 1;
        if self.cfg.refresh_period > 0 && t.is_multiple_of(self.cfg.refresh_period as u64) {
            a.add_identity(self.cfg.refresh_eta);
            isotropic = isotropic.map(|c| c + self.cfg.refresh_eta);
        }

        let (alpha, alpha_hat) = match isotropic {
            // A = cI: the normalised write direction is k̂ itself.
            Some(c) if c >= DEGENERATE_ALPHA_NORM => (k_hat.scaled(c), k_hat.clone()),
            _ => {
                let alpha = a.mul_vec(&k_hat);
                let norm = alpha.norm();
                if norm.is_nan() || norm < DEGENERATE_ALPHA_NORM {
                    return Err(Error::DegenerateGeometry { norm });
                }
                let alpha_hat = alpha.scaled(1.0 / norm);
                (alpha, alpha_hat)
            }
        };
        if !a.is_finite() {
            return Err(Error::NonFinite("penalty inverse update"));
        }

        self.a = a;
        self.isotropic = isotropic;
        self.t = t;
        Ok((feat, k_hat, alpha_hat, alpha, delta))
    }
}

/// `S ← S + (v - S k̂) wᵀ`, returning the residual `v - S k̂`.
pub fn residual_write(s: &mut Matrix, k_hat: &[f64], write_dir: &[f64], v: &[f64]) -> Vector {
    let e = Vector::from(v).sub(&s.mul_vec(k_hat));
    s.add_outer(1.0, &e, write_dir);
    e
}

impl Memory for VlaState {
    fn kind(&self) -> KernelKind {
        KernelKind::Vla
    }

    fn dim(&self) -> usize {
        self.cfg.d_h
    }

    fn write(&mut self, key: Key<'_>, v: &[f64]) -> Result<WriteRecord> {
        check_pair(self.cfg.d_h, &key, v)?;
        let (feat, k_hat, alpha_hat, alpha, delta) = self.advance_penalty(key)?;
        let write_dir = if self.cfg.normalize_alpha { alpha_hat.clone() } else { alpha };
        let residual = residual_write(&mut self.s, &k_hat, &write_dir, v);
        if !self.s.is_finite() {
            return Err(Error::NonFinite("memory update"));
        }
        self.z_key.add_assign(&feat);
        let update_norm = residual.norm() * write_dir.norm();
        Ok(WriteRecord { k_hat, alpha_hat, write_dir, residual, update_norm, delta })
    }

    fn read(&self, q: Key<'_>) -> Result<Vector> {
        crate::error::ensure_dim(self.cfg.d_h, q.len())?;
        Ok(normalised_read(&self.s, &self.z_key, &q.features(), self.cfg.epsilon))
    }

    fn state(&self) -> Option<&Matrix> {
        Some(&self.s)
    }

    fn penalty_inverse(&self) -> Option<&Matrix> {
        Some(&self.a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius_error;
    use crate::rng::seeded;

    fn cfg(d: usize) -> HeadConfig {
        HeadConfig::with_dim(d)
    }

    #[test]
    fn first_write_with_orthonormal_key_stores_value() {
        let d = 8;
        let mut st = VlaState::new(&cfg(d)).unwrap();
        let v = Vector::from(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 2.0]);
        let k = Vector::basis(d, 0);
        let rec = st.write(Key::Feature(&k), &v).unwrap();
        assert_eq!(rec.residual, v);
        assert!(relative_frobenius_error(st.s(), &Matrix::outer(&v, &k)) < 1e-15);
        let back = st.s().mul_vec(&k);
        assert!(back.sub(&v).norm() < 1e-12);
        // A = 10I - 100/11 e1e1ᵀ, so A e1 is parallel to e1.
        assert!(rec.alpha_hat.sub(&k).norm() < 1e-15);

        let v2 = Vector::from(vec![0.3; 8]);
        let k2 = Vector::basis(d, 1);
        st.write(Key::Feature(&k2), &v2).unwrap();
        assert!(st.s().mul_vec(&k).sub(&v).norm() < 1e-12, "old association preserved");
        assert!(st.s().mul_vec(&k2).sub(&v2).norm() < 1e-12);
    }

    #[test]
    fn update_magnitude_equals_residual_norm() {
        let d = 16;
        let mut rng = seeded(9);
        let mut st = VlaState::new(&cfg(d)).unwrap();
        for _ in 0..200 {
            let before = st.s().clone();
            let k = Vector::gaussian(&mut rng, d);
            let v = Vector::gaussian(&mut rng, d);
            let rec = st.write(Key::Raw(&k), &v).unwrap();
            let step = st.s().sub(&before).frobenius_norm();
            assert!((step - rec.residual_norm()).abs() <= 1e-12 * (1.0 + step));
            assert!(rec.alignment().abs() <= 1.0 + 1e-12);
            assert!(rec.delta >= 1.0);
        }
    }

    #[test]
    fn overwrite_with_same_key_returns_latest_value() {
        let d = 8;
        let mut st = VlaState::new(&cfg(d)).unwrap();
        let k = Vector::basis(d, 3);
        let v1 = Vector::from(vec![1.0; 8]);
        let v2 = Vector::from(vec![-1.0, 2.0, -3.0, 4.0, 0.0, 0.0, 1.0, 1.0]);
        st.write(Key::Feature(&k), &v1).unwrap();
        st.write(Key::Feature(&k), &v2).unwrap();
        let o = st.read(Key::Feature(&k)).unwrap();
        let cos = o.dot(&v2) / (o.norm() * v2.norm());
        assert!(cos > 1.0 - 1e-9, "cos {cos}");
    }

    #[test]
    fn read_on_empty_state_is_zero_and_pure() {
        let d = 6;
        let st = VlaState::new(&cfg(d)).unwrap();
        let o = st.read(Key::Raw(&[0.5; 6])).unwrap();
        assert!(o.iter().all(|&x| x == 0.0));
        assert_eq!(st.t(), 0);
    }

    #[test]
    fn read_leaves_state_untouched() {
        let d = 8;
        let mut rng = seeded(4);
        let mut st = VlaState::new(&cfg(d)).unwrap();
        for _ in 0..5 {
            st.write(Key::Raw(&Vector::gaussian(&mut rng, d)), &Vector::gaussian(&mut rng, d))
                .unwrap();
        }
        let snapshot = st.clone();
        st.read(Key::Raw(&Vector::gaussian(&mut rng, d))).unwrap();
        assert_eq!(st.s(), snapshot.s());
        assert_eq!(st.a(), snapshot.a());
        assert_eq!(st.z_key(), snapshot.z_key());
    }

    #[test]
    fn zero_penalty_reduces_to_normalised_key_update() {
        let d = 16;
        let c = HeadConfig { u_mode: PenaltyDirection::Zero, ..cfg(d) }.without_refresh();
        let mut st = VlaState::new(&c).unwrap();
        let mut rng = seeded(21);
        let a0 = Matrix::scaled_identity(d, 10.0);
        for _ in 0..100 {
            let rec = st
                .write(Key::Raw(&Vector::gaussian(&mut rng, d)), &Vector::gaussian(&mut rng, d))
                .unwrap();
            assert_eq!(rec.alpha_hat, rec.k_hat);
            assert_eq!(st.a(), &a0);
        }
    }

    #[test]
    fn degenerate_geometry_is_an_error() {
        // A huge refresh-free penalty along e1 with unnormalised u drives A e1 to ~0.
        let d = 2;
        let c = HeadConfig { lambda0: 1e30, u_mode: PenaltyDirection::UnitKey, ..cfg(d) };
        let mut st = VlaState::new(&c).unwrap();
        let err = st.write(Key::Feature(&[1.0, 0.0]), &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { .. }));
        assert_eq!(st.t(), 0, "failed write must not advance the state");
    }

    #[test]
    fn step_matches_write_then_read() {
        let d = 8;
        let mut rng = seeded(77);
        let mut a = VlaState::new(&cfg(d)).unwrap();
        let mut b = a.clone();
        for _ in 0..30 {
            let (k, v, q) = (
                Vector::gaussian(&mut rng, d),
                Vector::gaussian(&mut rng, d),
                Vector::gaussian(&mut rng, d),
            );
            let out = a.step(&k, &v, &q).unwrap();
            b.write(Key::Raw(&k), &v).unwrap();
            assert_eq!(out.o, b.read(Key::Raw(&q)).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut st = VlaState::new(&cfg(4)).unwrap();
        assert!(matches!(
            st.write(Key::Raw(&[1.0; 3]), &[0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
