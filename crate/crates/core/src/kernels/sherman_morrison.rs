use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;

/// Rank-1 update of the penalty inverse after adding `u uᵀ` to the penalty.
///
/// Returns `A - (Au)(Au)ᵀ / δ` with `δ = max(1 + uᵀAu, epsilon)`, and `δ`.
pub fn sm_update(a: &Matrix, u: &[f64], epsilon: f64) -> Result<(Matrix, f64)> {
    let mut out = a.clone();
    let delta = sm_update_in_place(&mut out, u, epsilon)?;
    Ok((out, delta))
}

/// In-place form of [`sm_update`].
pub fn sm_update_in_place(a: &mut Matrix, u: &[f64], epsilon: f64) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("penalty inverse must be square".into()));
    }
    ensure_dim(a.rows(), u.len())?;
    let au = a.mul_vec(u);
    let delta = (1.0 + au.dot(u)).max(epsilon);
    a.add_outer(-1.0 / delta, &au, &au);
    Ok(delta)
}
