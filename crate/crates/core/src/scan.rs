//! Affine recurrence algebra for the VLA memory and a Blelloch-style parallel
//! prefix scan over it.
//!
//! A write `S ← S + (v - S k̂) α̂ᵀ` is the affine map
//!
//! ```text
//! S ↦ S F + G,   F = I - k̂ α̂ᵀ,   G = v α̂ᵀ
//! ```
//!
//! acting on `S` from the right. Composing an earlier element `l` with a later
//! element `r` gives `(F_l F_r, G_l F_r + G_r)`, the transpose of the
//! left-acting form `(F_r F_l, F_r G_l + G_r)`. The injection carries the
//! value `v`, not the residual: the residual depends on `S_{t-1}` and is
//! already accounted for by `F`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{HeadConfig, Key, Memory, VlaState};
use crate::linalg::{relative_frobenius_error, Matrix};
use crate::stream::Token;

/// Tolerance on the unit-norm precondition of [`make_element`].
pub const UNIT_TOL: f64 = 1e-9;

/// One step of the memory recurrence as an affine map on `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceElement {
    /// Right-acting transition `I - k̂ α̂ᵀ`.
    pub transition: Matrix,
    /// Injection `v α̂ᵀ`.
    pub injection: Matrix,
}

impl RecurrenceElement {
    pub fn identity(d: usize) -> Self {
        Self { transition: Matrix::identity(d), injection: Matrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.transition.rows()
    }

    /// `S F + G`.
    pub fn apply(&self, s: &Matrix) -> Matrix {
        s.matmul(&self.transition).add(&self.injection)
    }
}

/// Build the element for a write with unit key `k_hat`, unit write direction
/// `alpha_hat` and value `v`.
pub fn make_element(k_hat: &[f64], alpha_hat: &[f64], v: &[f64]) -> Result<RecurrenceElement> {
    let d = k_hat.len();
    crate::error::ensure_dim(d, alpha_hat.len())?;
    crate::error::ensure_dim(d, v.len())?;
    for x in [k_hat, alpha_hat] {
        let norm = crate::linalg::dot(x, x).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit { norm });
        }
    }
    let mut transition = Matrix::identity(d);
    transition.add_outer(-1.0, k_hat, alpha_hat);
    Ok(RecurrenceElement { transition, injection: Matrix::outer(v, alpha_hat) })
}

/// `left` happens first, then `right`.
pub fn compose(left: &RecurrenceElement, right: &RecurrenceElement) -> RecurrenceElement {
    RecurrenceElement {
        transition: left.transition.matmul(&right.transition),
        injection: left.injection.matmul(&right.transition).add(&right.injection),
    }
}

/// Reference left fold: `S_t = S_{t-1} F_t + G_t`.
pub fn sequential_scan(elements: &[RecurrenceElement], s0: &Matrix) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(elements.len());
    let mut s = s0.clone();
    for e in elements {
        s = e.apply(&s);
        out.push(s.clone());
    }
    out
}

/// Inclusive prefixes `e_1 ∘ … ∘ e_t` plus the number of compositions spent.
///
/// Work-efficient up-sweep/down-sweep over a power-of-two padded array; the
/// padding slots are identities and cost nothing. Each level's compositions
/// run on a pool of `workers` threads. The composition order is fixed, so the
/// result does not depend on `workers`.
pub fn blelloch_prefixes(
    elements: &[RecurrenceElement],
    workers: usize,
) -> Result<(Vec<RecurrenceElement>, usize)> {
    if elements.is_empty() {
        return Err(Error::InvalidArgument("scan needs at least one element".into()));
    }
    let n = elements.len().next_power_of_two();
    let mut slots: Vec<Option<RecurrenceElement>> =
        elements.iter().cloned().map(Some).chain(std::iter::repeat(None)).take(n).collect();
    let count = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;

    let combine = |l: &Option<RecurrenceElement>, r: &Option<RecurrenceElement>| match (l, r) {
        (Some(l), Some(r)) => {
            count.fetch_add(1, Ordering::Relaxed);
            Some(compose(l, r))
        }
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    };
    let level = |slots: &mut Vec<Option<RecurrenceElement>>, targets: Vec<(usize, usize)>| {
        let updated: Vec<(usize, Option<RecurrenceElement>)> = pool.install(|| {
            targets.par_iter().map(|&(src, dst)| (dst, combine(&slots[src], &slots[dst]))).collect()
        });
        for (dst, e) in updated {
            slots[dst] = e;
        }
    };

    let levels = n.trailing_zeros() as usize;
    for lvl in 0..levels {
        let half = 1 << lvl;
        let stride = half << 1;
        let targets = (stride - 1..n).step_by(stride).map(|i| (i - half, i)).collect();
        level(&mut slots, targets);
    }
    for lvl in (0..levels.saturating_sub(1)).rev() {
        let half = 1 << lvl;
        let stride = half << 1;
        let targets = (stride + half - 1..n).step_by(stride).map(|i| (i - half, i)).collect();
        level(&mut slots, targets);
    }

    let prefixes = slots
        .into_iter()
        .take(elements.len())
        .map(|e| e.expect("every real position holds a prefix"))
        .collect();
    Ok((prefixes, count.into_inner()))
}

/// All states `S_1 … S_T` from the parallel prefix scan.
pub fn blelloch_scan(elements: &[RecurrenceElement], s0: &Matrix, workers: usize) -> Result<Vec<Matrix>> {
    let (prefixes, _) = blelloch_prefixes(elements, workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(|| prefixes.par_iter().map(|p| p.apply(s0)).collect()))
}

/// First pass of the two-pass evaluation: run the penalty recurrence alone
/// and emit one element per token. Requires the normalised write direction.
pub fn vla_elements(cfg: &HeadConfig, tokens: &[Token]) -> Result<Vec<RecurrenceElement>> {
    if !cfg.normalize_alpha {
        return Err(Error::InvalidArgument(
            "scan elements need unit write directions (normalize_alpha)".into(),
        ));
    }
    let mut st = VlaState::new(cfg)?;
    tokens
        .iter()
        .map(|tok| {
            crate::error::ensure_dim(cfg.d_h, tok.v.len())?;
            let (_, k_hat, alpha_hat, _, _) = st.advance_penalty(Key::Raw(&tok.k))?;
            make_element(&k_hat, &alpha_hat, &tok.v)
        })
        .collect()
}

/// `S_t` after every write of a stepped VLA run.
pub fn vla_trajectory(cfg: &HeadConfig, tokens: &[Token]) -> Result<Vec<Matrix>> {
    let mut st = VlaState::new(cfg)?;
    tokens
        .iter()
        .map(|tok| {
            st.write(Key::Raw(&tok.k), &tok.v)?;
            Ok(st.s().clone())
        })
        .collect()
}

/// Worst per-position relative Frobenius deviation between two trajectories.
pub fn max_relative_deviation(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| relative_frobenius_error(x, y)).fold(0.0, f64::max)
}

/// Outcome of a scan-vs-sequential check on a VLA-generated sequence.
#[derive(Debug, Clone)]
pub struct ScanCheck {
    pub len: usize,
    pub workers: usize,
    pub max_rel_dev: f64,
    pub compositions: usize,
}

/// Compare the parallel scan against the sequential fold on elements
/// extracted from a VLA run over `tokens`.
pub fn scan_check(cfg: &HeadConfig, tokens: &[Token], workers: usize) -> Result<ScanCheck> {
    let elements = vla_elements(cfg, tokens)?;
    let s0 = Matrix::zeros(cfg.d_h, cfg.d_h);
    let (prefixes, compositions) = blelloch_prefixes(&elements, workers)?;
    let scanned: Vec<Matrix> = prefixes.iter().map(|p| p.apply(&s0)).collect();
    let reference = sequential_scan(&elements, &s0);
    Ok(ScanCheck {
        len: tokens.len(),
        workers,
        max_rel_dev: max_relative_deviation(&scanned, &reference),
        compositions,
    })
}
