//! Stability measurements: state-norm traces, the per-step Jacobian of the
//! memory recurrence, gradient-chain magnification and finite-difference
//! checks of the single-step derivative.
//!
//! The memory update `S_t = S_{t-1} + (v - S_{t-1} k̂) wᵀ` has the
//! right-acting Jacobian `ΔS ↦ ΔS (I - k̂ wᵀ)`. With a unit write direction
//! its spectral norm depends on the alignment `c = k̂ᵀα̂` only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{HeadConfig, KernelKind, Key, VlaState};
use crate::linalg::{Matrix, Vector};
use crate::rng::{derive, seeded};
use crate::stream::StreamSpec;

/// One row of a state-norm trace. Row `t = 0` is the initial state, with
/// zero residual and unit alignment and denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub s_norm: f64,
    /// `‖A_t‖_F`; zero for kernels without a penalty inverse.
    pub a_norm: f64,
    pub residual: f64,
    pub alignment: f64,
    pub delta: f64,
}

/// Step `kind` over a generated stream and record norms after every write.
pub fn run_norm_trace(
    kind: KernelKind,
    cfg: &HeadConfig,
    stream: StreamSpec,
    len: usize,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    if !kind.is_recurrent() {
        return Err(Error::InvalidArgument(format!("{kind} has no recurrent state to trace")));
    }
    let mut mem = kind.build(cfg)?;
    let norms = |m: &dyn crate::kernels::Memory| {
        (
            m.state().map_or(0.0, Matrix::frobenius_norm),
            m.penalty_inverse().map_or(0.0, Matrix::frobenius_norm),
        )
    };
    let (s_norm, a_norm) = norms(mem.as_ref());
    let mut out = Vec::with_capacity(len + 1);
    out.push(TraceRecord { t: 0, s_norm, a_norm, residual: 0.0, alignment: 1.0, delta: 1.0 });
    for (i, tok) in stream.generate(cfg.d_h, len, seed).iter().enumerate() {
        let rec = mem.write(Key::Raw(&tok.k), &tok.v)?;
        let (s_norm, a_norm) = norms(mem.as_ref());
        out.push(TraceRecord {
            t: i as u64 + 1,
            s_norm,
            a_norm,
            residual: rec.residual_norm(),
            alignment: rec.alignment(),
            delta: rec.delta,
        });
    }
    Ok(out)
}

/// Spectral norm of `I - r k̂ âᵀ` for unit `k̂`, `â` with `k̂ᵀâ = c`, `d ≥ 2`.
///
/// Off the plane spanned by `k̂` and `â` the map is the identity; on the
/// plane the squared singular values sum to `2 - 2rc + r²` and multiply to
/// `(1 - rc)²`.
pub fn rank_one_sigma(c: f64, r: f64) -> f64 {
    let sum = 2.0 - 2.0 * r * c + r * r;
    let det = 1.0 - r * c;
    let disc = (sum * sum - 4.0 * det * det).max(0.0);
    ((sum + disc.sqrt()) / 2.0).sqrt().max(1.0)
}

/// `σ_max(I - α̂ k̂ᵀ)` for unit vectors with `k̂ᵀα̂ = c`.
pub fn jacobian_sigma(c: f64) -> Result<f64> {
    if c.is_nan() || c.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!("alignment must lie in [-1, 1], got {c}")));
    }
    if c == 1.0 {
        return Ok(1.0);
    }
    let a = 3.0 - 2.0 * c;
    let b = 1.0 - c;
    Ok(((a + (a * a - 4.0 * b * b).max(0.0).sqrt()) / 2.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub alignment: f64,
    pub sigma_numeric: f64,
    pub sigma_closed_form: f64,
    /// Eigenvalue along `k̂`: `1 - c`.
    pub eigen_inline: f64,
}

/// Compare the closed form against power iteration on the explicit matrix.
pub fn jacobian_report(k_hat: &[f64], alpha_hat: &[f64]) -> Result<JacobianReport> {
    crate::error::ensure_dim(k_hat.len(), alpha_hat.len())?;
    for x in [k_hat, alpha_hat] {
        let norm = crate::linalg::dot(x, x).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NotUnit { norm });
        }
    }
    let c = crate::linalg::dot(k_hat, alpha_hat).clamp(-1.0, 1.0);
    let mut m = Matrix::identity(k_hat.len());
    m.add_outer(-1.0, alpha_hat, k_hat);
    Ok(JacobianReport {
        alignment: c,
        sigma_numeric: m.spectral_norm(1e-15, 100_000)?,
        sigma_closed_form: jacobian_sigma(c)?,
        eigen_inline: 1.0 - c,
    })
}

/// Outcome of propagating a direction through `T` step Jacobians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub d_h: usize,
    pub steps: usize,
    pub normalized: bool,
    /// `‖D_T‖_F / ‖D_0‖_F`, `+∞` on overflow.
    pub ratio: f64,
    pub log10_ratio: f64,
    pub overflow: bool,
    /// `σ_max` of each step's Jacobian.
    pub sigmas: Vec<f64>,
    /// `k̂ᵀα̂` at each step.
    pub alignments: Vec<f64>,
}

impl ChainReport {
    pub fn sigma_range(&self) -> (f64, f64) {
        self.sigmas
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }

    pub fn min_alignment(&self) -> f64 {
        self.alignments.iter().copied().fold(1.0, f64::min)
    }
}

/// Gradient-chain magnification over a seeded Gaussian stream.
///
/// Only the penalty recurrence drives the Jacobians, so the memory itself is
/// never materialised. The direction is renormalised every step and its
/// growth accumulated in log space; a log ratio past `f64` range is reported
/// as overflow with a `+∞` ratio.
pub fn chain_magnification(cfg: &HeadConfig, steps: usize, normalize: bool, seed: u64) -> Result<ChainReport> {
    let cfg = HeadConfig { normalize_alpha: normalize, ..*cfg };
    let d = cfg.d_h;
    let mut st = VlaState::new(&cfg)?;
    let mut rng = seeded(derive(seed, 0xc4a1));
    let mut dir = Matrix::gaussian(&mut rng, d, d);
    dir.scale_in_place(1.0 / dir.frobenius_norm());

    let mut log10_ratio = 0.0;
    let mut sigmas = Vec::with_capacity(steps);
    let mut alignments = Vec::with_capacity(steps);
    for tok in StreamSpec::Gaussian.generate(d, steps, seed) {
        let (_, k_hat, alpha_hat, alpha, _) = st.advance_penalty(Key::Raw(&tok.k))?;
        let w = if normalize { alpha_hat.clone() } else { alpha };
        let c = k_hat.dot(&alpha_hat);
        alignments.push(c);
        sigmas.push(if normalize { jacobian_sigma(c.clamp(-1.0, 1.0))? } else { rank_one_sigma(c, w.norm()) });

        // D ← D (I - k̂ wᵀ)
        let dk = dir.mul_vec(&k_hat);
        dir.add_outer(-1.0, &dk, &w);
        let norm = dir.frobenius_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("chain direction"));
        }
        if norm == 0.0 {
            log10_ratio = f64::NEG_INFINITY;
            break;
        }
        log10_ratio += norm.log10();
        dir.scale_in_place(1.0 / norm);
    }
    let overflow = log10_ratio > f64::MAX.log10();
    let ratio = if overflow { f64::INFINITY } else { 10f64.powf(log10_ratio) };
    Ok(ChainReport { d_h: d, steps, normalized: normalize, ratio, log10_ratio, overflow, sigmas, alignments })
}

/// `ΔS (I - k̂ wᵀ)`: the derivative of one memory write along `delta`.
pub fn jacobian_action(delta: &Matrix, k_hat: &[f64], w: &[f64]) -> Matrix {
    let mut out = delta.clone();
    out.add_outer(-1.0, &delta.mul_vec(k_hat), w);
    out
}

/// Worst relative error between the analytic single-step derivative and a
/// central difference of [`crate::kernels::residual_write`], over the given
/// directions. Errors are measured relative to the larger of the derivative
/// and the direction, so annihilated directions compare against zero.
pub fn fd_gradient_check(
    s: &Matrix,
    k_hat: &[f64],
    w: &[f64],
    v: &[f64],
    h: f64,
    directions: &[Matrix],
) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!("step h must lie in [1e-7, 1e-4], got {h}")));
    }
    let step = |m: &Matrix| {
        let mut m = m.clone();
        crate::kernels::residual_write(&mut m, k_hat, w, v);
        m
    };
    let mut worst: f64 = 0.0;
    for delta in directions {
        let analytic = jacobian_action(delta, k_hat, w);
        let plus = step(&s.add(&delta.scaled(h)));
        let minus = step(&s.sub(&delta.scaled(h)));
        let fd = plus.sub(&minus).scaled(0.5 / h);
        let scale = analytic.frobenius_norm().max(delta.frobenius_norm());
        if scale > 0.0 {
            worst = worst.max(fd.sub(&analytic).frobenius_norm() / scale);
        }
    }
    Ok(worst)
}

/// [`fd_gradient_check`] at a random state, unit pair and value.
pub fn fd_gradient_check_random(d: usize, h: f64, n_dirs: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(derive(seed, 0xfd));
    let s = Matrix::gaussian(&mut rng, d, d);
    let k = Vector::random_unit(&mut rng, d);
    let a = Vector::random_unit(&mut rng, d);
    let v = Vector::gaussian(&mut rng, d);
    let dirs: Vec<Matrix> = (0..n_dirs).map(|_| Matrix::gaussian(&mut rng, d, d)).collect();
    fd_gradient_check(&s, &k, &a, &v, h, &dirs)
}

/// Result of checking `‖S_t‖_F ≤ ‖S_0‖_F + Σ_{s≤t} ‖e_s‖` on every prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// The bound holds by construction for unit write directions and gated
    /// delta writes; linear attention adds `‖v‖‖φ(k)‖` instead.
    pub applicable: bool,
    pub checked: usize,
    pub violations: usize,
    /// Largest `bound - ‖S_t‖_F`.
    pub max_slack: f64,
    /// Smallest `bound - ‖S_t‖_F`; negative when violated.
    pub min_slack: f64,
}

pub fn bound_check(trace: &[TraceRecord], kind: KernelKind) -> BoundReport {
    let s0 = trace.first().map_or(0.0, |r| r.s_norm);
    let mut bound = s0;
    let (mut violations, mut max_slack, mut min_slack) = (0, f64::NEG_INFINITY, f64::INFINITY);
    for r in trace.iter().skip(1) {
        bound += r.residual;
        let slack = bound - r.s_norm;
        if r.s_norm > bound * (1.0 + 1e-12) + 1e-12 || !slack.is_finite() {
            violations += 1;
        }
        max_slack = max_slack.max(slack);
        min_slack = min_slack.min(slack);
    }
    BoundReport {
        applicable: matches!(kind, KernelKind::Vla | KernelKind::DeltaNet),
        checked: trace.len().saturating_sub(1),
        violations,
        max_slack: if max_slack.is_finite() { max_slack } else { 0.0 },
        min_slack: if min_slack.is_finite() { min_slack } else { 0.0 },
    }
}

/// `(growth over the first window, growth over the last window)` of
/// `‖S_t‖_F`, with windows measured in steps after the initial row.
pub fn plateau_growth(trace: &[TraceRecord], window: usize) -> Option<(f64, f64)> {
    let n = trace.len();
    if n < 2 * window + 1 || window == 0 {
        return None;
    }
    let early = trace[window].s_norm - trace[0].s_norm;
    let late = trace[n - 1].s_norm - trace[n - 1 - window].s_norm;
    Some((early, late))
}
