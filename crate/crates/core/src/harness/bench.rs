use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{softmax_forward, HeadConfig, KernelKind};
use crate::linalg::Vector;
use crate::stream::{StreamSpec, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kernel: KernelKind,
    #[serde(rename = "T")]
    pub t: usize,
    pub reps: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub tokens_per_s: f64,
    /// Sum of all output entries; identical for timed and untimed passes.
    pub checksum: f64,
}

/// One full forward pass: every token writes then reads.
pub fn forward(kind: KernelKind, cfg: &HeadConfig, tokens: &[Token]) -> Result<Vec<Vector>> {
    if kind == KernelKind::Softmax {
        let split = |f: fn(&Token) -> &Vector| tokens.iter().map(|t| f(t).clone()).collect::<Vec<_>>();
        return softmax_forward(&split(|t| &t.k), &split(|t| &t.v), &split(|t| &t.q));
    }
    let mut mem = kind.build(cfg)?;
    tokens.iter().map(|t| mem.step(&t.k, &t.v, &t.q).map(|s| s.o)).collect()
}

pub fn checksum(outputs: &[Vector]) -> f64 {
    outputs.iter().flat_map(|o| o.iter()).sum()
}

/// Linear-interpolated percentile of an ascending sample, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Time `reps` forward passes over a seeded Gaussian stream after `warmup`
/// untimed ones.
pub fn measure_latency(
    kind: KernelKind,
    cfg: &HeadConfig,
    t: usize,
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchRecord> {
    if reps < 5 || warmup < 1 {
        return Err(Error::InvalidArgument(format!("need reps >= 5 and warmup >= 1, got {reps} and {warmup}")));
    }
    let tokens = StreamSpec::Gaussian.generate(cfg.d_h, t, seed);
    let mut sum = 0.0;
    for _ in 0..warmup {
        sum = checksum(&forward(kind, cfg, &tokens)?);
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        let out = forward(kind, cfg, &tokens)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        sum = checksum(&out);
    }
    times.sort_by(f64::total_cmp);
    let median_ms = percentile(&times, 0.5);
    Ok(BenchRecord {
        kernel: kind,
        t,
        reps,
        median_ms,
        p10_ms: percentile(&times, 0.1),
        p90_ms: percentile(&times, 0.9),
        tokens_per_s: t as f64 / (median_ms / 1e3),
        checksum: sum,
    })
}

/// Least-squares slope of `ln median_ms` against `ln T`.
pub fn fit_loglog_slope(records: &[BenchRecord]) -> Result<f64> {
    let mut ts: Vec<usize> = records.iter().map(|r| r.t).collect();
    ts.sort_unstable();
    ts.dedup();
    if ts.len() < 3 {
        return Err(Error::InvalidArgument(format!("slope needs at least 3 distinct T values, got {}", ts.len())));
    }
    if records.iter().any(|r| r.median_ms.is_nan() || r.median_ms <= 0.0) {
        return Err(Error::InvalidArgument("slope needs positive timings".into()));
    }
    let pts: Vec<(f64, f64)> = records.iter().map(|r| ((r.t as f64).ln(), r.median_ms.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
