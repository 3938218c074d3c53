//! Training-free associative recall: fixed seeded embeddings stand in for
//! learned ones, every pair goes through the kernel's write path, and each
//! read is decoded to the nearest value embedding by cosine similarity.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{HeadConfig, KernelKind, Key, Memory};
use crate::linalg::Vector;
use crate::rng::{derive, seeded};

use super::TokenLayout;

/// How key embeddings are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyGeometry {
    /// Gram-Schmidt on seeded Gaussians, handed to the kernel as feature
    /// vectors. Needs `n ≤ d_h`.
    Orthonormal,
    /// Normalised Gaussians, passed through the kernel's feature map.
    RandomUnit,
}

impl fmt::Display for KeyGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            KeyGeometry::Orthonormal => "orthonormal",
            KeyGeometry::RandomUnit => "random-unit",
        })
    }
}

impl FromStr for KeyGeometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "orthonormal" => Ok(Self::Orthonormal),
            "random-unit" | "random" => Ok(Self::RandomUnit),
            other => Err(Error::Config(format!("unknown key geometry '{other}'"))),
        }
    }
}

/// `count` orthonormal vectors in `d` dimensions.
pub fn orthonormal_keys(d: usize, count: usize, seed: u64) -> Result<Vec<Vector>> {
    if count > d {
        return Err(Error::Infeasible(format!(
            "{count} orthonormal keys do not fit in {d} dimensions; request random-unit keys instead"
        )));
    }
    let mut rng = seeded(seed);
    let mut basis: Vec<Vector> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut x = Vector::gaussian(&mut rng, d);
        // two passes keep the basis orthogonal to rounding
        for _ in 0..2 {
            for b in &basis {
                let p = x.dot(b);
                x = x.sub(&b.scaled(p));
            }
        }
        if let Some(u) = x.normalized() {
            basis.push(u);
        }
    }
    Ok(basis)
}

/// A fully embedded recall episode.
#[derive(Debug, Clone)]
pub struct RecallProblem {
    pub geometry: KeyGeometry,
    pub keys: Vec<Vector>,
    /// Index into `value_table` for each key.
    pub value_ids: Vec<usize>,
    pub value_table: Vec<Vector>,
    /// Key and value written at every padding position.
    pub pad: Option<(Vector, Vector)>,
    pub pad_len: usize,
    /// Query order, a permutation of the keys.
    pub order: Vec<usize>,
    tie_seed: u64,
}

impl RecallProblem {
    /// Build an episode with `n` pairs padded to `3n + 1 + pad_len` tokens.
    /// Values are drawn i.i.d. from the layout's value range.
    pub fn build(
        d: usize,
        n: usize,
        geometry: KeyGeometry,
        pad_len: usize,
        write_pads: bool,
        layout: &TokenLayout,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("recall needs at least one pair".into()));
        }
        layout.validate()?;
        let with_pad = pad_len > 0 && write_pads;
        let n_keys = n + usize::from(with_pad);
        let mut keys = match geometry {
            KeyGeometry::Orthonormal => orthonormal_keys(d, n_keys, derive(seed, 1))?,
            KeyGeometry::RandomUnit => {
                let mut rng = seeded(derive(seed, 1));
                (0..n_keys).map(|_| Vector::random_unit(&mut rng, d)).collect()
            }
        };
        let mut rng = seeded(derive(seed, 2));
        let value_table: Vec<Vector> = layout.values.clone().map(|_| Vector::random_unit(&mut rng, d)).collect();
        let pad_value = Vector::random_unit(&mut rng, d);
        let mut rng = seeded(derive(seed, 3));
        let value_ids = (0..n).map(|_| rng.gen_range(0..value_table.len())).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded(derive(seed, 4)));
        let pad = with_pad.then(|| (keys.pop().expect("pad key generated"), pad_value));
        Ok(Self { geometry, keys, value_ids, value_table, pad, pad_len, order, tie_seed: derive(seed, 5) })
    }

    pub fn n_pairs(&self) -> usize {
        self.keys.len()
    }

    pub fn total_len(&self) -> usize {
        3 * self.n_pairs() + 1 + self.pad_len
    }

    fn key<'a>(&self, k: &'a Vector) -> Key<'a> {
        match self.geometry {
            KeyGeometry::Orthonormal => Key::Feature(k),
            KeyGeometry::RandomUnit => Key::Raw(k),
        }
    }

    /// Write the context pairs, then the padding.
    pub fn write_all(&self, mem: &mut dyn Memory) -> Result<()> {
        for (k, &vi) in self.keys.iter().zip(&self.value_ids) {
            mem.write(self.key(k), &self.value_table[vi])?;
        }
        if let Some((pk, pv)) = &self.pad {
            for _ in 0..self.pad_len {
                mem.write(self.key(pk), pv)?;
            }
        }
        Ok(())
    }

    /// Query every key in order and decode; returns `(accuracy, mean margin)`.
    ///
    /// The margin is the cosine of the correct value minus the best wrong one.
    /// A zero read, or a tie for the best value, is resolved by a seeded
    /// uniform draw among the tied candidates.
    pub fn evaluate(&self, mem: &dyn Memory) -> Result<(f64, f64)> {
        let mut rng = seeded(self.tie_seed);
        let (mut hits, mut margin) = (0usize, 0.0);
        for &i in &self.order {
            let o = mem.read(self.key(&self.keys[i]))?;
            let norm = o.norm();
            let cos: Vec<f64> = self
                .value_table
                .iter()
                .map(|e| if norm > 0.0 { o.dot(e) / norm } else { 0.0 })
                .collect();
            let best = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..cos.len()).filter(|&j| cos[j] == best).collect();
            let pick = if tied.len() == 1 { tied[0] } else { *tied.choose(&mut rng).unwrap() };
            let target = self.value_ids[i];
            hits += usize::from(pick == target);
            let wrong = (0..cos.len()).filter(|&j| j != target).map(|j| cos[j]).fold(f64::NEG_INFINITY, f64::max);
            margin += cos[target] - wrong;
        }
        let n = self.order.len() as f64;
        Ok((hits as f64 / n, margin / n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub kernel: KernelKind,
    pub geometry: KeyGeometry,
    pub n_pairs: usize,
    pub d_h: usize,
    pub total_len: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub per_query_margin: f64,
}

/// One recall episode of `n_pairs` with `pad_len` padding tokens.
pub fn recall_episode(
    kind: KernelKind,
    cfg: &HeadConfig,
    n_pairs: usize,
    geometry: KeyGeometry,
    pad_len: usize,
    write_pads: bool,
    seed: u64,
) -> Result<RecallResult> {
    let problem = RecallProblem::build(cfg.d_h, n_pairs, geometry, pad_len, write_pads, &TokenLayout::default(), seed)?;
    let mut mem = kind.build(cfg)?;
    problem.write_all(mem.as_mut())?;
    let (accuracy, per_query_margin) = problem.evaluate(mem.as_ref())?;
    Ok(RecallResult {
        kernel: kind,
        geometry,
        n_pairs,
        d_h: cfg.d_h,
        total_len: problem.total_len(),
        seed,
        accuracy,
        per_query_margin,
    })
}

/// Unpadded episode, `T = 3n + 1`.
pub fn recall_experiment(
    kind: KernelKind,
    cfg: &HeadConfig,
    n_pairs: usize,
    geometry: KeyGeometry,
    seed: u64,
) -> Result<RecallResult> {
    recall_episode(kind, cfg, n_pairs, geometry, 0, true, seed)
}

/// Mean ± sample standard deviation over seeds for one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCell {
    pub kernel: KernelKind,
    pub geometry: KeyGeometry,
    pub n_pairs: usize,
    pub total_len: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
    pub margin: f64,
    pub per_seed: Vec<f64>,
}

fn summarise(results: &[RecallResult]) -> CurveCell {
    let first = &results[0];
    let acc: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let std = if acc.len() > 1 {
        (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    CurveCell {
        kernel: first.kernel,
        geometry: first.geometry,
        n_pairs: first.n_pairs,
        total_len: first.total_len,
        seeds: acc.len(),
        mean,
        std,
        margin: results.iter().map(|r| r.per_query_margin).sum::<f64>() / n,
        per_seed: acc,
    }
}

/// Sweep options shared by the capacity and long-context curves.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub geometry: KeyGeometry,
    /// Use random-unit keys for cells where orthonormal keys cannot fit.
    pub fallback_random: bool,
    pub write_pads: bool,
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            geometry: KeyGeometry::Orthonormal,
            fallback_random: false,
            write_pads: true,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl SweepOptions {
    fn geometry_for(&self, n_keys: usize, d: usize) -> KeyGeometry {
        match self.geometry {
            KeyGeometry::Orthonormal if n_keys > d && self.fallback_random => KeyGeometry::RandomUnit,
            g => g,
        }
    }
}

fn sweep(
    cells: Vec<(KernelKind, usize, usize)>,
    cfg: &HeadConfig,
    seeds: &[u64],
    opts: &SweepOptions,
) -> Result<Vec<CurveCell>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds given".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let jobs: Vec<(usize, KernelKind, usize, usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, &(k, n, pad))| seeds.iter().map(move |&s| (c, k, n, pad, s)))
        .collect();
    let results: Vec<Result<RecallResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(_, kind, n, pad, seed)| {
                let n_keys = n + usize::from(pad > 0 && opts.write_pads);
                let geometry = opts.geometry_for(n_keys, cfg.d_h);
                recall_episode(kind, cfg, n, geometry, pad, opts.write_pads, seed)
            })
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(results.chunks(seeds.len()).map(summarise).collect())
}

/// Accuracy against the number of stored pairs at `T = 3n + 1`.
pub fn capacity_curve(
    kinds: &[KernelKind],
    cfg: &HeadConfig,
    n_list: &[usize],
    seeds: &[u64],
    opts: &SweepOptions,
) -> Result<Vec<CurveCell>> {
    if n_list.is_empty() || kinds.is_empty() {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    let cells = kinds.iter().flat_map(|&k| n_list.iter().map(move |&n| (k, n, 0))).collect();
    sweep(cells, cfg, seeds, opts)
}

/// Accuracy against padded sequence length at fixed `n`.
pub fn long_context_curve(
    kinds: &[KernelKind],
    cfg: &HeadConfig,
    n_pairs: usize,
    t_list: &[usize],
    seeds: &[u64],
    opts: &SweepOptions,
) -> Result<Vec<CurveCell>> {
    if t_list.is_empty() || kinds.is_empty() {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    let min_len = 3 * n_pairs + 1;
    if let Some(&t) = t_list.iter().find(|&&t| t < min_len) {
        return Err(Error::Infeasible(format!("length {t} is below the minimum {min_len} for {n_pairs} pairs")));
    }
    let cells = kinds.iter().flat_map(|&k| t_list.iter().map(move |&t| (k, n_pairs, t - min_len))).collect();
    sweep(cells, cfg, seeds, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::LinearState;

    #[test]
    fn orthonormal_keys_are_orthonormal() {
        let keys = orthonormal_keys(16, 16, 3).unwrap();
        for (i, a) in keys.iter().enumerate() {
            for (j, b) in keys.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a.dot(b) - want).abs() < 1e-14);
            }
        }
        assert!(matches!(orthonormal_keys(4, 5, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn vla_exact_within_capacity() {
        let cfg = HeadConfig::default();
        for n in [8, 32] {
            let r = recall_experiment(KernelKind::Vla, &cfg, n, KeyGeometry::Orthonormal, 42).unwrap();
            assert_eq!(r.accuracy, 1.0, "n={n}");
            assert_eq!(r.total_len, 3 * n + 1);
        }
    }

    #[test]
    fn orthonormal_overflow_is_explicit() {
        let cfg = HeadConfig::default();
        let err = recall_experiment(KernelKind::Vla, &cfg, 33, KeyGeometry::Orthonormal, 1).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn linear_trails_vla_on_random_keys() {
        let cfg = HeadConfig::default();
        let vla = recall_experiment(KernelKind::Vla, &cfg, 24, KeyGeometry::RandomUnit, 42).unwrap();
        let lin = recall_experiment(KernelKind::Linear, &cfg, 24, KeyGeometry::RandomUnit, 42).unwrap();
        assert!(vla.accuracy > lin.accuracy, "vla {} linear {}", vla.accuracy, lin.accuracy);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = HeadConfig::default();
        let a = recall_experiment(KernelKind::DeltaNet, &cfg, 16, KeyGeometry::RandomUnit, 7).unwrap();
        let b = recall_experiment(KernelKind::DeltaNet, &cfg, 16, KeyGeometry::RandomUnit, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_memory_scores_at_chance() {
        let layout = TokenLayout::default();
        let (mut hits, mut total) = (0.0, 0.0);
        for seed in 0..200 {
            let p = RecallProblem::build(32, 16, KeyGeometry::RandomUnit, 0, true, &layout, seed).unwrap();
            let (acc, _) = p.evaluate(&LinearState::new(32, 1e-4)).unwrap();
            hits += acc * 16.0;
            total += 16.0;
        }
        let p = 1.0 / layout.values.len() as f64;
        let sd = (p * (1.0 - p) / total).sqrt();
        assert!((hits / total - p).abs() <= 3.0 * sd, "rate {}", hits / total);
    }

    #[test]
    fn unpadded_long_context_matches_capacity_cell() {
        let cfg = HeadConfig::default();
        let opts = SweepOptions { workers: 2, ..SweepOptions::default() };
        let kinds = [KernelKind::Vla, KernelKind::Linear];
        let cap = capacity_curve(&kinds, &cfg, &[8], &[1, 2], &opts).unwrap();
        let long = long_context_curve(&kinds, &cfg, 8, &[25], &[1, 2], &opts).unwrap();
        assert_eq!(cap, long);
    }

    #[test]
    fn fallback_switches_geometry_past_capacity() {
        let cfg = HeadConfig::with_dim(8);
        let strict = SweepOptions { workers: 1, ..SweepOptions::default() };
        assert!(capacity_curve(&[KernelKind::Vla], &cfg, &[4, 12], &[1], &strict).is_err());
        let lenient = SweepOptions { fallback_random: true, ..strict };
        let cells = capacity_curve(&[KernelKind::Vla], &cfg, &[4, 12], &[1], &lenient).unwrap();
        assert_eq!(cells[0].geometry, KeyGeometry::Orthonormal);
        assert_eq!(cells[1].geometry, KeyGeometry::RandomUnit);
    }

    #[test]
    fn short_lengths_rejected() {
        let cfg = HeadConfig::default();
        let opts = SweepOptions::default();
        assert!(long_context_curve(&[KernelKind::Vla], &cfg, 8, &[24], &[1], &opts).is_err());
    }
}
