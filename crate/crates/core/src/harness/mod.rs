//! Experiment harness: configuration, dispatch, timing and result files.

pub mod bench;
pub mod config;
pub mod output;

use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use bench::{fit_loglog_slope, forward, measure_latency, BenchRecord};
pub use config::{Command, GenTask, OutputFormat, RunConfig};
pub use output::{read_rows, version_string, Meta, Parsed};

use crate::diagnostics::{bound_check, chain_magnification, run_norm_trace};
use crate::error::Result;
use crate::kernels::KernelKind;
use crate::scan::scan_check;
use crate::tasks::{
    capacity_curve, gen_copy, gen_mqar, long_context_curve, CurveCell, KeyGeometry, SweepOptions, TokenLayout,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_EXPERIMENT: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

/// Relative per-position tolerance for `scan-check`.
pub const SCAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub kernel: KernelKind,
    pub geometry: KeyGeometry,
    pub n_pairs: usize,
    #[serde(rename = "T")]
    pub total_len: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
    pub margin: f64,
}

impl From<CurveCell> for CurveRow {
    fn from(c: CurveCell) -> Self {
        Self {
            kernel: c.kernel,
            geometry: c.geometry,
            n_pairs: c.n_pairs,
            total_len: c.total_len,
            seeds: c.seeds,
            mean: c.mean,
            std: c.std,
            margin: c.margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub kernel: KernelKind,
    pub seed: u64,
    pub t: u64,
    pub s_norm: f64,
    pub a_norm: f64,
    pub residual: f64,
    pub alignment: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub d_h: usize,
    pub seed: u64,
    pub normalized: bool,
    #[serde(rename = "T")]
    pub steps: usize,
    /// Empty on overflow.
    pub ratio: Option<f64>,
    pub log10_ratio: f64,
    pub overflow: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub alignment_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    pub workers: usize,
    pub max_rel_dev: f64,
    pub compositions: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub kernel: KernelKind,
    pub seed: u64,
    #[serde(rename = "T")]
    pub t: usize,
    pub applicable: bool,
    pub checked: usize,
    pub violations: usize,
    pub max_slack: f64,
    pub min_slack: f64,
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: i32,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
    pub rows: usize,
    pub error: Option<String>,
}

/// Rows collected so far plus the status of the experiment that made them.
struct Partial<R> {
    rows: Vec<R>,
    summary: Vec<String>,
    check_failed: bool,
}

impl<R> Partial<R> {
    fn new() -> Self {
        Self { rows: Vec::new(), summary: Vec::new(), check_failed: false }
    }
}

/// Validate `cfg`, run its subcommand and write the result file and sidecar.
pub fn run(cfg: &RunConfig) -> Outcome {
    if let Err(e) = cfg.validate() {
        return Outcome { status: EXIT_CONFIG, summary: Vec::new(), rows: 0, error: Some(e.to_string()) };
    }
    let started = Instant::now();
    let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let emitted = match cfg.command {
        Command::Recall => finish(cfg, "recall/1", recall(cfg)),
        Command::Longctx => finish(cfg, "longctx/1", longctx(cfg)),
        Command::Stability => finish(cfg, "trace/1", stability(cfg)),
        Command::Jacobian => finish(cfg, "jacobian/1", jacobian(cfg)),
        Command::Bench => finish(cfg, "bench/1", bench_run(cfg)),
        Command::ScanCheck => finish(cfg, "scan-check/1", scan(cfg)),
        Command::BoundCheck => finish(cfg, "bound-check/1", bound(cfg)),
        Command::Gen => gen(cfg),
    };
    let (schema, mut outcome) = match emitted {
        Ok(x) => x,
        Err(e) => {
            return Outcome { status: EXIT_EXPERIMENT, summary: Vec::new(), rows: 0, error: Some(e.to_string()) }
        }
    };
    if let Some(path) = &cfg.out {
        let meta = Meta {
            schema,
            version: version_string(),
            config: cfg.clone(),
            rows: outcome.rows,
            truncated: outcome.error.clone(),
            started_unix_s,
            wall_clock_s: started.elapsed().as_secs_f64(),
            hardware: output::Hardware::current(),
        };
        if let Err(e) = output::write_meta(path, &meta) {
            outcome.status = EXIT_EXPERIMENT;
            outcome.error.get_or_insert(e.to_string());
        }
    }
    outcome
}

fn sink(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(std::io::BufWriter::new(std::fs::File::create(path)?))
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Write whatever rows exist; an experiment error becomes a truncation marker
/// and exit status 2.
fn finish<R: Serialize>(
    cfg: &RunConfig,
    schema: &str,
    (partial, result): (Partial<R>, Result<()>),
) -> Result<(String, Outcome)> {
    let error = result.err().map(|e| e.to_string());
    let mut w = sink(cfg)?;
    output::write_rows(&mut w, schema, &partial.rows, cfg.format, error.as_deref())?;
    w.flush()?;
    let status = if error.is_some() {
        EXIT_EXPERIMENT
    } else if partial.check_failed {
        EXIT_CHECK
    } else {
        EXIT_OK
    };
    Ok((schema.to_string(), Outcome { status, summary: partial.summary, rows: partial.rows.len(), error }))
}

type Run<R> = (Partial<R>, Result<()>);

fn collect<R>(f: impl FnOnce(&mut Partial<R>) -> Result<()>) -> Run<R> {
    let mut p = Partial::new();
    let r = f(&mut p);
    (p, r)
}

fn sweep_options(cfg: &RunConfig) -> SweepOptions {
    SweepOptions {
        geometry: cfg.geometry,
        fallback_random: cfg.fallback_random,
        write_pads: cfg.write_pads,
        workers: cfg.workers,
    }
}

fn curve_line(c: &CurveRow) -> String {
    format!(
        "{:<9} n={:<3} T={:<4} {:<12} acc={:.3} ± {:.3}",
        c.kernel, c.n_pairs, c.total_len, c.geometry, c.mean, c.std
    )
}

fn recall(cfg: &RunConfig) -> Run<CurveRow> {
    collect(|p| {
        let opts = sweep_options(cfg);
        for &kind in &cfg.kernels {
            for &n in &cfg.n {
                for cell in capacity_curve(&[kind], &cfg.head, &[n], &cfg.seeds, &opts)? {
                    let row = CurveRow::from(cell);
                    p.summary.push(curve_line(&row));
                    p.rows.push(row);
                }
            }
        }
        Ok(())
    })
}

fn longctx(cfg: &RunConfig) -> Run<CurveRow> {
    collect(|p| {
        let opts = sweep_options(cfg);
        let n = cfg.single_n()?;
        for &kind in &cfg.kernels {
            for &t in &cfg.t {
                for cell in long_context_curve(&[kind], &cfg.head, n, &[t], &cfg.seeds, &opts)? {
                    let row = CurveRow::from(cell);
                    p.summary.push(curve_line(&row));
                    p.rows.push(row);
                }
            }
        }
        Ok(())
    })
}

fn stability(cfg: &RunConfig) -> Run<TraceRow> {
    collect(|p| {
        let t = cfg.single_t()?;
        for &kind in &cfg.kernels {
            for &seed in &cfg.seeds {
                let trace = run_norm_trace(kind, &cfg.head, cfg.stream, t, seed)?;
                let last = trace.last().expect("trace has an initial row");
                p.summary.push(format!(
                    "{kind:<9} seed={seed:<5} T={t} ‖S‖={:.4} ‖A‖={:.4} (start ‖A‖={:.2})",
                    last.s_norm, last.a_norm, trace[0].a_norm
                ));
                p.rows.extend(trace.into_iter().map(|r| TraceRow {
                    kernel: kind,
                    seed,
                    t: r.t,
                    s_norm: r.s_norm,
                    a_norm: r.a_norm,
                    residual: r.residual,
                    alignment: r.alignment,
                    delta: r.delta,
                }));
            }
        }
        Ok(())
    })
}

fn jacobian(cfg: &RunConfig) -> Run<ChainRow> {
    collect(|p| {
        let steps = cfg.single_t()?;
        for &d in &cfg.d {
            let head = crate::kernels::HeadConfig { d_h: d, ..cfg.head };
            for &seed in &cfg.seeds {
                for normalize in [true, false] {
                    let r = chain_magnification(&head, steps, normalize, seed)?;
                    let (sigma_min, sigma_max) = r.sigma_range();
                    p.summary.push(format!(
                        "d_h={d:<4} seed={seed:<5} normalized={normalize:<5} magnification=10^{:.2} σ∈[{sigma_min:.4}, {sigma_max:.4}]",
                        r.log10_ratio
                    ));
                    p.rows.push(ChainRow {
                        d_h: d,
                        seed,
                        normalized: normalize,
                        steps,
                        ratio: (!r.overflow).then_some(r.ratio),
                        log10_ratio: r.log10_ratio,
                        overflow: r.overflow,
                        sigma_min,
                        sigma_max,
                        alignment_min: r.min_alignment(),
                    });
                }
            }
        }
        Ok(())
    })
}

fn bench_run(cfg: &RunConfig) -> Run<BenchRecord> {
    collect(|p| {
        let seed = cfg.seeds[0];
        for &kind in &cfg.kernels {
            let start = p.rows.len();
            for &t in &cfg.t {
                let rec = measure_latency(kind, &cfg.head, t, cfg.reps, cfg.warmup, seed)?;
                p.summary.push(format!(
                    "{kind:<9} T={t:<5} median={:.3} ms [{:.3}, {:.3}] {:.0} tok/s",
                    rec.median_ms, rec.p10_ms, rec.p90_ms, rec.tokens_per_s
                ));
                p.rows.push(rec);
            }
            if let Ok(slope) = fit_loglog_slope(&p.rows[start..]) {
                p.summary.push(format!("{kind:<9} log-log slope {slope:.3}"));
            }
        }
        Ok(())
    })
}

fn scan(cfg: &RunConfig) -> Run<ScanRow> {
    collect(|p| {
        let t = cfg.single_t()?;
        for &seed in &cfg.seeds {
            let tokens = cfg.stream.generate(cfg.head.d_h, t, seed);
            let c = scan_check(&cfg.head, &tokens, cfg.workers)?;
            let pass = c.max_rel_dev <= SCAN_TOL;
            p.check_failed |= !pass;
            p.summary.push(format!(
                "scan-check T={t} seed={seed} workers={} max_rel_dev={:.3e} compositions={} {}",
                c.workers,
                c.max_rel_dev,
                c.compositions,
                if pass { "PASS" } else { "FAIL" }
            ));
            p.rows.push(ScanRow { seed, t, workers: c.workers, max_rel_dev: c.max_rel_dev, compositions: c.compositions, pass });
        }
        Ok(())
    })
}

fn bound(cfg: &RunConfig) -> Run<BoundRow> {
    collect(|p| {
        let t = cfg.single_t()?;
        for &kind in &cfg.kernels {
            for &seed in &cfg.seeds {
                let trace = run_norm_trace(kind, &cfg.head, cfg.stream, t, seed)?;
                let r = bound_check(&trace, kind);
                let failed = r.applicable && r.violations > 0;
                p.check_failed |= failed;
                p.summary.push(format!(
                    "bound-check {kind} seed={seed} T={t} violations={} min_slack={:.3e} {}",
                    r.violations,
                    r.min_slack,
                    match (r.applicable, failed) {
                        (false, _) => "N/A",
                        (true, false) => "PASS",
                        (true, true) => "FAIL",
                    }
                ));
                p.rows.push(BoundRow {
                    kernel: kind,
                    seed,
                    t,
                    applicable: r.applicable,
                    checked: r.checked,
                    violations: r.violations,
                    max_slack: r.max_slack,
                    min_slack: r.min_slack,
                });
            }
        }
        Ok(())
    })
}

/// Instance lines, one per seed.
fn gen(cfg: &RunConfig) -> Result<(String, Outcome)> {
    let layout = TokenLayout::default();
    let (n, t) = (cfg.single_n()?, cfg.single_t()?);
    let mut lines = Vec::new();
    let mut error = None;
    for &seed in &cfg.seeds {
        let line = match cfg.task {
            GenTask::Mqar => gen_mqar(n, t, &layout, seed).map(|m| m.to_line()),
            GenTask::Copy => gen_copy(n, &layout, seed).map(|c| c.to_line()),
        };
        match line {
            Ok(l) => lines.push(l),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let mut w = sink(cfg)?;
    for l in &lines {
        writeln!(w, "{l}")?;
    }
    if let Some(e) = &error {
        writeln!(w, "#truncated={e}")?;
    }
    w.flush()?;
    let schema = match cfg.task {
        GenTask::Mqar => "instances-mqar/1",
        GenTask::Copy => "instances-copy/1",
    };
    let status = if error.is_some() { EXIT_EXPERIMENT } else { EXIT_OK };
    Ok((schema.to_string(), Outcome { status, summary: Vec::new(), rows: lines.len(), error }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_out(dir: &tempfile::TempDir, name: &str) -> std::path::PathBuf {
        dir.path().join(name)
    }

    #[test]
    fn stability_file_starts_at_initial_penalty_norm() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Command::Stability);
        cfg.t = vec![50];
        cfg.seeds = vec![1];
        cfg.out = Some(temp_out(&dir, "trace.csv"));
        let out = run(&cfg);
        assert_eq!(out.status, EXIT_OK, "{:?}", out.error);
        let parsed: Parsed<TraceRow> = read_rows(cfg.out.as_ref().unwrap()).unwrap();
        assert_eq!(parsed.schema, "trace/1");
        assert_eq!(parsed.rows.len(), 51);
        assert!((parsed.rows[0].a_norm - 56.57).abs() < 0.01);
        assert!(output::meta_path(cfg.out.as_ref().unwrap()).exists());
    }

    #[test]
    fn identical_configs_give_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Command::Recall);
        cfg.n = vec![4, 8];
        cfg.seeds = vec![1, 2];
        cfg.workers = 2;
        let mut bytes = Vec::new();
        for (i, format) in [OutputFormat::Csv, OutputFormat::Csv, OutputFormat::Json, OutputFormat::Json]
            .into_iter()
            .enumerate()
        {
            cfg.format = format;
            cfg.out = Some(temp_out(&dir, &format!("r{i}")));
            assert_eq!(run(&cfg).status, EXIT_OK);
            bytes.push(std::fs::read(cfg.out.as_ref().unwrap()).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        assert_eq!(bytes[2], bytes[3]);
        let csv: Parsed<CurveRow> = read_rows(&temp_out(&dir, "r0")).unwrap();
        let json: Parsed<CurveRow> = read_rows(&temp_out(&dir, "r2")).unwrap();
        assert_eq!(csv.rows, json.rows);
    }

    #[test]
    fn failing_experiment_keeps_partial_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Command::Recall);
        cfg.kernels = vec![KernelKind::Vla];
        cfg.n = vec![4, 40];
        cfg.seeds = vec![1];
        cfg.fallback_random = false;
        cfg.out = Some(temp_out(&dir, "partial.csv"));
        let out = run(&cfg);
        assert_eq!(out.status, EXIT_EXPERIMENT);
        let parsed: Parsed<CurveRow> = read_rows(cfg.out.as_ref().unwrap()).unwrap();
        assert_eq!(parsed.rows.len(), 1);
        assert!(parsed.truncated.unwrap().contains("orthonormal"));
    }

    #[test]
    fn invalid_config_is_status_one() {
        let mut cfg = RunConfig::defaults(Command::ScanCheck);
        cfg.t = vec![1, 2];
        assert_eq!(run(&cfg).status, EXIT_CONFIG);
    }

    #[test]
    fn scan_check_reports_pass() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Command::ScanCheck);
        cfg.head.d_h = 8;
        cfg.seeds = vec![3];
        cfg.out = Some(temp_out(&dir, "scan.csv"));
        let out = run(&cfg);
        assert_eq!(out.status, EXIT_OK);
        assert!(out.summary[0].ends_with("PASS"));
    }

    #[test]
    fn gen_lines_parse_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::defaults(Command::Gen);
        cfg.seeds = vec![1, 2, 3];
        cfg.out = Some(temp_out(&dir, "inst.tsv"));
        assert_eq!(run(&cfg).status, EXIT_OK);
        let text = std::fs::read_to_string(cfg.out.as_ref().unwrap()).unwrap();
        let parsed: Vec<_> = text.lines().map(|l| crate::tasks::parse_line(l).unwrap()).collect();
        assert_eq!(parsed.len(), 3);
    }
}
