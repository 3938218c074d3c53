use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vla_core::harness::{self, Command, RunConfig, EXIT_CONFIG};

/// Experiments for the variational linear attention memory and its baselines.
#[derive(Parser, Debug)]
#[command(name = "vla", version = &*harness::version_string().leak(), about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Training-free recall accuracy against the number of stored pairs.
    Recall,
    /// Recall at fixed pairs against padded sequence length.
    Longctx,
    /// Per-step state and penalty norms on a synthetic stream.
    Stability,
    /// Gradient-chain magnification through the step Jacobians.
    Jacobian,
    /// Forward latency and throughput against sequence length.
    Bench,
    /// Parallel scan against the sequential recurrence.
    ScanCheck,
    /// Telescoped state-norm bound on every prefix.
    BoundCheck,
    /// Write MQAR or copy instances, one per line.
    Gen,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Recall => Command::Recall,
            Sub::Longctx => Command::Longctx,
            Sub::Stability => Command::Stability,
            Sub::Jacobian => Command::Jacobian,
            Sub::Bench => Command::Bench,
            Sub::ScanCheck => Command::ScanCheck,
            Sub::BoundCheck => Command::BoundCheck,
            Sub::Gen => Command::Gen,
        }
    }
}

#[derive(Args, Debug)]
struct Opts {
    /// Flat `key = value` file applied before any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Comma-separated kernels: vla, linear, deltanet, softmax.
    #[arg(long, alias = "kernels", global = true)]
    kernel: Option<String>,
    /// Sequence length, or a comma-separated list.
    #[arg(long = "T", global = true)]
    t: Option<String>,
    /// Number of pairs, or a comma-separated list.
    #[arg(long, global = true)]
    n: Option<String>,
    /// Head dimensions for `jacobian`.
    #[arg(long, global = true)]
    d: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, alias = "seeds", global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    workers: Option<String>,
    /// Result file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<String>,
    /// csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
    #[arg(long = "d-h", global = true)]
    d_h: Option<String>,
    /// unit-key, scaled-key, projected, projected-scaled or zero.
    #[arg(long = "u-mode", global = true)]
    u_mode: Option<String>,
    /// orthonormal or random-unit.
    #[arg(long, global = true)]
    geometry: Option<String>,
    /// gaussian or cyclic-pairs:N.
    #[arg(long, global = true)]
    stream: Option<String>,
    #[arg(long, global = true)]
    reps: Option<String>,
    #[arg(long, global = true)]
    warmup: Option<String>,
    /// mqar or copy.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Suppress the terminal summary.
    #[arg(long, short, global = true)]
    quiet: bool,
}

impl Opts {
    fn pairs(&self) -> Result<Vec<(&str, &str)>, String> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got '{s}'"))?;
            out.push((k.trim(), v));
        }
        let named = [
            ("kernels", &self.kernel),
            ("T", &self.t),
            ("n", &self.n),
            ("d", &self.d),
            ("seeds", &self.seed),
            ("workers", &self.workers),
            ("out", &self.out),
            ("format", &self.format),
            ("d_h", &self.d_h),
            ("u_mode", &self.u_mode),
            ("geometry", &self.geometry),
            ("stream", &self.stream),
            ("reps", &self.reps),
            ("warmup", &self.warmup),
            ("task", &self.task),
        ];
        out.extend(named.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))));
        Ok(out)
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::defaults(cli.command.into());
    if let Some(path) = &cli.opts.config {
        cfg.apply_file(path).map_err(|e| e.to_string())?;
    }
    cfg.apply_overrides(cli.opts.pairs()?).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let outcome = harness::run(&cfg);
    if !cli.opts.quiet {
        for line in &outcome.summary {
            eprintln!("{line}");
        }
    }
    if let Some(err) = &outcome.error {
        eprintln!("error: {err}");
    }
    ExitCode::from(outcome.status as u8)
}
