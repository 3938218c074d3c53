use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{HeadConfig, KernelKind, PenaltyDirection};
use crate::stream::StreamSpec;
use crate::tasks::KeyGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Recall,
    Longctx,
    Stability,
    Jacobian,
    Bench,
    ScanCheck,
    BoundCheck,
    Gen,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Self::Recall,
        Self::Longctx,
        Self::Stability,
        Self::Jacobian,
        Self::Bench,
        Self::ScanCheck,
        Self::BoundCheck,
        Self::Gen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Recall => "recall",
            Self::Longctx => "longctx",
            Self::Stability => "stability",
            Self::Jacobian => "jacobian",
            Self::Bench => "bench",
            Self::ScanCheck => "scan-check",
            Self::BoundCheck => "bound-check",
            Self::Gen => "gen",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown subcommand '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown format '{other}' (csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenTask {
    Mqar,
    Copy,
}

impl FromStr for GenTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mqar" => Ok(Self::Mqar),
            "copy" => Ok(Self::Copy),
            other => Err(Error::Config(format!("unknown task '{other}' (mqar or copy)"))),
        }
    }
}

/// Fully resolved settings for one harness run.
///
/// `t` and `n` hold lists; subcommands that take a single value require a
/// one-element list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub kernels: Vec<KernelKind>,
    pub head: HeadConfig,
    pub t: Vec<usize>,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub geometry: KeyGeometry,
    pub fallback_random: bool,
    pub write_pads: bool,
    pub stream: StreamSpec,
    pub reps: usize,
    pub warmup: usize,
    pub task: GenTask,
}

/// Keys accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "kernel",
    "kernels",
    "T",
    "n",
    "d",
    "seed",
    "seeds",
    "workers",
    "out",
    "format",
    "geometry",
    "fallback",
    "write_pads",
    "stream",
    "reps",
    "warmup",
    "task",
    "d_h",
    "lambda0",
    "epsilon",
    "refresh_period",
    "refresh_eta",
    "normalize_alpha",
    "u_mode",
    "projection_seed",
    "delta_beta",
];

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items.into_iter().map(|s| s.parse().map_err(|_| format!("cannot parse '{s}'"))).collect()
}

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.trim().parse().map_err(|_| format!("cannot parse '{value}'"))
}

fn flag(value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

fn parsed<T: FromStr<Err = Error>>(value: &str) -> std::result::Result<T, String> {
    value.trim().parse().map_err(|e: Error| e.to_string())
}

impl RunConfig {
    /// Defaults for `command`, mirroring the published sweep grids.
    pub fn defaults(command: Command) -> Self {
        use KernelKind::*;
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut cfg = Self {
            command,
            kernels: vec![Vla, Linear, DeltaNet],
            head: HeadConfig::default(),
            t: vec![1000],
            n: vec![4, 8, 16, 24, 32, 48, 64, 96],
            d: vec![32, 64, 96, 128],
            seeds: vec![42, 123, 999],
            workers,
            out: None,
            format: OutputFormat::Csv,
            geometry: KeyGeometry::Orthonormal,
            fallback_random: true,
            write_pads: true,
            stream: StreamSpec::Gaussian,
            reps: 7,
            warmup: 2,
            task: GenTask::Mqar,
        };
        match command {
            Command::Recall => {}
            Command::Longctx => {
                cfg.n = vec![8];
                cfg.t = vec![64, 128, 256, 512];
            }
            Command::Stability | Command::BoundCheck => cfg.kernels = vec![Vla],
            Command::Jacobian => {
                cfg.kernels = vec![Vla];
                cfg.t = vec![25];
                cfg.head.u_mode = PenaltyDirection::Projected;
            }
            Command::Bench => {
                cfg.kernels = KernelKind::ALL.to_vec();
                cfg.t = vec![128, 256, 512, 1024, 2048];
                cfg.workers = 1;
            }
            Command::ScanCheck => {
                cfg.kernels = vec![Vla];
                cfg.t = vec![256];
            }
            Command::Gen => {
                cfg.n = vec![8];
                cfg.t = vec![25];
                cfg.seeds = vec![42];
            }
        }
        cfg
    }

    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let h = &mut self.head;
        match key {
            "kernel" | "kernels" => self.kernels = list(value)?,
            "T" => self.t = list(value)?,
            "n" => self.n = list(value)?,
            "d" => self.d = list(value)?,
            "seed" | "seeds" => self.seeds = list(value)?,
            "workers" => self.workers = scalar(value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "format" => self.format = parsed(value)?,
            "geometry" => self.geometry = parsed(value)?,
            "fallback" => self.fallback_random = flag(value)?,
            "write_pads" => self.write_pads = flag(value)?,
            "stream" => self.stream = parsed(value)?,
            "reps" => self.reps = scalar(value)?,
            "warmup" => self.warmup = scalar(value)?,
            "task" => self.task = parsed(value)?,
            "d_h" => h.d_h = scalar(value)?,
            "lambda0" => h.lambda0 = scalar(value)?,
            "epsilon" => h.epsilon = scalar(value)?,
            "refresh_period" => h.refresh_period = scalar(value)?,
            "refresh_eta" => h.refresh_eta = scalar(value)?,
            "normalize_alpha" => h.normalize_alpha = flag(value)?,
            "u_mode" => h.u_mode = parsed(value)?,
            "projection_seed" => h.projection_seed = scalar(value)?,
            "delta_beta" => h.delta_beta = scalar(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Apply a flat `key = value` file. Blank lines and `#` comments are
    /// ignored; errors name the file and line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| Error::Config(format!("{origin}:{}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let key = key.trim();
            if key == "command" {
                let cmd: Command = value.trim().parse().map_err(|e: Error| at(e.to_string()))?;
                if cmd != self.command {
                    return Err(at(format!("file is for '{cmd}', running '{}'", self.command)));
                }
                continue;
            }
            self.set(key, value).map_err(|m| at(format!("{key}: {m}")))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Apply `key=value` overrides from the command line.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (key, value) in pairs {
            self.set(key, value).map_err(|m| Error::Config(format!("--{key}: {m}")))?;
        }
        Ok(())
    }

    fn single(&self, name: &str, xs: &[usize]) -> Result<usize> {
        match xs {
            [x] => Ok(*x),
            _ => Err(Error::Config(format!("{} takes a single {name}, got {xs:?}", self.command))),
        }
    }

    pub fn single_t(&self) -> Result<usize> {
        self.single("T", &self.t)
    }

    pub fn single_n(&self) -> Result<usize> {
        self.single("n", &self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.head.validate()?;
        if self.kernels.is_empty() || self.seeds.is_empty() {
            return bad("kernels and seeds must be non-empty".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.t.contains(&0) || self.n.contains(&0) || self.d.contains(&0) {
            return bad("T, n and d values must be positive".into());
        }
        match self.command {
            Command::Recall => {}
            Command::Longctx => {
                let n = self.single_n()?;
                if let Some(t) = self.t.iter().find(|&&t| t < 3 * n + 1) {
                    return bad(format!("T={t} cannot hold {n} pairs (needs at least {})", 3 * n + 1));
                }
            }
            Command::Stability | Command::BoundCheck => {
                self.single_t()?;
                if let Some(k) = self.kernels.iter().find(|k| !k.is_recurrent()) {
                    return bad(format!("{k} has no recurrent state"));
                }
            }
            Command::Jacobian | Command::ScanCheck => {
                self.single_t()?;
            }
            Command::Bench => {
                if self.reps < 5 || self.warmup < 1 {
                    return bad(format!("bench needs reps >= 5 and warmup >= 1, got {} and {}", self.reps, self.warmup));
                }
            }
            Command::Gen => {
                let n = self.single_n()?;
                let t = self.single_t()?;
                if self.task == GenTask::Mqar && t < 3 * n + 1 {
                    return bad(format!("T={t} cannot hold {n} pairs (needs at least {})", 3 * n + 1));
                }
            }
        }
        if self.command == Command::ScanCheck && !self.head.normalize_alpha {
            return bad("scan-check needs normalize_alpha = true".into());
        }
        Ok(())
    }
}
