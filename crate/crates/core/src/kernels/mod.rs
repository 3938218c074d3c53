//! Attention memories behind a single write/read interface.
//!
//! Every recurrent state stores `S` value-by-key: it maps key space to value
//! space and is read as `S φ(q)`. The classic linear-attention recurrence is
//! usually written `φ(k) vᵀ`; here it is the transpose `v φ(k)ᵀ`, so all four
//! kernels share one read path.

mod config;
mod delta;
mod linear;
mod sherman_morrison;
mod softmax;
mod vla;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{HeadConfig, PenaltyDirection};
pub use delta::DeltaState;
pub use linear::LinearState;
pub use sherman_morrison::{sm_update, sm_update_in_place};
pub use softmax::{softmax_forward, softmax_weights, SoftmaxCache};
pub use vla::{residual_write, VlaState};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// `elu(x) + 1`, applied entrywise. Strictly positive.
pub fn feature_map(x: &[f64]) -> Vector {
    x.iter().map(|&v| if v > 0.0 { v + 1.0 } else { v.exp() }).collect::<Vec<_>>().into()
}

/// How a key or query enters a memory.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    /// A raw projection; the kernel applies [`feature_map`].
    Raw(&'a [f64]),
    /// Already in feature space; used as-is.
    Feature(&'a [f64]),
}

impl Key<'_> {
    pub fn len(&self) -> usize {
        match self {
            Key::Raw(k) | Key::Feature(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature vector for this key.
    pub fn features(&self) -> Vector {
        match self {
            Key::Raw(k) => feature_map(k),
            Key::Feature(k) => Vector::from(*k),
        }
    }

    /// The vector a learned penalty projection would see.
    pub fn source(&self) -> &[f64] {
        match self {
            Key::Raw(k) | Key::Feature(k) => k,
        }
    }
}

/// Per-token diagnostics from a write.
#[derive(Debug, Clone)]
pub struct WriteRecord {
    /// Unit-normalised feature key.
    pub k_hat: Vector,
    /// Unit-normalised write direction.
    pub alpha_hat: Vector,
    /// Write direction as applied (equals `alpha_hat` unless unnormalised).
    pub write_dir: Vector,
    /// Prediction residual `v - S k̂` (the value itself for pure accumulation).
    pub residual: Vector,
    /// `‖S_t - S_{t-1}‖_F`.
    pub update_norm: f64,
    /// Sherman-Morrison denominator, 1 for kernels without a penalty.
    pub delta: f64,
}

impl WriteRecord {
    pub fn residual_norm(&self) -> f64 {
        self.residual.norm()
    }

    /// `k̂ᵀ α̂`.
    pub fn alignment(&self) -> f64 {
        self.k_hat.dot(&self.alpha_hat)
    }
}

/// Result of one full step: write then read.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub o: Vector,
    pub residual_norm: f64,
    pub alignment: f64,
    pub delta: f64,
}

/// Common interface of the four memories.
pub trait Memory: Send {
    fn kind(&self) -> KernelKind;
    fn dim(&self) -> usize;
    fn write(&mut self, key: Key<'_>, v: &[f64]) -> Result<WriteRecord>;
    /// Read without mutating the memory.
    fn read(&self, q: Key<'_>) -> Result<Vector>;
    /// The recurrent state `S`, if the kernel has one.
    fn state(&self) -> Option<&Matrix>;
    /// The penalty inverse `A`, VLA only.
    fn penalty_inverse(&self) -> Option<&Matrix> {
        None
    }

    fn step(&mut self, k_raw: &[f64], v: &[f64], q_raw: &[f64]) -> Result<StepOutput> {
        let rec = self.write(Key::Raw(k_raw), v)?;
        let o = self.read(Key::Raw(q_raw))?;
        Ok(StepOutput {
            o,
            residual_norm: rec.residual_norm(),
            alignment: rec.alignment(),
            delta: rec.delta,
        })
    }
}

/// `S φ(q) / max(φ(q)ᵀ z, ε)`.
pub(crate) fn normalised_read(s: &Matrix, z_key: &[f64], q_feat: &[f64], epsilon: f64) -> Vector {
    let denom = crate::linalg::dot(q_feat, z_key).max(epsilon);
    s.mul_vec(q_feat).scaled(1.0 / denom)
}

pub(crate) fn check_pair(d: usize, key: &Key<'_>, v: &[f64]) -> Result<()> {
    crate::error::ensure_dim(d, key.len())?;
    crate::error::ensure_dim(d, v.len())
}

/// The attention kernels available to experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Vla,
    Linear,
    DeltaNet,
    Softmax,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [Self::Vla, Self::Linear, Self::DeltaNet, Self::Softmax];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vla => "vla",
            Self::Linear => "linear",
            Self::DeltaNet => "deltanet",
            Self::Softmax => "softmax",
        }
    }

    /// Linear in sequence length.
    pub fn is_recurrent(self) -> bool {
        !matches!(self, Self::Softmax)
    }

    pub fn build(self, cfg: &HeadConfig) -> Result<Box<dyn Memory>> {
        cfg.validate()?;
        Ok(match self {
            Self::Vla => Box::new(VlaState::new(cfg)?),
            Self::Linear => Box::new(LinearState::new(cfg.d_h, cfg.epsilon)),
            Self::DeltaNet => Box::new(DeltaState::new(cfg.d_h, cfg.delta_beta, cfg.epsilon)?),
            Self::Softmax => Box::new(SoftmaxCache::new(cfg.d_h)),
        })
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vla" => Ok(Self::Vla),
            "linear" => Ok(Self::Linear),
            "deltanet" | "delta" => Ok(Self::DeltaNet),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }
}
