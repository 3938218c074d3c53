use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the penalty direction `u_t` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyDirection {
    /// `u = k̂`, the unit-normalised feature key.
    UnitKey,
    /// `u = k̂ / √d_h`.
    ScaledKey,
    /// `u = normalize(W_u k_raw)` with a fixed seeded Gaussian `W_u`.
    Projected,
    /// `u = normalize(W_u k_raw) / √d_h`.
    ProjectedScaled,
    /// `u = 0`: the penalty inverse never moves.
    Zero,
}

impl PenaltyDirection {
    pub const ALL: [PenaltyDirection; 5] = [
        Self::UnitKey,
        Self::ScaledKey,
        Self::Projected,
        Self::ProjectedScaled,
        Self::Zero,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UnitKey => "unit-key",
            Self::ScaledKey => "scaled-key",
            Self::Projected => "projected",
            Self::ProjectedScaled => "projected-scaled",
            Self::Zero => "zero",
        }
    }

    pub fn uses_projection(self) -> bool {
        matches!(self, Self::Projected | Self::ProjectedScaled)
    }
}

impl fmt::Display for PenaltyDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for PenaltyDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown u-mode '{s}'")))
    }
}

/// Dimensional and numeric constants shared by every memory kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_h: usize,
    /// Initial ridge; the penalty inverse starts at `I / lambda0`.
    pub lambda0: f64,
    /// Floor for the Sherman-Morrison denominator and the output normaliser.
    pub epsilon: f64,
    /// Steps between identity refreshes of the penalty inverse, 0 disables.
    pub refresh_period: usize,
    pub refresh_eta: f64,
    /// Unit-normalise the write direction `A k̂`.
    pub normalize_alpha: bool,
    pub u_mode: PenaltyDirection,
    /// Seed for the fixed penalty projection `W_u`.
    pub projection_seed: u64,
    /// DeltaNet decay gate.
    pub delta_beta: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_h: 32,
            lambda0: 0.1,
            epsilon: 1e-4,
            refresh_period: 20,
            refresh_eta: 1e-3,
            normalize_alpha: true,
            u_mode: PenaltyDirection::UnitKey,
            projection_seed: 0x5eed_0001,
            delta_beta: 0.9,
        }
    }
}

impl HeadConfig {
    pub fn with_dim(d_h: usize) -> Self {
        Self { d_h, ..Self::default() }
    }

    /// Same configuration with the identity refresh switched off, which keeps
    /// the penalty inverse equal to the exact inverse of the penalty sum.
    pub fn without_refresh(self) -> Self {
        Self { refresh_period: 0, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_h == 0 {
            return bad("d_h must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.refresh_eta >= 0.0 && self.refresh_eta.is_finite()) {
            return bad(format!("refresh_eta must be non-negative, got {}", self.refresh_eta));
        }
        if !(self.delta_beta > 0.0 && self.delta_beta <= 1.0) {
            return bad(format!("delta_beta must lie in (0, 1], got {}", self.delta_beta));
        }
        Ok(())
    }
}
