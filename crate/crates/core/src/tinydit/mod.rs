//! A small deterministic diffusion transformer.
//!
//! Each block applies three residual sub-modules in order (self-attention,
//! cross-attention to a fixed context, MLP), each of the form
//! `x + gate ⊙ f(modulate(norm(x)))` with shift/scale/gate produced from the
//! timestep embedding. The residual branch output is what the block cache
//! stores and replays.

mod block;
mod cache;
pub(crate) mod ops;
mod run;
mod tokens;
mod weights;

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use block::Engine;
pub use cache::{BlockCache, CacheEntry};
pub use run::{denoise_run, denoise_run_uncached, RunOutput, Simulator, Snapshots};
pub use tokens::{select_tokens, selection_size, token_importance, TokenSelection};
pub use weights::{init_model, LayerWeights, ModelWeights};

/// Token features, one row per token.
pub type FeatureMatrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubModule {
    SelfAttention,
    CrossAttention,
    Mlp,
}

impl SubModule {
    pub const ALL: [SubModule; 3] = [
        SubModule::SelfAttention,
        SubModule::CrossAttention,
        SubModule::Mlp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SubModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubModule::SelfAttention => "SA",
            SubModule::CrossAttention => "CA",
            SubModule::Mlp => "MLP",
        })
    }
}

/// Cumulative signal level `ᾱ_t` of the sampler, interpolated linearly from
/// the first (noisiest) to the last step; the update after the last step
/// targets `ᾱ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha_bar_first: f64,
    pub alpha_bar_last: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            alpha_bar_first: 0.05,
            alpha_bar_last: 0.98,
        }
    }
}

impl NoiseSchedule {
    /// `ᾱ` at step `t` of `steps` (1-based).
    pub fn alpha_bar(&self, t: usize, steps: usize) -> f64 {
        if t > steps {
            return 1.0;
        }
        if steps == 1 {
            return self.alpha_bar_first;
        }
        let frac = (t - 1) as f64 / (steps - 1) as f64;
        self.alpha_bar_first + frac * (self.alpha_bar_last - self.alpha_bar_first)
    }

    /// Diffusion time fed to the timestep embedding.
    pub fn timestep(&self, t: usize, steps: usize) -> f64 {
        1000.0 * (1.0 - self.alpha_bar(t, steps))
    }

    fn validate(&self) -> Result<()> {
        let ok = |a: f64| a > 0.0 && a < 1.0;
        if !ok(self.alpha_bar_first) || !ok(self.alpha_bar_last) {
            return Err(Error::config("alpha_bar values must lie in (0, 1)"));
        }
        if self.alpha_bar_first > self.alpha_bar_last {
            return Err(Error::config("alpha_bar must not decrease over the run"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub tokens: usize,
    pub context_tokens: usize,
    pub mlp_ratio: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: NoiseSchedule,
}

impl ModelConfig {
    /// L=8, d=64, h=4, N=16, T=20, seed 42.
    pub fn reference() -> Self {
        Self {
            layers: 8,
            dim: 64,
            heads: 4,
            tokens: 16,
            context_tokens: 8,
            mlp_ratio: 4.0,
            steps: 20,
            seed: 42,
            schedule: NoiseSchedule::default(),
        }
    }

    pub fn hidden(&self) -> usize {
        ((self.mlp_ratio * self.dim as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("tokens", self.tokens),
            ("context_tokens", self.context_tokens),
            ("steps", self.steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::config("dim must be even for the sinusoidal embedding"));
        }
        self.schedule.validate()
    }
}

/// What selective steps do with self-attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPolicy {
    /// Replay the cached self-attention branch; rank tokens by the value
    /// norms captured when that branch was last computed.
    #[default]
    ReuseCachedValues,
    /// Replay the cached branch but rank tokens by a fresh value projection
    /// of the current input.
    ReuseFreshValues,
    /// Recompute self-attention over all tokens and refresh its cache.
    Recompute,
}

/// Engine switches that change numerics but not the plan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    #[serde(default)]
    pub attention: AttentionPolicy,
    /// Re-gate replayed branches with the current step's gate instead of
    /// adding them as stored.
    #[serde(default)]
    pub remodulate: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_valid() {
        let c = ModelConfig::reference();
        c.validate().unwrap();
        assert_eq!(c.hidden(), 256);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ModelConfig::reference();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::reference();
        c.tokens = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::reference();
        c.schedule.alpha_bar_last = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule_is_linear() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(1, 20), 0.05);
        assert!((s.alpha_bar(20, 20) - 0.98).abs() < 1e-15);
        assert_eq!(s.alpha_bar(21, 20), 1.0);
        let mid = s.alpha_bar(2, 3);
        assert!((mid - 0.515).abs() < 1e-12);
    }
}
