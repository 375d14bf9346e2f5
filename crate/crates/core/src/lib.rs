//! Constrained caching patterns for diffusion-transformer sampling.
//!
//! * [`pattern`]: pattern constraints, enumeration, sampling and selection.
//! * [`schedule`]: turning a pattern into a per-step, per-layer plan.
//! * [`tinydit`]: a small deterministic model that executes plans.
//! * [`metrics`]: error curves and flop accounting.

pub mod cost;
pub mod error;
pub mod metrics;
pub mod pattern;
pub mod rng;
pub mod schedule;
pub mod tinydit;

pub use error::{Error, Result};
pub use metrics::{flops_estimate, relative_l1, ErrorCurve, FlopsReport};
pub use pattern::{
    activation_profile, check_constraints, enumerate_patterns, sample_patterns, select_best_pattern,
    CachingPattern, ConstraintSet, SearchConfig,
};
pub use schedule::{build_plan, ExecutionPlan, SelectiveConfig, StepAction};
pub use tinydit::{denoise_run, init_model, EngineOptions, ModelConfig, Simulator};
