//! Execution plans: which (step, layer) cells compute fully, compute
//! selectively, or replay the cache.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::CachingPattern;

/// Selective-computation knobs for cached steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectiveConfig {
    /// Fraction of the deepest layers recomputed on selective steps.
    pub layer_ratio: f64,
    /// Fraction of tokens recomputed in cross-attention and MLP.
    pub token_ratio: f64,
    pub total_layers: usize,
}

impl SelectiveConfig {
    pub fn new(layer_ratio: f64, token_ratio: f64, total_layers: usize) -> Result<Self> {
        let cfg = Self {
            layer_ratio,
            token_ratio,
            total_layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.layer_ratio > 0.0 && self.layer_ratio <= 1.0) {
            return Err(Error::config(format!(
                "layer_ratio {} must lie in (0, 1]",
                self.layer_ratio
            )));
        }
        if !(self.token_ratio > 0.0 && self.token_ratio <= 1.0) {
            return Err(Error::config(format!(
                "token_ratio {} must lie in (0, 1]",
                self.token_ratio
            )));
        }
        if self.total_layers == 0 {
            return Err(Error::config("total_layers must be at least 1"));
        }
        Ok(())
    }

    /// Number of recomputed layers, `max(1, round(r·L))` with halves rounded up.
    pub fn depth(&self) -> usize {
        let d = (self.layer_ratio * self.total_layers as f64 + 0.5).floor() as usize;
        d.clamp(1, self.total_layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepAction {
    FullCompute,
    SelectiveCompute,
    CacheOnly,
}

impl StepAction {
    pub fn name(self) -> &'static str {
        match self {
            StepAction::FullCompute => "FullCompute",
            StepAction::SelectiveCompute => "SelectiveCompute",
            StepAction::CacheOnly => "CacheOnly",
        }
    }
}

impl fmt::Display for StepAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Start of the zero block containing `t`: one past the latest activation at
/// or before `t`, or 1 if there is none. Activated steps map to themselves.
pub fn zero_block_start(pattern: &CachingPattern, t: usize) -> Result<usize> {
    if t == 0 || t > pattern.len() {
        return Err(Error::argument(format!(
            "step {t} outside 1..={}",
            pattern.len()
        )));
    }
    if pattern.is_active(t) {
        return Ok(t);
    }
    Ok((1..t)
        .rev()
        .find(|&tau| pattern.is_active(tau))
        .map_or(1, |tau| tau + 1))
}

/// Cached steps at even offsets (2, 4, …) inside their zero block.
pub fn selective_steps(pattern: &CachingPattern) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut block_start = 1;
    for t in 1..=pattern.len() {
        if pattern.is_active(t) {
            block_start = t + 1;
        } else if (t - block_start + 1) % 2 == 0 {
            out.insert(t);
        }
    }
    out
}

/// The `D` deepest layers, 1-based with layer `L` deepest.
pub fn selective_layers(cfg: &SelectiveConfig) -> BTreeSet<usize> {
    let l = cfg.total_layers;
    (l - cfg.depth() + 1..=l).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionPlan {
    steps: usize,
    layers: usize,
    actions: Vec<StepAction>,
    /// Fraction of tokens recomputed in selective cells.
    token_ratio: f64,
    selective_steps: BTreeSet<usize>,
    selective_layers: BTreeSet<usize>,
}

/// Plan for `pattern` with selective computation injected into its zero
/// blocks.
pub fn build_plan(pattern: &CachingPattern, cfg: &SelectiveConfig) -> ExecutionPlan {
    let steps_set = selective_steps(pattern);
    let layers_set = selective_layers(cfg);
    let mut plan = ExecutionPlan::assemble(pattern, cfg.total_layers, steps_set, layers_set);
    plan.token_ratio = cfg.token_ratio;
    plan
}

/// Pure caching: activations compute everything, every other step replays.
pub fn build_caching_plan(pattern: &CachingPattern, layers: usize) -> ExecutionPlan {
    ExecutionPlan::assemble(pattern, layers, BTreeSet::new(), BTreeSet::new())
}

impl ExecutionPlan {
    fn assemble(
        pattern: &CachingPattern,
        layers: usize,
        selective_steps: BTreeSet<usize>,
        selective_layers: BTreeSet<usize>,
    ) -> Self {
        let steps = pattern.len();
        let mut actions = Vec::with_capacity(steps * layers);
        for t in 1..=steps {
            for l in 1..=layers {
                actions.push(if pattern.is_active(t) {
                    StepAction::FullCompute
                } else if selective_steps.contains(&t) && selective_layers.contains(&l) {
                    StepAction::SelectiveCompute
                } else {
                    StepAction::CacheOnly
                });
            }
        }
        Self {
            steps,
            layers,
            actions,
            token_ratio: 1.0,
            selective_steps,
            selective_layers,
        }
    }

    pub fn full(steps: usize, layers: usize) -> Self {
        Self {
            steps,
            layers,
            actions: vec![StepAction::FullCompute; steps * layers],
            token_ratio: 1.0,
            selective_steps: BTreeSet::new(),
            selective_layers: BTreeSet::new(),
        }
    }

    /// Arbitrary per-cell plan, row-major over steps.
    pub fn from_actions(steps: usize, layers: usize, actions: Vec<StepAction>) -> Result<Self> {
        if steps == 0 || layers == 0 || actions.len() != steps * layers {
            return Err(Error::config(format!(
                "{} actions do not fill a {steps}x{layers} plan",
                actions.len()
            )));
        }
        let mut selective_steps = BTreeSet::new();
        let mut selective_layers = BTreeSet::new();
        for (i, a) in actions.iter().enumerate() {
            if *a == StepAction::SelectiveCompute {
                selective_steps.insert(i / layers + 1);
                selective_layers.insert(i % layers + 1);
            }
        }
        Ok(Self {
            steps,
            layers,
            actions,
            token_ratio: 1.0,
            selective_steps,
            selective_layers,
        })
    }

    pub fn with_token_ratio(mut self, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::config(format!("token_ratio {ratio} must lie in (0, 1]")));
        }
        self.token_ratio = ratio;
        Ok(self)
    }

    pub fn token_ratio(&self) -> f64 {
        self.token_ratio
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Action at step `t`, layer `l` (both 1-based).
    pub fn action(&self, t: usize, l: usize) -> StepAction {
        self.actions[(t - 1) * self.layers + (l - 1)]
    }

    pub fn row(&self, t: usize) -> &[StepAction] {
        &self.actions[(t - 1) * self.layers..t * self.layers]
    }

    pub fn actions(&self) -> &[StepAction] {
        &self.actions
    }

    pub fn selective_steps(&self) -> &BTreeSet<usize> {
        &self.selective_steps
    }

    pub fn selective_layers(&self) -> &BTreeSet<usize> {
        &self.selective_layers
    }

    pub fn count(&self, action: StepAction) -> usize {
        self.actions.iter().filter(|&&a| a == action).count()
    }

    /// Cells that run a sub-module forward pass (full or selective).
    pub fn computed_cells(&self) -> usize {
        self.actions.len() - self.count(StepAction::CacheOnly)
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            full_steps: (1..=self.steps)
                .filter(|&t| self.row(t).iter().all(|&a| a == StepAction::FullCompute))
                .count(),
            selective_steps: self.selective_steps.len(),
            cache_cells: self.count(StepAction::CacheOnly),
            full_cells: self.count(StepAction::FullCompute),
            selective_cells: self.count(StepAction::SelectiveCompute),
        }
    }

    /// CSV with header `step,layer,action`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,layer,action")?;
        for t in 1..=self.steps {
            for l in 1..=self.layers {
                writeln!(out, "{t},{l},{}", self.action(t, l))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub full_steps: usize,
    pub selective_steps: usize,
    pub cache_cells: usize,
    pub full_cells: usize,
    pub selective_cells: usize,
}
