//! Error curves and cost accounting.

use std::io::Write;

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::schedule::{ExecutionPlan, SelectiveConfig, StepAction};
use crate::tinydit::{
    selection_size, AttentionPolicy, EngineOptions, FeatureMatrix, ModelConfig, Snapshots,
};

/// `Σ|a − b| / Σ|b|`, with `b` the baseline.
pub fn relative_l1(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::argument(format!(
            "shape mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let denom: f64 = b.iter().map(|v| v.abs()).sum();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "relative L1 against an all-zero baseline".into(),
        ));
    }
    Ok(l1_distance(a, b) / denom)
}

pub fn l1_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> f64 {
    let mut sum = 0.0;
    Zip::from(a).and(b).for_each(|x, y| sum += (x - y).abs());
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Step,
    Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub axis_kind: Axis,
    pub axis: Vec<usize>,
    pub values: Vec<f64>,
    pub label: String,
}

impl ErrorCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Writes curves as CSV with header `axis,label,value`, one row per point.
pub fn write_curves_csv<W: Write>(curves: &[ErrorCurve], mut out: W) -> std::io::Result<()> {
    writeln!(out, "axis,label,value")?;
    for c in curves {
        for (a, v) in c.axis.iter().zip(&c.values) {
            writeln!(out, "{a},{},{v}", c.label)?;
        }
    }
    Ok(())
}

/// L1 norm of the change in model output between consecutive steps,
/// over steps `2..=T`.
pub fn consecutive_output_delta(outputs: &[FeatureMatrix]) -> Result<ErrorCurve> {
    if outputs.len() < 2 {
        return Err(Error::argument(format!(
            "need at least two step outputs, got {}",
            outputs.len()
        )));
    }
    Ok(ErrorCurve {
        axis_kind: Axis::Step,
        axis: (2..=outputs.len()).collect(),
        values: outputs.windows(2).map(|w| l1_distance(&w[1], &w[0])).collect(),
        label: "output_delta".into(),
    })
}

/// Relative L1 of each block's output at step `step`, cached run vs baseline.
pub fn block_error_profile(cached: &Snapshots, baseline: &Snapshots, step: usize) -> Result<ErrorCurve> {
    let layers = baseline.blocks.first().map_or(0, Vec::len);
    if layers == 0 {
        return Err(Error::argument("baseline snapshots are empty"));
    }
    let values = (1..=layers)
        .map(|l| {
            let missing = || Error::argument(format!("no snapshot at step {step}, layer {l}"));
            let a = cached.block(step, l).ok_or_else(missing)?;
            let b = baseline.block(step, l).ok_or_else(missing)?;
            relative_l1(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurve {
        axis_kind: Axis::Layer,
        axis: (1..=layers).collect(),
        values,
        label: format!("step_{step}"),
    })
}

/// One curve per layer: relative L1 of that block's output at every step.
pub fn step_error_curves(cached: &Snapshots, baseline: &Snapshots) -> Result<Vec<ErrorCurve>> {
    let steps = baseline.blocks.len();
    let layers = baseline.blocks.first().map_or(0, Vec::len);
    if cached.blocks.len() != steps {
        return Err(Error::argument(format!(
            "snapshot step counts differ: {} vs {steps}",
            cached.blocks.len()
        )));
    }
    (1..=layers)
        .map(|l| {
            let values = (1..=steps)
                .map(|t| {
                    let missing = || Error::argument(format!("no snapshot at step {t}, layer {l}"));
                    relative_l1(
                        cached.block(t, l).ok_or_else(missing)?,
                        baseline.block(t, l).ok_or_else(missing)?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ErrorCurve {
                axis_kind: Axis::Step,
                axis: (1..=steps).collect(),
                values,
                label: format!("layer_{l}"),
            })
        })
        .collect()
}

/// Flops totals by cell kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionFlops {
    pub full: u64,
    pub selective: u64,
    pub cache: u64,
    /// Output head, denoising update and the one-off context projection.
    pub other: u64,
}

impl ActionFlops {
    pub fn total(&self) -> u64 {
        self.full + self.selective + self.cache + self.other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_action: ActionFlops,
    /// Cost of a single (step, layer) cell of each kind.
    pub per_cell: CellFlops,
    pub total: u64,
    /// Same model with every cell computed fully.
    pub baseline: u64,
    pub ratio: f64,
    pub speedup: f64,
    /// Extra flops spent in selective cells over replaying them, as a
    /// fraction of `total`.
    pub selective_overhead: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFlops {
    pub full: u64,
    pub selective: u64,
    pub cache: u64,
}

/// Closed-form flop model of the engine, term by term.
///
/// With `N` tokens, `C` context tokens, width `d`, `H` MLP hidden units,
/// `h` heads and `k` selected tokens (MAC = 2 flops):
///
/// * AdaLN parameters, per sub-module run: `d·3d` MACs + `3d` bias adds.
/// * norm + modulation of `r` rows: `10·r·d`.
/// * self-attention (all `N` rows): `3Nd²` (QKV) + `Nd` (value norms) +
///   `2N²d` (scores, mixing) + `Nd²` (output) MACs, `5·h·N²` softmax.
/// * cross-attention of `r` rows: `2rd²` (query, output) + `2rCd` MACs,
///   `5·h·r·C` softmax; context keys/values `2Cd²` MACs per layer, once per run.
/// * MLP of `r` rows: `2rdH` MACs + `5rH` GELU.
/// * gate `r·d`, residual add `N·d` per sub-module.
/// * per step: head norm `5Nd` + `Nd²` MACs, update `3Nd`.
pub fn flops_estimate(plan: &ExecutionPlan, config: &ModelConfig, options: &EngineOptions) -> FlopsReport {
    let model = CostModel::new(config, options, plan.token_ratio());
    let cells = model.cells();
    let per_action = ActionFlops {
        full: cells.full * plan.count(StepAction::FullCompute) as u64,
        selective: cells.selective * plan.count(StepAction::SelectiveCompute) as u64,
        cache: cells.cache * plan.count(StepAction::CacheOnly) as u64,
        other: model.fixed(),
    };
    let total = per_action.total();
    let baseline = cells.full * (config.steps * config.layers) as u64 + model.fixed();
    let overhead =
        (cells.selective - cells.cache) * plan.count(StepAction::SelectiveCompute) as u64;
    FlopsReport {
        per_action,
        per_cell: cells,
        total,
        baseline,
        ratio: total as f64 / baseline as f64,
        speedup: baseline as f64 / total as f64,
        selective_overhead: overhead as f64 / total as f64,
    }
}

/// Flops of the plan built from `selective` alongside the same pattern
/// without selective cells.
pub fn selective_overhead(with: &FlopsReport, without: &FlopsReport) -> f64 {
    (with.total as f64 - without.total as f64) / with.total as f64
}

struct CostModel {
    n: u64,
    c: u64,
    d: u64,
    hidden: u64,
    heads: u64,
    k: u64,
    layers: u64,
    steps: u64,
    options: EngineOptions,
}

impl CostModel {
    fn new(config: &ModelConfig, options: &EngineOptions, token_ratio: f64) -> Self {
        Self {
            n: config.tokens as u64,
            c: config.context_tokens as u64,
            d: config.dim as u64,
            hidden: config.hidden() as u64,
            heads: config.heads as u64,
            k: selection_size(config.tokens, token_ratio) as u64,
            layers: config.layers as u64,
            steps: config.steps as u64,
            options: *options,
        }
    }

    fn mac(n: u64) -> u64 {
        cost::FLOPS_PER_MAC * n
    }

    fn modulation(&self) -> u64 {
        Self::mac(self.d * 3 * self.d) + cost::ELEMENTWISE * 3 * self.d
    }

    fn norm_modulate(&self, rows: u64) -> u64 {
        (cost::NORM + cost::MODULATE) * rows * self.d
    }

    fn gate(&self, rows: u64) -> u64 {
        cost::ELEMENTWISE * rows * self.d
    }

    fn add(&self) -> u64 {
        cost::ELEMENTWISE * self.n * self.d
    }

    fn self_attention(&self) -> u64 {
        let (n, d) = (self.n, self.d);
        self.norm_modulate(n)
            + Self::mac(3 * n * d * d + n * d + 2 * n * n * d + n * d * d)
            + cost::SOFTMAX * self.heads * n * n
    }

    fn cross_attention(&self, rows: u64) -> u64 {
        let (d, c) = (self.d, self.c);
        self.norm_modulate(rows)
            + Self::mac(2 * rows * d * d + 2 * rows * c * d)
            + cost::SOFTMAX * self.heads * rows * c
    }

    fn mlp(&self, rows: u64) -> u64 {
        self.norm_modulate(rows) + Self::mac(2 * rows * self.d * self.hidden) + cost::GELU * rows * self.hidden
    }

    /// Run one sub-module over `rows` rows and add its result.
    fn computed(&self, branch: u64, rows: u64) -> u64 {
        self.modulation() + branch + self.gate(rows) + self.add()
    }

    fn replay(&self) -> u64 {
        if self.options.remodulate {
            self.modulation() + self.gate(self.n) + self.add()
        } else {
            self.add()
        }
    }

    fn cells(&self) -> CellFlops {
        let n = self.n;
        let full = self.computed(self.self_attention(), n)
            + self.computed(self.cross_attention(n), n)
            + self.computed(self.mlp(n), n);
        let cache = 3 * self.replay();

        let sa = match self.options.attention {
            AttentionPolicy::Recompute => self.computed(self.self_attention(), n),
            AttentionPolicy::ReuseCachedValues => self.replay(),
            AttentionPolicy::ReuseFreshValues => {
                self.modulation()
                    + self.norm_modulate(n)
                    + Self::mac(n * self.d * self.d + n * self.d)
                    + self.replay()
            }
        };
        let regate = if self.options.remodulate { self.gate(n) } else { 0 };
        let k = self.k;
        let selective = sa
            + self.computed(self.cross_attention(k), k)
            + regate
            + self.computed(self.mlp(k), k)
            + regate;
        CellFlops {
            full,
            selective,
            cache,
        }
    }

    /// Head and update every step, plus the context projection.
    fn fixed(&self) -> u64 {
        let (n, d) = (self.n, self.d);
        let per_step = cost::NORM * n * d + Self::mac(n * d * d) + cost::UPDATE * n * d;
        self.steps * per_step + self.layers * Self::mac(2 * self.c * d * d)
    }
}

/// Everything needed to reproduce and judge one cached run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pattern: String,
    pub selective: Option<SelectiveConfig>,
    pub options: EngineOptions,
    pub proxy_score: f64,
    pub flops: FlopsReport,
    pub eval_seeds: Vec<u64>,
    pub eval_batch: usize,
    /// Curve files written next to the report.
    #[serde(default)]
    pub curves: Vec<String>,
}
