use std::sync::Arc;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::block::RunState;
use super::{init_model, Engine, EngineOptions, FeatureMatrix, ModelConfig, ModelWeights};
use crate::cost::OpCounter;
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::ExecutionPlan;

/// Features captured during a run, indexed from step 1 / layer 1.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshots {
    /// `blocks[t-1][l-1]`: output of block `l` at step `t`.
    pub blocks: Vec<Vec<FeatureMatrix>>,
    /// `outputs[t-1]`: clean-sample prediction at step `t`.
    pub outputs: Vec<FeatureMatrix>,
    /// `states[t-1]`: latent after the update of step `t`.
    pub states: Vec<FeatureMatrix>,
}

impl Snapshots {
    pub fn steps(&self) -> usize {
        self.outputs.len()
    }

    pub fn block(&self, t: usize, l: usize) -> Option<&FeatureMatrix> {
        self.blocks.get(t.checked_sub(1)?)?.get(l.checked_sub(1)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Latent after the last step.
    pub output: FeatureMatrix,
    pub snapshots: Option<Snapshots>,
    pub ops: OpCounter,
}

fn check_finite(m: &FeatureMatrix, step: usize, layer: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow { step, layer })
    }
}

fn check_inputs(config: &ModelConfig, x0: &FeatureMatrix) -> Result<()> {
    if x0.dim() != (config.tokens, config.dim) {
        return Err(Error::config(format!(
            "input is {}x{}, expected {}x{}",
            x0.nrows(),
            x0.ncols(),
            config.tokens,
            config.dim
        )));
    }
    check_finite(x0, 0, 0)
}

/// Runs `plan` from `x0`.
///
/// Each step runs blocks `1..=L` per the plan, predicts the clean sample with
/// the output head and applies the deterministic DDIM update. A non-finite value is
/// reported with its step and layer; layer `L + 1` stands for the head and
/// update.
pub fn denoise_run(
    config: &ModelConfig,
    weights: &ModelWeights,
    plan: &ExecutionPlan,
    x0: &FeatureMatrix,
    context: &FeatureMatrix,
) -> Result<RunOutput> {
    run_plan(
        &Engine::new(config, weights, EngineOptions::default()),
        plan,
        x0,
        context,
        false,
    )
}

pub(crate) fn run_plan(
    engine: &Engine,
    plan: &ExecutionPlan,
    x0: &FeatureMatrix,
    context: &FeatureMatrix,
    capture: bool,
) -> Result<RunOutput> {
    let config = engine.config;
    if plan.steps() != config.steps || plan.layers() != config.layers {
        return Err(Error::config(format!(
            "plan is {}x{} but the model runs {} steps over {} layers",
            plan.steps(),
            plan.layers(),
            config.steps,
            config.layers
        )));
    }
    check_inputs(config, x0)?;
    let mut state = engine.start(context)?;
    let mut snaps = capture.then(Snapshots::default);
    let mut x = x0.clone();
    for t in 1..=config.steps {
        let temb = engine.timestep_embedding(t);
        let mut h = x.clone();
        let mut row = Vec::new();
        for l in 1..=config.layers {
            h = engine.block_forward(h, l, plan.action(t, l), &mut state, t, &temb, plan.token_ratio())?;
            check_finite(&h, t, l)?;
            if capture {
                row.push(h.clone());
            }
        }
        x = finish_step(engine, &mut state, &x, &h, t, snaps.as_mut(), row)?;
    }
    Ok(RunOutput {
        output: x,
        snapshots: snaps,
        ops: state.ops,
    })
}

fn finish_step(
    engine: &Engine,
    state: &mut RunState,
    x: &FeatureMatrix,
    features: &FeatureMatrix,
    t: usize,
    snaps: Option<&mut Snapshots>,
    row: Vec<FeatureMatrix>,
) -> Result<FeatureMatrix> {
    let head_layer = engine.config.layers + 1;
    let x0 = engine.head(features, &mut state.ops);
    check_finite(&x0, t, head_layer)?;
    let next = engine.update(x, &x0, t, &mut state.ops);
    check_finite(&next, t, head_layer)?;
    if let Some(s) = snaps {
        s.blocks.push(row);
        s.outputs.push(x0);
        s.states.push(next.clone());
    }
    Ok(next)
}

/// Reference path that computes every block directly and never touches the
/// cache.
pub fn denoise_run_uncached(
    engine: &Engine,
    x0: &FeatureMatrix,
    context: &FeatureMatrix,
    capture: bool,
) -> Result<RunOutput> {
    let config = engine.config;
    check_inputs(config, x0)?;
    let mut state = engine.start(context)?;
    let mut snaps = capture.then(Snapshots::default);
    let mut x = x0.clone();
    for t in 1..=config.steps {
        let temb = engine.timestep_embedding(t);
        let mut h = x.clone();
        let mut row = Vec::new();
        for l in 1..=config.layers {
            h = engine.block_forward_uncached(h, l, &temb, &mut state);
            check_finite(&h, t, l)?;
            if capture {
                row.push(h.clone());
            }
        }
        x = finish_step(engine, &mut state, &x, &h, t, snaps.as_mut(), row)?;
    }
    debug_assert!(state.cache.is_empty());
    Ok(RunOutput {
        output: x,
        snapshots: snaps,
        ops: state.ops,
    })
}

/// A model with immutable weights, shareable across threads.
#[derive(Clone, Debug)]
pub struct Simulator {
    config: ModelConfig,
    weights: Arc<ModelWeights>,
    options: EngineOptions,
}

impl Simulator {
    pub fn new(config: ModelConfig, options: EngineOptions) -> Result<Self> {
        let weights = Arc::new(init_model(&config)?);
        Ok(Self {
            config,
            weights,
            options,
        })
    }

    pub fn with_options(&self, options: EngineOptions) -> Self {
        Self {
            options,
            ..self.clone()
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn engine(&self) -> Engine<'_> {
        Engine::new(&self.config, &self.weights, self.options)
    }

    /// Seeded standard-normal latent and context for input `index`.
    pub fn inputs(&self, seed: u64, index: usize) -> (FeatureMatrix, FeatureMatrix) {
        let draw = |rows: usize, label: u64| {
            let mut rng = rng::substream(seed, label);
            Array2::from_shape_simple_fn((rows, self.config.dim), || StandardNormal.sample(&mut rng))
        };
        let i = index as u64;
        (
            draw(self.config.tokens, 2 * i),
            draw(self.config.context_tokens, 2 * i + 1),
        )
    }

    /// Inputs for every `(seed, index)` with `index < batch`, seed-major.
    pub fn input_set(&self, seeds: &[u64], batch: usize) -> Vec<(FeatureMatrix, FeatureMatrix)> {
        seeds
            .iter()
            .flat_map(|&s| (0..batch).map(move |i| (s, i)))
            .map(|(s, i)| self.inputs(s, i))
            .collect()
    }

    pub fn run(
        &self,
        plan: &ExecutionPlan,
        x0: &FeatureMatrix,
        context: &FeatureMatrix,
        capture: bool,
    ) -> Result<RunOutput> {
        run_plan(&self.engine(), plan, x0, context, capture)
    }

    pub fn run_uncached(
        &self,
        x0: &FeatureMatrix,
        context: &FeatureMatrix,
        capture: bool,
    ) -> Result<RunOutput> {
        denoise_run_uncached(&self.engine(), x0, context, capture)
    }
}
