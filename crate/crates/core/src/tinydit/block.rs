use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::ops;
use super::{
    select_tokens, AttentionPolicy, BlockCache, EngineOptions, FeatureMatrix, LayerWeights,
    ModelConfig, ModelWeights, SubModule,
};
use crate::cost::{self, OpCounter};
use crate::error::{Error, Result};
use crate::schedule::StepAction;

/// Executes blocks of a model under a fixed set of options.
#[derive(Clone, Copy, Debug)]
pub struct Engine<'a> {
    pub config: &'a ModelConfig,
    pub weights: &'a ModelWeights,
    pub options: EngineOptions,
}

/// Mutable state threaded through one denoising run.
#[derive(Clone, Debug)]
pub struct RunState {
    pub cache: BlockCache,
    pub ops: OpCounter,
    /// Per layer: context keys and values for cross-attention.
    context_kv: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Diffusion time is scaled by this before the sinusoidal embedding, so the
/// fastest component turns by a fraction of a radian per step.
const TIME_SCALE: f64 = 0.01;

struct Modulation {
    shift: Array1<f64>,
    scale: Array1<f64>,
    gate: Array1<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a ModelConfig, weights: &'a ModelWeights, options: EngineOptions) -> Self {
        Self {
            config,
            weights,
            options,
        }
    }

    /// Projects the context once per layer and returns an empty cache.
    pub fn start(&self, context: &FeatureMatrix) -> Result<RunState> {
        if context.ncols() != self.config.dim || context.nrows() != self.config.context_tokens {
            return Err(Error::config(format!(
                "context is {}x{}, expected {}x{}",
                context.nrows(),
                context.ncols(),
                self.config.context_tokens,
                self.config.dim
            )));
        }
        let mut ops = OpCounter::default();
        let context_kv = self
            .weights
            .layers
            .iter()
            .map(|lw| {
                (
                    ops::matmul(context.view(), lw.ca_k.view(), &mut ops),
                    ops::matmul(context.view(), lw.ca_v.view(), &mut ops),
                )
            })
            .collect();
        Ok(RunState {
            cache: BlockCache::new(self.config.layers),
            ops,
            context_kv,
        })
    }

    /// SiLU of the sinusoidal embedding of step `t`'s diffusion time.
    pub fn timestep_embedding(&self, t: usize) -> Array1<f64> {
        let d = self.config.dim;
        let half = d / 2;
        let tau = self.config.schedule.timestep(t, self.config.steps);
        let mut emb = Array1::zeros(d);
        for i in 0..half {
            let freq = TIME_SCALE * (-(10_000f64).ln() * i as f64 / half as f64).exp();
            emb[i] = (tau * freq).cos();
            emb[i + half] = (tau * freq).sin();
        }
        ops::silu(&emb)
    }

    fn layer(&self, layer: usize) -> &'a LayerWeights {
        &self.weights.layers[layer - 1]
    }

    fn modulation(
        &self,
        layer: usize,
        sub: SubModule,
        temb: &Array1<f64>,
        ops: &mut OpCounter,
    ) -> Modulation {
        let d = self.config.dim;
        let (w, b) = self.layer(layer).adaln(sub);
        let m = ops::affine_vec(temb.view(), w.view(), b.view(), ops);
        Modulation {
            shift: m.slice(ndarray::s![..d]).to_owned(),
            scale: m.slice(ndarray::s![d..2 * d]).to_owned(),
            gate: m.slice(ndarray::s![2 * d..]).to_owned(),
        }
    }

    fn normalized(&self, x: ArrayView2<f64>, m: &Modulation, ops: &mut OpCounter) -> Array2<f64> {
        let mut h = ops::layer_norm(x, ops);
        ops::modulate(&mut h, m.shift.view(), m.scale.view(), ops);
        h
    }

    /// Self-attention over all tokens; returns the ungated branch and the
    /// value-vector norms.
    fn self_attention(
        &self,
        lw: &LayerWeights,
        x: ArrayView2<f64>,
        m: &Modulation,
        ops: &mut OpCounter,
    ) -> (Array2<f64>, Vec<f64>) {
        let h = self.normalized(x, m, ops);
        let q = ops::matmul(h.view(), lw.sa_q.view(), ops);
        let k = ops::matmul(h.view(), lw.sa_k.view(), ops);
        let v = ops::matmul(h.view(), lw.sa_v.view(), ops);
        let norms = ops::row_norms(v.view(), ops);
        let mixed = ops::attention(q.view(), k.view(), v.view(), self.config.heads, ops);
        (ops::matmul(mixed.view(), lw.sa_out.view(), ops), norms)
    }

    /// Cross-attention for the given token rows (all rows are independent).
    fn cross_attention(
        &self,
        lw: &LayerWeights,
        kv: &(Array2<f64>, Array2<f64>),
        x: ArrayView2<f64>,
        m: &Modulation,
        ops: &mut OpCounter,
    ) -> Array2<f64> {
        let h = self.normalized(x, m, ops);
        let q = ops::matmul(h.view(), lw.ca_q.view(), ops);
        let mixed = ops::attention(q.view(), kv.0.view(), kv.1.view(), self.config.heads, ops);
        ops::matmul(mixed.view(), lw.ca_out.view(), ops)
    }

    fn mlp(
        &self,
        lw: &LayerWeights,
        x: ArrayView2<f64>,
        m: &Modulation,
        ops: &mut OpCounter,
    ) -> Array2<f64> {
        let h = self.normalized(x, m, ops);
        let mut u = ops::matmul(h.view(), lw.mlp_in.view(), ops);
        ops::gelu(&mut u, ops);
        ops::matmul(u.view(), lw.mlp_out.view(), ops)
    }

    /// Ungated branch of `sub` over the rows of `x`.
    fn branch(
        &self,
        layer: usize,
        sub: SubModule,
        x: ArrayView2<f64>,
        m: &Modulation,
        state: &mut RunState,
    ) -> Array2<f64> {
        let lw = self.layer(layer);
        match sub {
            SubModule::SelfAttention => {
                let (raw, norms) = self.self_attention(lw, x, m, &mut state.ops);
                state.cache.set_value_norms(layer, norms);
                raw
            }
            SubModule::CrossAttention => {
                self.cross_attention(lw, &state.context_kv[layer - 1], x, m, &mut state.ops)
            }
            SubModule::Mlp => self.mlp(lw, x, m, &mut state.ops),
        }
    }

    /// Runs one sub-module over all tokens and returns `(gated, raw)`.
    fn compute_full(
        &self,
        x: &FeatureMatrix,
        layer: usize,
        sub: SubModule,
        temb: &Array1<f64>,
        state: &mut RunState,
    ) -> (Array2<f64>, Array2<f64>) {
        let m = self.modulation(layer, sub, temb, &mut state.ops);
        let raw = self.branch(layer, sub, x.view(), &m, state);
        let gated = ops::gate(&raw, m.gate.view(), &mut state.ops);
        (gated, raw)
    }

    /// Adds the cached branch of `sub` to `x`.
    fn replay(
        &self,
        x: &mut FeatureMatrix,
        layer: usize,
        sub: SubModule,
        step: usize,
        temb: &Array1<f64>,
        state: &mut RunState,
    ) -> Result<()> {
        if state.cache.get(layer, sub).is_none() {
            return Err(Error::MissingCache { step, layer, sub });
        }
        if self.options.remodulate {
            let m = self.modulation(layer, sub, temb, &mut state.ops);
            let entry = state.cache.get(layer, sub).expect("checked above");
            let regated = ops::gate(&entry.raw, m.gate.view(), &mut state.ops);
            ops::add_assign(x, &regated, &mut state.ops);
        } else {
            let entry = state.cache.get(layer, sub).expect("checked above");
            ops::add_assign(x, &entry.branch, &mut state.ops);
        }
        Ok(())
    }

    /// One block under `action`.
    ///
    /// * `FullCompute`: every sub-module runs on all tokens and its cache is
    ///   overwritten.
    /// * `SelectiveCompute`: self-attention follows [`AttentionPolicy`]; the
    ///   top `token_ratio` tokens by value norm are recomputed in
    ///   cross-attention and MLP, scattered into the caches, and every
    ///   sub-module then adds its (partly refreshed) cache.
    /// * `CacheOnly`: every sub-module adds its cache.
    #[allow(clippy::too_many_arguments)]
    pub fn block_forward(
        &self,
        mut x: FeatureMatrix,
        layer: usize,
        action: StepAction,
        state: &mut RunState,
        step: usize,
        temb: &Array1<f64>,
        token_ratio: f64,
    ) -> Result<FeatureMatrix> {
        match action {
            StepAction::FullCompute => {
                for sub in SubModule::ALL {
                    let (gated, raw) = self.compute_full(&x, layer, sub, temb, state);
                    ops::add_assign(&mut x, &gated, &mut state.ops);
                    state.cache.store(layer, sub, gated, raw, step);
                }
            }
            StepAction::CacheOnly => {
                for sub in SubModule::ALL {
                    self.replay(&mut x, layer, sub, step, temb, state)?;
                }
            }
            StepAction::SelectiveCompute => {
                x = self.selective(x, layer, step, temb, token_ratio, state)?;
            }
        }
        Ok(x)
    }

    fn selective(
        &self,
        mut x: FeatureMatrix,
        layer: usize,
        step: usize,
        temb: &Array1<f64>,
        token_ratio: f64,
        state: &mut RunState,
    ) -> Result<FeatureMatrix> {
        for sub in SubModule::ALL {
            if state.cache.get(layer, sub).is_none() {
                return Err(Error::MissingCache { step, layer, sub });
            }
        }
        let sa = SubModule::SelfAttention;
        let importance = match self.options.attention {
            AttentionPolicy::Recompute => {
                let (gated, raw) = self.compute_full(&x, layer, sa, temb, state);
                ops::add_assign(&mut x, &gated, &mut state.ops);
                state.cache.store(layer, sa, gated, raw, step);
                state.cache.value_norms(layer).expect("just computed").to_vec()
            }
            AttentionPolicy::ReuseCachedValues => {
                let norms = state
                    .cache
                    .value_norms(layer)
                    .ok_or(Error::MissingCache { step, layer, sub: sa })?
                    .to_vec();
                self.replay(&mut x, layer, sa, step, temb, state)?;
                norms
            }
            AttentionPolicy::ReuseFreshValues => {
                let m = self.modulation(layer, sa, temb, &mut state.ops);
                let h = self.normalized(x.view(), &m, &mut state.ops);
                let v = ops::matmul(h.view(), self.layer(layer).sa_v.view(), &mut state.ops);
                let norms = ops::row_norms(v.view(), &mut state.ops);
                self.replay(&mut x, layer, sa, step, temb, state)?;
                norms
            }
        };
        let selection = select_tokens(&importance, token_ratio)?;
        let rows = &selection.selected;
        for sub in [SubModule::CrossAttention, SubModule::Mlp] {
            let m = self.modulation(layer, sub, temb, &mut state.ops);
            let subset = x.select(Axis(0), rows);
            let raw = self.branch(layer, sub, subset.view(), &m, state);
            let gated = ops::gate(&raw, m.gate.view(), &mut state.ops);
            state.cache.scatter(layer, sub, rows, &gated, &raw, step);
            let entry = state.cache.get(layer, sub).expect("checked above");
            if self.options.remodulate {
                let regated = ops::gate(&entry.raw, m.gate.view(), &mut state.ops);
                ops::add_assign(&mut x, &regated, &mut state.ops);
            } else {
                ops::add_assign(&mut x, &entry.branch, &mut state.ops);
            }
        }
        Ok(x)
    }

    /// Block without any cache interaction.
    pub fn block_forward_uncached(
        &self,
        mut x: FeatureMatrix,
        layer: usize,
        temb: &Array1<f64>,
        state: &mut RunState,
    ) -> FeatureMatrix {
        for sub in SubModule::ALL {
            let (gated, _) = self.compute_full(&x, layer, sub, temb, state);
            ops::add_assign(&mut x, &gated, &mut state.ops);
        }
        x
    }

    /// Clean-sample prediction from the final block features.
    pub(crate) fn head(&self, x: &FeatureMatrix, ops: &mut OpCounter) -> FeatureMatrix {
        let h = ops::layer_norm(x.view(), ops);
        ops::matmul(h.view(), self.weights.head.view(), ops)
    }

    /// Deterministic DDIM update from step `t` to `t + 1`.
    pub(crate) fn update(
        &self,
        x: &FeatureMatrix,
        x0: &FeatureMatrix,
        t: usize,
        ops: &mut OpCounter,
    ) -> FeatureMatrix {
        let steps = self.config.steps;
        let ab = self.config.schedule.alpha_bar(t, steps);
        let ab_next = self.config.schedule.alpha_bar(t + 1, steps);
        // x_next = √ᾱ'·x̂₀ + √(1−ᾱ')·ε̂ with ε̂ = (x − √ᾱ·x̂₀)/√(1−ᾱ)
        let a = ((1.0 - ab_next) / (1.0 - ab)).sqrt();
        let c = ab_next.sqrt() - a * ab.sqrt();
        ops.elementwise(cost::UPDATE, x.len());
        x * a + x0 * c
    }
}
