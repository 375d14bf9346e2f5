use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CachingPattern, SearchConfig};
use crate::error::{Error, Result};
use crate::metrics::{flops_estimate, relative_l1};
use crate::schedule::{build_caching_plan, build_plan, ExecutionPlan, SelectiveConfig};
use crate::tinydit::{FeatureMatrix, Simulator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub pattern: CachingPattern,
    /// Mean relative L1 of the final latent against full computation.
    pub proxy_score: f64,
    pub flops_ratio: f64,
}

/// The plan a pattern runs under, with or without selective steps.
pub fn candidate_plan(
    pattern: &CachingPattern,
    layers: usize,
    selective: Option<&SelectiveConfig>,
) -> ExecutionPlan {
    match selective {
        Some(cfg) => build_plan(pattern, cfg),
        None => build_caching_plan(pattern, layers),
    }
}

/// Evaluation inputs and their full-compute outputs, computed once and
/// reused for every plan scored against them.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    sim: &'a Simulator,
    inputs: Vec<(FeatureMatrix, FeatureMatrix)>,
    baselines: Vec<FeatureMatrix>,
}

impl<'a> Evaluator<'a> {
    pub fn new(sim: &'a Simulator, eval_seeds: &[u64], eval_batch: usize) -> Result<Self> {
        let inputs = sim.input_set(eval_seeds, eval_batch);
        if inputs.is_empty() {
            return Err(Error::config("evaluation needs at least one input"));
        }
        let config = sim.config();
        let full = ExecutionPlan::full(config.steps, config.layers);
        let baselines = inputs
            .par_iter()
            .map(|(x, c)| sim.run(&full, x, c, false).map(|r| r.output))
            .collect::<Result<_>>()?;
        Ok(Self {
            sim,
            inputs,
            baselines,
        })
    }

    pub fn inputs(&self) -> &[(FeatureMatrix, FeatureMatrix)] {
        &self.inputs
    }

    pub fn baselines(&self) -> &[FeatureMatrix] {
        &self.baselines
    }

    /// Mean relative L1 of the plan's final latent over all inputs.
    pub fn score(&self, plan: &ExecutionPlan) -> Result<f64> {
        let errors = self
            .inputs
            .par_iter()
            .zip(&self.baselines)
            .map(|((x, c), base)| relative_l1(&self.sim.run(plan, x, c, false)?.output, base))
            .collect::<Result<Vec<f64>>>()?;
        Ok(errors.iter().sum::<f64>() / errors.len() as f64)
    }

    pub fn evaluate(
        &self,
        pattern: &CachingPattern,
        selective: Option<&SelectiveConfig>,
    ) -> Result<CandidateEvaluation> {
        let config = self.sim.config();
        if pattern.len() != config.steps {
            return Err(Error::config(format!(
                "pattern {pattern} has {} steps, the model runs {}",
                pattern.len(),
                config.steps
            )));
        }
        let plan = candidate_plan(pattern, config.layers, selective);
        Ok(CandidateEvaluation {
            pattern: pattern.clone(),
            proxy_score: self.score(&plan)?,
            flops_ratio: flops_estimate(&plan, config, &self.sim.options()).ratio,
        })
    }

    /// Evaluations in the order of `candidates`, whatever the scheduling.
    pub fn evaluate_all(
        &self,
        candidates: &[CachingPattern],
        selective: Option<&SelectiveConfig>,
    ) -> Result<Vec<CandidateEvaluation>> {
        candidates
            .par_iter()
            .map(|p| self.evaluate(p, selective))
            .collect()
    }
}

/// Scores every candidate on the evaluation inputs of `search`.
pub fn evaluate_candidates(
    candidates: &[CachingPattern],
    sim: &Simulator,
    search: &SearchConfig,
    selective: Option<&SelectiveConfig>,
) -> Result<Vec<CandidateEvaluation>> {
    Evaluator::new(sim, &search.eval_seeds, search.eval_batch)?.evaluate_all(candidates, selective)
}

/// Lowest proxy score; ties go to the cheaper plan, then to the
/// lexicographically smaller bit sequence.
pub fn select_best_pattern(
    candidates: &[CachingPattern],
    sim: &Simulator,
    search: &SearchConfig,
    selective: Option<&SelectiveConfig>,
) -> Result<CandidateEvaluation> {
    if candidates.is_empty() {
        return Err(Error::argument("no candidates to select from"));
    }
    let evals = evaluate_candidates(candidates, sim, search, selective)?;
    Ok(best_of(evals).expect("non-empty"))
}

/// Lowest score, then lowest flops ratio, then smallest bits.
pub fn best_of(evals: Vec<CandidateEvaluation>) -> Option<CandidateEvaluation> {
    evals.into_iter().min_by(|a, b| {
        a.proxy_score
            .total_cmp(&b.proxy_score)
            .then(a.flops_ratio.total_cmp(&b.flops_ratio))
            .then_with(|| a.pattern.cmp(&b.pattern))
    })
}
