use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};
use crate::models::Ast;

use super::Adapter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaLoraConfig {
    /// Rank of every triplet at injection.
    pub init_rank: usize,
    /// Average rank per target once the budget has decayed.
    pub target_rank: usize,
    /// Steps before the first reallocation.
    pub warmup_steps: usize,
    /// Steps at the end during which the budget stays at its target.
    pub final_steps: usize,
    pub total_steps: usize,
    /// Steps between reallocations.
    pub interval: usize,
    /// EMA factor of the importance scores.
    pub beta: f64,
    pub orth_reg_weight: f64,
}

impl Default for AdaLoraConfig {
    fn default() -> Self {
        Self {
            init_rank: 12,
            target_rank: 8,
            warmup_steps: 20,
            final_steps: 20,
            total_steps: 200,
            interval: 10,
            beta: 0.85,
            orth_reg_weight: 1e-4,
        }
    }
}

impl AdaLoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_rank == 0 || self.init_rank < self.target_rank {
            return Err(Error::Config(format!(
                "AdaLoRA needs init_rank {} ≥ target_rank {} ≥ 1",
                self.init_rank, self.target_rank
            )));
        }
        if self.total_steps <= self.warmup_steps + self.final_steps {
            return Err(Error::Config(format!(
                "AdaLoRA total_steps {} leaves no decay phase after warmup {} and final {}",
                self.total_steps, self.warmup_steps, self.final_steps
            )));
        }
        if self.interval == 0 {
            return Err(Error::Config("AdaLoRA interval must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("AdaLoRA beta {} not in [0, 1)", self.beta)));
        }
        Ok(())
    }
}

/// Global rank budget and smoothed importance of every singular component.
#[derive(Clone, Debug, PartialEq)]
pub struct RankBudget {
    pub init_budget: usize,
    pub target_budget: usize,
    pub warmup_steps: usize,
    pub final_steps: usize,
    pub total_steps: usize,
    pub interval: usize,
    pub beta: f64,
    pub orth_reg_weight: f64,
    /// EMA of `|λ·∂L/∂λ|` keyed by adapted layer path.
    pub importance: BTreeMap<String, Vec<f64>>,
    /// `(step, budget)` of each reallocation so far.
    pub history: Vec<(usize, usize)>,
}

impl RankBudget {
    pub fn new(cfg: &AdaLoraConfig, n_targets: usize) -> Self {
        Self {
            init_budget: cfg.init_rank * n_targets,
            target_budget: cfg.target_rank * n_targets,
            warmup_steps: cfg.warmup_steps,
            final_steps: cfg.final_steps,
            total_steps: cfg.total_steps,
            interval: cfg.interval,
            beta: cfg.beta,
            orth_reg_weight: cfg.orth_reg_weight,
            importance: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    /// Cubic decay from the initial to the target budget between warmup and the final phase.
    pub fn budget(&self, step: usize) -> usize {
        let decay_end = self.total_steps.saturating_sub(self.final_steps);
        if step <= self.warmup_steps {
            return self.init_budget;
        }
        if step >= decay_end {
            return self.target_budget;
        }
        let progress = (step - self.warmup_steps) as f64 / (decay_end - self.warmup_steps) as f64;
        let span = (self.init_budget - self.target_budget) as f64;
        self.target_budget + (span * (1.0 - progress).powi(3)).floor() as usize
    }

    fn due(&self, step: usize) -> bool {
        let decay_end = self.total_steps.saturating_sub(self.final_steps);
        step > self.warmup_steps && (step.is_multiple_of(self.interval) || step == decay_end) && step <= decay_end
    }
}

fn to_f64<T: Element>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Folds one step's gradients into the importance scores and reallocates when due.
pub(crate) fn update<T: Element>(ast: &mut Ast<T>, grads: &HashMap<String, Tensor<T>>, step: usize) -> Result<()> {
    let Some(mut budget) = ast.budget.take() else {
        return Ok(());
    };
    for (path, adapter) in &ast.adapters {
        let Adapter::AdaLora { rank, .. } = adapter else { continue };
        let name = format!("{path}.adalora_E");
        let (Some(lambda), Some(grad)) = (ast.params.get(&name), grads.get(&name)) else {
            continue;
        };
        let scores = budget.importance.entry(path.clone()).or_insert_with(|| vec![0.0; *rank]);
        for ((s, &l), &g) in scores.iter_mut().zip(lambda.data()).zip(grad.data()) {
            *s = budget.beta * *s + (1.0 - budget.beta) * (to_f64(l) * to_f64(g)).abs();
        }
    }
    if budget.due(step) {
        let b = budget.budget(step);
        budget.history.push((step, b));
        ast.budget = Some(budget);
        return reallocate(ast, b);
    }
    ast.budget = Some(budget);
    Ok(())
}

/// Keeps the `b` most important components across all triplets and masks the rest.
///
/// Masked `λ` entries are zeroed. Ties go to the earlier layer path and lower index.
pub fn reallocate<T: Element>(ast: &mut Ast<T>, b: usize) -> Result<()> {
    let empty = BTreeMap::new();
    let importance = ast.budget.as_ref().map_or(&empty, |r| &r.importance);
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    let mut paths = Vec::new();
    for (path, adapter) in &ast.adapters {
        let Adapter::AdaLora { rank, .. } = adapter else { continue };
        let scores = importance.get(path);
        for j in 0..*rank {
            let s = scores.and_then(|v| v.get(j)).copied().unwrap_or(0.0);
            ranked.push((s, paths.len(), j));
        }
        paths.push((path.clone(), *rank));
    }
    if paths.is_empty() {
        return Err(Error::Injection("no AdaLoRA adapters to reallocate".into()));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut keep: Vec<Vec<bool>> = paths.iter().map(|(_, r)| vec![false; *r]).collect();
    for &(_, p, j) in ranked.iter().take(b) {
        keep[p][j] = true;
    }
    for ((path, _), keep) in paths.iter().zip(keep) {
        let mask = Tensor::from_fn([keep.len()], |j| if keep[j] { T::one() } else { T::zero() });
        ast.params.set_buffer(&format!("{path}.adalora_mask"), mask)?;
        let name = format!("{path}.adalora_E");
        let lambda = ast
            .params
            .get(&name)
            .ok_or_else(|| Error::Weights(format!("no leaf named {name}")))?;
        let zeroed = Tensor::from_fn([keep.len()], |j| if keep[j] { lambda.data()[j] } else { T::zero() });
        ast.params.set(&name, zeroed)?;
    }
    Ok(())
}

/// Number of unmasked singular components across all AdaLoRA triplets.
pub fn unmasked_count<T: Element>(ast: &Ast<T>) -> usize {
    ast.adapters
        .iter()
        .filter(|(_, a)| matches!(a, Adapter::AdaLora { .. }))
        .filter_map(|(path, _)| ast.params.buffer(&format!("{path}.adalora_mask")))
        .map(|m| m.data().iter().filter(|v| **v != T::zero()).count())
        .sum()
}
