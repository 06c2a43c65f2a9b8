//! Rejection defenses run by the master before aggregation.
//!
//! For every local model the master aggregates once with and once without
//! it and evaluates both global models on a small validation set. ERR drops
//! the `c` models whose inclusion raises the error rate the most, LFR the
//! `c` models whose inclusion raises the loss the most, and Union drops
//! anything either of them would drop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{leave_one_out, AggregatorSpec};
use crate::data::Dataset;
use crate::models::{evaluate, Evaluation, ModelSpec};
use crate::{Error, LocalModelSet, ParameterVector, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    /// Error rate based rejection.
    Err,
    /// Loss function based rejection.
    Lfr,
    Union,
}

/// Scores a candidate global model.
pub trait Evaluator: Sync {
    fn evaluate(&self, model: &ParameterVector) -> Result<Evaluation>;
}

/// Error rate and cross-entropy of a classifier on a validation set.
#[derive(Clone, Copy, Debug)]
pub struct ValidationEvaluator<'a> {
    pub spec: ModelSpec,
    pub data: &'a Dataset,
}

impl Evaluator for ValidationEvaluator<'_> {
    fn evaluate(&self, model: &ParameterVector) -> Result<Evaluation> {
        evaluate(&self.spec, model, self.data)
    }
}

/// Effect of including one local model in the aggregate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpactRecord {
    pub device: usize,
    /// Validation error with the model minus validation error without it.
    pub error_impact: f64,
    /// Validation loss with the model minus validation loss without it.
    pub loss_impact: f64,
}

/// Leave-one-out impacts of every model in `models`, in set order.
pub fn impact_scores(
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
) -> Result<Vec<ImpactRecord>> {
    if models.len() < 2 {
        return Err(Error::config("impact scores need at least two local models"));
    }
    let loo = leave_one_out(aggregator, models)?;
    let with = evaluator.evaluate(&loo.all)?;
    let without: Vec<Evaluation> =
        loo.without.par_iter().map(|w| evaluator.evaluate(w)).collect::<Result<_>>()?;
    without
        .iter()
        .zip(models.devices())
        .map(|(b, &device)| {
            let record = ImpactRecord {
                device,
                error_impact: with.error_rate - b.error_rate,
                loss_impact: with.loss - b.loss,
            };
            if !(record.error_impact.is_finite() && record.loss_impact.is_finite()) {
                return Err(Error::config(format!("non-finite impact for device {device}")));
            }
            Ok(record)
        })
        .collect()
}

/// Which models a defense kept and removed, as positions in the input set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DefenseOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// Removals ERR alone would make (ERR and Union only).
    pub err_removed: Option<Vec<usize>>,
    /// Removals LFR alone would make (LFR and Union only).
    pub lfr_removed: Option<Vec<usize>>,
    pub impacts: Vec<ImpactRecord>,
}

impl DefenseOutcome {
    fn from_removed(m: usize, mut removed: Vec<usize>, impacts: Vec<ImpactRecord>) -> Self {
        removed.sort_unstable();
        removed.dedup();
        let kept = (0..m).filter(|i| removed.binary_search(i).is_err()).collect();
        Self { kept, removed, err_removed: None, lfr_removed: None, impacts }
    }

    /// The surviving local models.
    pub fn survivors(&self, models: &LocalModelSet) -> LocalModelSet {
        models.retain_positions(&self.kept)
    }
}

/// Positions of the `c` largest scores; ties remove the lower device id first.
fn largest(impacts: &[ImpactRecord], c: usize, score: impl Fn(&ImpactRecord) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..impacts.len()).collect();
    order.sort_by(|&a, &b| {
        score(&impacts[b]).total_cmp(&score(&impacts[a])).then(impacts[a].device.cmp(&impacts[b].device))
    });
    order.truncate(c);
    order.sort_unstable();
    order
}

fn check_removal(models: &LocalModelSet, c: usize) -> Result<()> {
    if c >= models.len() {
        return Err(Error::config(format!("cannot remove {c} of {} local models", models.len())));
    }
    Ok(())
}

fn scored(
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
    c: usize,
) -> Result<Option<Vec<ImpactRecord>>> {
    check_removal(models, c)?;
    if c == 0 {
        return Ok(None);
    }
    impact_scores(models, aggregator, evaluator).map(Some)
}

/// Removes the `c` models with the largest error-rate impact.
pub fn defend_err(
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
    c: usize,
) -> Result<DefenseOutcome> {
    let Some(impacts) = scored(models, aggregator, evaluator, c)? else {
        return Ok(DefenseOutcome { err_removed: Some(vec![]), ..identity(models.len()) });
    };
    let removed = largest(&impacts, c, |r| r.error_impact);
    let mut out = DefenseOutcome::from_removed(models.len(), removed.clone(), impacts);
    out.err_removed = Some(removed);
    Ok(out)
}

/// Removes the `c` models with the largest loss impact.
pub fn defend_lfr(
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
    c: usize,
) -> Result<DefenseOutcome> {
    let Some(impacts) = scored(models, aggregator, evaluator, c)? else {
        return Ok(DefenseOutcome { lfr_removed: Some(vec![]), ..identity(models.len()) });
    };
    let removed = largest(&impacts, c, |r| r.loss_impact);
    let mut out = DefenseOutcome::from_removed(models.len(), removed.clone(), impacts);
    out.lfr_removed = Some(removed);
    Ok(out)
}

/// Removes every model that ERR or LFR would remove.
pub fn defend_union(
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
    c: usize,
) -> Result<DefenseOutcome> {
    let Some(impacts) = scored(models, aggregator, evaluator, c)? else {
        return Ok(DefenseOutcome { err_removed: Some(vec![]), lfr_removed: Some(vec![]), ..identity(models.len()) });
    };
    let err = largest(&impacts, c, |r| r.error_impact);
    let lfr = largest(&impacts, c, |r| r.loss_impact);
    let union: Vec<usize> = err.iter().chain(&lfr).copied().collect();
    let mut out = DefenseOutcome::from_removed(models.len(), union, impacts);
    out.err_removed = Some(err);
    out.lfr_removed = Some(lfr);
    Ok(out)
}

fn identity(m: usize) -> DefenseOutcome {
    DefenseOutcome { kept: (0..m).collect(), ..DefenseOutcome::default() }
}

/// Applies `kind`, removing up to `c` models per individual defense.
pub fn defend(
    kind: DefenseKind,
    models: &LocalModelSet,
    aggregator: &AggregatorSpec,
    evaluator: &dyn Evaluator,
    c: usize,
) -> Result<DefenseOutcome> {
    match kind {
        DefenseKind::None => Ok(identity(models.len())),
        DefenseKind::Err => defend_err(models, aggregator, evaluator, c),
        DefenseKind::Lfr => defend_lfr(models, aggregator, evaluator, c),
        DefenseKind::Union => defend_union(models, aggregator, evaluator, c),
    }
}
