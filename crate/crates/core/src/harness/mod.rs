//! The federated training loop.
//!
//! Each iteration the master broadcasts the global model, every sampled
//! device runs local SGD on its shard, the attacker replaces the sampled
//! compromised devices' models on poisoned iterations, the defense (if any)
//! filters the set and the aggregation rule produces the next global model.
//!
//! All randomness comes from [`RngStream`]s derived from the master seed and
//! the trial index, one stream per purpose, iteration and device. Local
//! updates run in parallel but results are collected in device order, so a
//! run is bitwise reproducible regardless of scheduling.

pub mod config;
pub mod metrics;

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;

use crate::aggregation::AggregatorSpec;
use crate::attacks::{
    attack_gaussian, attack_krum, attack_trimmed_mean, estimate_direction, flip_labels, KnowledgeMode,
    KnowledgeScope, KrumOutcome,
};
use crate::data::{load_csv, load_mnist_dir, partition_noniid, synth_blobs, Dataset, Partition};
use crate::defenses::{defend, DefenseKind, DefenseOutcome, ValidationEvaluator};
use crate::models::{evaluate, local_update, ModelSpec, Objective};
use crate::{Error, LocalModelSet, ParameterVector, Result, RngStream};

pub use config::{AttackChoice, DatasetSource, ExperimentConfig, ModelChoice, RuleChoice, Selection};
pub use metrics::{MetricsRecord, TrialSummary};

/// Marks `c` of `m` devices as compromised, spread over the `groups` device
/// groups of the non-IID partition (device `i` is in group `i mod groups`).
/// Group `g` gets `c / groups` devices, plus one when `g < c mod groups`,
/// chosen uniformly within the group.
pub fn pick_compromised(m: usize, groups: usize, c: usize, rng: &mut RngStream) -> Vec<bool> {
    let mut marked = vec![false; m];
    let groups = groups.clamp(1, m);
    for g in 0..groups {
        let members: Vec<usize> = (g..m).step_by(groups).collect();
        let want = (c / groups + usize::from(g < c % groups)).min(members.len());
        for k in index::sample(rng, members.len(), want) {
            marked[members[k]] = true;
        }
    }
    marked
}

/// A uniform `k`-subset of `0..m`, ascending.
pub fn sample_devices(m: usize, k: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if k == 0 || k > m {
        return Err(Error::config(format!("cannot sample {k} of {m} devices")));
    }
    let mut picked = index::sample(rng, m, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Exactly `round(f T)` distinct iterations chosen uniformly, ascending.
pub fn poison_schedule(iterations: usize, fraction: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!("poison fraction must lie in [0, 1], got {fraction}")));
    }
    let count = (fraction * iterations as f64).round() as usize;
    let mut picked = index::sample(rng, iterations, count.min(iterations)).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Index of the model a selection strategy keeps from a history of
/// validation errors.
pub fn select_final_model(validation_errors: &[f64], strategy: Selection) -> Result<usize> {
    if validation_errors.is_empty() {
        return Err(Error::Empty("training history"));
    }
    Ok(match strategy {
        Selection::Last => validation_errors.len() - 1,
        Selection::BestValidation => {
            let mut best = 0;
            for (i, &e) in validation_errors.iter().enumerate().skip(1) {
                if e < validation_errors[best] {
                    best = i;
                }
            }
            best
        }
    })
}

/// Training and test data shared by every trial of an experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    /// The training set with flipped labels, for the label-flip attack.
    pub flipped_train: Option<Dataset>,
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let data_rng = RngStream::new(config.seed, "data");
        let (mut train, mut test) = match config.dataset {
            DatasetSource::Mnist => {
                let (train, test) = load_mnist_dir(&config.data_dir)?;
                if let Some(classes) = config.classes {
                    if classes != train.classes() {
                        return Err(Error::config(format!(
                            "configured {classes} classes but the IDX data has {}",
                            train.classes()
                        )));
                    }
                }
                (train, test)
            }
            DatasetSource::Csv => {
                let full = load_csv(&config.csv_path, &config.csv_label_column, config.classes.unwrap_or(2))?;
                split_off_test(&full, config.test_fraction, &mut data_rng.derive("split"))?
            }
            DatasetSource::Blobs => {
                let classes = config.classes.unwrap_or(4);
                let blobs = synth_blobs(
                    classes,
                    config.blob_per_class,
                    config.blob_features,
                    config.blob_spread,
                    &mut data_rng.derive("blobs"),
                )?;
                split_off_test(&blobs.dataset, config.test_fraction, &mut data_rng.derive("split"))?
            }
        };
        if let Some(n) = config.train_size {
            train = train.sample(n, &mut data_rng.derive("train"));
        }
        if let Some(n) = config.test_size {
            test = test.sample(n, &mut data_rng.derive("test"));
        }
        Self::new(train, test, config)
    }

    /// Wraps already loaded data, preparing the flipped copy when needed.
    pub fn new(train: Dataset, test: Dataset, config: &ExperimentConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if test.len() <= config.validation_size {
            return Err(Error::config(format!(
                "test set of {} rows cannot hold a validation split of {}",
                test.len(),
                config.validation_size
            )));
        }
        if train.num_features() != test.num_features() || train.classes() != test.classes() {
            return Err(Error::config("training and test sets disagree on shape"));
        }
        let flipped_train = (config.attack == AttackChoice::LabelFlip).then(|| flip_labels(&train)).transpose()?;
        Ok(Self { train, test, flipped_train })
    }
}

/// Returns `(train, test)` with a `fraction` of the rows in the test part.
fn split_off_test(full: &Dataset, fraction: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
    let n_test = ((full.len() as f64) * fraction).round() as usize;
    let (test, train) = full.split(n_test, rng)?;
    Ok((train, test))
}

/// What one iteration produced.
#[derive(Clone, Debug)]
pub struct IterationOutput {
    pub global: ParameterVector,
    pub record: MetricsRecord,
    pub defense: Option<DefenseOutcome>,
    /// Local models as submitted, after any crafting.
    pub submitted: LocalModelSet,
}

/// Full result of one trial.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub records: Vec<MetricsRecord>,
    pub summary: TrialSummary,
    pub final_model: ParameterVector,
}

/// One trial of an experiment: a partition, a validation split and a poison
/// schedule, all derived from the master seed and the trial index.
pub struct Simulation<'a> {
    config: &'a ExperimentConfig,
    data: &'a ExperimentData,
    spec: ModelSpec,
    aggregator: AggregatorSpec,
    shards: Vec<Vec<usize>>,
    validation: Dataset,
    test: Dataset,
    loss_set: Dataset,
    poisoned: Vec<bool>,
    compromised: Vec<bool>,
    root: RngStream,
    trial: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a ExperimentConfig, data: &'a ExperimentData, trial: usize) -> Result<Self> {
        let root = Self::trial_root(config, trial);
        let partition = partition_noniid(&data.train, config.devices, config.noniid, &mut root.derive("partition"))?;
        Self::with_partition(config, data, trial, partition)
    }

    /// A trial with a caller-supplied partition of the training set.
    pub fn with_partition(
        config: &'a ExperimentConfig,
        data: &'a ExperimentData,
        trial: usize,
        partition: Partition,
    ) -> Result<Self> {
        config.validate()?;
        if partition.devices() != config.devices || partition.assignment().len() != data.train.len() {
            return Err(Error::config("partition does not match the configuration and training set"));
        }
        let root = Self::trial_root(config, trial);
        let spec = config.model_spec(data.train.num_features(), data.train.classes());
        spec.validate()?;
        let (validation, test) = data.test.split(config.validation_size, &mut root.derive("validation"))?;
        let loss_set = if config.loss_sample == 0 {
            data.train.clone()
        } else {
            data.train.sample(config.loss_sample, &mut root.derive("loss"))
        };
        let mut poisoned = vec![false; config.iterations];
        if config.attack != AttackChoice::None {
            for t in poison_schedule(config.iterations, config.poison_fraction, &mut root.derive("schedule"))? {
                poisoned[t] = true;
            }
        }
        let compromised = pick_compromised(config.devices, data.train.classes(), config.compromised, &mut root.derive("compromised"));
        Ok(Self {
            config,
            data,
            spec,
            aggregator: config.aggregator()?,
            shards: partition.shards(),
            validation,
            test,
            loss_set,
            poisoned,
            compromised,
            root,
            trial,
        })
    }

    fn trial_root(config: &ExperimentConfig, trial: usize) -> RngStream {
        RngStream::new(config.seed, format!("trial/{trial}"))
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn validation(&self) -> &Dataset {
        &self.validation
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    /// The compromised device ids, ascending, drawn once per trial.
    pub fn compromised_devices(&self) -> Vec<usize> {
        (0..self.config.devices).filter(|&d| self.compromised[d]).collect()
    }

    /// Whether iteration `t` is scheduled for poisoning.
    pub fn is_poisoned(&self, t: usize) -> bool {
        self.poisoned[t]
    }

    /// The stream device `device` uses for local SGD in iteration `t`.
    pub fn sgd_stream(&self, t: usize, device: usize) -> RngStream {
        self.root.derive(format!("sgd/{t}/{device}"))
    }

    pub fn initial_model(&self) -> ParameterVector {
        self.spec.init(&mut self.root.derive("init"))
    }

    fn local_model(&self, data: &Dataset, global: &ParameterVector, t: usize, device: usize) -> Result<ParameterVector> {
        let shard = &self.shards[device];
        if shard.is_empty() {
            return Ok(global.clone());
        }
        let objective = Objective::new(self.spec, data, shard)?;
        let c = self.config;
        local_update(&objective, global, c.learning_rate, c.local_rounds, c.batch_size, &mut self.sgd_stream(t, device))
    }

    /// Honest local models of the devices sampled in iteration `t`.
    pub fn before_attack_models(&self, global: &ParameterVector, t: usize) -> Result<LocalModelSet> {
        let sampled = sample_devices(self.config.devices, self.config.sampled(), &mut self.root.derive(format!("sample/{t}")))?;
        let models = sampled
            .par_iter()
            .map(|&device| self.local_model(&self.data.train, global, t, device))
            .collect::<Result<Vec<_>>>()?;
        let compromised = sampled.iter().map(|&d| self.compromised[d]).collect();
        LocalModelSet::from_parts(models, sampled, compromised)
    }

    /// Replaces the compromised entries of `set` with crafted models.
    /// Returns λ when a Krum attack was crafted.
    fn craft(&self, set: &mut LocalModelSet, global: &ParameterVector, t: usize) -> Result<Option<f64>> {
        let positions = set.compromised_positions();
        if positions.is_empty() {
            return Ok(None);
        }
        let mut rng = self.root.derive(format!("attack/{t}"));
        let config = self.config;
        let crafted: Vec<ParameterVector> = match config.attack {
            AttackChoice::None => return Ok(None),
            AttackChoice::Gaussian => attack_gaussian(set.models(), positions.len(), &mut rng)?,
            AttackChoice::LabelFlip => {
                let flipped = self.data.flipped_train.as_ref().ok_or(Error::Empty("flipped training set"))?;
                positions
                    .iter()
                    .map(|&p| self.local_model(flipped, global, t, set.devices()[p]))
                    .collect::<Result<_>>()?
            }
            AttackChoice::Krum | AttackChoice::Bulyan | AttackChoice::TrimmedMean | AttackChoice::Median => {
                let target = config
                    .attack_target(positions.len(), set.len())?
                    .ok_or_else(|| Error::config("attack has no target rule"))?;
                let spec = config.attack_spec(target);
                let (scope, direction) = match config.knowledge {
                    KnowledgeMode::Full => {
                        let scope = KnowledgeScope::full(set, global.clone())?;
                        let before = target.aggregate(set)?;
                        let direction = estimate_direction(&scope, Some(&before))?;
                        (scope, direction)
                    }
                    KnowledgeMode::Partial => {
                        let scope = KnowledgeScope::partial(set, global.clone())?;
                        let direction = estimate_direction(&scope, None)?;
                        (scope, direction)
                    }
                };
                if matches!(config.attack, AttackChoice::Krum | AttackChoice::Bulyan) {
                    match attack_krum(&scope, &spec, &direction, &mut rng)? {
                        KrumOutcome::Success(k) => {
                            for (&p, w) in positions.iter().zip(k.crafted) {
                                set.replace(p, w)?;
                            }
                            return Ok(Some(k.lambda));
                        }
                        KrumOutcome::NoSolution { .. } => return Ok(None),
                    }
                }
                attack_trimmed_mean(&scope, &spec, &direction, &mut rng)?
            }
        };
        for (&p, w) in positions.iter().zip(crafted) {
            set.replace(p, w)?;
        }
        Ok(None)
    }

    /// Runs iteration `t` from the global model `global`.
    pub fn run_iteration(&self, global: &ParameterVector, t: usize) -> Result<IterationOutput> {
        self.iteration(global, t).map_err(|e| e.at_iteration(t))
    }

    fn iteration(&self, global: &ParameterVector, t: usize) -> Result<IterationOutput> {
        let mut set = self.before_attack_models(global, t)?;
        let attack_active = self.poisoned[t];
        let lambda = if attack_active { self.craft(&mut set, global, t)? } else { None };

        let defense = match self.config.defense {
            DefenseKind::None => None,
            kind => {
                let evaluator = ValidationEvaluator { spec: self.spec, data: &self.validation };
                Some(defend(kind, &set, &self.aggregator, &evaluator, self.config.compromised)?)
            }
        };
        let new_global = match &defense {
            Some(outcome) => self.aggregator.aggregate(&outcome.survivors(&set))?,
            None => self.aggregator.aggregate(&set)?,
        };
        if !new_global.is_finite() {
            return Err(Error::NonFinite(new_global.iter().position(|v| !v.is_finite()).unwrap_or(0)));
        }

        let ids = |positions: &[usize]| positions.iter().map(|&p| set.devices()[p]).collect::<Vec<_>>();
        let record = MetricsRecord {
            iteration: t,
            train_loss: evaluate(&self.spec, &new_global, &self.loss_set)?.loss,
            test_error: evaluate(&self.spec, &new_global, &self.test)?.error_rate,
            validation_error: evaluate(&self.spec, &new_global, &self.validation)?.error_rate,
            attack_active,
            lambda,
            removed: defense.as_ref().map(|d| ids(&d.removed)).unwrap_or_default(),
            err_removed: defense.as_ref().and_then(|d| d.err_removed.as_deref().map(ids)),
            lfr_removed: defense.as_ref().and_then(|d| d.lfr_removed.as_deref().map(ids)),
        };
        Ok(IterationOutput { global: new_global, record, defense, submitted: set })
    }

    /// Runs all iterations and applies the selection strategy.
    pub fn run(&self) -> Result<TrialResult> {
        let mut global = self.initial_model();
        let mut records = Vec::with_capacity(self.config.iterations);
        let mut best: Option<(f64, usize, ParameterVector)> = None;
        for t in 0..self.config.iterations {
            let out = self.run_iteration(&global, t)?;
            global = out.global;
            let v = out.record.validation_error;
            if best.as_ref().is_none_or(|(e, _, _)| v < *e) {
                best = Some((v, t, global.clone()));
            }
            records.push(out.record);
        }
        let (iteration, model) = match self.config.selection {
            Selection::Last => (self.config.iterations - 1, global),
            Selection::BestValidation => {
                let (_, t, w) = best.expect("at least one iteration");
                (t, w)
            }
        };
        let summary = TrialSummary {
            trial: self.trial,
            selected_iteration: iteration,
            test_error: evaluate(&self.spec, &model, &self.test)?.error_rate,
            validation_error: evaluate(&self.spec, &model, &self.validation)?.error_rate,
        };
        Ok(TrialResult { records, summary, final_model: model })
    }
}

/// Every trial of one configuration.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn mean_test_error(&self) -> f64 {
        self.trials.iter().map(|t| t.summary.test_error).sum::<f64>() / self.trials.len() as f64
    }

    pub fn mean_validation_error(&self) -> f64 {
        self.trials.iter().map(|t| t.summary.validation_error).sum::<f64>() / self.trials.len() as f64
    }

    /// Writes `trial_<i>.csv` for every trial and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        metrics::ensure_dir(dir)?;
        for t in &self.trials {
            metrics::write_metrics_csv(&dir.join(format!("trial_{}.csv", t.summary.trial)), &t.records)?;
        }
        let summaries: Vec<TrialSummary> = self.trials.iter().map(|t| t.summary.clone()).collect();
        metrics::write_summary_csv(&dir.join("summary.csv"), &self.config_hash, &summaries)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data = ExperimentData::load(config)?;
    run_experiment_with(config, &data)
}

/// Runs every trial on already loaded data.
pub fn run_experiment_with(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentResult> {
    let trials = (0..config.trials)
        .map(|trial| Simulation::new(config, data, trial)?.run())
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { config_hash: config.hash(), trials })
}
