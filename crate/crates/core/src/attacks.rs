//! Crafting poisoned local models.
//!
//! The Krum attack pushes a single model `w_Re - λ s` as far as Krum still
//! accepts it, surrounded by support models in a small ball. The
//! trimmed-mean attack (reused for the median) places each compromised
//! coordinate just beyond the benign extremes, or beyond `μ ± 3σ` when only
//! the compromised devices' own models are visible. Gaussian noise and label
//! flipping serve as baselines.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregation::{ties_minimum, AggregatorSpec, DistanceMatrix};
use crate::data::Dataset;
use crate::vector::{common_dim, squared_distance_unchecked};
use crate::{signed_direction, Error, LocalModelSet, ParameterVector, Result, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    /// The attacker sees every device's before-attack local model.
    Full,
    /// The attacker sees only the compromised devices' before-attack models.
    Partial,
}

/// What the attacker can observe in one iteration.
#[derive(Clone, Debug)]
pub struct KnowledgeScope {
    mode: KnowledgeMode,
    compromised: Vec<ParameterVector>,
    benign: Vec<ParameterVector>,
    w_re: ParameterVector,
}

impl KnowledgeScope {
    /// Full knowledge: compromised and benign models of `set`.
    pub fn full(set: &LocalModelSet, w_re: ParameterVector) -> Result<Self> {
        Self::from_models(
            KnowledgeMode::Full,
            set.gather(&set.compromised_positions()),
            set.gather(&set.benign_positions()),
            w_re,
        )
    }

    /// Partial knowledge: only the compromised entries of `set` are copied.
    pub fn partial(set: &LocalModelSet, w_re: ParameterVector) -> Result<Self> {
        Self::from_models(KnowledgeMode::Partial, set.gather(&set.compromised_positions()), Vec::new(), w_re)
    }

    pub fn from_models(
        mode: KnowledgeMode,
        compromised: Vec<ParameterVector>,
        benign: Vec<ParameterVector>,
        w_re: ParameterVector,
    ) -> Result<Self> {
        if compromised.is_empty() {
            return Err(Error::Empty("compromised models"));
        }
        match mode {
            KnowledgeMode::Full if benign.is_empty() => return Err(Error::Empty("benign models")),
            KnowledgeMode::Partial if !benign.is_empty() => {
                return Err(Error::config("partial knowledge cannot include benign models"))
            }
            _ => {}
        }
        let d = w_re.dim();
        for w in compromised.iter().chain(&benign) {
            w.check_dim(d)?;
        }
        Ok(Self { mode, compromised, benign, w_re })
    }

    pub fn mode(&self) -> KnowledgeMode {
        self.mode
    }

    /// Number of models to craft.
    pub fn num_compromised(&self) -> usize {
        self.compromised.len()
    }

    pub fn compromised(&self) -> &[ParameterVector] {
        &self.compromised
    }

    /// Benign models; empty under partial knowledge.
    pub fn benign(&self) -> &[ParameterVector] {
        &self.benign
    }

    pub fn w_re(&self) -> &ParameterVector {
        &self.w_re
    }

    /// Every visible before-attack model, compromised first.
    pub fn visible(&self) -> Vec<ParameterVector> {
        self.compromised.iter().chain(&self.benign).cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackObjective {
    /// Push the aggregate against the direction it would otherwise move.
    DirectedDeviation,
    /// Maximise the unsigned displacement of the aggregate.
    Deviation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackSpec {
    /// The rule the attacker assumes the master uses.
    pub target: AggregatorSpec,
    pub objective: AttackObjective,
    /// Radius of the ball the Krum support models are drawn from.
    pub epsilon: f64,
    /// Interval factor `b > 1` of the trimmed-mean attack.
    pub interval_factor: f64,
    /// The Krum binary search gives up once λ falls below this.
    pub lambda_threshold: f64,
}

impl AttackSpec {
    pub fn new(target: AggregatorSpec) -> Self {
        Self {
            target,
            objective: AttackObjective::DirectedDeviation,
            epsilon: 0.01,
            interval_factor: 2.0,
            lambda_threshold: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.interval_factor > 1.0 && self.interval_factor.is_finite()) {
            return Err(Error::config(format!("interval factor must exceed 1, got {}", self.interval_factor)));
        }
        if !(self.lambda_threshold > 0.0 && self.lambda_threshold.is_finite()) {
            return Err(Error::config(format!("lambda threshold must be positive, got {}", self.lambda_threshold)));
        }
        Ok(())
    }
}

/// Per-coordinate statistics of a model set. `std` is the population
/// standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max: Vec<f64>,
    pub min: Vec<f64>,
}

pub fn coordinate_stats(models: &[ParameterVector]) -> Result<CoordinateStats> {
    let d = common_dim(models)?;
    let n = models.len() as f64;
    let mut mean = vec![0.0; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    let mut min = vec![f64::INFINITY; d];
    for w in models {
        for j in 0..d {
            mean[j] += w[j];
            max[j] = max[j].max(w[j]);
            min[j] = min[j].min(w[j]);
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; d];
    for w in models {
        for j in 0..d {
            let e = w[j] - mean[j];
            var[j] += e * e;
        }
    }
    // rounding can put the mean a hair outside [min, max] for constant columns
    for j in 0..d {
        mean[j] = mean[j].clamp(min[j], max[j]);
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(CoordinateStats { mean, std, max, min })
}

/// The direction in which the global model would move without an attack.
///
/// Full knowledge compares the attacker-assumed no-attack aggregate with
/// `w_Re`; partial knowledge uses the mean of the compromised models instead.
pub fn estimate_direction(scope: &KnowledgeScope, before_attack_aggregate: Option<&ParameterVector>) -> Result<ParameterVector> {
    match scope.mode {
        KnowledgeMode::Full => {
            let agg = before_attack_aggregate
                .ok_or_else(|| Error::config("full-knowledge direction needs the no-attack aggregate"))?;
            signed_direction(agg, &scope.w_re)
        }
        KnowledgeMode::Partial => {
            let mean = crate::aggregation::mean(&scope.compromised)?;
            signed_direction(&mean, &scope.w_re)
        }
    }
}

/// Upper bound on the Krum attack's λ.
///
/// `m` and `c` are the size and compromised count of the set Krum will be
/// run on; `candidates` are the models the bound is computed over. With
/// `n = m - c - 2` neighbours (self excluded), the bound is
/// `sqrt(min_i Σ_{n nearest} D² / ((m - 2c - 1) d)) + max_i D(w_i, w_Re) / sqrt(d)`.
pub fn krum_lambda_upper_bound(candidates: &[ParameterVector], w_re: &ParameterVector, m: usize, c: usize) -> Result<f64> {
    let d = common_dim(candidates)?;
    w_re.check_dim(d)?;
    if m < 2 * c + 2 {
        return Err(Error::config(format!("Krum bound needs m - 2c - 1 > 0, got m={m}, c={c}")));
    }
    let neighbours = m.checked_sub(c + 2).filter(|&n| n >= 1).ok_or_else(|| {
        Error::config(format!("Krum bound needs m - c - 2 >= 1, got m={m}, c={c}"))
    })?;
    if neighbours > candidates.len() - 1 {
        return Err(Error::config(format!(
            "Krum bound needs {neighbours} neighbours but only {} other candidates",
            candidates.len() - 1
        )));
    }
    let dm = DistanceMatrix::new(candidates)?;
    let all: Vec<usize> = (0..candidates.len()).collect();
    let min_sum = (0..candidates.len())
        .map(|i| dm.nearest_sum(i, &all, neighbours))
        .fold(f64::INFINITY, f64::min);
    let max_dist = candidates
        .iter()
        .map(|w| squared_distance_unchecked(w, w_re).sqrt())
        .fold(0.0, f64::max);
    let df = d as f64;
    Ok((min_sum / ((m - 2 * c - 1) as f64 * df)).sqrt() + max_dist / df.sqrt())
}

/// A successful Krum attack.
#[derive(Clone, Debug)]
pub struct KrumCraft {
    /// `w_1'` followed by the support models.
    pub crafted: Vec<ParameterVector>,
    pub lambda: f64,
    pub upper_bound: f64,
    /// Copies of `w_1'` in the final evaluation set.
    pub copies: usize,
}

impl KrumCraft {
    pub fn primary(&self) -> &ParameterVector {
        &self.crafted[0]
    }

    /// The set the search ran Krum on when it accepted λ, with the Krum
    /// parameter used. The copies of `w_1'` come first.
    pub fn evaluation_set(&self, scope: &KnowledgeScope) -> (Vec<ParameterVector>, usize) {
        let mut set = vec![self.primary().clone(); self.copies];
        match scope.mode {
            KnowledgeMode::Full => set.extend(scope.benign.iter().cloned()),
            KnowledgeMode::Partial => set.extend(scope.compromised.iter().cloned()),
        }
        (set, self.copies)
    }
}

#[derive(Clone, Debug)]
pub enum KrumOutcome {
    Success(KrumCraft),
    /// λ fell below the threshold for every allowed evaluation set.
    NoSolution { upper_bound: f64 },
}

impl KrumOutcome {
    pub fn crafted(&self) -> Option<&KrumCraft> {
        match self {
            KrumOutcome::Success(k) => Some(k),
            KrumOutcome::NoSolution { .. } => None,
        }
    }
}

/// Whether Krum with parameter `krum_c` picks one of `copies` replicas of a
/// crafted model placed before `others` in the evaluation set.
/// `to_crafted[i]` is the squared distance from `others[i]` to the replica.
fn krum_selects_replica(others: &DistanceMatrix, to_crafted: &[f64], copies: usize, krum_c: usize) -> bool {
    let m = copies + others.len();
    let neighbours = m - krum_c - 2;
    let mut buf: Vec<f64> = Vec::with_capacity(m);

    buf.extend(std::iter::repeat_n(0.0, copies - 1));
    buf.extend_from_slice(to_crafted);
    buf.sort_unstable_by(f64::total_cmp);
    let replica_score: f64 = buf.iter().take(neighbours).sum();

    let mut min = replica_score;
    for i in 0..others.len() {
        buf.clear();
        buf.extend(std::iter::repeat_n(to_crafted[i], copies));
        buf.extend((0..others.len()).filter(|&o| o != i).map(|o| others.get(i, o)));
        buf.sort_unstable_by(f64::total_cmp);
        min = min.min(buf.iter().take(neighbours).sum());
    }
    // replicas occupy the lowest indices, so they win every tie
    ties_minimum(replica_score, min)
}

/// Halves λ from `upper_bound` until Krum over `copies` replicas of
/// `w_Re - λ dir` plus `others` selects a replica.
fn search_lambda(
    others: &[ParameterVector],
    w_re: &ParameterVector,
    direction: &ParameterVector,
    copies: usize,
    krum_c: usize,
    upper_bound: f64,
    threshold: f64,
) -> Result<Option<(f64, ParameterVector)>> {
    let dm = DistanceMatrix::new(others)?;
    let mut lambda = upper_bound;
    while lambda >= threshold {
        let crafted = w_re.add_scaled(-lambda, direction)?;
        let to_crafted: Vec<f64> = others.iter().map(|w| squared_distance_unchecked(&crafted, w)).collect();
        if krum_selects_replica(&dm, &to_crafted, copies, krum_c) {
            return Ok(Some((lambda, crafted)));
        }
        lambda /= 2.0;
    }
    Ok(None)
}

/// A point drawn uniformly from the closed ball of radius `epsilon` around
/// `center`.
pub fn sample_in_ball(center: &ParameterVector, epsilon: f64, rng: &mut RngStream) -> ParameterVector {
    let d = center.dim();
    for _ in 0..64 {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let radius = epsilon * u.powf(1.0 / d as f64);
        for (v, c) in dir.iter_mut().zip(center.iter()) {
            *v = c + *v / norm * radius;
        }
        let point = ParameterVector::from_raw(dir);
        if squared_distance_unchecked(&point, center).sqrt() <= epsilon {
            return point;
        }
    }
    center.clone()
}

/// Crafts the compromised models against Krum.
///
/// Under full knowledge λ is searched on `c` replicas of `w_1'` plus the
/// benign models. Under partial knowledge the compromised devices' own
/// before-attack models stand in for the benign ones: the search starts
/// with one replica and adds one more after every failure, up to `c - 2`
/// replicas, beyond which the λ bound is undefined. On success `w_1'` is
/// emitted together with `c - 1` support models from its ε-ball.
pub fn attack_krum(
    scope: &KnowledgeScope,
    spec: &AttackSpec,
    direction: &ParameterVector,
    rng: &mut RngStream,
) -> Result<KrumOutcome> {
    spec.validate()?;
    let w_re = &scope.w_re;
    direction.check_dim(w_re.dim())?;
    let step = match spec.objective {
        AttackObjective::DirectedDeviation => direction.clone(),
        AttackObjective::Deviation => ParameterVector::filled(w_re.dim(), 1.0),
    };
    let c = scope.num_compromised();

    let found = match scope.mode {
        KnowledgeMode::Full => {
            let m = c + scope.benign.len();
            let bound = krum_lambda_upper_bound(&scope.benign, w_re, m, c)?;
            search_lambda(&scope.benign, w_re, &step, c, c, bound, spec.lambda_threshold)?
                .map(|(lambda, w)| (lambda, w, bound, c))
                .ok_or(bound)
        }
        KnowledgeMode::Partial => {
            let mut result = Err(0.0);
            for copies in 1..=c.saturating_sub(2) {
                let bound = krum_lambda_upper_bound(&scope.compromised, w_re, copies + c, copies)?;
                if let Some((lambda, w)) =
                    search_lambda(&scope.compromised, w_re, &step, copies, copies, bound, spec.lambda_threshold)?
                {
                    result = Ok((lambda, w, bound, copies));
                    break;
                }
                result = Err(bound);
            }
            result
        }
    };

    match found {
        Err(upper_bound) => Ok(KrumOutcome::NoSolution { upper_bound }),
        Ok((lambda, primary, upper_bound, copies)) => {
            let mut crafted = Vec::with_capacity(c);
            for _ in 1..c {
                crafted.push(sample_in_ball(&primary, spec.epsilon, rng));
            }
            crafted.insert(0, primary);
            Ok(KrumOutcome::Success(KrumCraft { crafted, lambda, upper_bound, copies }))
        }
    }
}

/// The Krum attack, reused unchanged against Bulyan.
pub fn attack_bulyan(
    scope: &KnowledgeScope,
    spec: &AttackSpec,
    direction: &ParameterVector,
    rng: &mut RngStream,
) -> Result<KrumOutcome> {
    attack_krum(scope, spec, direction, rng)
}

/// Aggregates one column of scalar values with a coordinate-wise rule.
fn aggregate_column(rule: &AggregatorSpec, values: &mut [f64]) -> Result<f64> {
    let n = values.len();
    rule.validate(n)?;
    match *rule {
        AggregatorSpec::Mean => Ok(values.iter().sum::<f64>() / n as f64),
        AggregatorSpec::TrimmedMean { beta } => {
            values.sort_unstable_by(f64::total_cmp);
            Ok(values[beta..n - beta].iter().sum::<f64>() / (n - 2 * beta) as f64)
        }
        AggregatorSpec::Median => {
            values.sort_unstable_by(f64::total_cmp);
            Ok(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
        }
        AggregatorSpec::Krum { .. } | AggregatorSpec::Bulyan { .. } => {
            Err(Error::config("the deviation objective needs a coordinate-wise target rule"))
        }
    }
}

/// Sampling intervals `(above, below)` for coordinate `j`: values that push
/// the aggregate up and values that push it down.
fn intervals(scope: &KnowledgeScope, stats: &CoordinateStats, b: f64, j: usize) -> ((f64, f64), (f64, f64)) {
    match scope.mode {
        KnowledgeMode::Full => {
            let hi = stats.max[j];
            let lo = stats.min[j];
            let above = if hi > 0.0 { (hi, b * hi) } else { (hi, hi / b) };
            let below = if lo > 0.0 { (lo / b, lo) } else { (b * lo, lo) };
            (above, below)
        }
        KnowledgeMode::Partial => {
            let (mu, sigma) = (stats.mean[j], stats.std[j]);
            ((mu + 3.0 * sigma, mu + 4.0 * sigma), (mu - 4.0 * sigma, mu - 3.0 * sigma))
        }
    }
}

/// Picks, per coordinate, whether to craft above (`true`) or below.
///
/// The directed objective goes above where the direction is negative. The
/// deviation objective simulates the target rule on the visible models with
/// the compromised values replaced by each interval's midpoint and keeps
/// whichever moves the aggregate further.
fn choose_sides(
    scope: &KnowledgeScope,
    spec: &AttackSpec,
    direction: &ParameterVector,
    stats: &CoordinateStats,
) -> Result<Vec<bool>> {
    let d = scope.w_re.dim();
    match spec.objective {
        AttackObjective::DirectedDeviation => Ok(direction.iter().map(|&s| s < 0.0).collect()),
        AttackObjective::Deviation => {
            let c = scope.num_compromised();
            let reference_models = scope.visible();
            // benign models under full knowledge, compromised ones otherwise
            let kept = match scope.mode {
                KnowledgeMode::Full => &scope.benign,
                KnowledgeMode::Partial => &scope.compromised,
            };
            let mut sides = Vec::with_capacity(d);
            let mut col = Vec::new();
            for j in 0..d {
                col.clear();
                col.extend(reference_models.iter().map(|w| w[j]));
                let base = aggregate_column(&spec.target, &mut col)?;
                let (above, below) = intervals(scope, stats, spec.interval_factor, j);
                let mut shift = |mid: f64| -> Result<f64> {
                    col.clear();
                    col.extend(kept.iter().map(|w| w[j]));
                    col.extend(std::iter::repeat_n(mid, c));
                    Ok((aggregate_column(&spec.target, &mut col)? - base).abs())
                };
                let up = shift((above.0 + above.1) / 2.0)?;
                let down = shift((below.0 + below.1) / 2.0)?;
                sides.push(up >= down);
            }
            Ok(sides)
        }
    }
}

fn sample_interval(rng: &mut RngStream, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Crafts the compromised models against trimmed mean or median.
///
/// Full knowledge samples each coordinate from `[w_max, b w_max]` (or
/// `[w_max, w_max / b]` for non-positive `w_max`) when pushing up and the
/// mirrored intervals around `w_min` when pushing down, using the benign
/// extremes. Partial knowledge samples from `[μ + 3σ, μ + 4σ]` or
/// `[μ - 4σ, μ - 3σ]` computed over the compromised models.
pub fn attack_trimmed_mean(
    scope: &KnowledgeScope,
    spec: &AttackSpec,
    direction: &ParameterVector,
    rng: &mut RngStream,
) -> Result<Vec<ParameterVector>> {
    spec.validate()?;
    let d = scope.w_re.dim();
    direction.check_dim(d)?;
    let stats = match scope.mode {
        KnowledgeMode::Full => coordinate_stats(&scope.benign)?,
        KnowledgeMode::Partial => coordinate_stats(&scope.compromised)?,
    };
    let sides = choose_sides(scope, spec, direction, &stats)?;
    let ranges: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let (above, below) = intervals(scope, &stats, spec.interval_factor, j);
            if sides[j] {
                above
            } else {
                below
            }
        })
        .collect();
    Ok((0..scope.num_compromised())
        .map(|_| ParameterVector::from_raw(ranges.iter().map(|&r| sample_interval(rng, r)).collect()))
        .collect())
}

/// The trimmed-mean attack, reused unchanged against the median.
pub fn attack_median(
    scope: &KnowledgeScope,
    spec: &AttackSpec,
    direction: &ParameterVector,
    rng: &mut RngStream,
) -> Result<Vec<ParameterVector>> {
    attack_trimmed_mean(scope, spec, direction, rng)
}

/// Fits a per-coordinate Gaussian to all before-attack models and draws one
/// model per compromised device.
pub fn attack_gaussian(all_models: &[ParameterVector], c: usize, rng: &mut RngStream) -> Result<Vec<ParameterVector>> {
    let stats = coordinate_stats(all_models)?;
    Ok((0..c)
        .map(|_| {
            ParameterVector::from_raw(
                stats
                    .mean
                    .iter()
                    .zip(&stats.std)
                    .map(|(&mu, &sigma)| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + sigma * z
                    })
                    .collect(),
            )
        })
        .collect())
}

/// Maps every label `l` to `L - l - 1`.
pub fn flip_labels(data: &Dataset) -> Result<Dataset> {
    let classes = data.classes();
    data.map_labels(|l| classes - l - 1)
}
