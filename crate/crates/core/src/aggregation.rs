//! Aggregation rules run by the master device.
//!
//! Every rule is a pure function of a slice of local models. Krum and Bulyan
//! share a pairwise squared-distance matrix; trimmed mean and median work on
//! sorted columns. [`leave_one_out`] computes the aggregate of every
//! `(m - 1)`-subset at roughly the cost of one aggregation, which is what the
//! rejection defenses need.

use serde::{Deserialize, Serialize};

use crate::vector::{common_dim, squared_distance_unchecked};
use crate::{Error, ParameterVector, Result};

/// An aggregation rule together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregatorSpec {
    Mean,
    /// `c` is the assumed number of compromised devices.
    Krum { c: usize },
    /// Drops the `beta` largest and `beta` smallest values per coordinate.
    TrimmedMean { beta: usize },
    Median,
    Bulyan { c: usize, theta: usize, gamma: usize },
}

impl AggregatorSpec {
    /// Bulyan with `theta = m - 2c` and `gamma = theta - 2c`.
    pub fn bulyan_default(m: usize, c: usize) -> Result<Self> {
        let theta = m
            .checked_sub(2 * c)
            .ok_or_else(|| Error::config(format!("Bulyan needs m >= 2c, got m={m}, c={c}")))?;
        let gamma = theta
            .checked_sub(2 * c)
            .ok_or_else(|| Error::config(format!("Bulyan needs m >= 4c, got m={m}, c={c}")))?;
        Ok(AggregatorSpec::Bulyan { c, theta, gamma })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::Mean => "mean",
            AggregatorSpec::Krum { .. } => "krum",
            AggregatorSpec::TrimmedMean { .. } => "trimmed_mean",
            AggregatorSpec::Median => "median",
            AggregatorSpec::Bulyan { .. } => "bulyan",
        }
    }

    /// Checks that the rule is defined for `m` input models.
    pub fn validate(&self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::Empty("model set"));
        }
        match *self {
            AggregatorSpec::Mean | AggregatorSpec::Median => Ok(()),
            AggregatorSpec::Krum { c } => {
                if m < c + 3 {
                    return Err(Error::config(format!("Krum needs m >= c + 3, got m={m}, c={c}")));
                }
                Ok(())
            }
            AggregatorSpec::TrimmedMean { beta } => {
                if 2 * beta >= m {
                    return Err(Error::config(format!("trimmed mean needs beta < m/2, got beta={beta}, m={m}")));
                }
                Ok(())
            }
            AggregatorSpec::Bulyan { c, theta, gamma } => {
                if theta == 0 || gamma == 0 {
                    return Err(Error::config("Bulyan needs theta >= 1 and gamma >= 1"));
                }
                if theta + 2 * c > m {
                    return Err(Error::config(format!("Bulyan needs theta <= m - 2c, got theta={theta}, m={m}, c={c}")));
                }
                if gamma + 2 * c > theta {
                    return Err(Error::config(format!(
                        "Bulyan needs gamma <= theta - 2c, got gamma={gamma}, theta={theta}, c={c}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn aggregate(&self, models: &[ParameterVector]) -> Result<ParameterVector> {
        match *self {
            AggregatorSpec::Mean => mean(models),
            AggregatorSpec::Krum { c } => krum(models, c).map(|(_, w)| w),
            AggregatorSpec::TrimmedMean { beta } => trimmed_mean(models, beta),
            AggregatorSpec::Median => median(models),
            AggregatorSpec::Bulyan { c, theta, gamma } => bulyan(models, c, theta, gamma),
        }
    }
}

/// Coordinate-wise arithmetic mean.
pub fn mean(models: &[ParameterVector]) -> Result<ParameterVector> {
    let d = common_dim(models)?;
    let mut sum = vec![0.0; d];
    for w in models {
        for (s, v) in sum.iter_mut().zip(w.iter()) {
            *s += v;
        }
    }
    let m = models.len() as f64;
    sum.iter_mut().for_each(|s| *s /= m);
    Ok(ParameterVector::from_raw(sum))
}

/// Symmetric matrix of squared Euclidean distances between models.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    n: usize,
    d2: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(models: &[ParameterVector]) -> Result<Self> {
        common_dim(models)?;
        let n = models.len();
        let mut d2 = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = squared_distance_unchecked(&models[i], &models[j]);
                d2[i * n + j] = v;
                d2[j * n + i] = v;
            }
        }
        Ok(Self { n, d2 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d2[i * self.n + j]
    }

    /// Sum of the `neighbours` smallest squared distances from `anchor` to
    /// the other members of `active`.
    pub fn nearest_sum(&self, anchor: usize, active: &[usize], neighbours: usize) -> f64 {
        let mut dists: Vec<f64> = active.iter().filter(|&&o| o != anchor).map(|&o| self.get(anchor, o)).collect();
        dists.sort_unstable_by(f64::total_cmp);
        dists.iter().take(neighbours).sum()
    }

    /// Krum scores of the models in `active` with `neighbours` nearest
    /// neighbours each, in the order of `active`.
    pub fn krum_scores(&self, active: &[usize], neighbours: usize) -> Vec<f64> {
        active.iter().map(|&a| self.nearest_sum(a, active, neighbours)).collect()
    }
}

/// Krum scores closer than this (relative to the minimum) count as tied.
pub const KRUM_TIE_TOLERANCE: f64 = 1e-12;

/// Whether `score` ties with the minimum `min` under [`KRUM_TIE_TOLERANCE`].
pub fn ties_minimum(score: f64, min: f64) -> bool {
    score <= min + KRUM_TIE_TOLERANCE * min.abs()
}

/// Position of the smallest score; scores tied with the minimum go to the
/// lowest position.
fn argmin(scores: &[f64]) -> usize {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().position(|&s| ties_minimum(s, min)).unwrap_or(0)
}

fn krum_neighbours(m: usize, c: usize) -> Result<usize> {
    AggregatorSpec::Krum { c }.validate(m)?;
    Ok(m - c - 2)
}

/// Each model's sum of squared distances to its `m - c - 2` nearest other
/// models.
pub fn krum_scores(models: &[ParameterVector], c: usize) -> Result<Vec<f64>> {
    let neighbours = krum_neighbours(models.len(), c)?;
    let dm = DistanceMatrix::new(models)?;
    let active: Vec<usize> = (0..models.len()).collect();
    Ok(dm.krum_scores(&active, neighbours))
}

/// The index and value of the model with the smallest Krum score.
pub fn krum(models: &[ParameterVector], c: usize) -> Result<(usize, ParameterVector)> {
    let scores = krum_scores(models, c)?;
    let i = argmin(&scores);
    Ok((i, models[i].clone()))
}

/// Krum over `active` using a precomputed distance matrix; returns the
/// selected entry of `active`.
pub fn krum_with_matrix(dm: &DistanceMatrix, active: &[usize], c: usize) -> Result<usize> {
    let neighbours = krum_neighbours(active.len(), c)?;
    Ok(active[argmin(&dm.krum_scores(active, neighbours))])
}

/// Fills `buf` with column `j` across all models.
fn gather_column(models: &[ParameterVector], j: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(models.iter().map(|w| w[j]));
}

/// Coordinate-wise mean after dropping the `beta` largest and smallest values.
pub fn trimmed_mean(models: &[ParameterVector], beta: usize) -> Result<ParameterVector> {
    let d = common_dim(models)?;
    let m = models.len();
    AggregatorSpec::TrimmedMean { beta }.validate(m)?;
    let kept = (m - 2 * beta) as f64;
    let mut col = Vec::with_capacity(m);
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        gather_column(models, j, &mut col);
        col.sort_unstable_by(f64::total_cmp);
        out.push(col[beta..m - beta].iter().sum::<f64>() / kept);
    }
    Ok(ParameterVector::from_raw(out))
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Coordinate-wise median; an even count averages the two middle values.
pub fn median(models: &[ParameterVector]) -> Result<ParameterVector> {
    let d = common_dim(models)?;
    let mut col = Vec::with_capacity(models.len());
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        gather_column(models, j, &mut col);
        col.sort_unstable_by(f64::total_cmp);
        out.push(median_of_sorted(&col));
    }
    Ok(ParameterVector::from_raw(out))
}

/// Indices chosen by `theta` rounds of Krum, each round removing its winner.
///
/// As the pool shrinks the neighbour count `r - c - 2` is clamped at zero;
/// with no neighbours every score is zero and the lowest index wins.
pub fn bulyan_selection(dm: &DistanceMatrix, c: usize, theta: usize) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..dm.len()).collect();
    let mut selected = Vec::with_capacity(theta);
    for _ in 0..theta {
        let neighbours = remaining.len().saturating_sub(c + 2);
        let pos = argmin(&dm.krum_scores(&remaining, neighbours));
        selected.push(remaining.remove(pos));
    }
    selected
}

/// Per coordinate, the mean of the `gamma` values closest to the median of
/// `selected`. Distance ties keep the model with the lower input index.
fn bulyan_coordinates(models: &[ParameterVector], selected: &[usize], gamma: usize) -> ParameterVector {
    let mut order = selected.to_vec();
    order.sort_unstable();
    let d = models[0].dim();
    let mut sorted = Vec::with_capacity(order.len());
    let mut ranked: Vec<(f64, usize, f64)> = Vec::with_capacity(order.len());
    let mut chosen = Vec::with_capacity(gamma);
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        sorted.clear();
        sorted.extend(order.iter().map(|&i| models[i][j]));
        sorted.sort_unstable_by(f64::total_cmp);
        let med = median_of_sorted(&sorted);
        ranked.clear();
        ranked.extend(order.iter().map(|&i| ((models[i][j] - med).abs(), i, models[i][j])));
        ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.clear();
        chosen.extend(ranked[..gamma].iter().map(|r| r.2));
        chosen.sort_unstable_by(f64::total_cmp);
        out.push(chosen.iter().sum::<f64>() / gamma as f64);
    }
    ParameterVector::from_raw(out)
}

/// Bulyan: select `theta` models by repeated Krum, then average the `gamma`
/// values closest to the per-coordinate median of the selection.
pub fn bulyan(models: &[ParameterVector], c: usize, theta: usize, gamma: usize) -> Result<ParameterVector> {
    AggregatorSpec::Bulyan { c, theta, gamma }.validate(models.len())?;
    let dm = DistanceMatrix::new(models)?;
    let selected = bulyan_selection(&dm, c, theta);
    Ok(bulyan_coordinates(models, &selected, gamma))
}

/// The aggregate of all models and of every leave-one-out subset.
#[derive(Clone, Debug)]
pub struct LeaveOneOut {
    pub all: ParameterVector,
    /// `without[i]` aggregates every model except model `i`.
    pub without: Vec<ParameterVector>,
}

/// Aggregates all `m` models and each of the `m` subsets of size `m - 1`.
///
/// Mean, trimmed mean and median use closed forms over sorted columns and
/// Krum reuses one distance matrix; the results agree with calling
/// [`AggregatorSpec::aggregate`] on each subset up to rounding.
pub fn leave_one_out(spec: &AggregatorSpec, models: &[ParameterVector]) -> Result<LeaveOneOut> {
    let m = models.len();
    if m < 2 {
        return Err(Error::config("leave-one-out aggregation needs at least two models"));
    }
    common_dim(models)?;
    spec.validate(m - 1)?;
    let all = spec.aggregate(models)?;
    let without = match *spec {
        AggregatorSpec::Mean => loo_mean(models),
        AggregatorSpec::TrimmedMean { beta } => loo_ranked(models, |sorted, prefix, r| {
            loo_trimmed_value(sorted, prefix, r, beta)
        }),
        AggregatorSpec::Median => loo_ranked(models, |sorted, _, r| loo_median_value(sorted, r)),
        AggregatorSpec::Krum { c } => {
            let dm = DistanceMatrix::new(models)?;
            let mut out = Vec::with_capacity(m);
            for i in 0..m {
                let active: Vec<usize> = (0..m).filter(|&o| o != i).collect();
                out.push(models[krum_with_matrix(&dm, &active, c)?].clone());
            }
            out
        }
        AggregatorSpec::Bulyan { .. } => {
            let mut out = Vec::with_capacity(m);
            for i in 0..m {
                let rest: Vec<ParameterVector> =
                    models.iter().enumerate().filter(|&(o, _)| o != i).map(|(_, w)| w.clone()).collect();
                out.push(spec.aggregate(&rest)?);
            }
            out
        }
    };
    Ok(LeaveOneOut { all, without })
}

fn loo_mean(models: &[ParameterVector]) -> Vec<ParameterVector> {
    let d = models[0].dim();
    let mut sum = vec![0.0; d];
    for w in models {
        for (s, v) in sum.iter_mut().zip(w.iter()) {
            *s += v;
        }
    }
    let denom = (models.len() - 1) as f64;
    models
        .iter()
        .map(|w| ParameterVector::from_raw(sum.iter().zip(w.iter()).map(|(s, v)| (s - v) / denom).collect()))
        .collect()
}

/// Runs `value(sorted, prefix, rank)` for every model's rank in every column,
/// where `prefix[k]` is the sum of the `k` smallest values.
fn loo_ranked(models: &[ParameterVector], value: impl Fn(&[f64], &[f64], usize) -> f64) -> Vec<ParameterVector> {
    let m = models.len();
    let d = models[0].dim();
    let mut out = vec![vec![0.0; d]; m];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    let mut sorted = vec![0.0; m];
    let mut prefix = vec![0.0; m + 1];
    for j in 0..d {
        order.clear();
        order.extend(0..m);
        order.sort_unstable_by(|&a, &b| models[a][j].total_cmp(&models[b][j]).then(a.cmp(&b)));
        for (k, &i) in order.iter().enumerate() {
            sorted[k] = models[i][j];
            prefix[k + 1] = prefix[k] + sorted[k];
        }
        for (r, &i) in order.iter().enumerate() {
            out[i][j] = value(&sorted, &prefix, r);
        }
    }
    out.into_iter().map(ParameterVector::from_raw).collect()
}

/// Sum of `sorted[lo..hi]` from prefix sums, zero for an empty range.
fn range_sum(prefix: &[f64], lo: usize, hi: usize) -> f64 {
    if hi > lo {
        prefix[hi] - prefix[lo]
    } else {
        0.0
    }
}

/// Trimmed mean of `sorted` with rank `r` removed. The reduced list has
/// `n = m - 1` entries; reduced rank `k` maps to `k` below `r` and `k + 1`
/// from `r` on.
fn loo_trimmed_value(sorted: &[f64], prefix: &[f64], r: usize, beta: usize) -> f64 {
    let n = sorted.len() - 1;
    let hi = n - beta;
    let below = range_sum(prefix, beta, hi.min(r));
    let above = range_sum(prefix, beta.max(r) + 1, hi + 1);
    (below + above) / (n - 2 * beta) as f64
}

fn loo_median_value(sorted: &[f64], r: usize) -> f64 {
    let n = sorted.len() - 1;
    let at = |k: usize| if k < r { sorted[k] } else { sorted[k + 1] };
    if n % 2 == 1 {
        at(n / 2)
    } else {
        (at(n / 2 - 1) + at(n / 2)) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pvs(rows: &[&[f64]]) -> Vec<ParameterVector> {
        rows.iter().map(|r| ParameterVector::new(r.to_vec()).unwrap()).collect()
    }

    fn scalars(values: &[f64]) -> Vec<ParameterVector> {
        values.iter().map(|&v| ParameterVector::new(vec![v]).unwrap()).collect()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&scalars(&[1.0, 2.0, 27.0])).unwrap()[0], 10.0);
        let v = pvs(&[&[0.5, -2.0]]);
        assert_eq!(mean(&[v[0].clone(), v[0].clone(), v[0].clone()]).unwrap(), v[0]);
        assert!(mean(&[]).is_err());
        assert!(mean(&pvs(&[&[1.0], &[1.0, 2.0]])).is_err());
    }

    #[test]
    fn krum_example() {
        let models = scalars(&[0.0, 0.1, 0.2, 0.3, 10.0]);
        let scores = krum_scores(&models, 1).unwrap();
        let expected = [0.05, 0.02, 0.02, 0.05, 190.13];
        for (s, e) in scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12, "{s} vs {e}");
        }
        let (i, w) = krum(&models, 1).unwrap();
        assert_eq!(i, 1);
        assert_eq!(w[0], 0.1);
    }

    #[test]
    fn krum_identical_and_outlier() {
        let models = scalars(&[4.0; 5]);
        assert!(krum_scores(&models, 1).unwrap().iter().all(|&s| s == 0.0));
        let mut models = scalars(&[1.5; 5]);
        models.insert(2, ParameterVector::new(vec![99.0]).unwrap());
        let (i, w) = krum(&models, 1).unwrap();
        assert_ne!(i, 2);
        assert_eq!(w[0], 1.5);
    }

    #[test]
    fn krum_needs_enough_models() {
        assert!(krum(&scalars(&[1.0, 2.0, 3.0]), 1).is_err());
        assert!(krum(&scalars(&[1.0, 2.0, 3.0, 4.0]), 1).is_ok());
    }

    #[test]
    fn trimmed_mean_examples() {
        assert_eq!(trimmed_mean(&scalars(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1).unwrap()[0], 3.0);
        let models = scalars(&[0.3, -1.0, 7.0]);
        assert_eq!(trimmed_mean(&models, 0).unwrap(), mean(&models).unwrap());
        assert!(trimmed_mean(&scalars(&[1.0, 2.0, 3.0, 4.0]), 2).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&scalars(&[3.0])).unwrap()[0], 3.0);
        assert_eq!(median(&scalars(&[1.0, 2.0, 3.0, 4.0])).unwrap()[0], 2.5);
        assert_eq!(median(&scalars(&[1.0, 5.0, 2.0])).unwrap()[0], 2.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn bulyan_examples() {
        let v = ParameterVector::new(vec![1.0, -3.0]).unwrap();
        let same = vec![v.clone(); 9];
        assert_eq!(bulyan(&same, 2, 5, 1).unwrap(), v);

        // theta = m selects everything; gamma = m then averages everything
        let models = pvs(&[&[1.0, 0.0], &[2.0, 5.0], &[4.0, 1.0], &[8.0, -2.0]]);
        let b = bulyan(&models, 0, 4, 4).unwrap();
        let m = mean(&models).unwrap();
        for j in 0..2 {
            assert!((b[j] - m[j]).abs() < 1e-12);
        }

        // selected values {1,2,3,4,10}, gamma = 3 -> mean{2,3,4}
        let models = scalars(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert_eq!(bulyan(&models, 0, 5, 3).unwrap()[0], 3.0);

        assert!(bulyan(&models, 1, 4, 3).is_err());
        assert!(bulyan(&models, 1, 3, 2).is_err());
    }

    #[test]
    fn bulyan_default_parameters() {
        assert_eq!(
            AggregatorSpec::bulyan_default(100, 20).unwrap(),
            AggregatorSpec::Bulyan { c: 20, theta: 60, gamma: 20 }
        );
        assert!(AggregatorSpec::bulyan_default(10, 3).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(AggregatorSpec::TrimmedMean { beta: 2 }.validate(5).is_ok());
        assert!(AggregatorSpec::TrimmedMean { beta: 3 }.validate(5).is_err());
        assert!(AggregatorSpec::Krum { c: 2 }.validate(4).is_err());
        assert!(AggregatorSpec::Mean.validate(0).is_err());
    }

    #[test]
    fn leave_one_out_small_example() {
        let models = scalars(&[0.0, 1.0, 100.0]);
        let loo = leave_one_out(&AggregatorSpec::Mean, &models).unwrap();
        let got: Vec<f64> = loo.without.iter().map(|w| w[0]).collect();
        assert_eq!(got, vec![50.5, 50.0, 0.5]);
        assert!(leave_one_out(&AggregatorSpec::Mean, &models[..1]).is_err());
        assert!(leave_one_out(&AggregatorSpec::TrimmedMean { beta: 1 }, &models).is_err());
    }

    fn random_models(m: usize, d: usize, seed: u64) -> Vec<ParameterVector> {
        use rand::Rng;
        let mut rng = crate::RngStream::new(seed, "models");
        (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..d)
                    .map(|_| if rng.random_bool(0.2) { 0.5 } else { rng.random_range(-2.0..2.0) })
                    .collect();
                ParameterVector::new(v).unwrap()
            })
            .collect()
    }

    #[test]
    fn leave_one_out_matches_direct_aggregation() {
        let specs = [
            AggregatorSpec::Mean,
            AggregatorSpec::TrimmedMean { beta: 0 },
            AggregatorSpec::TrimmedMean { beta: 2 },
            AggregatorSpec::Median,
            AggregatorSpec::Krum { c: 2 },
            AggregatorSpec::Bulyan { c: 1, theta: 5, gamma: 3 },
        ];
        for seed in 0..20 {
            for m in [8, 9] {
                let models = random_models(m, 6, seed);
                for spec in &specs {
                    let loo = leave_one_out(spec, &models).unwrap();
                    assert_eq!(loo.all, spec.aggregate(&models).unwrap());
                    for i in 0..m {
                        let mut rest = models.clone();
                        rest.remove(i);
                        let direct = spec.aggregate(&rest).unwrap();
                        for j in 0..6 {
                            assert!(
                                (direct[j] - loo.without[i][j]).abs() < 1e-12,
                                "{spec:?} m={m} i={i} j={j}: {} vs {}",
                                direct[j],
                                loo.without[i][j]
                            );
                        }
                    }
                }
            }
        }
    }

    fn instance() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=7, 1usize..=4).prop_flat_map(|(m, d)| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), m))
    }

    proptest! {
        #[test]
        fn rules_are_permutation_invariant(rows in instance(), rot in 0usize..7) {
            let models: Vec<ParameterVector> = rows.iter().map(|r| ParameterVector::new(r.clone()).unwrap()).collect();
            let m = models.len();
            let mut perm = models.clone();
            perm.rotate_left(rot % m);
            perm.reverse();
            let close = |a: &ParameterVector, b: &ParameterVector| a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-9);
            prop_assert!(close(&mean(&models).unwrap(), &mean(&perm).unwrap()));
            prop_assert_eq!(median(&models).unwrap(), median(&perm).unwrap());
            let beta = (m - 1) / 2;
            prop_assert_eq!(trimmed_mean(&models, beta).unwrap(), trimmed_mean(&perm, beta).unwrap());
            if m >= 4 {
                let (_, a) = krum(&models, 1).unwrap();
                let (_, b) = krum(&perm, 1).unwrap();
                let sa = krum_scores(&models, 1).unwrap();
                let min = sa.iter().copied().fold(f64::INFINITY, f64::min);
                // generic instances have a unique minimiser
                if sa.iter().filter(|&&s| s == min).count() == 1 {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn trimming_absorbs_one_outlier(rows in instance(), coord in 0usize..4) {
            let mut models: Vec<ParameterVector> = rows.iter().map(|r| ParameterVector::new(r.clone()).unwrap()).collect();
            prop_assume!(models.len() >= 3);
            let before = trimmed_mean(&models, 1).unwrap();
            let j = coord % models[0].dim();
            // push the current column maximum further out; it stays trimmed
            let i = (0..models.len()).max_by(|&a, &b| models[a][j].total_cmp(&models[b][j])).unwrap();
            let mut v = models[i].clone().into_inner();
            v[j] += 1000.0;
            models[i] = ParameterVector::new(v).unwrap();
            prop_assert_eq!(before, trimmed_mean(&models, 1).unwrap());
        }
    }
}
