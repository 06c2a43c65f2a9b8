//! End-to-end behaviour of the simulation loop on small synthetic data.

use fedpoison::aggregation::AggregatorSpec;
use fedpoison::data::Partition;
use fedpoison::defenses::DefenseKind;
use fedpoison::harness::{
    run_experiment, run_experiment_with, AttackChoice, DatasetSource, ExperimentConfig, ExperimentData, RuleChoice,
    Simulation,
};
use fedpoison::models::{local_update, Objective};
use fedpoison::attacks::KnowledgeMode;

fn blobs(devices: usize, compromised: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Blobs,
        classes: Some(4),
        blob_features: 5,
        blob_per_class: 100,
        blob_spread: 0.3,
        test_fraction: 0.25,
        validation_size: 20,
        devices,
        compromised,
        iterations: 30,
        learning_rate: 0.5,
        batch_size: 8,
        loss_sample: 0,
        seed: 11,
        ..ExperimentConfig::default()
    }
}

#[test]
fn single_device_is_centralized_sgd() {
    let config = ExperimentConfig { devices: 1, compromised: 0, ..blobs(4, 0) };
    let data = ExperimentData::load(&config).unwrap();
    let partition = Partition::from_assignment(vec![0; data.train.len()], 1).unwrap();
    let sim = Simulation::with_partition(&config, &data, 0, partition).unwrap();
    let all: Vec<usize> = (0..data.train.len()).collect();
    let objective = Objective::new(sim.model_spec(), &data.train, &all).unwrap();

    let mut global = sim.initial_model();
    for t in 0..5 {
        let expected = local_update(&objective, &global, 0.5, 1, 8, &mut sim.sgd_stream(t, 0)).unwrap();
        global = sim.run_iteration(&global, t).unwrap().global;
        assert_eq!(global, expected, "iteration {t}");
    }
}

#[test]
fn no_poisoned_iterations_match_no_attack() {
    let clean = ExperimentConfig { rule: RuleChoice::TrimmedMean, ..blobs(8, 2) };
    let gated = ExperimentConfig { attack: AttackChoice::TrimmedMean, poison_fraction: 0.0, ..clean.clone() };
    let data = ExperimentData::load(&clean).unwrap();
    let a = run_experiment_with(&clean, &data).unwrap();
    let b = run_experiment_with(&gated, &data).unwrap();
    assert_eq!(a.trials[0].records, b.trials[0].records);
    assert_eq!(a.trials[0].final_model, b.trials[0].final_model);
}

#[test]
fn no_compromised_devices_match_no_attack() {
    let clean = ExperimentConfig { rule: RuleChoice::Krum, ..blobs(8, 0) };
    let data = ExperimentData::load(&clean).unwrap();
    let baseline = run_experiment_with(&clean, &data).unwrap();
    for attack in [AttackChoice::Krum, AttackChoice::TrimmedMean, AttackChoice::Gaussian] {
        let config = ExperimentConfig { attack, ..clean.clone() };
        let attacked = run_experiment_with(&config, &data).unwrap();
        assert_eq!(attacked.trials[0].final_model, baseline.trials[0].final_model, "{attack:?}");
        for (x, y) in attacked.trials[0].records.iter().zip(&baseline.trials[0].records) {
            assert_eq!((x.train_loss, x.test_error, x.validation_error), (y.train_loss, y.test_error, y.validation_error));
        }
    }
}

#[test]
fn records_follow_the_schedule() {
    let config = ExperimentConfig {
        rule: RuleChoice::Median,
        attack: AttackChoice::Median,
        poison_fraction: 0.4,
        trials: 2,
        ..blobs(8, 2)
    };
    let result = run_experiment(&config).unwrap();
    for trial in &result.trials {
        assert_eq!(trial.records.len(), 30);
        assert_eq!(trial.records.iter().filter(|r| r.attack_active).count(), 12);
        assert!(trial.records.iter().enumerate().all(|(t, r)| r.iteration == t));
    }
}

#[test]
fn benign_training_learns_blobs() {
    let config = ExperimentConfig { iterations: 60, ..blobs(8, 0) };
    let result = run_experiment(&config).unwrap();
    assert!(result.mean_test_error() < 0.1, "{}", result.mean_test_error());
}

#[test]
fn label_flipping_raises_error() {
    let clean = ExperimentConfig { noniid: 0.8, iterations: 60, ..blobs(8, 3) };
    let flipped = ExperimentConfig { attack: AttackChoice::LabelFlip, ..clean.clone() };
    let e_clean = run_experiment(&clean).unwrap().mean_test_error();
    let e_flip = run_experiment(&flipped).unwrap().mean_test_error();
    assert!(e_flip > e_clean, "flip {e_flip} vs clean {e_clean}");
}

#[test]
fn defense_filters_between_crafting_and_aggregation() {
    let config = ExperimentConfig {
        rule: RuleChoice::TrimmedMean,
        attack: AttackChoice::TrimmedMean,
        knowledge: KnowledgeMode::Partial,
        defense: DefenseKind::Union,
        ..blobs(12, 2)
    };
    let data = ExperimentData::load(&config).unwrap();
    let sim = Simulation::new(&config, &data, 0).unwrap();
    let mut global = sim.initial_model();
    for t in 0..5 {
        let out = sim.run_iteration(&global, t).unwrap();
        let defense = out.defense.as_ref().unwrap();
        let survivors = defense.survivors(&out.submitted);
        assert_eq!(out.global, AggregatorSpec::TrimmedMean { beta: 2 }.aggregate(&survivors).unwrap());
        let removed_ids: Vec<usize> = defense.removed.iter().map(|&p| out.submitted.devices()[p]).collect();
        assert_eq!(out.record.removed, removed_ids);
        for ids in [&out.record.err_removed, &out.record.lfr_removed] {
            assert!(ids.as_ref().unwrap().iter().all(|d| out.record.removed.contains(d)));
        }
        global = out.global;
    }
}

#[test]
fn compromised_devices_train_honestly_before_crafting() {
    let attacked = ExperimentConfig { rule: RuleChoice::Krum, attack: AttackChoice::Krum, knowledge: KnowledgeMode::Partial, ..blobs(12, 3) };
    let clean = ExperimentConfig { attack: AttackChoice::None, ..attacked.clone() };
    let data = ExperimentData::load(&attacked).unwrap();
    let sim_attacked = Simulation::new(&attacked, &data, 0).unwrap();
    let sim_clean = Simulation::new(&clean, &data, 0).unwrap();
    let global = sim_attacked.initial_model();
    let before = sim_attacked.before_attack_models(&global, 0).unwrap();
    let honest = sim_clean.run_iteration(&global, 0).unwrap().submitted;
    assert_eq!(before.models(), honest.models());
    let out = sim_attacked.run_iteration(&global, 0).unwrap();
    if out.record.lambda.is_some() {
        for p in out.submitted.compromised_positions() {
            assert_ne!(out.submitted[p], before[p]);
        }
    }
}

#[test]
fn bulyan_and_subsampling_run_end_to_end() {
    let config = ExperimentConfig {
        rule: RuleChoice::Bulyan,
        attack: AttackChoice::Bulyan,
        sampled_devices: Some(20),
        ..blobs(24, 3)
    };
    let result = run_experiment(&config).unwrap();
    assert!(result.trials[0].records.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn identical_configs_give_identical_runs() {
    let config = ExperimentConfig {
        rule: RuleChoice::Krum,
        attack: AttackChoice::Krum,
        defense: DefenseKind::Lfr,
        poison_fraction: 0.5,
        trials: 2,
        ..blobs(12, 2)
    };
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    for (x, y) in a.trials.iter().zip(&b.trials) {
        assert_eq!(x.records, y.records);
        assert_eq!(x.final_model, y.final_model);
    }
}

#[test]
fn compromised_devices_are_a_seeded_subset() {
    let config = ExperimentConfig { trials: 2, ..blobs(20, 4) };
    let data = ExperimentData::load(&config).unwrap();
    let first = Simulation::new(&config, &data, 0).unwrap().compromised_devices();
    assert_eq!(first.len(), 4);
    assert!(first.windows(2).all(|w| w[0] < w[1]) && first[3] < 20);
    let mut groups: Vec<usize> = first.iter().map(|d| d % 4).collect();
    groups.sort_unstable();
    assert_eq!(groups, vec![0, 1, 2, 3]);
    assert_eq!(first, Simulation::new(&config, &data, 0).unwrap().compromised_devices());
    let global = Simulation::new(&config, &data, 0).unwrap().initial_model();
    let set = Simulation::new(&config, &data, 0).unwrap().before_attack_models(&global, 0).unwrap();
    let marked: Vec<usize> = set.compromised_positions().into_iter().map(|p| set.devices()[p]).collect();
    assert_eq!(marked, first);
}
