use std::collections::BTreeSet;

use firalkit::config::{DataSource, ExperimentConfig, Solver};
use firalkit::data::{generate_synthetic, SyntheticSpec};
use firalkit::experiment::{make_split, run_on_dataset, SelectionReport};

fn blobs(classes: usize, dim: usize, per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        classes,
        dim,
        points_per_class: per_class,
        spread: 0.5,
        imbalance: 1,
        seed,
    }
}

fn config(
    spec: &SyntheticSpec,
    solvers: &[Solver],
    budget: usize,
    rounds: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(spec.clone()),
        solvers: solvers.to_vec(),
        budget,
        rounds,
        seed: 7,
        ..Default::default()
    }
}

fn run(cfg: &ExperimentConfig) -> SelectionReport {
    let DataSource::Synthetic(spec) = &cfg.data else {
        unreachable!()
    };
    run_on_dataset(cfg, &generate_synthetic(spec).unwrap()).unwrap()
}

#[test]
fn report_matches_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/selection_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let cfg = config(
        &blobs(3, 3, 20, 1),
        &[
            Solver::Approx,
            Solver::Random,
            Solver::Kmeans,
            Solver::Entropy,
        ],
        3,
        2,
    );
    let report = run(&cfg);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let csv_path = report.write(&path).unwrap();
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&value)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");

    let back: SelectionReport = serde_json::from_value(value).unwrap();
    assert_eq!(back.without_timings(), report.without_timings());

    // header plus (rounds + 1) rows per method
    let csv = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
}

#[test]
fn schema_rejects_missing_fields() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/selection_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report = run(&config(&blobs(2, 2, 10, 2), &[Solver::Random], 2, 1));
    let mut value = serde_json::to_value(&report).unwrap();
    value["methods"][0]["rounds"][0]
        .as_object_mut()
        .unwrap()
        .remove("pool_accuracy");
    assert!(!validator.is_valid(&value));
}

#[test]
fn fixed_seed_runs_are_identical() {
    let cfg = config(
        &blobs(3, 4, 15, 3),
        &[Solver::Approx, Solver::Exact, Solver::Kmeans],
        3,
        2,
    );
    assert_eq!(run(&cfg).without_timings(), run(&cfg).without_timings());
}

#[test]
fn labeled_and_pool_stay_disjoint() {
    let cfg = config(
        &blobs(3, 3, 20, 4),
        &[Solver::Approx, Solver::Random, Solver::Entropy],
        4,
        3,
    );
    let report = run(&cfg);
    let eval: BTreeSet<usize> = report.split.eval.iter().copied().collect();
    let pool: BTreeSet<usize> = report.split.initial_pool.iter().copied().collect();
    for m in &report.methods {
        let mut labeled: BTreeSet<usize> = report.split.initial_labeled.iter().copied().collect();
        assert!(labeled.is_disjoint(&pool));
        for r in &m.rounds[1..] {
            assert_eq!(r.selected.len(), cfg.budget);
            for &i in &r.selected {
                assert!(pool.contains(&i), "{i} was never in the pool");
                assert!(!eval.contains(&i));
                assert!(labeled.insert(i), "{} picked {i} twice", m.solver.name());
            }
            assert_eq!(r.num_labeled, labeled.len());
            assert_eq!(
                r.pool_remaining,
                pool.len() - (labeled.len() - report.split.initial_labeled.len())
            );
        }
    }
}

#[test]
fn random_smoke_run() {
    let report = run(&config(&blobs(2, 2, 10, 5), &[Solver::Random], 2, 1));
    let m = report.method(Solver::Random).unwrap();
    assert_eq!(m.rounds.len(), 2);
    assert!(m.rounds[1].relax.is_none());
    assert!((0.0..=1.0).contains(&m.final_round().pool_accuracy));
}

#[test]
fn budget_can_exhaust_the_pool() {
    let spec = blobs(2, 2, 10, 6);
    let data = generate_synthetic(&spec).unwrap();
    let mut cfg = config(
        &spec,
        &[Solver::Approx, Solver::Exact, Solver::Random],
        1,
        1,
    );
    let split = make_split(
        data.labels.as_ref().unwrap(),
        2,
        cfg.eval_fraction,
        cfg.init_per_class,
        cfg.seed,
    )
    .unwrap();
    let pool = split.initial_pool.len();
    assert!(pool % 2 == 0 && pool >= 4);
    cfg.budget = pool / 2;
    cfg.rounds = 2;
    let report = run_on_dataset(&cfg, &data).unwrap();
    for m in &report.methods {
        assert_eq!(m.final_round().pool_remaining, 0, "{}", m.solver.name());
    }

    cfg.rounds = 3;
    assert!(run_on_dataset(&cfg, &data).is_err());
}

/// Tracked metric: the fast and exact solvers should mostly agree on small
/// problems.
#[test]
fn approx_and_exact_pick_overlapping_batches() {
    let spec = blobs(3, 4, 40, 8);
    let mut cfg = config(&spec, &[Solver::Approx, Solver::Exact], 5, 2);
    // all 120 points minus 60 held out leaves a pool of 57
    cfg.eval_fraction = 0.5;
    let report = run(&cfg);
    let approx = report.method(Solver::Approx).unwrap();
    let exact = report.method(Solver::Exact).unwrap();
    let (mut shared, mut total) = (0, 0);
    for (a, e) in approx.rounds[1..].iter().zip(&exact.rounds[1..]) {
        let a: BTreeSet<_> = a.selected.iter().collect();
        shared += e.selected.iter().filter(|i| a.contains(i)).count();
        total += e.selected.len();
    }
    let overlap = shared as f64 / total as f64;
    println!("approx/exact overlap {overlap:.2}");
    assert!(overlap >= 0.6, "overlap {overlap:.2}");
}
