mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xnet::bench::{find_task, sample_task, Which};
use xnet::data::Dataset;
use xnet::expr::ExprTree;
use xnet::trainer::{stratified_split, train, train_classifier, train_no_parameter, train_observed, TrainConfig};

fn task_data(name: &str) -> Dataset {
    let task = find_task(name).unwrap();
    sample_task(&task, Which::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn formula_r2(formula: &str, data: &Dataset) -> f64 {
    let expr = support::parse(formula);
    let y_hat: Vec<f64> = data.x.iter().map(|x| expr.eval(x)).collect();
    support::reference_r2(&data.y, &y_hat)
}

#[test]
fn exported_formulas_reproduce_training_fit() {
    for name in ["nguyen-1", "nguyen-8", "nguyen-10"] {
        let data = task_data(name);
        let report = train(&data, &TrainConfig { restarts: 2, ..TrainConfig::default() }).unwrap();
        let rounded = formula_r2(&report.formula, &data);
        let exact = formula_r2(&report.best_tree.to_formula_exact(), &data);
        assert!((rounded - report.r2_train).abs() <= 0.01, "{name}: {} vs {rounded}", report.r2_train);
        assert!((exact - report.r2_train).abs() <= 1e-9, "{name}: {} vs {exact}", report.r2_train);
    }
}

#[test]
fn identical_seeds_give_identical_reports() {
    let data = task_data("nguyen-6");
    let cfg = TrainConfig { restarts: 2, max_epochs: 300, seed: 4, ..TrainConfig::default() };
    let a = serde_json::to_string(&train(&data, &cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&train(&data, &cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_counts_match_the_tree() {
    let data = task_data("nguyen-2");
    let r = train(&data, &TrainConfig { restarts: 1, max_epochs: 200, ..TrainConfig::default() }).unwrap();
    let nodes = support::preorder(r.best_tree.root());
    assert_eq!(r.parameters, 2 * nodes.len());
    assert_eq!(r.operator_nodes, nodes.iter().filter(|n| n.left.is_some()).count());
}

fn reference_tree_r2(t: &ExprTree, data: &Dataset) -> f64 {
    let y_hat: Vec<f64> = data.x.iter().map(|x| support::reference_eval(t.root(), x)).collect();
    support::reference_r2(&data.y, &y_hat)
}

#[test]
fn frozen_run_keeps_parameters_and_reports_an_observed_tree() {
    let data = task_data("nguyen-5");
    let cfg = TrainConfig { restarts: 1, max_epochs: 100, no_parameter_mode: true, ..TrainConfig::default() };
    let mut frozen = true;
    let mut best_seen = f64::NEG_INFINITY;
    let r = train_observed(&data, &cfg, &mut |t| {
        frozen &= t.params().iter().all(|&(w, b)| w == 1.0 && b == 0.0);
        let r2 = reference_tree_r2(t, &data);
        if r2.is_finite() {
            best_seen = best_seen.max(r2);
        }
    })
    .unwrap();
    assert!(frozen);
    assert!(r.no_parameter_mode);
    assert!((r.r2_train - reference_tree_r2(&r.best_tree, &data)).abs() < 1e-9);
    assert!(r.r2_train <= best_seen + 1e-9);
    let start = ExprTree::init_default(1).unwrap();
    assert!(r.r2_train >= reference_tree_r2(&start, &data));

    let again = train_no_parameter(&data, &TrainConfig { restarts: 1, max_epochs: 100, ..TrainConfig::default() }).unwrap();
    assert_eq!(again.r2_train, r.r2_train);
}

#[test]
fn identity_target_is_fit_quickly() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![-1.0 + i as f64 / 10.0]).collect();
    let y = x.iter().map(|r| r[0]).collect();
    let data = Dataset::new(x, y).unwrap();
    let r = train(&data, &TrainConfig::default()).unwrap();
    assert!(r.r2_train >= 0.99);
}

#[test]
fn separable_blobs_are_classified() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..50 {
        let c = (i % 2) as f64;
        let centre = if c == 0.0 { -2.0 } else { 2.0 };
        x.push(vec![centre + rng.gen_range(-0.5..0.5), centre + rng.gen_range(-0.5..0.5)]);
        y.push(c);
    }
    let data = Dataset::new(x, y).unwrap();
    // A linear rule separates the blobs, so the task is well posed.
    let beta = support::ols_fit(&data.x, &data.y);
    assert!(data.x.iter().zip(&data.y).all(|(x, y)| (support::ols_predict(&beta, x) > 0.5) == (*y == 1.0)));

    let (train_set, test_set) = stratified_split(&data, 2, 0.7, 0).unwrap();
    let cfg = TrainConfig { restarts: 2, max_epochs: 300, ..TrainConfig::default() };
    let report = train_classifier(&train_set, &test_set, 2, &cfg).unwrap();
    assert!(report.test_accuracy >= 0.95, "{}", report.test_accuracy);
    assert!(train_classifier(&train_set, &test_set, 1, &cfg).is_err());
}
