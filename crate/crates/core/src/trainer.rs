//! Outer training loop: alternating parameter and structure steps, best-tree
//! tracking, stagnation handling, restarts and the per-class wrapper.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::backprop::{ada_alpha, backward, sgd_step_outputs, sgd_step_params, StepState};
use crate::data::Dataset;
use crate::error::{Result, XnetError};
use crate::evolve::{perturb_on_stagnation, update_all_kinds, SelectionConfig};
use crate::expr::ExprTree;
use crate::numerics::{forward, predict_all, r_squared, NumericLimits};

/// Relative tolerance under which a loss counts as unchanged.
const STAGNATION_RTOL: f64 = 1e-9;

/// Which loss feeds the stagnation counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StagnationScope {
    /// `Step` with frozen parameters, `Epoch` otherwise.
    Auto,
    /// The per-sample loss of every update step.
    Step,
    /// The full-dataset loss at the end of each epoch.
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub target_r2: f64,
    pub restarts: usize,
    pub no_parameter_mode: bool,
    /// Forward/backward passes per sample per epoch.
    pub micro_iterations: usize,
    pub stagnation_scope: StagnationScope,
    pub selection: SelectionConfig,
    pub step: StepState,
    pub limits: NumericLimits,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 2000,
            target_r2: 0.99,
            restarts: 10,
            no_parameter_mode: false,
            micro_iterations: 1,
            stagnation_scope: StagnationScope::Auto,
            selection: SelectionConfig::default(),
            step: StepState::default(),
            limits: NumericLimits::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.restarts == 0 || self.micro_iterations == 0 {
            return Err(XnetError::Config(
                "max_epochs, restarts and micro_iterations must be at least 1".into(),
            ));
        }
        if !(self.target_r2 > 0.0 && self.target_r2 <= 1.0) {
            return Err(XnetError::Config(format!("target_r2 must lie in (0, 1], got {}", self.target_r2)));
        }
        self.selection.validate()?;
        self.step.validate()?;
        self.limits.validate()
    }
}

fn tree_as_xnet<S: Serializer>(tree: &ExprTree, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&tree.to_xnet())
}

/// Outcome of a training run. Serializes with the tree in `.xnet` text form;
/// wall time is left out so identical runs give identical documents.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub r2_train: f64,
    pub r2_test: Option<f64>,
    pub operator_nodes: usize,
    pub parameters: usize,
    pub epochs_used: usize,
    pub restarts_used: usize,
    pub formula: String,
    #[serde(serialize_with = "tree_as_xnet")]
    pub best_tree: ExprTree,
    pub input_dim: usize,
    pub seed: u64,
    pub no_parameter_mode: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    fn from_tree(tree: ExprTree, r2: f64, epochs: usize, seed: u64, no_parameter_mode: bool) -> Self {
        let counts = tree.count_nodes();
        RunReport {
            r2_train: r2,
            r2_test: None,
            operator_nodes: counts.operators,
            parameters: counts.parameters,
            epochs_used: epochs,
            restarts_used: 0,
            formula: tree.to_formula(2),
            input_dim: tree.input_dim(),
            best_tree: tree,
            seed,
            no_parameter_mode,
            wall_time: Duration::ZERO,
        }
    }

    /// Fills in `r2_test` from a held-out set and returns it.
    pub fn score_test(&mut self, test: &Dataset, limits: &NumericLimits) -> Result<f64> {
        let r2 = score(&self.best_tree, test, limits)?;
        self.r2_test = Some(r2);
        Ok(r2)
    }
}

/// R² of a tree on a dataset.
pub fn score(tree: &ExprTree, data: &Dataset, limits: &NumericLimits) -> Result<f64> {
    let y_hat = predict_all(tree, &data.x, limits)?;
    r_squared(&data.y, &y_hat)
}

/// Keeps `current` when its R² is at least the best so far.
pub fn save_best(current: (&ExprTree, f64), best: (ExprTree, f64)) -> (ExprTree, f64) {
    if current.1 >= best.1 {
        (current.0.clone(), current.1)
    } else {
        best
    }
}

fn epoch_metrics(tree: &ExprTree, data: &Dataset, limits: &NumericLimits) -> Result<(f64, f64)> {
    let y_hat = predict_all(tree, &data.x, limits)?;
    let r2 = r_squared(&data.y, &y_hat)?;
    let loss = data.y.iter().zip(&y_hat).map(|(y, p)| 0.5 * (y - p).powi(2)).sum::<f64>() / data.len() as f64;
    let r2 = if r2.is_nan() { f64::NEG_INFINITY } else { r2 };
    Ok((r2, loss))
}

fn check_inputs(data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(XnetError::Config("training needs at least two samples".into()));
    }
    let first = data.y[0];
    if data.y.iter().all(|&v| v == first) {
        return Err(XnetError::UndefinedR2);
    }
    Ok(())
}

fn run_once(
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(&ExprTree),
) -> Result<RunReport> {
    let limits = &cfg.limits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = ExprTree::init_default(data.dim())?;
    let (r2, loss) = epoch_metrics(&tree, data, limits)?;
    let mut best = (tree.clone(), r2);
    let mut step = cfg.step;
    step.reset(loss);
    let mut stagnation = Stagnation::new();
    let per_step = match cfg.stagnation_scope {
        StagnationScope::Step => true,
        StagnationScope::Epoch => false,
        // Frozen parameters leave the epoch loss flat between structural
        // moves, so count at step level to keep perturbations coming.
        StagnationScope::Auto => cfg.no_parameter_mode,
    };
    let mut key: u64 = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let ite = cfg.selection.ite as u64;
    let mut epochs = 0;
    observer(&tree);

    while epochs < cfg.max_epochs && best.1 < cfg.target_r2 {
        epochs += 1;
        tree = best.0.clone();
        if !per_step && stagnation.perturb(&mut tree, cfg, data, &mut rng) {
            observer(&tree);
        }
        let alpha = ada_alpha(&step);
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = (&data.x[i], data.y[i]);
            for _ in 0..cfg.micro_iterations {
                let y_hat = forward(&mut tree, x, limits)?;
                let grads = backward(&tree, x, y, limits)?;
                let mut changed = false;
                if !key.is_multiple_of(ite) {
                    if !cfg.no_parameter_mode {
                        sgd_step_params(&mut tree, &grads, alpha);
                    }
                } else {
                    let e_new = sgd_step_outputs(&tree, &grads, alpha);
                    changed = update_all_kinds(&mut tree, &e_new, x, Some(&data.x), &cfg.selection, limits) > 0;
                }
                key += 1;
                if per_step {
                    stagnation.record(0.5 * (y - y_hat).powi(2));
                    changed |= stagnation.perturb(&mut tree, cfg, data, &mut rng);
                }
                // Structural changes are scored at once so a later step
                // cannot discard a better tree unseen.
                if changed {
                    let (r2, _) = epoch_metrics(&tree, data, limits)?;
                    best = save_best((&tree, r2), best);
                }
                observer(&tree);
            }
        }
        let (r2, loss) = epoch_metrics(&tree, data, limits)?;
        best = save_best((&tree, r2), best);
        step.record(loss);
        if !per_step {
            stagnation.record(loss);
        }
    }
    Ok(RunReport::from_tree(best.0, best.1, epochs, seed, cfg.no_parameter_mode))
}

/// Counts losses that do not fall below their predecessor.
struct Stagnation {
    count: usize,
    prev: f64,
}

impl Stagnation {
    fn new() -> Self {
        Stagnation {
            count: 0,
            prev: f64::INFINITY,
        }
    }

    fn record(&mut self, loss: f64) {
        if !(loss < self.prev * (1.0 - STAGNATION_RTOL)) {
            self.count += 1;
        }
        self.prev = loss;
    }

    fn perturb(&mut self, tree: &mut ExprTree, cfg: &TrainConfig, data: &Dataset, rng: &mut ChaCha8Rng) -> bool {
        let (changed, count) =
            perturb_on_stagnation(tree, self.count, &cfg.selection, Some(&data.x), &cfg.limits, rng);
        self.count = count;
        changed
    }
}

/// Trains with up to `cfg.restarts` restarts seeded `seed, seed + 1, …`,
/// stopping at the first restart that reaches the target. Returns the best
/// restart's report.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    train_observed(data, cfg, &mut |_| {})
}

/// As [`train`], calling `observer` on every intermediate tree.
pub fn train_observed(data: &Dataset, cfg: &TrainConfig, observer: &mut dyn FnMut(&ExprTree)) -> Result<RunReport> {
    check_inputs(data, cfg)?;
    let start = Instant::now();
    let mut best: Option<RunReport> = None;
    let mut used = 0;
    for r in 0..cfg.restarts {
        used += 1;
        let report = run_once(data, cfg, cfg.seed.wrapping_add(r as u64), observer)?;
        let reached = report.r2_train >= cfg.target_r2;
        if best.as_ref().is_none_or(|b| report.r2_train > b.r2_train) {
            best = Some(report);
        }
        if reached {
            break;
        }
    }
    let mut report = best.expect("at least one restart");
    report.restarts_used = used;
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Training with every `(w, b)` frozen at `(1, 0)`; only activations and
/// topology change.
pub fn train_no_parameter(data: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    let cfg = TrainConfig {
        no_parameter_mode: true,
        ..*cfg
    };
    train(data, &cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub n_classes: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub operator_nodes: usize,
    pub parameters: usize,
    pub class_reports: Vec<RunReport>,
}

impl ClassificationReport {
    pub fn predict(&self, x: &[f64], limits: &NumericLimits) -> Result<usize> {
        predict_class(&self.class_reports, x, limits)
    }
}

fn predict_class(reports: &[RunReport], x: &[f64], limits: &NumericLimits) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, r) in reports.iter().enumerate() {
        let v = crate::numerics::evaluate(&r.best_tree, x, limits)?;
        if v > best.1 {
            best = (c, v);
        }
    }
    Ok(best.0)
}

fn labels_of(data: &Dataset, n_classes: usize) -> Result<Vec<usize>> {
    data.y
        .iter()
        .map(|&v| {
            let c = v as usize;
            if v >= 0.0 && v.fract() == 0.0 && c < n_classes {
                Ok(c)
            } else {
                Err(XnetError::InvalidInput(format!("label {v} outside 0..{n_classes}")))
            }
        })
        .collect()
}

fn accuracy(reports: &[RunReport], data: &Dataset, labels: &[usize], limits: &NumericLimits) -> Result<f64> {
    let mut hits = 0;
    for (x, &l) in data.x.iter().zip(labels) {
        if predict_class(reports, x, limits)? == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class row indices shuffled with `seed` and cut at `fraction`, so each
/// class is represented in both halves in proportion.
pub fn stratified_split(data: &Dataset, n_classes: usize, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(XnetError::EmptySplit {
            fraction,
            rows: data.len(),
        });
    }
    let labels = labels_of(data, n_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == c).collect();
        rows.shuffle(&mut rng);
        let cut = (fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..cut]);
        test.extend_from_slice(&rows[cut..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(XnetError::EmptySplit {
            fraction,
            rows: data.len(),
        });
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select(&train), data.select(&test)))
}

/// One tree per class fitted to one-hot targets; prediction is the argmax of
/// the class outputs. `y` holds integer labels `0..n_classes`.
pub fn train_classifier(train_set: &Dataset, test_set: &Dataset, n_classes: usize, cfg: &TrainConfig) -> Result<ClassificationReport> {
    let train_labels = labels_of(train_set, n_classes)?;
    let test_labels = labels_of(test_set, n_classes)?;
    let present = (0..n_classes).filter(|c| train_labels.contains(c)).count();
    if n_classes < 2 || present < 2 {
        return Err(XnetError::Config("classification needs at least two classes in the training data".into()));
    }
    let mut reports = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let onehot: Vec<f64> = train_labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
        let class_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(1000 * c as u64),
            ..*cfg
        };
        let report = match train(&train_set.with_target(onehot), &class_cfg) {
            Ok(r) => r,
            // A class absent from the training rows gets a constant-zero tree.
            Err(XnetError::UndefinedR2) => {
                let t = ExprTree::new(crate::expr::Node::leaf(0).with_params(0.0, 0.0), train_set.dim())?;
                RunReport::from_tree(t, 0.0, 0, class_cfg.seed, cfg.no_parameter_mode)
            }
            Err(e) => return Err(e),
        };
        reports.push(report);
    }
    let limits = &cfg.limits;
    Ok(ClassificationReport {
        n_classes,
        train_accuracy: accuracy(&reports, train_set, &train_labels, limits)?,
        test_accuracy: accuracy(&reports, test_set, &test_labels, limits)?,
        operator_nodes: reports.iter().map(|r| r.operator_nodes).sum(),
        parameters: reports.iter().map(|r| r.parameters).sum(),
        class_reports: reports,
    })
}
