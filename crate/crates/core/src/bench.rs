//! Nguyen benchmark suite, sampling, extrapolation scoring and table sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Result, XnetError};
use crate::expr::ExprTree;
use crate::mlp::{mlp_sweep, MlpSpec, SWEEP_WIDTHS};
use crate::numerics::{predict_all, r_squared, NumericLimits};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone)]
pub struct BenchmarkTask {
    pub name: String,
    /// Human-readable ground truth.
    pub expression: String,
    pub ground_truth: fn(&[f64]) -> f64,
    pub input_dim: usize,
    pub train_range: Vec<(f64, f64)>,
    pub test_range: Vec<(f64, f64)>,
    pub train_points: usize,
    pub test_points: usize,
}

impl BenchmarkTask {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.ground_truth)(x)
    }

    fn in_train_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.train_range).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

fn task(name: &str, expression: &str, f: fn(&[f64]) -> f64, train: Vec<(f64, f64)>, test: Vec<(f64, f64)>) -> BenchmarkTask {
    BenchmarkTask {
        name: name.to_string(),
        expression: expression.to_string(),
        ground_truth: f,
        input_dim: train.len(),
        train_range: train,
        test_range: test,
        train_points: 100,
        test_points: 500,
    }
}

pub fn nguyen_suite() -> Vec<BenchmarkTask> {
    let std1 = || vec![(-2.0, 2.0)];
    let wide1 = || vec![(-5.0, 5.0)];
    let std2 = || vec![(-2.0, 2.0), (-2.0, 2.0)];
    let wide2 = || vec![(-5.0, 5.0), (-5.0, 5.0)];
    vec![
        task("nguyen-1", "x1^3 + x1^2 + x1", |x| x[0].powi(3) + x[0].powi(2) + x[0], std1(), wide1()),
        task("nguyen-2", "x1^4 + x1^3 + x1^2 + x1", |x| x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0], std1(), wide1()),
        task(
            "nguyen-3",
            "x1^5 + x1^4 + x1^3 + x1^2 + x1",
            |x| x[0].powi(5) + x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
            std1(),
            wide1(),
        ),
        task(
            "nguyen-4",
            "x1^6 + x1^5 + x1^4 + x1^3 + x1^2 + x1",
            |x| x[0].powi(6) + x[0].powi(5) + x[0].powi(4) + x[0].powi(3) + x[0].powi(2) + x[0],
            std1(),
            wide1(),
        ),
        task("nguyen-5", "sin(x1^2)*cos(x1) - 1", |x| (x[0] * x[0]).sin() * x[0].cos() - 1.0, std1(), wide1()),
        task("nguyen-6", "sin(x1) + sin(x1 + x1^2)", |x| x[0].sin() + (x[0] + x[0] * x[0]).sin(), std1(), wide1()),
        task(
            "nguyen-7",
            "log(x1 + 1) + log(x1^2 + 1)",
            |x| (x[0] + 1.0).ln() + (x[0] * x[0] + 1.0).ln(),
            vec![(0.0, 2.0)],
            vec![(0.0, 5.0)],
        ),
        task("nguyen-8", "sqrt(x1)", |x| x[0].sqrt(), vec![(0.0, 2.0)], vec![(0.0, 5.0)]),
        task("nguyen-9", "sin(x1) + sin(x2^2)", |x| x[0].sin() + (x[1] * x[1]).sin(), std2(), wide2()),
        task("nguyen-10", "2*sin(x1)*cos(x2)", |x| 2.0 * x[0].sin() * x[1].cos(), std2(), wide2()),
        task(
            "nguyen-11",
            "x1^x2",
            |x| x[0].powf(x[1]),
            vec![(0.1, 2.0), (0.0, 2.0)],
            vec![(0.1, 5.0), (0.0, 5.0)],
        ),
        task(
            "nguyen-12",
            "x1^4 - x1^3 + 0.5*x2^2 - x2",
            |x| x[0].powi(4) - x[0].powi(3) + 0.5 * x[1] * x[1] - x[1],
            std2(),
            wide2(),
        ),
    ]
}

pub fn find_task(name: &str) -> Result<BenchmarkTask> {
    let key = name.to_ascii_lowercase().replace('_', "-");
    nguyen_suite()
        .into_iter()
        .find(|t| t.name == key || t.name.trim_start_matches("nguyen-") == key)
        .ok_or_else(|| XnetError::InvalidInput(format!("unknown task '{name}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Train,
    Test,
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
}

/// Uniform points inside the test box but outside the training box.
fn sample_outside<R: Rng + ?Sized>(task: &BenchmarkTask, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = uniform_in(rng, &task.test_range);
        if !task.in_train_box(&x) {
            out.push(x);
        }
    }
    out
}

fn labelled(task: &BenchmarkTask, x: Vec<Vec<f64>>, provenance: String) -> Result<Dataset> {
    let y = x.iter().map(|r| task.eval(r)).collect();
    let names = (0..task.input_dim).map(|i| format!("x{}", i + 1)).collect();
    Dataset::with_names(x, y, names, "y".into(), provenance)
}

/// Training points are uniform in the training box. Test points are half
/// uniform in the training box and half uniform in the test box minus the
/// training box.
pub fn sample_task<R: Rng + ?Sized>(task: &BenchmarkTask, which: Which, rng: &mut R) -> Result<Dataset> {
    let x = match which {
        Which::Train => (0..task.train_points).map(|_| uniform_in(rng, &task.train_range)).collect(),
        Which::Test => {
            let inside = task.test_points / 2;
            let mut x: Vec<Vec<f64>> = (0..inside).map(|_| uniform_in(rng, &task.train_range)).collect();
            x.extend(sample_outside(task, task.test_points - inside, rng));
            x
        }
    };
    labelled(task, x, format!("{}:{:?}", task.name, which).to_lowercase())
}

/// Evenly spaced points over the training box (a full grid in two
/// dimensions, with `ceil(sqrt(n))` points per axis).
pub fn grid_task(task: &BenchmarkTask) -> Result<Dataset> {
    let per_axis = if task.input_dim == 1 {
        task.train_points
    } else {
        (task.train_points as f64).sqrt().ceil() as usize
    };
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..per_axis)
            .map(|i| lo + (hi - lo) * i as f64 / (per_axis.max(2) - 1) as f64)
            .collect()
    };
    let mut x: Vec<Vec<f64>> = vec![vec![]];
    for &b in &task.train_range {
        x = x
            .into_iter()
            .flat_map(|p| {
                axis(b).into_iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    labelled(task, x, format!("{}:grid", task.name))
}

fn tree_r2(tree: &ExprTree, data: &Dataset, limits: &NumericLimits) -> Result<f64> {
    let y_hat = predict_all(tree, &data.x, limits)?;
    r_squared(&data.y, &y_hat)
}

/// R² of a tree on fresh in-range points and on fresh points strictly
/// outside the training box (`test_points / 2` each).
pub fn evaluate_extrapolation<R: Rng + ?Sized>(
    tree: &ExprTree,
    task: &BenchmarkTask,
    limits: &NumericLimits,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = (task.test_points / 2).max(2);
    let inside = labelled(task, (0..n).map(|_| uniform_in(rng, &task.train_range)).collect(), "in".into())?;
    let outside = labelled(task, sample_outside(task, n, rng), "out".into())?;
    Ok((tree_r2(tree, &inside, limits)?, tree_r2(tree, &outside, limits)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub train: TrainConfig,
    /// Number of seeds per (task, method) cell.
    pub seeds: usize,
    pub base_seed: u64,
    pub train_points: usize,
    pub test_points: usize,
    /// Restrict the sweep to these task names; empty means all twelve.
    pub tasks: Vec<String>,
    pub mlp: MlpSpec,
    pub mlp_widths: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train: TrainConfig::default(),
            seeds: 10,
            base_seed: 0,
            train_points: 100,
            test_points: 500,
            tasks: Vec::new(),
            mlp: MlpSpec::new(vec![1, 1]),
            mlp_widths: SWEEP_WIDTHS.to_vec(),
        }
    }
}

impl BenchConfig {
    fn selected_tasks(&self) -> Result<Vec<BenchmarkTask>> {
        let mut tasks = if self.tasks.is_empty() {
            nguyen_suite()
        } else {
            self.tasks.iter().map(|t| find_task(t)).collect::<Result<_>>()?
        };
        for t in &mut tasks {
            t.train_points = self.train_points;
            t.test_points = self.test_points;
        }
        Ok(tasks)
    }
}

/// One (task, method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub task: String,
    pub method: String,
    pub seed: u64,
    pub r2_in: Option<f64>,
    pub r2_out: Option<f64>,
    pub nodes: Option<usize>,
    pub params: Option<usize>,
    pub epochs: Option<usize>,
    /// Kept out of the JSON report so repeated runs compare byte for byte.
    #[serde(skip_serializing)]
    pub seconds: f64,
    pub formula: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and population standard deviation; `None` for an empty sample.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub task: String,
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub r2_in: Option<MeanStd>,
    pub r2_out: Option<MeanStd>,
    pub nodes: Option<MeanStd>,
    pub params: Option<MeanStd>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub table: String,
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.task.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(task, method)| {
            let cell: Vec<&BenchRow> = rows.iter().filter(|r| r.task == task && r.method == method).collect();
            let col = |f: &dyn Fn(&BenchRow) -> Option<f64>| mean_std(&cell.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            BenchSummary {
                runs: cell.len(),
                failures: cell.iter().filter(|r| r.error.is_some()).count(),
                r2_in: col(&|r| r.r2_in),
                r2_out: col(&|r| r.r2_out),
                nodes: col(&|r| r.nodes.map(|v| v as f64)),
                params: col(&|r| r.params.map(|v| v as f64)),
                task,
                method,
            }
        })
        .collect()
}

fn empty_row(task: &str, method: &str, seed: u64) -> BenchRow {
    BenchRow {
        task: task.to_string(),
        method: method.to_string(),
        seed,
        r2_in: None,
        r2_out: None,
        nodes: None,
        params: None,
        epochs: None,
        seconds: 0.0,
        formula: None,
        error: None,
    }
}

fn xnet_cell(task: &BenchmarkTask, cfg: &BenchConfig, seed: u64, no_parameter: bool, extrapolate: bool) -> BenchRow {
    let method = if no_parameter { "xnet-noparam" } else { "xnet" };
    let mut row = empty_row(&task.name, method, seed);
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = sample_task(task, Which::Train, &mut rng)?;
        let tc = TrainConfig {
            seed,
            no_parameter_mode: no_parameter,
            ..cfg.train
        };
        let report = train(&data, &tc)?;
        row.nodes = Some(report.operator_nodes);
        row.params = Some(report.parameters);
        row.epochs = Some(report.epochs_used);
        row.formula = Some(report.formula.clone());
        if extrapolate {
            let (r_in, r_out) = evaluate_extrapolation(&report.best_tree, task, &tc.limits, &mut rng)?;
            row.r2_in = Some(r_in);
            row.r2_out = Some(r_out);
        } else {
            row.r2_in = Some(report.r2_train);
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row.seconds = start.elapsed().as_secs_f64();
    row
}

fn mlp_cell(task: &BenchmarkTask, cfg: &BenchConfig, seed: u64) -> BenchRow {
    let mut row = empty_row(&task.name, "mlp", seed);
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = sample_task(task, Which::Train, &mut rng)?;
        let spec = MlpSpec { seed, ..cfg.mlp.clone() };
        let r = mlp_sweep(&data, &spec, &cfg.mlp_widths, cfg.train.target_r2)?;
        row.r2_in = Some(r.r2_train);
        row.nodes = Some(r.node_count);
        row.params = Some(r.param_count);
        row.epochs = Some(r.epochs_used);
        row.formula = Some(format!("{:?}", r.layer_sizes));
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row.seconds = start.elapsed().as_secs_f64();
    row
}

#[derive(Clone, Copy)]
enum Method {
    Xnet,
    XnetNoParam,
    Mlp,
}

fn sweep(cfg: &BenchConfig, methods: &[Method], extrapolate: bool) -> Result<Vec<BenchRow>> {
    let tasks = cfg.selected_tasks()?;
    let mut cells = Vec::new();
    for t in &tasks {
        for &m in methods {
            for s in 0..cfg.seeds {
                cells.push((t, m, cfg.base_seed + s as u64));
            }
        }
    }
    Ok(cells
        .par_iter()
        .map(|&(t, m, seed)| match m {
            Method::Xnet => xnet_cell(t, cfg, seed, false, extrapolate),
            Method::XnetNoParam => xnet_cell(t, cfg, seed, true, extrapolate),
            Method::Mlp => mlp_cell(t, cfg, seed),
        })
        .collect())
}

/// Interpolation and extrapolation R² for the standard and no-parameter
/// variants.
pub fn run_table1(cfg: &BenchConfig) -> Result<BenchReport> {
    let rows = sweep(cfg, &[Method::Xnet, Method::XnetNoParam], true)?;
    Ok(BenchReport {
        table: "table1".into(),
        config: cfg.clone(),
        summary: summarize(&rows),
        rows,
    })
}

/// Final structure sizes of X-Net against the smallest MLP reaching the
/// target. `r2_in` holds the training R².
pub fn run_table2(cfg: &BenchConfig) -> Result<BenchReport> {
    let rows = sweep(cfg, &[Method::Xnet, Method::Mlp], false)?;
    Ok(BenchReport {
        table: "table2".into(),
        config: cfg.clone(),
        summary: summarize(&rows),
        rows,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    task: &'a str,
    method: &'a str,
    seed: u64,
    r2_in: Option<f64>,
    r2_out: Option<f64>,
    nodes: Option<usize>,
    params: Option<usize>,
    epochs: Option<usize>,
    seconds: f64,
}

/// Writes `<table>.json` and `<table>.csv` into `dir` and returns both paths.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join(format!("{}.json", report.table));
    let csv_path = dir.join(format!("{}.csv", report.table));
    fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &report.rows {
        w.serialize(CsvRow {
            task: &r.task,
            method: &r.method,
            seed: r.seed,
            r2_in: r.r2_in,
            r2_out: r.r2_out,
            nodes: r.nodes,
            params: r.params,
            epochs: r.epochs,
            seconds: r.seconds,
        })?;
    }
    w.flush()?;
    Ok((json_path, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_examples() {
        let s = nguyen_suite();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0].eval(&[1.0]), 3.0);
        assert_eq!(s[7].eval(&[4.0]), 2.0);
        assert_eq!(s[11].eval(&[0.0, 0.0]), 0.0);
        for t in &s {
            for (tr, te) in t.train_range.iter().zip(&t.test_range) {
                assert!(te.0 <= tr.0 && tr.1 <= te.1);
            }
        }
    }

    #[test]
    fn sampling_respects_ranges() {
        let t = find_task("nguyen-1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train = sample_task(&t, Which::Train, &mut rng).unwrap();
        assert_eq!(train.len(), 100);
        assert!(train.x.iter().all(|r| (-2.0..=2.0).contains(&r[0])));
        let test = sample_task(&t, Which::Test, &mut rng).unwrap();
        assert_eq!(test.len(), 500);
        assert_eq!(test.x.iter().filter(|r| r[0].abs() > 2.0).count(), 250);
        let mut a = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_task(&t, Which::Train, &mut a).unwrap(), train);
    }

    #[test]
    fn grid_covers_the_box() {
        let t = find_task("9").unwrap();
        let g = grid_task(&t).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.x[0], vec![-2.0, -2.0]);
        assert_eq!(g.x[99], vec![2.0, 2.0]);
    }

    #[test]
    fn summary_matches_rows() {
        let mut rows = Vec::new();
        for (s, v) in [0.5, 0.7, 0.9].into_iter().enumerate() {
            let mut r = empty_row("t", "m", s as u64);
            r.r2_in = Some(v);
            rows.push(r);
        }
        let sum = summarize(&rows);
        assert_eq!(sum.len(), 1);
        let m = sum[0].r2_in.unwrap();
        assert!((m.mean - 0.7).abs() < 1e-15);
        assert!((m.std - (0.08f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(sum[0].r2_out.is_none());
    }
}
