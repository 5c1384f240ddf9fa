//! Command-line front end: benchmark runs, table sweeps, CSV fits,
//! classification, model evaluation and formula export.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use xnet::bench::{evaluate_extrapolation, find_task, run_table1, run_table2, sample_task, write_report, BenchReport, Which};
use xnet::data::{load_csv, split, standardize, ColumnRef, Dataset, LoadStats, SplitMode};
use xnet::expr::ExprTree;
use xnet::trainer::{score, stratified_split, train, train_classifier, ClassificationReport, RunReport};

pub use config::{apply_config, load_config, Settings};

#[derive(Debug, Parser)]
#[command(name = "xnet", version, about = "Symbolic regression with expression-tree networks")]
pub struct Cli {
    /// File of key=value lines overriding the default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports and model files.
    #[arg(long, global = true, default_value = "xnet-out")]
    pub output_dir: PathBuf,
    /// Base seed. Falls back to the config file, then to XNET_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print settings and progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one benchmark task.
    Train {
        #[arg(long)]
        task: String,
        /// Freeze every weight at 1 and bias at 0.
        #[arg(long)]
        no_parameter: bool,
    },
    /// Fit and extrapolation sweep over the benchmark tasks.
    BenchTable1(BenchArgs),
    /// Structure size against the smallest MLP reaching the target.
    BenchTable2(BenchArgs),
    /// Fit a CSV column and export the formula in raw units.
    FitCsv {
        data: PathBuf,
        #[command(flatten)]
        columns: Columns,
        #[command(flatten)]
        prep: Prep,
    },
    /// One tree per class on integer labels.
    Classify {
        data: PathBuf,
        #[command(flatten)]
        columns: Columns,
        #[command(flatten)]
        prep: Prep,
        /// Number of classes; defaults to the largest label plus one.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// R² of a saved model on a CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Target column; defaults to the last one.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
    },
    /// Print a saved model as a formula.
    Export {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated variable names.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
        /// Decimal places; full precision when omitted.
        #[arg(long)]
        precision: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated task names; all twelve when omitted.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Seeds per cell; overrides the `seeds` key.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Columns {
    /// Target column, by header name or zero-based index.
    #[arg(long)]
    pub target: String,
    /// Comma-separated feature columns; all others when omitted.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct Prep {
    /// Training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, value_enum)]
    pub split_mode: Option<SplitArg>,
    #[arg(long, overrides_with = "no_standardize")]
    pub standardize: bool,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Random,
    Chronological,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "status": "error", "message": format!("{e:#}") }));
            1
        }
    }
}

/// Defaults, then XNET_SEED, then the config file, then `--seed`.
pub fn resolve_settings(cli: &Cli) -> Result<Settings> {
    let mut s = Settings::default();
    if let Ok(v) = std::env::var("XNET_SEED") {
        s.seed = v.trim().parse().map_err(|_| anyhow!("XNET_SEED must be an unsigned integer, got `{v}`"))?;
    }
    if let Some(path) = &cli.config {
        load_config(path, &mut s)?;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: &Cli) -> Result<()> {
    let mut s = resolve_settings(cli)?;
    match &cli.command {
        Command::Train { no_parameter: true, .. } => s.no_parameter_mode = true,
        Command::BenchTable1(a) | Command::BenchTable2(a) => {
            if let Some(n) = a.seeds {
                s.seeds = n;
            }
        }
        Command::FitCsv { prep, .. } | Command::Classify { prep, .. } => apply_prep(prep, &mut s),
        _ => {}
    }
    s.validate()?;
    if cli.verbose > 0 {
        eprintln!("settings: {}", serde_json::to_string(&s)?);
    }
    let out = &cli.output_dir;
    match &cli.command {
        Command::Train { task, .. } => cmd_train(task, &s, out),
        Command::BenchTable1(a) => cmd_bench(&s, a, out, run_table1),
        Command::BenchTable2(a) => cmd_bench(&s, a, out, run_table2),
        Command::FitCsv { data, columns, .. } => cmd_fit_csv(data, columns, &s, out),
        Command::Classify { data, columns, classes, .. } => cmd_classify(data, columns, *classes, &s, out),
        Command::Eval { model, data, target, features } => cmd_eval(model, data, target.as_deref(), features.as_deref(), &s),
        Command::Export { model, names, precision } => cmd_export(model, names.as_deref(), *precision),
    }
}

fn apply_prep(prep: &Prep, s: &mut Settings) {
    if let Some(f) = prep.split {
        s.split = f;
    }
    if let Some(m) = prep.split_mode {
        s.split_mode = match m {
            SplitArg::Random => SplitMode::Random,
            SplitArg::Chronological => SplitMode::Chronological,
        };
    }
    if prep.standardize {
        s.standardize = true;
    }
    if prep.no_standardize {
        s.standardize = false;
    }
}

fn write_json(path: &Path, doc: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_model(path: &Path, tree: &ExprTree) -> Result<()> {
    fs::write(path, tree.to_xnet()).with_context(|| format!("writing {}", path.display()))
}

fn summary_line(label: &str, r: &RunReport) -> String {
    format!(
        "{label} r2={:.6} nodes={} params={} formula={}",
        r.r2_train, r.operator_nodes, r.parameters, r.formula
    )
}

#[derive(Serialize)]
struct TrainDoc<'a> {
    command: &'static str,
    task: &'a str,
    expression: &'a str,
    config: &'a Settings,
    report: &'a RunReport,
    r2_in_range: f64,
    r2_out_of_range: f64,
}

fn cmd_train(name: &str, s: &Settings, out: &Path) -> Result<()> {
    let mut task = find_task(name)?;
    task.train_points = s.train_points;
    task.test_points = s.test_points;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let data = sample_task(&task, Which::Train, &mut rng)?;
    let cfg = s.train_config();
    let report = train(&data, &cfg)?;
    let (r2_in, r2_out) = evaluate_extrapolation(&report.best_tree, &task, &cfg.limits, &mut rng)?;
    let stem = format!("train-{}-seed{}", task.name, s.seed);
    write_json(
        &out.join(format!("{stem}.json")),
        &TrainDoc {
            command: "train",
            task: &task.name,
            expression: &task.expression,
            config: s,
            report: &report,
            r2_in_range: r2_in,
            r2_out_of_range: r2_out,
        },
    )?;
    write_model(&out.join(format!("{stem}.xnet")), &report.best_tree)?;
    println!("{} r2_out={r2_out:.6}", summary_line(&format!("{} seed={}", task.name, s.seed), &report));
    Ok(())
}

fn cmd_bench(s: &Settings, args: &BenchArgs, out: &Path, table: fn(&xnet::bench::BenchConfig) -> xnet::Result<BenchReport>) -> Result<()> {
    let report = table(&s.bench_config(args.tasks.clone()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (json_path, csv_path) = write_report(&report, out)?;
    let fmt = |m: Option<xnet::bench::MeanStd>| m.map_or("-".to_string(), |m| format!("{:.4}±{:.4}", m.mean, m.std));
    for row in &report.summary {
        println!(
            "{} {} runs={} failures={} r2_in={} r2_out={} nodes={} params={}",
            row.task,
            row.method,
            row.runs,
            row.failures,
            fmt(row.r2_in),
            fmt(row.r2_out),
            fmt(row.nodes),
            fmt(row.params)
        );
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn columns(cols: &Columns) -> (ColumnRef, Option<Vec<ColumnRef>>) {
    let features = cols.features.as_ref().map(|f| f.iter().map(|c| ColumnRef::from(c.as_str())).collect());
    (ColumnRef::from(cols.target.as_str()), features)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned())
}

/// Splits and optionally standardizes. The returned transform maps a tree
/// fitted on the prepared features back to raw units.
fn prepare(data: &Dataset, s: &Settings) -> Result<(Dataset, Dataset, Option<xnet::data::Standardizer>)> {
    let (tr, te) = split(data, s.split, s.split_mode, s.seed)?;
    if s.standardize {
        let (tr, te, scaler) = standardize(&tr, &te)?;
        Ok((tr, te, Some(scaler)))
    } else {
        Ok((tr, te, None))
    }
}

#[derive(Serialize)]
struct FitDoc<'a> {
    command: &'static str,
    data: String,
    target: &'a str,
    features: &'a [String],
    load: LoadStats,
    train_rows: usize,
    test_rows: usize,
    config: &'a Settings,
    report: &'a RunReport,
}

fn cmd_fit_csv(path: &Path, cols: &Columns, s: &Settings, out: &Path) -> Result<()> {
    let (target, features) = columns(cols);
    let (data, load) = load_csv(path, &target, features.as_deref())?;
    let (tr, te, scaler) = prepare(&data, s)?;
    let cfg = s.train_config();
    let mut report = train(&tr, &cfg)?;
    if let Some(scaler) = &scaler {
        // Report and export everything in raw units.
        report.best_tree = scaler.unstandardize_tree(&report.best_tree);
    }
    let raw = |d: &Dataset| match &scaler {
        Some(sc) => Dataset {
            x: d.x.iter().map(|r| sc.inverse_row(r)).collect(),
            ..d.clone()
        },
        None => d.clone(),
    };
    report.r2_train = score(&report.best_tree, &raw(&tr), &cfg.limits)?;
    report.score_test(&raw(&te), &cfg.limits)?;
    report.formula = report.best_tree.to_formula_named(&data.feature_names, Some(2));
    let stem = format!("fit-{}", file_stem(path));
    write_json(
        &out.join(format!("{stem}.json")),
        &FitDoc {
            command: "fit-csv",
            data: path.display().to_string(),
            target: &data.target_name,
            features: &data.feature_names,
            load,
            train_rows: tr.len(),
            test_rows: te.len(),
            config: s,
            report: &report,
        },
    )?;
    write_model(&out.join(format!("{stem}.xnet")), &report.best_tree)?;
    println!(
        "{} r2={:.6} r2_test={:.6} nodes={} params={} standardized={} formula={} = {}",
        file_stem(path),
        report.r2_train,
        report.r2_test.unwrap_or(f64::NAN),
        report.operator_nodes,
        report.parameters,
        s.standardize,
        data.target_name,
        report.formula
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassifyDoc<'a> {
    command: &'static str,
    data: String,
    target: &'a str,
    features: &'a [String],
    load: LoadStats,
    config: &'a Settings,
    report: &'a ClassificationReport,
}

fn cmd_classify(path: &Path, cols: &Columns, classes: Option<usize>, s: &Settings, out: &Path) -> Result<()> {
    let (target, features) = columns(cols);
    let (data, load) = load_csv(path, &target, features.as_deref())?;
    if data.y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        bail!("class labels in `{}` must be non-negative integers", data.target_name);
    }
    let n_classes = classes.unwrap_or_else(|| data.y.iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1);
    let (tr, te) = stratified_split(&data, n_classes, s.split, s.seed)?;
    let (tr, te) = if s.standardize {
        let (tr, te, _) = standardize(&tr, &te)?;
        (tr, te)
    } else {
        (tr, te)
    };
    let report = train_classifier(&tr, &te, n_classes, &s.train_config())?;
    write_json(
        &out.join(format!("classify-{}.json", file_stem(path))),
        &ClassifyDoc {
            command: "classify",
            data: path.display().to_string(),
            target: &data.target_name,
            features: &data.feature_names,
            load,
            config: s,
            report: &report,
        },
    )?;
    println!(
        "classes={} train_accuracy={:.4} test_accuracy={:.4} nodes={} params={}",
        report.n_classes, report.train_accuracy, report.test_accuracy, report.operator_nodes, report.parameters
    );
    Ok(())
}

fn read_model(path: &Path, input_dim: Option<usize>) -> Result<ExprTree> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    // Parse once with room for any variable, then pin the dimension.
    let loose = ExprTree::from_xnet(&text, usize::MAX)?;
    let dim = input_dim.unwrap_or_else(|| loose.min_input_dim());
    if loose.min_input_dim() > dim {
        bail!("model uses x{} but the data has {dim} feature(s)", loose.min_input_dim());
    }
    Ok(ExprTree::from_xnet(&text, dim)?)
}

fn last_column(path: &Path) -> Result<ColumnRef> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().ok_or_else(|| anyhow!("{} is empty", path.display()))?;
    Ok(ColumnRef::Index(header.split(',').count() - 1))
}

fn cmd_eval(model: &Path, path: &Path, target: Option<&str>, features: Option<&[String]>, s: &Settings) -> Result<()> {
    let target = match target {
        Some(t) => ColumnRef::from(t),
        None => last_column(path)?,
    };
    let features: Option<Vec<ColumnRef>> = features.map(|f| f.iter().map(|c| ColumnRef::from(c.as_str())).collect());
    let (data, _) = load_csv(path, &target, features.as_deref())?;
    let tree = read_model(model, Some(data.dim()))?;
    let r2 = score(&tree, &data, &s.train_config().limits)?;
    println!("r2={r2:.6} rows={}", data.len());
    Ok(())
}

fn cmd_export(model: &Path, names: Option<&[String]>, precision: Option<usize>) -> Result<()> {
    let tree = read_model(model, None)?;
    let names: Vec<String> = match names {
        Some(n) if n.len() < tree.min_input_dim() => {
            bail!("model uses {} variable(s) but {} name(s) were given", tree.min_input_dim(), n.len())
        }
        Some(n) => n.to_vec(),
        None => (1..=tree.input_dim()).map(|i| format!("x{i}")).collect(),
    };
    println!("{}", tree.to_formula_named(&names, precision));
    Ok(())
}
