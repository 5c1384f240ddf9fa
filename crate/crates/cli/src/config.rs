//! Flat `key=value` run settings. Every tunable constant of the engine has a
//! key here, and the full set is echoed into each report.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use xnet::backprop::StepState;
use xnet::bench::BenchConfig;
use xnet::data::SplitMode;
use xnet::evolve::SelectionConfig;
use xnet::mlp::{Activation, MlpSpec, SWEEP_WIDTHS};
use xnet::numerics::NumericLimits;
use xnet::trainer::{StagnationScope, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub max_epochs: usize,
    pub target_r2: f64,
    pub restarts: usize,
    pub no_parameter_mode: bool,
    pub micro_iterations: usize,
    pub stagnation_scope: StagnationScope,
    pub ite: usize,
    pub accept_threshold: f64,
    pub stagnation_limit: usize,
    pub max_depth: usize,
    pub a: f64,
    pub alpha_fixed: f64,
    pub ada_enabled: bool,
    pub v_max: f64,
    pub g_max: f64,
    pub g_min: f64,
    pub div_eps: f64,
    pub domain_eps: f64,
    pub train_points: usize,
    pub test_points: usize,
    pub seeds: usize,
    pub mlp_activation: Activation,
    pub mlp_learning_rate: f64,
    pub mlp_epochs: usize,
    pub mlp_widths: Vec<usize>,
    pub split: f64,
    pub split_mode: SplitMode,
    pub standardize: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let b = BenchConfig::default();
        let m = MlpSpec::new(vec![1, 1]);
        Settings {
            seed: t.seed,
            max_epochs: t.max_epochs,
            target_r2: t.target_r2,
            restarts: t.restarts,
            no_parameter_mode: t.no_parameter_mode,
            micro_iterations: t.micro_iterations,
            stagnation_scope: t.stagnation_scope,
            ite: t.selection.ite,
            accept_threshold: t.selection.accept_threshold,
            stagnation_limit: t.selection.stagnation_limit,
            max_depth: t.selection.max_depth,
            a: t.step.a,
            alpha_fixed: t.step.alpha_fixed,
            ada_enabled: t.step.ada_enabled,
            v_max: t.limits.v_max,
            g_max: t.limits.g_max,
            g_min: t.limits.g_min,
            div_eps: t.limits.div_eps,
            domain_eps: t.limits.domain_eps,
            train_points: b.train_points,
            test_points: b.test_points,
            seeds: b.seeds,
            mlp_activation: m.activation,
            mlp_learning_rate: m.learning_rate,
            mlp_epochs: m.epochs,
            mlp_widths: SWEEP_WIDTHS.to_vec(),
            split: 0.8,
            split_mode: SplitMode::Random,
            standardize: true,
        }
    }
}

impl Settings {
    /// Sets one key from its text form. The value is parsed according to
    /// the type of the key's current value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let slot = doc
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
        let bad = || anyhow!("cannot parse `{value}` for config key `{key}`");
        *slot = match slot {
            Value::Bool(_) => Value::Bool(value.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_f64() => {
                let v: f64 = value.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
            }
            Value::Number(_) => Value::from(value.parse::<u64>().map_err(|_| bad())?),
            Value::Array(_) => Value::Array(
                value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>().map(Value::from).map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            ),
            _ => Value::String(value.to_string()),
        };
        *self = serde_json::from_value(doc).map_err(|e| anyhow!("config key `{key}`: {e}"))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.max_epochs,
            target_r2: self.target_r2,
            restarts: self.restarts,
            no_parameter_mode: self.no_parameter_mode,
            micro_iterations: self.micro_iterations,
            stagnation_scope: self.stagnation_scope,
            selection: SelectionConfig {
                accept_threshold: self.accept_threshold,
                ite: self.ite,
                stagnation_limit: self.stagnation_limit,
                max_depth: self.max_depth,
                rng_seed: self.seed,
            },
            step: StepState {
                a: self.a,
                alpha_fixed: self.alpha_fixed,
                ada_enabled: self.ada_enabled,
                ..StepState::default()
            },
            limits: NumericLimits {
                v_max: self.v_max,
                g_max: self.g_max,
                g_min: self.g_min,
                div_eps: self.div_eps,
                domain_eps: self.domain_eps,
            },
            seed: self.seed,
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec {
            activation: self.mlp_activation,
            learning_rate: self.mlp_learning_rate,
            epochs: self.mlp_epochs,
            seed: self.seed,
            ..MlpSpec::new(vec![1, 1])
        }
    }

    pub fn bench_config(&self, tasks: Vec<String>) -> BenchConfig {
        BenchConfig {
            train: self.train_config(),
            seeds: self.seeds,
            base_seed: self.seed,
            train_points: self.train_points,
            test_points: self.test_points,
            tasks,
            mlp: self.mlp_spec(),
            mlp_widths: self.mlp_widths.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.mlp_spec().validate()?;
        if self.seeds == 0 || self.train_points < 2 || self.test_points < 2 || self.mlp_widths.is_empty() {
            bail!("seeds, train_points, test_points and mlp_widths must be non-trivial");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            bail!("split must lie in (0, 1), got {}", self.split);
        }
        Ok(())
    }
}

/// Applies `key=value` lines from `path` on top of `settings`. Blank lines
/// and lines starting with `#` are ignored.
pub fn load_config(path: &Path, settings: &mut Settings) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    apply_config(&text, settings).with_context(|| format!("in config {}", path.display()))
}

pub fn apply_config(text: &str, settings: &mut Settings) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got `{line}`", i + 1))?;
        settings.set(key.trim(), value.trim()).with_context(|| format!("line {}", i + 1))?;
    }
    Ok(())
}
