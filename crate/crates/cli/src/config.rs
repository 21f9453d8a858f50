//! Experiment configuration: one JSON file per experiment, flags override
//! fields.

use serde::{Deserialize, Serialize};
use sketchlearn::datagen::DistributionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LraOne,
    LraTwo,
    IhsLasso,
    IhsNuclear,
    FastRegression,
    Fewshot,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::LraOne => "lra_one",
            Task::LraTwo => "lra_two",
            Task::IhsLasso => "ihs_lasso",
            Task::IhsNuclear => "ihs_nuclear",
            Task::FastRegression => "fast_regression",
            Task::Fewshot => "fewshot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Classical,
    Greedy,
    InnerProduct,
    HeavyRows,
    HeavyRowsPlusValues,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Greedy => "greedy",
            Method::InnerProduct => "inner_product",
            Method::HeavyRows => "heavy_rows",
            Method::HeavyRowsPlusValues => "heavy_rows_plus_values",
        }
    }
}

/// Settings for the IHS-style tasks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IhsSettings {
    /// Number of sketched Newton iterations.
    pub t_iters: usize,
    /// Projected-gradient steps per subproblem.
    pub pg_iters: usize,
    /// Fraction of the sketch rows reserved for heavy-row candidates.
    pub heavy_fraction: f64,
    /// Leverage threshold multiplier: heavy when `tau >= mult * d / n`.
    pub threshold_mult: f64,
}

impl Default for IhsSettings {
    fn default() -> Self {
        IhsSettings { t_iters: 7, pg_iters: 200, heavy_fraction: 0.3, threshold_mult: 5.0 }
    }
}

/// Value-optimization settings shared by the tasks that learn values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueSettings {
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
}

impl Default for ValueSettings {
    fn default() -> Self {
        ValueSettings { lr: 0.02, iters: 60, batch_size: 2 }
    }
}

/// Gradient-descent settings for the fast regression task.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FastRegressionSettings {
    pub lr: f64,
    pub iters: usize,
}

impl Default for FastRegressionSettings {
    fn default() -> Self {
        FastRegressionSettings { lr: 1.0, iters: 30 }
    }
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub distribution: DistributionSpec,
    /// Target rank for the LRA tasks.
    #[serde(default)]
    pub k: Option<usize>,
    /// Absolute sketch sizes.
    #[serde(default)]
    pub m: Vec<usize>,
    /// Sketch sizes as multiples of d, e.g. `[6, 8, 10]` for m = 6d, 8d, 10d.
    #[serde(default)]
    pub m_mult: Vec<usize>,
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub ihs: Option<IhsSettings>,
    #[serde(default)]
    pub values: Option<ValueSettings>,
    #[serde(default)]
    pub fast_regression: Option<FastRegressionSettings>,
}

impl ExperimentConfig {
    pub fn sketch_sizes(&self) -> Vec<usize> {
        let mut sizes = self.m.clone();
        sizes.extend(self.m_mult.iter().map(|mult| mult * self.distribution.d));
        sizes
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty() {
            return Err("config: at least one method required".into());
        }
        if self.trials == 0 {
            return Err("config: trials must be >= 1".into());
        }
        if self.sketch_sizes().is_empty() {
            return Err("config: no sketch sizes (set m or m_mult)".into());
        }
        if self.distribution.n_train == 0 {
            return Err("config: n_train must be >= 1".into());
        }
        match self.task {
            Task::LraOne | Task::LraTwo | Task::Fewshot => {
                if self.k.is_none() {
                    return Err(format!("config: task {} requires k", self.task.as_str()));
                }
                if self.distribution.n_test == 0 {
                    return Err("config: LRA tasks need a test split".into());
                }
            }
            Task::IhsLasso | Task::IhsNuclear | Task::FastRegression => {
                if self.distribution.n_test == 0 {
                    return Err("config: second-order tasks need a test split".into());
                }
                for method in &self.methods {
                    if matches!(method, Method::Greedy | Method::InnerProduct) {
                        return Err(format!(
                            "config: method {} is not defined for task {}",
                            method.as_str(),
                            self.task.as_str()
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
