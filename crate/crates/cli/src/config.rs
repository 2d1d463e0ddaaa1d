//! Experiment configuration files.

use std::path::PathBuf;

use coalition_core::estimators::{Bandwidth, EstimatorBudget, KernelSpec, QoISpec};
use coalition_core::inputs::{InputModel, Marginal};
use coalition_core::lattice::MAX_DIMENSION;
use coalition_core::models::{Model, REGISTERED_MODELS};
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

const DEFAULT_N_REF: usize = 1000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Value,
    inputs: InputsConfig,
    qoi: QoIConfig,
    #[serde(default = "default_true")]
    emit_csv: bool,
    #[serde(default)]
    emit_shapley: bool,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
enum ModelConfig {
    Ishigami {
        #[serde(default = "ishigami_a")]
        a: f64,
        #[serde(default = "ishigami_b")]
        b: f64,
    },
    Linear {
        beta: Vec<f64>,
    },
    LinearMap {
        rows: Vec<Vec<f64>>,
    },
    SumDifference,
    Constant {
        dim: usize,
        #[serde(default)]
        value: f64,
    },
}

fn ishigami_a() -> f64 {
    7.0
}

fn ishigami_b() -> f64 {
    0.1
}

impl ModelConfig {
    fn input_dim(&self) -> usize {
        match self {
            ModelConfig::Ishigami { .. } => 3,
            ModelConfig::Linear { beta } => beta.len(),
            ModelConfig::LinearMap { rows } => rows.first().map_or(0, Vec::len),
            ModelConfig::SumDifference => 2,
            ModelConfig::Constant { dim, .. } => *dim,
        }
    }

    fn build(self) -> Result<Model, CliError> {
        let model = match self {
            ModelConfig::Ishigami { a, b } => Model::ishigami(a, b),
            ModelConfig::Linear { beta } => Model::linear(beta),
            ModelConfig::LinearMap { rows } => Model::linear_map(rows),
            ModelConfig::SumDifference => Ok(Model::sum_difference()),
            ModelConfig::Constant { dim, value } => Model::constant(dim, value),
        };
        model.map_err(|e| CliError::config("invalid_model", e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
enum MarginalConfig {
    Uniform { a: f64, b: f64 },
    Normal { mean: f64, sd: f64 },
    Triangular { a: f64, c: f64, b: f64 },
}

impl From<&MarginalConfig> for Marginal {
    fn from(m: &MarginalConfig) -> Self {
        match *m {
            MarginalConfig::Uniform { a, b } => Marginal::Uniform { a, b },
            MarginalConfig::Normal { mean, sd } => Marginal::Normal { mean, sd },
            MarginalConfig::Triangular { a, c, b } => Marginal::Triangular { a, c, b },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum InputsConfig {
    Independent {
        marginals: Vec<MarginalConfig>,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Copula {
        corr: Vec<Vec<f64>>,
        marginals: Vec<MarginalConfig>,
    },
}

impl InputsConfig {
    fn dim(&self) -> usize {
        match self {
            InputsConfig::Independent { marginals } | InputsConfig::Copula { marginals, .. } => marginals.len(),
            InputsConfig::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn build(&self) -> Result<InputModel, CliError> {
        let marginals = |ms: &[MarginalConfig]| ms.iter().map(Marginal::from).collect();
        match self {
            InputsConfig::Independent { marginals: ms } => InputModel::independent(marginals(ms)),
            InputsConfig::Gaussian { mean, cov } => InputModel::gaussian(mean.clone(), cov),
            InputsConfig::Copula { corr, marginals: ms } => InputModel::gaussian_copula(corr, marginals(ms)),
        }
        .map_err(|e| CliError::config("invalid_inputs", e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelConfig {
    family: String,
    #[serde(default)]
    bandwidth: Option<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QoIConfig {
    qoi: String,
    #[serde(default)]
    output: Option<usize>,
    #[serde(default)]
    p: Option<usize>,
    #[serde(default)]
    q: Option<usize>,
    #[serde(default)]
    kernel: Option<KernelConfig>,
    n_outer: usize,
    n_inner: usize,
    #[serde(default)]
    n_ref: Option<usize>,
    seed: u64,
}

impl QoIConfig {
    fn build(&self) -> Result<(QoISpec, EstimatorBudget), CliError> {
        let invalid = |msg: String| CliError::config("invalid_qoi", msg);
        let spec = match self.qoi.as_str() {
            "variance" => QoISpec::Variance {
                output: self.output.unwrap_or(0),
            },
            "covariance" => match (self.p, self.q) {
                (Some(p), Some(q)) => QoISpec::Covariance { p, q },
                _ => return Err(invalid("covariance needs output indices \"p\" and \"q\"".into())),
            },
            "covariance_matrix" => QoISpec::CovarianceMatrix,
            "mmd" => {
                let bandwidth = match self.kernel.as_ref() {
                    None => Bandwidth::MedianHeuristic,
                    Some(k) => {
                        if k.family != "rbf" {
                            return Err(invalid(format!(
                                "unsupported kernel family {:?}; only \"rbf\"",
                                k.family
                            )));
                        }
                        match &k.bandwidth {
                            None => Bandwidth::MedianHeuristic,
                            Some(Value::String(s)) if s == "median" => Bandwidth::MedianHeuristic,
                            Some(Value::Number(n)) => match n.as_f64() {
                                Some(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
                                _ => return Err(invalid(format!("kernel bandwidth must be positive, got {n}"))),
                            },
                            Some(other) => {
                                return Err(invalid(format!(
                                    "kernel bandwidth must be \"median\" or a positive number, got {other}"
                                )))
                            }
                        }
                    }
                };
                QoISpec::MeanMmd(KernelSpec::rbf(bandwidth))
            }
            other => {
                return Err(invalid(format!(
                    "unknown qoi {other:?}; expected one of variance, covariance, covariance_matrix, mmd"
                )))
            }
        };
        if self.kernel.is_some() && !matches!(spec, QoISpec::MeanMmd(_)) {
            return Err(invalid("\"kernel\" applies only to the mmd qoi".into()));
        }
        let budget = EstimatorBudget::new(
            self.n_outer,
            self.n_inner,
            self.n_ref.unwrap_or(DEFAULT_N_REF),
            self.seed,
        )
        .map_err(|e| CliError::config("invalid_budget", e.to_string()))?;
        Ok((spec, budget))
    }
}

/// A parsed and cross-checked experiment, ready to run.
#[derive(Debug)]
pub struct Experiment {
    pub model: Model,
    pub inputs: InputModel,
    pub qoi: QoISpec,
    pub budget: EstimatorBudget,
    pub emit_csv: bool,
    pub emit_shapley: bool,
    pub output_dir: Option<PathBuf>,
    /// The `model`, `inputs` and `qoi` sections as written, echoed into reports.
    pub echo: Value,
}

impl Experiment {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::config("malformed_json", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, CliError> {
        let schema = |e: serde_json::Error| CliError::config("schema", e.to_string());
        let raw: RawConfig = serde_json::from_value(value.clone()).map_err(schema)?;

        let name = raw
            .model
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::config("schema", "model.name is required".to_string()))?;
        if !REGISTERED_MODELS.contains(&name) {
            return Err(CliError::config(
                "unknown_model",
                format!(
                    "unknown model {name:?}; registered models: {}",
                    REGISTERED_MODELS.join(", ")
                ),
            ));
        }
        let model_config: ModelConfig = serde_json::from_value(raw.model.clone()).map_err(schema)?;

        for d in [model_config.input_dim(), raw.inputs.dim()] {
            if d > MAX_DIMENSION {
                return Err(CliError::config(
                    "dimension_cap",
                    format!("d = {d} exceeds the supported maximum of {MAX_DIMENSION} inputs"),
                ));
            }
        }
        let model = model_config.build()?;
        let inputs = raw.inputs.build()?;
        if inputs.dim() != model.input_dim() {
            return Err(CliError::config(
                "dimension_mismatch",
                format!(
                    "model {} has {} inputs but the input distribution has {}",
                    model.name(),
                    model.input_dim(),
                    inputs.dim()
                ),
            ));
        }
        let (qoi, budget) = raw.qoi.build()?;
        qoi.check_output_dim(model.output_dim())
            .map_err(|e| CliError::config("incompatible_qoi", e.to_string()))?;

        let echo = serde_json::json!({
            "model": value["model"],
            "inputs": value["inputs"],
            "qoi": value["qoi"],
        });
        Ok(Self {
            model,
            inputs,
            qoi,
            budget,
            emit_csv: raw.emit_csv,
            emit_shapley: raw.emit_shapley,
            output_dir: raw.output_dir,
            echo,
        })
    }
}
