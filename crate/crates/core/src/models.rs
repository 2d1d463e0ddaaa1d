//! Benchmark models with known decompositions.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::inputs::{InputModel, Marginal};
use crate::lattice::{SubsetMask, MAX_DIMENSION};
use crate::ring::SymMatrix;

/// Names of the built-in models, as used by configuration front ends.
pub const REGISTERED_MODELS: &[&str] = &["ishigami", "linear", "linear_map", "sum_difference", "constant"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model expects {expected} inputs, got {got}")]
    InputDimension { expected: usize, got: usize },
    #[error("output buffer has length {got}, model produces {expected}")]
    OutputDimension { expected: usize, got: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("no closed form registered for {model} with {inputs} inputs")]
    NoOracle { model: String, inputs: &'static str },
}

/// A deterministic model `G : ℝ^d → ℝ^k`.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// `sin x₁ + a sin² x₂ + b x₃⁴ sin x₁`.
    Ishigami { a: f64, b: f64 },
    /// `βᵀx`.
    Linear { beta: Vec<f64> },
    /// `Mx` for a `k×d` matrix given row by row.
    LinearMap { rows: Vec<Vec<f64>> },
    /// Constant output, ignoring all `dim` inputs.
    Constant { dim: usize, value: f64 },
}

impl Model {
    pub fn ishigami(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(ModelError::InvalidParameters("ishigami a and b must be finite".into()));
        }
        Ok(Model::Ishigami { a, b })
    }

    pub fn linear(beta: Vec<f64>) -> Result<Self, ModelError> {
        check_inputs(beta.len())?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameters("coefficients must be finite".into()));
        }
        Ok(Model::Linear { beta })
    }

    pub fn linear_map(rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != d) {
            return Err(ModelError::InvalidParameters(
                "linear map rows must be nonempty and equal length".into(),
            ));
        }
        check_inputs(d)?;
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameters("coefficients must be finite".into()));
        }
        Ok(Model::LinearMap { rows })
    }

    /// `(x₁ + x₂, x₁ − x₂)`.
    pub fn sum_difference() -> Self {
        Model::LinearMap {
            rows: vec![vec![1.0, 1.0], vec![1.0, -1.0]],
        }
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self, ModelError> {
        check_inputs(dim)?;
        if !value.is_finite() {
            return Err(ModelError::InvalidParameters("constant must be finite".into()));
        }
        Ok(Model::Constant { dim, value })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Ishigami { .. } => "ishigami",
            Model::Linear { .. } => "linear",
            Model::LinearMap { .. } => "linear_map",
            Model::Constant { .. } => "constant",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Ishigami { .. } => 3,
            Model::Linear { beta } => beta.len(),
            Model::LinearMap { rows } => rows[0].len(),
            Model::Constant { dim, .. } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Model::LinearMap { rows } => rows.len(),
            _ => 1,
        }
    }

    /// Writes `G(x)` into `out` without checking lengths.
    #[inline]
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Model::Ishigami { a, b } => {
                let s1 = x[0].sin();
                let s2 = x[1].sin();
                out[0] = s1 + a * s2 * s2 + b * x[2].powi(4) * s1;
            }
            Model::Linear { beta } => {
                out[0] = beta.iter().zip(x).map(|(b, v)| b * v).sum();
            }
            Model::LinearMap { rows } => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().zip(x).map(|(b, v)| b * v).sum();
                }
            }
            Model::Constant { value, .. } => out[0] = *value,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::InputDimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.output_dim()];
        self.evaluate_into(x, &mut out);
        Ok(out)
    }

    /// The `k×d` coefficient matrix of a linear or constant model.
    fn linear_coefficients(&self) -> Option<DMatrix<f64>> {
        match self {
            Model::Linear { beta } => Some(DMatrix::from_row_slice(1, beta.len(), beta)),
            Model::LinearMap { rows } => Some(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])),
            Model::Constant { dim, .. } => Some(DMatrix::zeros(1, *dim)),
            Model::Ishigami { .. } => None,
        }
    }
}

fn check_inputs(d: usize) -> Result<(), ModelError> {
    if d == 0 || d > MAX_DIMENSION {
        Err(ModelError::InvalidParameters(format!(
            "input dimension {d} outside 1..={MAX_DIMENSION}"
        )))
    } else {
        Ok(())
    }
}

/// Analytic partial variances of Ishigami under independent `U(−π, π)` inputs.
///
/// Returns `(V₁, V₂, V₁₃)`; every other partial variance is zero.
pub fn ishigami_partial_variances(a: f64, b: f64) -> (f64, f64, f64) {
    let pi4 = PI.powi(4);
    let pi8 = PI.powi(8);
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi8 * (1.0 / 18.0 - 1.0 / 50.0);
    (v1, v2, v13)
}

/// `Var[G]` for Ishigami under independent `U(−π, π)` inputs.
pub fn ishigami_total_variance(a: f64, b: f64) -> f64 {
    a * a / 8.0 + b * PI.powi(4) / 5.0 + b * b * PI.powi(8) / 18.0 + 0.5
}

fn is_ishigami_inputs(inputs: &InputModel) -> bool {
    inputs.is_independent()
        && inputs.marginals().is_some_and(|ms| {
            ms.len() == 3
                && ms.iter().all(|m| match *m {
                    Marginal::Uniform { a, b } => (a + PI).abs() < 1e-12 && (b - PI).abs() < 1e-12,
                    _ => false,
                })
        })
}

/// Covariance of the inputs when it is known in closed form and the
/// conditional expectation of a linear model is linear in `x_A`.
fn linear_input_covariance(inputs: &InputModel) -> Option<DMatrix<f64>> {
    if let Some((_, cov)) = inputs.gaussian_parameters() {
        return Some(cov.clone());
    }
    if inputs.is_independent() {
        let ms = inputs.marginals()?;
        return Some(DMatrix::from_diagonal(&DVector::from_iterator(
            ms.len(),
            ms.iter().map(Marginal::variance),
        )));
    }
    None
}

fn inputs_label(inputs: &InputModel) -> &'static str {
    if inputs.gaussian_parameters().is_some() {
        "gaussian"
    } else if inputs.is_independent() {
        "independent"
    } else {
        "copula"
    }
}

/// Exact `Cov(E[G | X_A])` as a `k×k` matrix.
///
/// Registered closed forms: linear and constant models with Gaussian or
/// independent inputs (projection covariance `M Σ_{·A} Σ_{AA}⁻¹ Σ_{A·} Mᵀ`),
/// and Ishigami with independent `U(−π, π)³` inputs.
pub fn oracle_covariance_phi(model: &Model, inputs: &InputModel, subset: SubsetMask) -> Result<SymMatrix, ModelError> {
    let no_oracle = || ModelError::NoOracle {
        model: model.name().into(),
        inputs: inputs_label(inputs),
    };
    if inputs.dim() != model.input_dim() || subset.dim() != model.input_dim() {
        return Err(ModelError::InputDimension {
            expected: model.input_dim(),
            got: inputs.dim(),
        });
    }
    if let Model::Ishigami { a, b } = *model {
        if !is_ishigami_inputs(inputs) {
            return Err(no_oracle());
        }
        let (v1, v2, v13) = ishigami_partial_variances(a, b);
        let mut phi = 0.0;
        if subset.contains(1) {
            phi += v1;
        }
        if subset.contains(2) {
            phi += v2;
        }
        if subset.contains(1) && subset.contains(3) {
            phi += v13;
        }
        return Ok(SymMatrix::filled(1, phi));
    }
    let coeffs = model.linear_coefficients().ok_or_else(no_oracle)?;
    let cov = linear_input_covariance(inputs).ok_or_else(no_oracle)?;
    let k = coeffs.nrows();
    if subset.is_empty() {
        return Ok(SymMatrix::zeros(k));
    }
    let a = subset.positions();
    let s_aa = DMatrix::from_fn(a.len(), a.len(), |i, j| cov[(a[i], a[j])]);
    let s_xa = DMatrix::from_fn(cov.nrows(), a.len(), |i, j| cov[(i, a[j])]);
    let inv = s_aa.try_inverse().ok_or_else(no_oracle)?;
    let proj = &s_xa * inv * s_xa.transpose();
    let out = &coeffs * proj * coeffs.transpose();
    Ok(SymMatrix::from_fn(k, |i, j| 0.5 * (out[(i, j)] + out[(j, i)])))
}

/// Exact `φ_A = Var[E[G | X_A]]` for a scalar-output model.
pub fn oracle_variance_phi(model: &Model, inputs: &InputModel, subset: SubsetMask) -> Result<f64, ModelError> {
    if model.output_dim() != 1 {
        return Err(ModelError::OutputDimension {
            expected: model.output_dim(),
            got: 1,
        });
    }
    Ok(oracle_covariance_phi(model, inputs, subset)?.get(0, 0))
}
