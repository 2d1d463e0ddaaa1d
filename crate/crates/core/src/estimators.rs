//! Double-loop Monte Carlo estimators of the set function `φ_A` for each
//! supported quantity of interest.
//!
//! For a proper nonempty `A`, every outer point `x_A ~ P_{X_A}` gets its own
//! child stream keyed by `(seed, A, j)`, draws `n_inner` conditional inputs
//! and records the inner mean and covariance of the model output. Results are
//! collected in outer-index order before any reduction, so they do not depend
//! on the number of worker threads.
//!
//! `φ_∅` is zero for every QoI and is never sampled. `φ_D` is estimated from
//! joint draws only.

use rayon::prelude::*;
use thiserror::Error;

use crate::inputs::{InputError, InputModel};
use crate::lattice::SubsetMask;
use crate::models::Model;
use crate::ring::{RingValue, SymMatrix};
use crate::rng::{child_rng, Purpose, StreamRng};

/// At most this many reference outputs feed the median heuristic.
pub const MEDIAN_HEURISTIC_POINTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("budget field {field} must be at least 2, got {value}")]
    Budget { field: &'static str, value: usize },
    #[error("{qoi} requires {requirement}, model has {k} output(s)")]
    Incompatible {
        qoi: &'static str,
        requirement: String,
        k: usize,
    },
    #[error("model has {model} inputs but the input distribution has {inputs}")]
    InputMismatch { model: usize, inputs: usize },
    #[error("subset {{{subset}}} must be a nonempty proper subset")]
    DegenerateSubset { subset: String },
    #[error("sampling failed for subset {{{subset}}}: {source}")]
    Sampling { subset: String, source: InputError },
    #[error("non-finite estimate for subset {{{subset}}}")]
    NonFinite { subset: String },
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("median heuristic needs at least 2 reference outputs, got {0}")]
    TooFewReferencePoints(usize),
    #[error("reference outputs are all identical; median pairwise distance is zero")]
    ZeroMedianDistance,
}

/// Sample sizes and seed for one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorBudget {
    pub n_outer: usize,
    pub n_inner: usize,
    /// Reference marginal draws; only the MMD estimator uses them.
    pub n_ref: usize,
    pub seed: u64,
}

impl EstimatorBudget {
    pub fn new(n_outer: usize, n_inner: usize, n_ref: usize, seed: u64) -> Result<Self, EstimationError> {
        let budget = Self {
            n_outer,
            n_inner,
            n_ref,
            seed,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), EstimationError> {
        for (field, value) in [
            ("n_outer", self.n_outer),
            ("n_inner", self.n_inner),
            ("n_ref", self.n_ref),
        ] {
            if value < 2 {
                return Err(EstimationError::Budget { field, value });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

/// An RBF kernel `k(y, y') = exp(−‖y − y'‖² / (2h²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn rbf(bandwidth: Bandwidth) -> Self {
        Self { bandwidth }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QoISpec {
    /// Variance of output coordinate `output`.
    Variance {
        output: usize,
    },
    Covariance {
        p: usize,
        q: usize,
    },
    CovarianceMatrix,
    MeanMmd(KernelSpec),
}

impl QoISpec {
    pub fn name(&self) -> &'static str {
        match self {
            QoISpec::Variance { .. } => "variance",
            QoISpec::Covariance { .. } => "covariance",
            QoISpec::CovarianceMatrix => "covariance_matrix",
            QoISpec::MeanMmd(_) => "mmd",
        }
    }

    /// Checks the QoI against a model with `k` outputs.
    pub fn check_output_dim(&self, k: usize) -> Result<(), EstimationError> {
        let incompatible = |requirement: String| {
            Err(EstimationError::Incompatible {
                qoi: self.name(),
                requirement,
                k,
            })
        };
        match *self {
            QoISpec::Variance { output } if output >= k => {
                incompatible(format!("output index {output} < number of outputs"))
            }
            QoISpec::Covariance { .. } if k < 2 => incompatible("at least 2 outputs".into()),
            QoISpec::Covariance { p, q } if p >= k || q >= k => {
                incompatible(format!("output indices ({p}, {q}) < number of outputs"))
            }
            QoISpec::MeanMmd(KernelSpec {
                bandwidth: Bandwidth::Fixed(h),
            }) if !(h.is_finite() && h > 0.0) => Err(EstimationError::InvalidBandwidth(h)),
            _ if k == 0 => incompatible("at least 1 output".into()),
            _ => Ok(()),
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, QoISpec::CovarianceMatrix)
    }
}

/// An estimate of `φ_A` with a same-shaped standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiEstimate {
    pub value: RingValue,
    pub std_error: RingValue,
    pub budget: EstimatorBudget,
}

/// Inner-sample statistics at one outer conditioning point.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerMoments {
    pub x_a: Vec<f64>,
    /// Inner mean of each output coordinate.
    pub mean: Vec<f64>,
    /// Unbiased inner covariance of the outputs.
    pub cov: SymMatrix,
}

fn check_pair(model: &Model, inputs: &InputModel) -> Result<(), EstimationError> {
    if model.input_dim() != inputs.dim() {
        return Err(EstimationError::InputMismatch {
            model: model.input_dim(),
            inputs: inputs.dim(),
        });
    }
    Ok(())
}

/// Evaluates the model on `n` rows drawn by `draw`, returning outputs row-major.
fn simulate_outputs(
    model: &Model,
    d: usize,
    n: usize,
    rng: &mut StreamRng,
    mut draw: impl FnMut(&mut StreamRng, &mut [f64]),
) -> Vec<f64> {
    let k = model.output_dim();
    let mut x = vec![0.0; d];
    let mut out = vec![0.0; n * k];
    for y in out.chunks_exact_mut(k) {
        draw(rng, &mut x);
        model.evaluate_into(&x, y);
    }
    out
}

/// Mean vector and unbiased covariance of `n` points of dimension `k`.
fn sample_moments(values: &[f64], k: usize) -> (Vec<f64>, SymMatrix) {
    let n = values.len() / k;
    let mut mean = vec![0.0; k];
    for y in values.chunks_exact(k) {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = SymMatrix::zeros(k);
    for p in 0..k {
        for q in p..k {
            let s: f64 = values
                .chunks_exact(k)
                .map(|y| (y[p] - mean[p]) * (y[q] - mean[q]))
                .sum();
            cov.set(p, q, s / (n as f64 - 1.0));
        }
    }
    (mean, cov)
}

/// Mean and standard error of the mean.
fn mean_and_se(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Inner means and covariances at `n_outer` conditioning points `x_A ~ P_{X_A}`.
pub fn estimate_conditional_mean_table(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    budget: &EstimatorBudget,
) -> Result<Vec<InnerMoments>, EstimationError> {
    check_pair(model, inputs)?;
    budget.validate()?;
    let sampling = |source| EstimationError::Sampling {
        subset: subset.to_string(),
        source,
    };
    let conditioner = inputs.conditioner(subset).map_err(|e| match e {
        InputError::DegenerateConditioning(s) => EstimationError::DegenerateSubset { subset: s },
        other => sampling(other),
    })?;
    let d = inputs.dim();
    let k = model.output_dim();
    (0..budget.n_outer)
        .into_par_iter()
        .map(|j| {
            let mut rng = child_rng(budget.seed, Purpose::OuterPoint, subset.bits(), j as u64);
            let mut row = vec![0.0; d];
            inputs.draw_joint(&mut rng, &mut row);
            let x_a: Vec<f64> = conditioner.pinned_positions().iter().map(|&p| row[p]).collect();
            let pinned = conditioner.pin(&x_a).map_err(sampling)?;
            let outputs = simulate_outputs(model, d, budget.n_inner, &mut rng, |r, x| pinned.draw(r, x));
            let (mean, cov) = sample_moments(&outputs, k);
            Ok(InnerMoments { x_a, mean, cov })
        })
        .collect()
}

/// Estimates `Cov(E[G | X_A])` for every output pair from one set of draws.
///
/// Returns the value and standard-error matrices.
fn nested_covariance(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    budget: &EstimatorBudget,
) -> Result<(SymMatrix, SymMatrix), EstimationError> {
    check_pair(model, inputs)?;
    budget.validate()?;
    let k = model.output_dim();
    if subset.is_empty() {
        return Ok((SymMatrix::zeros(k), SymMatrix::zeros(k)));
    }

    // Per-unit means and bias-correction terms; units are joint draws for
    // A = D and outer points otherwise.
    let (means, corrections): (Vec<Vec<f64>>, Option<Vec<SymMatrix>>) = if subset.is_full() {
        let d = inputs.dim();
        let chunks: Vec<Vec<f64>> = (0..budget.n_outer)
            .into_par_iter()
            .map(|j| {
                let mut rng = child_rng(budget.seed, Purpose::JointSample, subset.bits(), j as u64);
                simulate_outputs(model, d, budget.n_inner, &mut rng, |r, x| inputs.draw_joint(r, x))
            })
            .collect();
        let means = chunks
            .iter()
            .flat_map(|c| c.chunks_exact(k).map(<[f64]>::to_vec))
            .collect();
        (means, None)
    } else {
        let table = estimate_conditional_mean_table(model, inputs, subset, budget)?;
        let (means, covs) = table.into_iter().map(|t| (t.mean, t.cov)).unzip();
        (means, Some(covs))
    };

    let n = means.len() as f64;
    let mut grand = vec![0.0; k];
    for m in &means {
        grand.iter_mut().zip(m).for_each(|(g, v)| *g += v);
    }
    grand.iter_mut().for_each(|g| *g /= n);

    let mut value = SymMatrix::zeros(k);
    let mut se = SymMatrix::zeros(k);
    let mut z = vec![0.0; means.len()];
    for p in 0..k {
        for q in p..k {
            for (j, m) in means.iter().enumerate() {
                z[j] = n / (n - 1.0) * ((m[p] - grand[p]) * (m[q] - grand[q]));
                if let Some(c) = &corrections {
                    z[j] -= c[j].get(p, q) / budget.n_inner as f64;
                }
            }
            let (v, s) = mean_and_se(&z);
            if !(v.is_finite() && s.is_finite()) {
                return Err(EstimationError::NonFinite {
                    subset: subset.to_string(),
                });
            }
            value.set(p, q, v);
            se.set(p, q, s);
        }
    }
    Ok((value, se))
}

/// `φ_A = Var[E[G_output | X_A]]`, bias-corrected for the finite inner sample.
pub fn estimate_phi_variance(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    output: usize,
    budget: &EstimatorBudget,
) -> Result<PhiEstimate, EstimationError> {
    QoISpec::Variance { output }.check_output_dim(model.output_dim())?;
    let (value, se) = nested_covariance(model, inputs, subset, budget)?;
    Ok(PhiEstimate {
        value: RingValue::Scalar(value.get(output, output)),
        std_error: RingValue::Scalar(se.get(output, output)),
        budget: *budget,
    })
}

/// `φ_A = Cov(E[G_p | X_A], E[G_q | X_A])`.
pub fn estimate_phi_covariance(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    (p, q): (usize, usize),
    budget: &EstimatorBudget,
) -> Result<PhiEstimate, EstimationError> {
    QoISpec::Covariance { p, q }.check_output_dim(model.output_dim())?;
    let (value, se) = nested_covariance(model, inputs, subset, budget)?;
    Ok(PhiEstimate {
        value: RingValue::Scalar(value.get(p, q)),
        std_error: RingValue::Scalar(se.get(p, q)),
        budget: *budget,
    })
}

/// `Σ^A = Cov(E[G | X_A])` as a Hadamard-ring matrix.
pub fn estimate_phi_covmatrix(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    budget: &EstimatorBudget,
) -> Result<PhiEstimate, EstimationError> {
    let (value, se) = nested_covariance(model, inputs, subset, budget)?;
    Ok(PhiEstimate {
        value: RingValue::HadamardMatrix(value),
        std_error: RingValue::HadamardMatrix(se),
        budget: *budget,
    })
}

/// Output points `y_i ∈ ℝ^k`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputSample {
    pub k: usize,
    pub values: Vec<f64>,
}

impl OutputSample {
    pub fn from_points(points: &[Vec<f64>]) -> Self {
        let k = points.first().map_or(1, Vec::len);
        Self {
            k,
            values: points.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// `n` joint outputs drawn from `rng`.
    pub fn draw(model: &Model, inputs: &InputModel, n: usize, rng: &mut StreamRng) -> Self {
        let values = simulate_outputs(model, inputs.dim(), n, rng, |r, x| inputs.draw_joint(r, x));
        Self {
            k: model.output_dim(),
            values,
        }
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fixed bandwidths pass through; the median heuristic takes the median
/// pairwise Euclidean distance among the first 1000 reference outputs.
pub fn resolve_bandwidth(outputs: &OutputSample, spec: &KernelSpec) -> Result<f64, EstimationError> {
    match spec.bandwidth {
        Bandwidth::Fixed(h) if h.is_finite() && h > 0.0 => Ok(h),
        Bandwidth::Fixed(h) => Err(EstimationError::InvalidBandwidth(h)),
        Bandwidth::MedianHeuristic => {
            let n = outputs.len().min(MEDIAN_HEURISTIC_POINTS);
            if n < 2 {
                return Err(EstimationError::TooFewReferencePoints(n));
            }
            let mut distances = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in (i + 1)..n {
                    distances.push(squared_distance(outputs.point(i), outputs.point(j)).sqrt());
                }
            }
            distances.sort_by(f64::total_cmp);
            let m = distances.len();
            let median = if m % 2 == 1 {
                distances[m / 2]
            } else {
                0.5 * (distances[m / 2 - 1] + distances[m / 2])
            };
            if median > 0.0 && median.is_finite() {
                Ok(median)
            } else {
                Err(EstimationError::ZeroMedianDistance)
            }
        }
    }
}

/// The Gaussian RBF kernel with a resolved bandwidth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfKernel {
    inv_two_h2: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self, EstimationError> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(EstimationError::InvalidBandwidth(bandwidth));
        }
        Ok(Self {
            inv_two_h2: 1.0 / (2.0 * bandwidth * bandwidth),
        })
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-squared_distance(a, b) * self.inv_two_h2).exp()
    }

    /// Mean of `k(x_i, x_j)` over ordered pairs `i ≠ j`.
    pub fn within_u(&self, x: &OutputSample) -> f64 {
        let n = x.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += self.eval(x.point(i), x.point(j));
            }
        }
        2.0 * s / (n as f64 * (n as f64 - 1.0))
    }

    /// Mean of `k(x_i, y_j)` over all pairs.
    pub fn cross_mean(&self, x: &OutputSample, y: &OutputSample) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                s += self.eval(x.point(i), y.point(j));
            }
        }
        s / (x.len() as f64 * y.len() as f64)
    }

    /// Unbiased two-sample estimate of `MMD²`.
    pub fn mmd2_unbiased(&self, x: &OutputSample, y: &OutputSample) -> f64 {
        self.within_u(x) + self.within_u(y) - 2.0 * self.cross_mean(x, y)
    }
}

/// `φ_A = E_{X_A}[MMD²(P_Y, P_{Y | X_A})]` under an RBF kernel of bandwidth `h`.
///
/// Each outer point compares `n_inner` conditional outputs against its own
/// fresh block of `n_ref` marginal outputs with the unbiased U-statistic, so
/// the per-point terms are i.i.d. and their spread gives the standard error.
/// At `A = D` the conditional law is a point mass and
/// `φ_D = E[k(Y, Y)] − E[k(Y, Y')] = 1 − E[k(Y, Y')]`, estimated with the
/// V-statistic on one reference block.
pub fn estimate_phi_mmd(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    bandwidth: f64,
    budget: &EstimatorBudget,
) -> Result<PhiEstimate, EstimationError> {
    check_pair(model, inputs)?;
    budget.validate()?;
    let kernel = RbfKernel::new(bandwidth)?;
    let finish = |value: f64, se: f64| {
        if value.is_finite() && se.is_finite() {
            Ok(PhiEstimate {
                value: RingValue::Scalar(value),
                std_error: RingValue::Scalar(se),
                budget: *budget,
            })
        } else {
            Err(EstimationError::NonFinite {
                subset: subset.to_string(),
            })
        }
    };
    if subset.is_empty() {
        return finish(0.0, 0.0);
    }
    if subset.is_full() {
        let mut rng = child_rng(budget.seed, Purpose::Reference, subset.bits(), 0);
        let y = OutputSample::draw(model, inputs, budget.n_ref, &mut rng);
        let m = y.len();
        let row_means: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| (0..m).map(|j| kernel.eval(y.point(i), y.point(j))).sum::<f64>() / m as f64)
            .collect();
        let (v_stat, se_row) = mean_and_se(&row_means);
        return finish(1.0 - v_stat, 2.0 * se_row);
    }

    let sampling = |source| EstimationError::Sampling {
        subset: subset.to_string(),
        source,
    };
    let conditioner = inputs.conditioner(subset).map_err(sampling)?;
    let d = inputs.dim();
    let per_point: Vec<f64> = (0..budget.n_outer)
        .into_par_iter()
        .map(|j| {
            let mut rng = child_rng(budget.seed, Purpose::OuterPoint, subset.bits(), j as u64);
            let mut row = vec![0.0; d];
            inputs.draw_joint(&mut rng, &mut row);
            let x_a: Vec<f64> = conditioner.pinned_positions().iter().map(|&p| row[p]).collect();
            let pinned = conditioner.pin(&x_a).map_err(sampling)?;
            let conditional = OutputSample {
                k: model.output_dim(),
                values: simulate_outputs(model, d, budget.n_inner, &mut rng, |r, x| pinned.draw(r, x)),
            };
            let reference = OutputSample::draw(model, inputs, budget.n_ref, &mut rng);
            Ok(kernel.mmd2_unbiased(&reference, &conditional))
        })
        .collect::<Result<_, EstimationError>>()?;
    let (value, se) = mean_and_se(&per_point);
    finish(value, se)
}

/// Dispatches on the QoI. `bandwidth` must be resolved for MMD.
pub fn estimate_phi(
    model: &Model,
    inputs: &InputModel,
    subset: SubsetMask,
    qoi: &QoISpec,
    bandwidth: Option<f64>,
    budget: &EstimatorBudget,
) -> Result<PhiEstimate, EstimationError> {
    match *qoi {
        QoISpec::Variance { output } => estimate_phi_variance(model, inputs, subset, output, budget),
        QoISpec::Covariance { p, q } => estimate_phi_covariance(model, inputs, subset, (p, q), budget),
        QoISpec::CovarianceMatrix => estimate_phi_covmatrix(model, inputs, subset, budget),
        QoISpec::MeanMmd(spec) => {
            let h = match (bandwidth, spec.bandwidth) {
                (Some(h), _) | (None, Bandwidth::Fixed(h)) => h,
                (None, Bandwidth::MedianHeuristic) => {
                    return Err(EstimationError::InvalidBandwidth(f64::NAN));
                }
            };
            estimate_phi_mmd(model, inputs, subset, h, budget)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Marginal;
    use rand_distr::{Distribution, StandardNormal};

    fn mask(indices: &[usize], d: usize) -> SubsetMask {
        SubsetMask::from_indices(indices, d).unwrap()
    }

    fn normals(d: usize) -> InputModel {
        InputModel::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; d]).unwrap()
    }

    fn scalar(v: &RingValue) -> f64 {
        v.as_scalar().unwrap()
    }

    #[test]
    fn budget_validation() {
        assert!(EstimatorBudget::new(1, 10, 10, 0).is_err());
        assert!(EstimatorBudget::new(10, 10, 1, 0).is_err());
        assert!(EstimatorBudget::new(2, 2, 2, 0).is_ok());
    }

    #[test]
    fn qoi_compatibility() {
        assert!(QoISpec::Covariance { p: 0, q: 1 }.check_output_dim(1).is_err());
        assert!(QoISpec::Variance { output: 1 }.check_output_dim(1).is_err());
        assert!(QoISpec::CovarianceMatrix.check_output_dim(1).is_ok());
        assert!(QoISpec::MeanMmd(KernelSpec::rbf(Bandwidth::Fixed(0.0)))
            .check_output_dim(1)
            .is_err());
    }

    #[test]
    fn additive_conditional_means() {
        let model = Model::linear(vec![1.0, 1.0]).unwrap();
        let inputs = InputModel::independent(vec![
            Marginal::Uniform { a: 0.0, b: 1.0 },
            Marginal::Normal { mean: 2.0, sd: 1.0 },
        ])
        .unwrap();
        let budget = EstimatorBudget::new(50, 400, 2, 1).unwrap();
        let table = estimate_conditional_mean_table(&model, &inputs, mask(&[1], 2), &budget).unwrap();
        assert_eq!(table.len(), 50);
        for t in &table {
            let se = (t.cov.get(0, 0) / 400.0).sqrt();
            assert!((t.mean[0] - (t.x_a[0] + 2.0)).abs() < 5.0 * se);
        }
        assert!(matches!(
            estimate_conditional_mean_table(&model, &inputs, SubsetMask::full(2).unwrap(), &budget),
            Err(EstimationError::DegenerateSubset { .. })
        ));
    }

    #[test]
    fn empty_subset_is_exactly_zero() {
        let model = Model::sum_difference();
        let budget = EstimatorBudget::new(10, 10, 10, 3).unwrap();
        let empty = SubsetMask::empty(2).unwrap();
        assert_eq!(
            estimate_phi_variance(&model, &normals(2), empty, 0, &budget)
                .unwrap()
                .value,
            RingValue::Scalar(0.0)
        );
        assert_eq!(
            estimate_phi_covariance(&model, &normals(2), empty, (0, 1), &budget)
                .unwrap()
                .value,
            RingValue::Scalar(0.0)
        );
        assert_eq!(
            estimate_phi_covmatrix(&model, &normals(2), empty, &budget)
                .unwrap()
                .value,
            RingValue::HadamardMatrix(SymMatrix::zeros(2))
        );
        assert_eq!(
            estimate_phi_mmd(&model, &normals(2), empty, 1.0, &budget)
                .unwrap()
                .value,
            RingValue::Scalar(0.0)
        );
    }

    #[test]
    fn linear_gaussian_variance_matches_oracle() {
        let model = Model::linear(vec![1.0, 1.0]).unwrap();
        let inputs = InputModel::gaussian(vec![0.0, 0.0], &[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let budget = EstimatorBudget::new(2000, 100, 2, 17).unwrap();
        let est = estimate_phi_variance(&model, &inputs, mask(&[1], 2), 0, &budget).unwrap();
        assert!((scalar(&est.value) - 2.25).abs() < 4.0 * scalar(&est.std_error));
    }

    #[test]
    fn covariance_signs() {
        let model = Model::sum_difference();
        let budget = EstimatorBudget::new(2000, 50, 2, 5).unwrap();
        for (subset, expected) in [(mask(&[1], 2), 1.0), (mask(&[2], 2), -1.0)] {
            let est = estimate_phi_covariance(&model, &normals(2), subset, (0, 1), &budget).unwrap();
            assert!(
                (scalar(&est.value) - expected).abs() < 3.0 * scalar(&est.std_error),
                "{subset:?}"
            );
        }
        let full = estimate_phi_covmatrix(&model, &normals(2), SubsetMask::full(2).unwrap(), &budget).unwrap();
        let (v, se) = (full.value.as_matrix().unwrap(), full.std_error.as_matrix().unwrap());
        for (i, j, expected) in [(0, 0, 2.0), (0, 1, 0.0), (1, 1, 2.0)] {
            assert!((v.get(i, j) - expected).abs() < 3.0 * se.get(i, j));
        }
    }

    #[test]
    fn covariance_is_symmetric_and_matrix_diagonal_matches_variance() {
        let model = Model::sum_difference();
        let inputs = InputModel::gaussian(vec![0.0, 1.0], &[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap();
        let budget = EstimatorBudget::new(200, 20, 2, 8).unwrap();
        for subset in SubsetMask::all(2).unwrap() {
            let pq = estimate_phi_covariance(&model, &inputs, subset, (0, 1), &budget).unwrap();
            let qp = estimate_phi_covariance(&model, &inputs, subset, (1, 0), &budget).unwrap();
            assert_eq!(pq, qp);
            let m = estimate_phi_covmatrix(&model, &inputs, subset, &budget).unwrap();
            for out in 0..2 {
                let v = estimate_phi_variance(&model, &inputs, subset, out, &budget).unwrap();
                let diag = m.value.as_matrix().unwrap().get(out, out);
                assert_eq!(scalar(&v.value).to_bits(), diag.to_bits());
            }
        }
    }

    #[test]
    fn law_of_total_variance_at_the_top() {
        let model = Model::ishigami(7.0, 0.1).unwrap();
        let pi = std::f64::consts::PI;
        let inputs = InputModel::independent(vec![Marginal::Uniform { a: -pi, b: pi }; 3]).unwrap();
        let budget = EstimatorBudget::new(2000, 100, 2, 31).unwrap();
        let total = estimate_phi_variance(&model, &inputs, SubsetMask::full(3).unwrap(), 0, &budget).unwrap();
        for i in 1..=3 {
            let subset = SubsetMask::new(0b111 & !(1 << (i - 1)), 3).unwrap();
            let table = estimate_conditional_mean_table(&model, &inputs, subset, &budget).unwrap();
            let n = table.len() as f64;
            let grand = table.iter().map(|t| t.mean[0]).sum::<f64>() / n;
            let z: Vec<f64> = table
                .iter()
                .map(|t| n / (n - 1.0) * (t.mean[0] - grand).powi(2) + t.cov.get(0, 0) * (1.0 - 1.0 / 100.0))
                .collect();
            let (recomposed, se) = mean_and_se(&z);
            let bound = 5.0 * (se.powi(2) + scalar(&total.std_error).powi(2)).sqrt();
            assert!((recomposed - scalar(&total.value)).abs() < bound, "drop input {i}");
        }
    }

    #[test]
    fn bandwidth_resolution() {
        let two = OutputSample::from_points(&[vec![0.0], vec![2.0]]);
        assert_eq!(
            resolve_bandwidth(&two, &KernelSpec::rbf(Bandwidth::MedianHeuristic)).unwrap(),
            2.0
        );
        assert_eq!(
            resolve_bandwidth(&two, &KernelSpec::rbf(Bandwidth::Fixed(0.5))).unwrap(),
            0.5
        );
        let same = OutputSample::from_points(&[vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(
            resolve_bandwidth(&same, &KernelSpec::rbf(Bandwidth::MedianHeuristic)),
            Err(EstimationError::ZeroMedianDistance)
        );

        let mut rng = child_rng(4, Purpose::Bandwidth, 0, 0);
        let points: Vec<Vec<f64>> = (0..1000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let h = resolve_bandwidth(
            &OutputSample::from_points(&points),
            &KernelSpec::rbf(Bandwidth::MedianHeuristic),
        )
        .unwrap();
        assert!((0.85..=1.05).contains(&h), "bandwidth {h}");
    }

    #[test]
    fn mmd_of_constant_model_is_zero() {
        let model = Model::constant(2, 3.0).unwrap();
        let budget = EstimatorBudget::new(20, 10, 10, 2).unwrap();
        for subset in SubsetMask::all(2).unwrap() {
            let est = estimate_phi_mmd(&model, &normals(2), subset, 1.0, &budget).unwrap();
            assert_eq!(scalar(&est.value), 0.0, "{subset:?}");
        }
    }

    #[test]
    fn mmd_ignores_irrelevant_input() {
        let model = Model::linear(vec![1.0, 0.0]).unwrap();
        let budget = EstimatorBudget::new(200, 100, 200, 6).unwrap();
        let est = estimate_phi_mmd(&model, &normals(2), mask(&[2], 2), 1.0, &budget).unwrap();
        assert!(scalar(&est.value).abs() < 3.0 * scalar(&est.std_error));
    }

    #[test]
    fn estimates_are_thread_count_independent() {
        let model = Model::ishigami(7.0, 0.1).unwrap();
        let pi = std::f64::consts::PI;
        let inputs = InputModel::independent(vec![Marginal::Uniform { a: -pi, b: pi }; 3]).unwrap();
        let budget = EstimatorBudget::new(64, 16, 16, 77).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                (
                    estimate_phi_variance(&model, &inputs, mask(&[1, 3], 3), 0, &budget).unwrap(),
                    estimate_phi_mmd(&model, &inputs, mask(&[2], 3), 1.5, &budget).unwrap(),
                )
            })
        };
        assert_eq!(run(1), run(4));
    }
}
