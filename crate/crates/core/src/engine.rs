//! Full Möbius decompositions: estimate `φ` on every coalition, invert to the
//! dividends `ψ`, and attach diagnostics.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{
    estimate_phi, resolve_bandwidth, Bandwidth, EstimationError, EstimatorBudget, OutputSample, PhiEstimate, QoISpec,
};
use crate::inputs::InputModel;
use crate::lattice::{LatticeError, SetFunctionTable, SubsetMask, MAX_DIMENSION};
use crate::models::Model;
use crate::ring::{check_dk_membership, DkMembership, DkRejection, Ring, RingValue, DK_TOLERANCE};
use crate::rng::{child_rng, Purpose};

/// A total within this many standard errors of zero is treated as zero.
pub const DEGENERATE_TOTAL_SE: f64 = 10.0;
/// Dividends larger than this many standard errors must carry the total's sign.
pub const FRACTIONAL_SIGN_SE: f64 = 3.0;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("d = {0} exceeds the supported maximum of {MAX_DIMENSION} inputs")]
    DimensionCap(usize),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid configuration: {0}")]
    Config(EstimationError),
    #[error("estimation failed for subset {{{subset}}}: {source}")]
    Subset { subset: String, source: EstimationError },
    #[error("kernel bandwidth: {0}")]
    Bandwidth(EstimationError),
}

/// Outcome of the sign test on the dividends.
#[derive(Clone, Debug, PartialEq)]
pub enum FractionalFlag {
    Holds,
    Violated(Vec<SubsetMask>),
    NotApplicable(&'static str),
}

/// Whether each `φ_A` is the QoI applied to an `E_A`-measurable function.
#[derive(Clone, Debug, PartialEq)]
pub enum GradualCertificate {
    Certified { conditioning_function: &'static str },
    NotCertified { reason: &'static str },
}

pub fn verify_gradual(qoi: &QoISpec) -> GradualCertificate {
    match qoi {
        QoISpec::Variance { .. } => GradualCertificate::Certified {
            conditioning_function: "f_A = E[G(X) | X_A]",
        },
        QoISpec::Covariance { .. } => GradualCertificate::Certified {
            conditioning_function: "f_A = (E[G_p(X) | X_A], E[G_q(X) | X_A])",
        },
        QoISpec::CovarianceMatrix => GradualCertificate::Certified {
            conditioning_function: "f_A = (E[G_1(X) | X_A], ..., E[G_k(X) | X_A])",
        },
        QoISpec::MeanMmd(_) => GradualCertificate::NotCertified {
            reason: "mean MMD is a Möbius decomposition with no registered f_A",
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttributionMethod {
    Shapley,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionVector {
    pub method: AttributionMethod,
    pub values: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
}

/// Run metadata. `wall_time` is informational and not part of any serialized
/// result that must be reproducible.
#[derive(Clone, Debug)]
pub struct ReportMeta {
    pub model: Option<Model>,
    pub qoi: QoISpec,
    pub budget: Option<EstimatorBudget>,
    pub bandwidth: Option<f64>,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct DecompositionReport {
    pub phi: SetFunctionTable<RingValue>,
    pub phi_std_errors: SetFunctionTable<RingValue>,
    pub psi: SetFunctionTable<RingValue>,
    /// `se(ψ_A)² = Σ_{B ⊆ A} se(φ_B)²`, assuming independent subset estimates.
    pub psi_std_errors: SetFunctionTable<RingValue>,
    /// `φ_D`.
    pub total: RingValue,
    /// `ψ_A / φ_D`, for scalar QoIs with a nonzero total.
    pub ratios: Option<Vec<Ratio>>,
    /// `Σ_A ψ_A − φ_D`.
    pub sum_residual: RingValue,
    /// `2^d · d · ε · max|φ|`.
    pub sum_tolerance: f64,
    pub fractional: FractionalFlag,
    pub gradual: GradualCertificate,
    /// `|φ_D| ≤ 10 se(φ_D)`.
    pub degenerate: bool,
    /// Membership of `φ_D` in the semidefinite Hadamard ring; covariance matrices only.
    pub dk_membership: Option<Result<DkMembership, DkRejection>>,
    pub meta: ReportMeta,
}

impl DecompositionReport {
    /// Builds the decomposition and diagnostics from an existing `φ` table.
    pub fn from_tables(
        phi: SetFunctionTable<RingValue>,
        phi_std_errors: SetFunctionTable<RingValue>,
        qoi: QoISpec,
    ) -> Result<Self, DecomposeError> {
        let dim = phi.dim();
        if phi_std_errors.dim() != dim {
            return Err(LatticeError::DimensionMismatch(dim, phi_std_errors.dim()).into());
        }
        let psi = phi.mobius_transform();
        let psi_std_errors = phi_std_errors
            .map(|s| s.mul_ref(s))
            .zeta_transform()
            .map(|v| v.map(f64::sqrt));
        let total = phi.top().clone();
        let total_se = phi_std_errors.top().clone();

        let mut sum_residual = psi.total();
        sum_residual.sub_assign_ref(&total);
        let max_phi = phi.entries().iter().fold(0.0f64, |m, v| m.max(v.max_abs()));
        let sum_tolerance = (1u64 << dim) as f64 * dim as f64 * f64::EPSILON * max_phi;

        let degenerate = match (&total, &total_se) {
            (RingValue::Scalar(t), RingValue::Scalar(s)) => t.abs() <= DEGENERATE_TOTAL_SE * s,
            (RingValue::HadamardMatrix(t), RingValue::HadamardMatrix(s)) => t
                .upper()
                .iter()
                .zip(s.upper())
                .all(|(t, s)| t.abs() <= DEGENERATE_TOTAL_SE * s),
            _ => unreachable!("value and std-error tables share a ring"),
        };

        let ratios = match (&total, &total_se, degenerate) {
            (RingValue::Scalar(t), RingValue::Scalar(t_se), false) => Some(
                psi.entries()
                    .iter()
                    .zip(psi_std_errors.entries())
                    .map(|(p, s)| {
                        let (p, s) = (p.as_scalar().unwrap_or(f64::NAN), s.as_scalar().unwrap_or(f64::NAN));
                        let value = p / t;
                        let std_error = ((s / t).powi(2) + (p * t_se / (t * t)).powi(2)).sqrt();
                        Ratio { value, std_error }
                    })
                    .collect(),
            ),
            _ => None,
        };

        let dk_membership = match (&qoi, &total) {
            (QoISpec::CovarianceMatrix, RingValue::HadamardMatrix(m)) => Some(check_dk_membership(m, DK_TOLERANCE)),
            _ => None,
        };

        let mut report = Self {
            phi,
            phi_std_errors,
            psi,
            psi_std_errors,
            total,
            ratios,
            sum_residual,
            sum_tolerance,
            fractional: FractionalFlag::NotApplicable("not evaluated"),
            gradual: verify_gradual(&qoi),
            degenerate,
            dk_membership,
            meta: ReportMeta {
                model: None,
                qoi,
                budget: None,
                bandwidth: None,
                wall_time: Duration::ZERO,
            },
        };
        report.fractional = check_fractional(&report);
        Ok(report)
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    /// Whether `|Σ ψ − φ_D|` is within the floating-point accumulation bound.
    pub fn sum_identity_holds(&self) -> bool {
        self.sum_residual.max_abs() <= self.sum_tolerance
    }

    /// `ψ` as plain reals, when the QoI is scalar.
    pub fn scalar_psi(&self) -> Option<SetFunctionTable<f64>> {
        scalar_table(&self.psi)
    }

    pub fn scalar_phi(&self) -> Option<SetFunctionTable<f64>> {
        scalar_table(&self.phi)
    }

    /// Shapley values from the dividends, with standard errors propagated
    /// from the independent `φ` estimates.
    pub fn attribution(&self) -> Option<AttributionVector> {
        let psi = self.scalar_psi()?;
        let phi_se = scalar_table(&self.phi_std_errors)?;
        let mut attribution = shapley_attribution(&psi);
        attribution.std_errors = Some(shapley_std_errors(&phi_se));
        Some(attribution)
    }
}

fn scalar_table(table: &SetFunctionTable<RingValue>) -> Option<SetFunctionTable<f64>> {
    let entries: Option<Vec<f64>> = table.entries().iter().map(RingValue::as_scalar).collect();
    SetFunctionTable::new(table.dim(), entries?).ok()
}

/// Sign test of the dividends against the total.
///
/// Dividends within three standard errors of zero count as sign-compatible.
pub fn check_fractional(report: &DecompositionReport) -> FractionalFlag {
    let (Some(total), Some(psi), Some(psi_se)) = (
        report.total.as_scalar(),
        report.scalar_psi(),
        scalar_table(&report.psi_std_errors),
    ) else {
        return FractionalFlag::NotApplicable("matrix-valued quantity");
    };
    if report.degenerate || total == 0.0 {
        return FractionalFlag::NotApplicable("total is zero within noise");
    }
    let violated: Vec<SubsetMask> = psi
        .iter()
        .zip(psi_se.entries())
        .filter(|((_, &p), &s)| p.abs() > FRACTIONAL_SIGN_SE * s && p.signum() != total.signum())
        .map(|((subset, _), _)| subset)
        .collect();
    if violated.is_empty() {
        FractionalFlag::Holds
    } else {
        FractionalFlag::Violated(violated)
    }
}

/// `Shap_i = Σ_{A ∋ i} ψ_A / |A|`.
pub fn shapley_attribution(psi: &SetFunctionTable<f64>) -> AttributionVector {
    let d = psi.dim();
    let mut values = vec![0.0; d];
    for (subset, &p) in psi.iter() {
        if subset.is_empty() {
            continue;
        }
        let share = p / subset.cardinality() as f64;
        for i in subset.positions() {
            values[i] += share;
        }
    }
    AttributionVector {
        method: AttributionMethod::Shapley,
        values,
        std_errors: None,
    }
}

/// `1 / (d · C(d−1, s))`, the Shapley weight of a coalition of size `s` not containing `i`.
fn shapley_weight(d: usize, s: usize) -> f64 {
    let mut binom = 1.0;
    for j in 0..s {
        binom = binom * (d - 1 - j) as f64 / (j + 1) as f64;
    }
    1.0 / (d as f64 * binom)
}

/// Standard errors of the Shapley values, treating `φ̂_B` as independent.
///
/// `Shap_i = Σ_{B ∌ i} w(|B|) (φ_{B∪i} − φ_B)`, so each `φ_B` enters with
/// weight `w(|B|−1)` if `i ∈ B` and `−w(|B|)` otherwise.
pub fn shapley_std_errors(phi_se: &SetFunctionTable<f64>) -> Vec<f64> {
    let d = phi_se.dim();
    (1..=d)
        .map(|i| {
            phi_se
                .iter()
                .filter(|(b, _)| !(b.is_full() && !b.contains(i)))
                .map(|(b, &se)| {
                    let w = if b.contains(i) {
                        shapley_weight(d, b.cardinality() - 1)
                    } else {
                        shapley_weight(d, b.cardinality())
                    };
                    (w * se).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Estimates `φ_A` for every coalition and assembles the decomposition.
pub fn decompose(
    model: &Model,
    inputs: &InputModel,
    qoi: &QoISpec,
    budget: &EstimatorBudget,
) -> Result<DecompositionReport, DecomposeError> {
    let start = Instant::now();
    let d = model.input_dim();
    if d > MAX_DIMENSION {
        return Err(DecomposeError::DimensionCap(d));
    }
    if inputs.dim() != d {
        return Err(DecomposeError::Config(EstimationError::InputMismatch {
            model: d,
            inputs: inputs.dim(),
        }));
    }
    qoi.check_output_dim(model.output_dim())
        .map_err(DecomposeError::Config)?;
    budget.validate().map_err(DecomposeError::Config)?;

    let bandwidth = match qoi {
        QoISpec::MeanMmd(spec) => Some(match spec.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::MedianHeuristic => {
                let mut rng = child_rng(budget.seed, Purpose::Bandwidth, 0, 0);
                let reference = OutputSample::draw(model, inputs, budget.n_ref, &mut rng);
                resolve_bandwidth(&reference, spec).map_err(DecomposeError::Bandwidth)?
            }
        }),
        _ => None,
    };

    let subsets: Vec<SubsetMask> = SubsetMask::all(d)?.collect();
    let estimates: Vec<Result<PhiEstimate, EstimationError>> = subsets
        .par_iter()
        .map(|&subset| estimate_phi(model, inputs, subset, qoi, bandwidth, budget))
        .collect();
    let mut values = Vec::with_capacity(subsets.len());
    let mut errors = Vec::with_capacity(subsets.len());
    for (subset, estimate) in subsets.iter().zip(estimates) {
        let estimate = estimate.map_err(|source| DecomposeError::Subset {
            subset: subset.to_string(),
            source,
        })?;
        values.push(estimate.value);
        errors.push(estimate.std_error);
    }

    let phi = SetFunctionTable::new(d, values)?;
    let phi_std_errors = SetFunctionTable::new(d, errors)?;
    let mut report = DecompositionReport::from_tables(phi, phi_std_errors, qoi.clone())?;
    report.meta = ReportMeta {
        model: Some(model.clone()),
        qoi: qoi.clone(),
        budget: Some(*budget),
        bandwidth,
        wall_time: start.elapsed(),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Marginal;
    use crate::ring::SymMatrix;

    fn scalars(d: usize, values: &[f64]) -> SetFunctionTable<RingValue> {
        SetFunctionTable::new(d, values.iter().map(|&v| RingValue::Scalar(v)).collect()).unwrap()
    }

    fn mask(indices: &[usize], d: usize) -> SubsetMask {
        SubsetMask::from_indices(indices, d).unwrap()
    }

    #[test]
    fn correlated_linear_oracle_table() {
        let phi = scalars(2, &[0.0, 2.25, 2.25, 3.0]);
        let se = scalars(2, &[0.0; 4]);
        let report = DecompositionReport::from_tables(phi, se, QoISpec::Variance { output: 0 }).unwrap();
        let psi = report.scalar_psi().unwrap();
        assert_eq!(psi.entries(), &[0.0, 2.25, 2.25, -1.5]);
        assert!(report.sum_identity_holds());
        assert_eq!(report.fractional, FractionalFlag::Violated(vec![mask(&[1, 2], 2)]));
        let shap = report.attribution().unwrap();
        assert_eq!(shap.values, vec![1.5, 1.5]);
        let ratio_sum: f64 = report.ratios.as_ref().unwrap().iter().map(|r| r.value).sum();
        assert!((ratio_sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trivial_decomposition() {
        let phi = scalars(3, &[4.0; 8]);
        let report =
            DecompositionReport::from_tables(phi, scalars(3, &[0.0; 8]), QoISpec::Variance { output: 0 }).unwrap();
        let psi = report.scalar_psi().unwrap();
        assert_eq!(psi.entries()[0], 4.0);
        assert!(psi.entries()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shapley_examples() {
        let psi = SetFunctionTable::new(2, vec![0.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(shapley_attribution(&psi).values, vec![1.5, 1.5]);
        let psi = SetFunctionTable::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(shapley_attribution(&psi).values, vec![1.0, 1.0]);
    }

    #[test]
    fn shapley_weights_sum_to_one() {
        for d in 1..=8 {
            // Σ_s C(d−1, s) w(s) = 1
            let mut binom = 1.0;
            let mut total = 0.0;
            for s in 0..d {
                total += binom * shapley_weight(d, s);
                binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_model_is_not_applicable() {
        let model = Model::constant(2, 1.0).unwrap();
        let inputs = InputModel::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; 2]).unwrap();
        let budget = EstimatorBudget::new(20, 10, 10, 1).unwrap();
        let report = decompose(&model, &inputs, &QoISpec::Variance { output: 0 }, &budget).unwrap();
        assert!(report.degenerate);
        assert!(report.ratios.is_none());
        assert!(matches!(report.fractional, FractionalFlag::NotApplicable(_)));
    }

    #[test]
    fn matrix_reports() {
        let model = Model::sum_difference();
        let inputs = InputModel::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; 2]).unwrap();
        let budget = EstimatorBudget::new(200, 20, 2, 1).unwrap();
        let report = decompose(&model, &inputs, &QoISpec::CovarianceMatrix, &budget).unwrap();
        assert!(report.sum_identity_holds());
        assert!(report.ratios.is_none());
        assert!(report.attribution().is_none());
        assert!(matches!(report.fractional, FractionalFlag::NotApplicable(_)));
        assert!(matches!(report.dk_membership, Some(Ok(_))));
        assert_eq!(report.psi.entries()[0], RingValue::HadamardMatrix(SymMatrix::zeros(2)));
    }

    #[test]
    fn rejects_incompatible_qoi() {
        let model = Model::linear(vec![1.0, 1.0]).unwrap();
        let inputs = InputModel::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }; 2]).unwrap();
        let budget = EstimatorBudget::new(20, 10, 10, 1).unwrap();
        assert!(matches!(
            decompose(&model, &inputs, &QoISpec::Covariance { p: 0, q: 1 }, &budget),
            Err(DecomposeError::Config(EstimationError::Incompatible { .. }))
        ));
    }

    #[test]
    fn gradual_certificates() {
        assert!(matches!(
            verify_gradual(&QoISpec::Variance { output: 0 }),
            GradualCertificate::Certified { .. }
        ));
        assert!(matches!(
            verify_gradual(&QoISpec::CovarianceMatrix),
            GradualCertificate::Certified { .. }
        ));
        assert!(matches!(
            verify_gradual(&QoISpec::MeanMmd(crate::estimators::KernelSpec::rbf(
                Bandwidth::MedianHeuristic
            ))),
            GradualCertificate::NotCertified { .. }
        ));
    }
}
