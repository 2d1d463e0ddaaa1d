//! Input distributions with exact joint and conditional samplers.
//!
//! Three families are supported, all of which have an analytic conditional
//! law `X_Ā | X_A = x_A`:
//!
//! - independent marginals (the conditional is the product of the free marginals),
//! - a multivariate Gaussian (conditional Gaussian via the Schur complement),
//! - a Gaussian copula with arbitrary supported marginals (conditional Gaussian
//!   in the latent space, pushed through the marginal quantile functions).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::lattice::{SubsetMask, MAX_DIMENSION};
use crate::rng::{child_rng, Purpose, StreamRng};

/// Latent uniforms are kept this far from 0 and 1 so the normal quantile stays finite.
const UNIFORM_CLAMP: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("input model needs between 1 and {MAX_DIMENSION} inputs, got {0}")]
    Dimension(usize),
    #[error("invalid {family} marginal: {reason}")]
    InvalidMarginal { family: &'static str, reason: String },
    #[error("mean has length {mean}, covariance is {cov}×{cov}")]
    ShapeMismatch { mean: usize, cov: usize },
    #[error("matrix is not square and symmetric")]
    NotSymmetric,
    #[error("matrix is not positive definite (Cholesky failed)")]
    NotPositiveDefinite,
    #[error("correlation matrix must have a unit diagonal (entry {0})")]
    NotCorrelation(usize),
    #[error("conditioning set must be a nonempty proper subset, got {{{0}}}")]
    DegenerateConditioning(String),
    #[error("conditioning set has dimension {got}, model has {expected}")]
    SubsetDimension { got: usize, expected: usize },
    #[error("expected {expected} conditioning values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("conditioning value {value} for input {input} is outside its support")]
    OutsideSupport { input: usize, value: f64 },
    #[error("sample size must be at least 1")]
    EmptySample,
}

/// A univariate marginal family.
#[derive(Clone, Debug, PartialEq)]
pub enum Marginal {
    Uniform {
        a: f64,
        b: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Lower bound `a`, mode `c`, upper bound `b`.
    Triangular {
        a: f64,
        c: f64,
        b: f64,
    },
}

fn standard_normal() -> Normal {
    Normal::standard()
}

impl Marginal {
    pub fn validate(&self) -> Result<(), InputError> {
        let bad = |family, reason: &str| {
            Err(InputError::InvalidMarginal {
                family,
                reason: reason.into(),
            })
        };
        match *self {
            Marginal::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite()) {
                    return bad("uniform", "bounds must be finite");
                }
                if a >= b {
                    return bad("uniform", "requires a < b");
                }
            }
            Marginal::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return bad("normal", "mean must be finite");
                }
                if !(sd.is_finite() && sd > 0.0) {
                    return bad("normal", "requires sd > 0");
                }
            }
            Marginal::Triangular { a, c, b } => {
                if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                    return bad("triangular", "parameters must be finite");
                }
                if !(a < b && a <= c && c <= b) {
                    return bad("triangular", "requires a ≤ c ≤ b and a < b");
                }
            }
        }
        Ok(())
    }

    pub fn in_support(&self, x: f64) -> bool {
        match *self {
            Marginal::Uniform { a, b } | Marginal::Triangular { a, b, .. } => x >= a && x <= b,
            Marginal::Normal { .. } => x.is_finite(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => 0.5 * (a + b),
            Marginal::Normal { mean, .. } => mean,
            Marginal::Triangular { a, c, b } => (a + b + c) / 3.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            Marginal::Normal { sd, .. } => sd * sd,
            Marginal::Triangular { a, c, b } => (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Marginal::Normal { mean, sd } => standard_normal().cdf((x - mean) / sd),
            Marginal::Triangular { a, c, b } => {
                if x <= a {
                    0.0
                } else if x >= b {
                    1.0
                } else if x <= c {
                    (x - a) * (x - a) / ((b - a) * (c - a))
                } else {
                    1.0 - (b - x) * (b - x) / ((b - a) * (b - c))
                }
            }
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => a + (b - a) * u,
            Marginal::Normal { mean, sd } => mean + sd * standard_normal().inverse_cdf(u),
            Marginal::Triangular { a, c, b } => {
                let split = (c - a) / (b - a);
                if u < split {
                    a + (u * (b - a) * (c - a)).sqrt()
                } else {
                    b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            _ => self.quantile(rng.random::<f64>()),
        }
    }
}

#[derive(Clone, Debug)]
enum Family {
    Independent(Vec<Marginal>),
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
    Copula {
        corr: DMatrix<f64>,
        chol: DMatrix<f64>,
        marginals: Vec<Marginal>,
    },
}

/// The joint law `P_X` of the inputs. Immutable after construction.
#[derive(Clone, Debug)]
pub struct InputModel {
    dim: usize,
    family: Family,
}

fn to_dmatrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, InputError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(InputError::NotSymmetric);
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) || m != m.transpose() {
        return Err(InputError::NotSymmetric);
    }
    Ok(m)
}

fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>, InputError> {
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or(InputError::NotPositiveDefinite)
}

fn check_dim(dim: usize) -> Result<(), InputError> {
    if dim == 0 || dim > MAX_DIMENSION {
        Err(InputError::Dimension(dim))
    } else {
        Ok(())
    }
}

impl InputModel {
    pub fn independent(marginals: Vec<Marginal>) -> Result<Self, InputError> {
        check_dim(marginals.len())?;
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self {
            dim: marginals.len(),
            family: Family::Independent(marginals),
        })
    }

    pub fn gaussian(mean: Vec<f64>, cov: &[Vec<f64>]) -> Result<Self, InputError> {
        check_dim(mean.len())?;
        let cov = to_dmatrix(cov)?;
        if cov.nrows() != mean.len() {
            return Err(InputError::ShapeMismatch {
                mean: mean.len(),
                cov: cov.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(InputError::InvalidMarginal {
                family: "gaussian",
                reason: "mean must be finite".into(),
            });
        }
        let chol = cholesky_lower(&cov)?;
        Ok(Self {
            dim: mean.len(),
            family: Family::Gaussian {
                mean: DVector::from_vec(mean),
                cov,
                chol,
            },
        })
    }

    pub fn gaussian_copula(corr: &[Vec<f64>], marginals: Vec<Marginal>) -> Result<Self, InputError> {
        check_dim(marginals.len())?;
        for m in &marginals {
            m.validate()?;
        }
        let corr = to_dmatrix(corr)?;
        if corr.nrows() != marginals.len() {
            return Err(InputError::ShapeMismatch {
                mean: marginals.len(),
                cov: corr.nrows(),
            });
        }
        if let Some(i) = (0..corr.nrows()).find(|&i| corr[(i, i)] != 1.0) {
            return Err(InputError::NotCorrelation(i));
        }
        let chol = cholesky_lower(&corr)?;
        Ok(Self {
            dim: marginals.len(),
            family: Family::Copula { corr, chol, marginals },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.family, Family::Independent(_))
    }

    pub fn marginals(&self) -> Option<&[Marginal]> {
        match &self.family {
            Family::Independent(m) | Family::Copula { marginals: m, .. } => Some(m),
            Family::Gaussian { .. } => None,
        }
    }

    /// Mean vector and covariance matrix, when the model is Gaussian.
    pub fn gaussian_parameters(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        match &self.family {
            Family::Gaussian { mean, cov, .. } => Some((mean, cov)),
            _ => None,
        }
    }

    fn in_support(&self, input: usize, x: f64) -> bool {
        match &self.family {
            Family::Independent(m) | Family::Copula { marginals: m, .. } => m[input].in_support(x),
            Family::Gaussian { .. } => x.is_finite(),
        }
    }

    /// Fills `row` (length `d`) with one draw from `P_X`.
    pub fn draw_joint(&self, rng: &mut StreamRng, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.dim);
        match &self.family {
            Family::Independent(marginals) => {
                for (x, m) in row.iter_mut().zip(marginals) {
                    *x = m.sample(rng);
                }
            }
            Family::Gaussian { mean, chol, .. } => {
                let z = standard_normals(rng, self.dim);
                let x = mean + chol * z;
                row.copy_from_slice(x.as_slice());
            }
            Family::Copula { chol, marginals, .. } => {
                let z = chol * standard_normals(rng, self.dim);
                let phi = standard_normal();
                for ((x, m), zi) in row.iter_mut().zip(marginals).zip(z.iter()) {
                    *x = m.quantile(clamp_unit(phi.cdf(*zi)));
                }
            }
        }
    }

    /// Precomputes the conditional law of `X_Ā` given `X_A` for a proper nonempty `A`.
    pub fn conditioner(&self, subset: SubsetMask) -> Result<Conditioner<'_>, InputError> {
        if subset.dim() != self.dim {
            return Err(InputError::SubsetDimension {
                got: subset.dim(),
                expected: self.dim,
            });
        }
        if subset.is_empty() || subset.is_full() {
            return Err(InputError::DegenerateConditioning(subset.to_string()));
        }
        let pinned = subset.positions();
        let free = subset.complement().positions();
        let latent = match &self.family {
            Family::Independent(_) => None,
            Family::Gaussian { cov, .. } => Some(SchurConditional::new(cov, &pinned, &free)?),
            Family::Copula { corr, .. } => Some(SchurConditional::new(corr, &pinned, &free)?),
        };
        Ok(Conditioner {
            model: self,
            pinned,
            free,
            latent,
        })
    }
}

fn standard_normals(rng: &mut StreamRng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `X_f | X_a = x` is `N(μ_f + R (x − μ_a), S)` with `R = Σ_fa Σ_aa⁻¹`, `S = Σ_ff − R Σ_af`.
#[derive(Clone, Debug)]
struct SchurConditional {
    regression: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SchurConditional {
    fn new(cov: &DMatrix<f64>, pinned: &[usize], free: &[usize]) -> Result<Self, InputError> {
        let s_aa = submatrix(cov, pinned, pinned);
        let s_fa = submatrix(cov, free, pinned);
        let s_ff = submatrix(cov, free, free);
        let chol_aa: Cholesky<f64, Dyn> = Cholesky::new(s_aa).ok_or(InputError::NotPositiveDefinite)?;
        // R = Σ_fa Σ_aa⁻¹, solved as Σ_aa Rᵀ = Σ_af.
        let regression = chol_aa.solve(&s_fa.transpose()).transpose();
        let schur = &s_ff - &regression * s_fa.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;
        Ok(Self {
            regression,
            chol: cholesky_lower(&schur)?,
        })
    }
}

/// Conditional sampler for one conditioning set.
#[derive(Clone, Debug)]
pub struct Conditioner<'a> {
    model: &'a InputModel,
    pinned: Vec<usize>,
    free: Vec<usize>,
    latent: Option<SchurConditional>,
}

impl<'a> Conditioner<'a> {
    /// 0-based columns of the conditioning set `A`.
    pub fn pinned_positions(&self) -> &[usize] {
        &self.pinned
    }

    pub fn free_positions(&self) -> &[usize] {
        &self.free
    }

    /// Fixes `X_A = x_a` and precomputes the conditional mean.
    pub fn pin(&self, x_a: &[f64]) -> Result<PinnedConditional<'_>, InputError> {
        if x_a.len() != self.pinned.len() {
            return Err(InputError::ValueCount {
                expected: self.pinned.len(),
                got: x_a.len(),
            });
        }
        for (&pos, &x) in self.pinned.iter().zip(x_a) {
            if !self.model.in_support(pos, x) {
                return Err(InputError::OutsideSupport {
                    input: pos + 1,
                    value: x,
                });
            }
        }
        let latent_mean = match (&self.model.family, &self.latent) {
            (Family::Gaussian { mean, .. }, Some(schur)) => {
                let offset = DVector::from_fn(x_a.len(), |i, _| x_a[i] - mean[self.pinned[i]]);
                let free_mean = DVector::from_fn(self.free.len(), |i, _| mean[self.free[i]]);
                Some(free_mean + &schur.regression * offset)
            }
            (Family::Copula { marginals, .. }, Some(schur)) => {
                let phi = standard_normal();
                let z_a = DVector::from_fn(x_a.len(), |i, _| {
                    phi.inverse_cdf(clamp_unit(marginals[self.pinned[i]].cdf(x_a[i])))
                });
                Some(&schur.regression * z_a)
            }
            _ => None,
        };
        Ok(PinnedConditional {
            conditioner: self,
            x_a: x_a.to_vec(),
            latent_mean,
        })
    }
}

/// The conditional law of the full input vector with `X_A` fixed.
#[derive(Clone, Debug)]
pub struct PinnedConditional<'c> {
    conditioner: &'c Conditioner<'c>,
    x_a: Vec<f64>,
    latent_mean: Option<DVector<f64>>,
}

impl PinnedConditional<'_> {
    /// Fills `row` with `x_A` at the pinned columns and a conditional draw elsewhere.
    pub fn draw(&self, rng: &mut StreamRng, row: &mut [f64]) {
        let c = self.conditioner;
        for (&pos, &x) in c.pinned.iter().zip(&self.x_a) {
            row[pos] = x;
        }
        match (&c.model.family, &c.latent, &self.latent_mean) {
            (Family::Independent(marginals), _, _) => {
                for &pos in &c.free {
                    row[pos] = marginals[pos].sample(rng);
                }
            }
            (Family::Gaussian { .. }, Some(schur), Some(mean)) => {
                let x = mean + &schur.chol * standard_normals(rng, c.free.len());
                for (&pos, v) in c.free.iter().zip(x.iter()) {
                    row[pos] = *v;
                }
            }
            (Family::Copula { marginals, .. }, Some(schur), Some(mean)) => {
                let z = mean + &schur.chol * standard_normals(rng, c.free.len());
                let phi = standard_normal();
                for (&pos, zi) in c.free.iter().zip(z.iter()) {
                    row[pos] = marginals[pos].quantile(clamp_unit(phi.cdf(*zi)));
                }
            }
            _ => unreachable!("latent conditional exists for dependent families"),
        }
    }
}

/// `rows × cols` draws, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBlock {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub seed: u64,
}

impl SampleBlock {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }
}

/// `n` i.i.d. rows from `P_X`, deterministic in `seed`.
pub fn sample_joint(model: &InputModel, n: usize, seed: u64) -> Result<SampleBlock, InputError> {
    if n == 0 {
        return Err(InputError::EmptySample);
    }
    let mut rng = child_rng(seed, Purpose::JointSample, 0, 0);
    let mut data = vec![0.0; n * model.dim];
    for row in data.chunks_exact_mut(model.dim) {
        model.draw_joint(&mut rng, row);
    }
    Ok(SampleBlock {
        rows: n,
        cols: model.dim,
        data,
        seed,
    })
}

/// `n` i.i.d. rows from `P_X` conditioned on `X_A = x_a`.
pub fn sample_conditional(
    model: &InputModel,
    subset: SubsetMask,
    x_a: &[f64],
    n: usize,
    seed: u64,
) -> Result<SampleBlock, InputError> {
    if n == 0 {
        return Err(InputError::EmptySample);
    }
    let conditioner = model.conditioner(subset)?;
    let pinned = conditioner.pin(x_a)?;
    let mut rng = child_rng(seed, Purpose::ConditionalSample, subset.bits(), 0);
    let mut data = vec![0.0; n * model.dim];
    for row in data.chunks_exact_mut(model.dim) {
        pinned.draw(&mut rng, row);
    }
    Ok(SampleBlock {
        rows: n,
        cols: model.dim,
        data,
        seed,
    })
}
