//! Least-squares learning problems: the fixed design `Z`, labels `y`, the
//! empirical risk `R_n(α) = ‖Zα − y‖²/n` and the Gaussian linear laws used to
//! generate synthetic data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, SymEigen};
use crate::rng::rng_from_seed;

/// A dataset seen through its design matrix: `g_α(x_i) = (Zα)_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    design: DMatrix<f64>,
    labels: DVector<f64>,
}

impl RegressionProblem {
    pub fn new(design: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        check_dim(design.nrows(), labels.len())?;
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(Error::invalid("design must be non-empty"));
        }
        if design.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design and labels must be finite"));
        }
        Ok(RegressionProblem { design, labels })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// Number of parameters.
    pub fn m(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    fn check_param(&self, alpha: &DVector<f64>) -> Result<()> {
        check_dim(self.m(), alpha.len())
    }

    /// `‖Zα − y‖²/n`.
    pub fn empirical_risk(&self, alpha: &DVector<f64>) -> Result<f64> {
        self.check_param(alpha)?;
        let resid = &self.design * alpha - &self.labels;
        Ok(resid.norm_squared() / self.n() as f64)
    }

    /// `(2/n) Zᵀ(Zα − y)`.
    pub fn risk_gradient(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(alpha)?;
        let resid = &self.design * alpha - &self.labels;
        Ok(self.design.tr_mul(&resid) * (2.0 / self.n() as f64))
    }

    /// `‖Z(α − α′)‖²/n`, the squared empirical distance between `g_α` and `g_α′`.
    pub fn empirical_distance_sq(&self, alpha: &DVector<f64>, other: &DVector<f64>) -> Result<f64> {
        self.check_param(alpha)?;
        self.check_param(other)?;
        Ok((&self.design * (alpha - other)).norm_squared() / self.n() as f64)
    }

    /// Both sides of the identity
    /// `⟨−∇R_n(α), α′ − α⟩ = R_n(α) − R_n(α′) + ‖Z(α − α′)‖²/n`,
    /// each evaluated independently.
    pub fn missing_term_sides(
        &self,
        alpha: &DVector<f64>,
        reference: &DVector<f64>,
    ) -> Result<(f64, f64)> {
        let grad = self.risk_gradient(alpha)?;
        self.check_param(reference)?;
        let lhs = -grad.dot(&(reference - alpha));
        let rhs = self.empirical_risk(alpha)? - self.empirical_risk(reference)?
            + self.empirical_distance_sq(alpha, reference)?;
        Ok((lhs, rhs))
    }

    /// `β = 2 λ_max(ZᵀZ/n)`, the ℓ₂ smoothness constant of `R_n`.
    pub fn smoothness_l2(&self) -> Result<f64> {
        Ok(2.0 * linalg::lambda_max(&linalg::scaled_gram(&self.design))?)
    }

    /// Largest ℓ₂ norm among the columns of `Z/√n`.
    pub fn column_bound(&self) -> f64 {
        let n = self.n() as f64;
        self.design
            .column_iter()
            .map(|c| c.norm() / n.sqrt())
            .fold(0.0, f64::max)
    }

    /// Least-squares solution via the normal equations; requires full column rank.
    pub fn least_squares(&self) -> Result<DVector<f64>> {
        let gram = self.design.tr_mul(&self.design);
        let rhs = self.design.tr_mul(&self.labels);
        let chol = gram.cholesky().ok_or(Error::RankDeficient)?;
        Ok(chol.solve(&rhs))
    }
}

/// `X ~ N(0, Σ)`, `Y | X = x ~ ⟨α′, x⟩ + N(0, σ²)`.
#[derive(Debug, Clone)]
pub struct GaussianLinearLaw {
    covariance: DMatrix<f64>,
    true_param: DVector<f64>,
    noise_sd: f64,
    // Σ = F Fᵀ, built from the clamped eigen-decomposition.
    factor: DMatrix<f64>,
}

impl GaussianLinearLaw {
    pub fn new(covariance: DMatrix<f64>, true_param: DVector<f64>, noise_sd: f64) -> Result<Self> {
        check_dim(covariance.nrows(), true_param.len())?;
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::invalid(
                "noise standard deviation must be finite and nonnegative",
            ));
        }
        if covariance
            .iter()
            .chain(true_param.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("law parameters must be finite"));
        }
        let eig = SymEigen::psd(&covariance)?;
        let factor = DMatrix::from_fn(eig.vectors.nrows(), eig.vectors.ncols(), |i, j| {
            eig.vectors[(i, j)] * eig.values[j].sqrt()
        });
        Ok(GaussianLinearLaw {
            covariance,
            true_param,
            noise_sd,
            factor,
        })
    }

    /// Isotropic design with an `s`-sparse parameter whose first `s` entries
    /// alternate `+1, −1, …`.
    pub fn isotropic_sparse(d: usize, s: usize, noise_sd: f64) -> Result<Self> {
        Self::new(DMatrix::identity(d, d), sparse_sign_vector(d, s)?, noise_sd)
    }

    /// The two-dimensional correlated law `α′ = (1.5, 0.5)`, `Σ = [[1, 1], [1, 2]]`, `σ = 0.5`.
    pub fn correlated_2d() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]),
            DVector::from_vec(vec![1.5, 0.5]),
            0.5,
        )
        .expect("valid law")
    }

    pub fn dim(&self) -> usize {
        self.true_param.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn true_param(&self) -> &DVector<f64> {
        &self.true_param
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Closed form `(α − α′)ᵀΣ(α − α′) + σ²`.
    pub fn population_risk(&self, alpha: &DVector<f64>) -> Result<f64> {
        Ok(self.population_distance_sq(alpha, &self.true_param)? + self.noise_sd * self.noise_sd)
    }

    /// `‖g_α − g_β‖²_P = (α − β)ᵀΣ(α − β)`.
    pub fn population_distance_sq(
        &self,
        alpha: &DVector<f64>,
        other: &DVector<f64>,
    ) -> Result<f64> {
        check_dim(self.dim(), alpha.len())?;
        check_dim(self.dim(), other.len())?;
        let diff = alpha - other;
        Ok(diff.dot(&(&self.covariance * &diff)).max(0.0))
    }

    /// Draws `n` i.i.d. rows; deterministic in `seed`.
    pub fn sample_problem(&self, n: usize, seed: u64) -> Result<RegressionProblem> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let d = self.dim();
        let mut rng = rng_from_seed(seed);
        let mut design = DMatrix::zeros(n, d);
        let mut labels = DVector::zeros(n);
        let mut z = DVector::zeros(d);
        for i in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let x = &self.factor * &z;
            let noise: f64 = rng.sample::<f64, _>(StandardNormal);
            labels[i] = x.dot(&self.true_param) + self.noise_sd * noise;
            design.row_mut(i).copy_from(&x.transpose());
        }
        RegressionProblem::new(design, labels)
    }
}

/// `d`-vector with entries `+1, −1, +1, …` on its first `s` coordinates.
pub fn sparse_sign_vector(d: usize, s: usize) -> Result<DVector<f64>> {
    if s > d {
        return Err(Error::invalid("sparsity exceeds dimension"));
    }
    Ok(DVector::from_fn(d, |i, _| {
        if i >= s {
            0.0
        } else if i % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }))
}

/// Kernel regression data: Gram matrix `K`, labels and `L ≥ sup k(x, x)`.
#[derive(Debug, Clone)]
pub struct KernelProblem {
    gram: DMatrix<f64>,
    labels: DVector<f64>,
    kernel_bound: f64,
    lambda_max_scaled: f64,
}

impl KernelProblem {
    pub fn new(gram: DMatrix<f64>, labels: DVector<f64>, kernel_bound: f64) -> Result<Self> {
        check_dim(gram.nrows(), labels.len())?;
        let eig = SymEigen::psd(&gram)?;
        if !(kernel_bound > 0.0) {
            return Err(Error::invalid("kernel bound must be positive"));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("labels must be finite"));
        }
        let lambda_max_scaled = eig.max_value() / labels.len() as f64;
        Ok(KernelProblem {
            gram,
            labels,
            kernel_bound,
            lambda_max_scaled,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn kernel_bound(&self) -> f64 {
        self.kernel_bound
    }

    /// The same problem seen as least squares with `Z = K`.
    pub fn as_regression(&self) -> RegressionProblem {
        RegressionProblem {
            design: self.gram.clone(),
            labels: self.labels.clone(),
        }
    }

    /// `λ_max(K/n)`.
    pub fn lambda_max_scaled(&self) -> f64 {
        self.lambda_max_scaled
    }
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if bandwidth > 0.0 && bandwidth.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("bandwidth must be positive"))
    }
}

/// RBF kernel between the rows of `a` and the rows of `b`.
pub fn rbf_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, bandwidth: f64) -> Result<DMatrix<f64>> {
    check_bandwidth(bandwidth)?;
    check_dim(a.ncols(), b.ncols())?;
    let denom = 2.0 * bandwidth * bandwidth;
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let d2: f64 = a
            .row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        (-d2 / denom).exp()
    }))
}

/// `K_ij = exp(−‖x_i − x_j‖² / (2 h²))` over the rows of `points`; the
/// diagonal is exactly 1, so the kernel bound is `L = 1`.
pub fn rbf_gram(points: &DMatrix<f64>, bandwidth: f64) -> Result<DMatrix<f64>> {
    let mut k = rbf_cross(points, points, bandwidth)?;
    // Exact symmetry regardless of summation order.
    for i in 0..k.nrows() {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = k[(i, j)];
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// JSON sidecar describing a Gaussian linear law.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LawParams {
    pub covariance: Vec<Vec<f64>>,
    pub true_param: Vec<f64>,
    pub noise_sd: f64,
}

impl From<&GaussianLinearLaw> for LawParams {
    fn from(law: &GaussianLinearLaw) -> Self {
        LawParams {
            covariance: law
                .covariance
                .row_iter()
                .map(|r| r.iter().cloned().collect())
                .collect(),
            true_param: law.true_param.iter().cloned().collect(),
            noise_sd: law.noise_sd,
        }
    }
}

impl TryFrom<LawParams> for GaussianLinearLaw {
    type Error = Error;

    fn try_from(p: LawParams) -> Result<Self> {
        let d = p.true_param.len();
        if p.covariance.len() != d || p.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("covariance must be d × d"));
        }
        let flat: Vec<f64> = p.covariance.into_iter().flatten().collect();
        GaussianLinearLaw::new(
            DMatrix::from_row_slice(d, d, &flat),
            DVector::from_vec(p.true_param),
            p.noise_sd,
        )
    }
}
