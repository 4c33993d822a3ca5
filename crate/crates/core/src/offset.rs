//! Offset Rademacher complexity with an exact inner supremum, the offset and
//! Bernstein conditions, and the constants of the in-expectation bound.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{compensated_sum, BallQuadratic, NormBall, SymEigen};
use crate::problem::{GaussianLinearLaw, RegressionProblem};
use crate::rng::{derive_seed, rng_from_seed};

/// Function classes over which the offset complexity is evaluated.
#[derive(Debug, Clone)]
pub enum ClassSpec {
    /// `{⟨α, ·⟩ : ‖α‖₂ ≤ R}` evaluated through the design `Z`.
    L2Ball { radius: f64 },
    /// `{⟨α, ·⟩ : αᵀQα ≤ R²}` with `Q` positive definite.
    Ellipsoid { q: DMatrix<f64>, radius: f64 },
    /// `{Σ β_j k(x_j, ·) : βᵀKβ ≤ R²}`; the design passed alongside must be `K`.
    RkhsBall { radius: f64 },
    /// `G − g_F` for a base class `G`; `center` parametrizes `g_F` in the
    /// base class's coordinates (`α` or `β`).
    Shifted {
        base: Box<ClassSpec>,
        center: DVector<f64>,
    },
}

impl ClassSpec {
    fn ball(&self, design: &DMatrix<f64>) -> Result<NormBall> {
        match self {
            ClassSpec::L2Ball { radius } => NormBall::l2(*radius),
            ClassSpec::Ellipsoid { q, radius } => NormBall::ellipsoid(q, *radius),
            ClassSpec::RkhsBall { radius } => NormBall::rkhs(design, *radius),
            ClassSpec::Shifted { .. } => {
                Err(Error::invalid("nested shifted classes are not supported"))
            }
        }
    }
}

/// Maximizer of `(2/n)σᵀAw − (c/n)‖Aw‖² (+ const)` over `‖w‖₂ ≤ R`, with the
/// design's Gram matrix decomposed once.
#[derive(Debug, Clone)]
pub struct OffsetSupremum {
    effective: DMatrix<f64>,
    gram_eigen: SymEigen,
    ball: NormBall,
    /// Values of `g_F` on the sample for shifted classes.
    shift: Option<DVector<f64>>,
}

/// Value and maximizer (in the class's own coordinates) of one inner supremum.
#[derive(Debug, Clone)]
pub struct SupremumSolution {
    pub value: f64,
    pub argmax: DVector<f64>,
}

impl OffsetSupremum {
    pub fn new(design: &DMatrix<f64>, class: &ClassSpec) -> Result<Self> {
        let (base, center) = match class {
            ClassSpec::Shifted { base, center } => (base.as_ref(), Some(center)),
            other => (other, None),
        };
        let ball = base.ball(design)?;
        let effective = ball.effective_design(design)?;
        let shift = match center {
            Some(c) => {
                check_dim(design.ncols(), c.len())?;
                Some(design * c)
            }
            None => None,
        };
        let gram_eigen = SymEigen::psd(&(effective.tr_mul(&effective) / effective.nrows() as f64))?;
        Ok(OffsetSupremum {
            effective,
            gram_eigen,
            ball,
            shift,
        })
    }

    pub fn n(&self) -> usize {
        self.effective.nrows()
    }

    /// `sup_g (1/n) Σ 2σ_i g(x_i) − c g(x_i)²`.
    pub fn solve(&self, sigma: &DVector<f64>, c: f64) -> Result<SupremumSolution> {
        check_dim(self.n(), sigma.len())?;
        if !(c >= 0.0) {
            return Err(Error::invalid("offset coefficient c must be nonnegative"));
        }
        let n = self.n() as f64;
        let radius = self.ball.radius();
        if c == 0.0 && radius.is_infinite() {
            return Err(Error::invalid("c = 0 over an unbounded class is unbounded"));
        }
        let (anchor, constant) = match &self.shift {
            Some(u) => (
                sigma + u * c,
                -2.0 / n * sigma.dot(u) - c / n * u.norm_squared(),
            ),
            None => (sigma.clone(), 0.0),
        };
        // Maximizing f(w) = (2/n)aᵀAw − (c/n)‖Aw‖² is minimizing
        // ½wᵀHw − gᵀw with H = 2c·AᵀA/n and g = (2/n)Aᵀa.
        let g = self.effective.tr_mul(&anchor) * (2.0 / n);
        let eig = SymEigen {
            values: &self.gram_eigen.values * (2.0 * c),
            vectors: self.gram_eigen.vectors.clone(),
        };
        let sol = BallQuadratic::from_eigen(eig).solve(&g, radius)?;
        let fitted = &self.effective * &sol.alpha;
        let value = 2.0 / n * anchor.dot(&fitted) - c / n * fitted.norm_squared() + constant;
        Ok(SupremumSolution {
            value,
            argmax: self.ball.lift(&sol.alpha),
        })
    }
}

/// `max over ‖α‖₂ ≤ R of (2/n)σᵀZα − (c/n)‖Zα‖²`, solved exactly.
pub fn ball_quadratic_max(
    z: &DMatrix<f64>,
    sigma: &DVector<f64>,
    c: f64,
    radius: f64,
) -> Result<(f64, DVector<f64>)> {
    let sol = OffsetSupremum::new(z, &ClassSpec::L2Ball { radius })?.solve(sigma, c)?;
    Ok((sol.value, sol.argmax))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetComplexityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
    pub c: f64,
    pub per_draw_values: Vec<f64>,
}

impl OffsetComplexityEstimate {
    fn from_values(values: Vec<f64>, c: f64) -> Self {
        let k = values.len();
        let mean = compensated_sum(values.iter().cloned()) / k as f64;
        let std_error = if k > 1 {
            let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
        } else {
            0.0
        };
        OffsetComplexityEstimate {
            mean,
            std_error,
            draws: k,
            c,
            per_draw_values: values,
        }
    }
}

/// The Rademacher vector of draw `k`; the same `(seed, k)` always yields the
/// same signs.
pub fn rademacher_draw(n: usize, seed: u64, k: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, k));
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Monte Carlo estimate of the empirical offset Rademacher complexity.
pub fn offset_complexity_mc(
    design: &DMatrix<f64>,
    class: &ClassSpec,
    c: f64,
    draws: usize,
    seed: u64,
) -> Result<OffsetComplexityEstimate> {
    if draws == 0 {
        return Err(Error::invalid("draws must be at least 1"));
    }
    let solver = OffsetSupremum::new(design, class)?;
    let values = (0..draws as u64)
        .map(|k| {
            solver
                .solve(&rademacher_draw(solver.n(), seed, k), c)
                .map(|s| s.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(OffsetComplexityEstimate::from_values(values, c))
}

/// Exact expectation over all `2ⁿ` sign patterns (`n ≤ 20`).
pub fn offset_complexity_exact(
    design: &DMatrix<f64>,
    class: &ClassSpec,
    c: f64,
) -> Result<OffsetComplexityEstimate> {
    let n = design.nrows();
    if n > 20 {
        return Err(Error::invalid(
            "exhaustive enumeration is limited to n ≤ 20",
        ));
    }
    let solver = OffsetSupremum::new(design, class)?;
    let values = (0u64..1 << n)
        .map(|bits| {
            let sigma = DVector::from_fn(n, |i, _| if bits >> i & 1 == 1 { 1.0 } else { -1.0 });
            solver.solve(&sigma, c).map(|s| s.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(OffsetComplexityEstimate::from_values(values, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetConditionReport {
    /// `R_n(ĝ) − R_n(g_F) + c‖ĝ − g_F‖²_n`.
    pub residual: f64,
    pub c: f64,
    /// Smallest `ε ≥ 0` for which the condition holds.
    pub satisfied_at: f64,
}

pub fn offset_condition_residual(
    p: &RegressionProblem,
    estimate: &DVector<f64>,
    comparator: &DVector<f64>,
    c: f64,
) -> Result<OffsetConditionReport> {
    let residual = p.empirical_risk(estimate)? - p.empirical_risk(comparator)?
        + c * p.empirical_distance_sq(estimate, comparator)?;
    Ok(OffsetConditionReport {
        residual,
        c,
        satisfied_at: residual.max(0.0),
    })
}

/// `[R(α̂) − R(α_F)] − C (α̂ − α_F)ᵀΣ(α̂ − α_F)`; negative values certify a
/// violation of the Bernstein condition at level `C`.
pub fn bernstein_margin(
    law: &GaussianLinearLaw,
    estimate: &DVector<f64>,
    comparator: &DVector<f64>,
    constant: f64,
) -> Result<f64> {
    let gap = law.population_risk(estimate)? - law.population_risk(comparator)?;
    Ok(gap - constant * law.population_distance_sq(estimate, comparator)?)
}

/// `c₁ = (4 + c/2)B + 2M`, `c₂ = c / (4(B + M)(2 + c))`.
pub fn liang_constants(b: f64, m: f64, c: f64) -> Result<(f64, f64)> {
    if !(c > 0.0) {
        return Err(Error::invalid("c must be positive"));
    }
    if !(b >= 0.0 && m >= 0.0) || b + m == 0.0 {
        return Err(Error::invalid("need B, M ≥ 0 with B + M > 0"));
    }
    Ok((
        (4.0 + c / 2.0) * b + 2.0 * m,
        c / (4.0 * (b + m) * (2.0 + c)),
    ))
}
