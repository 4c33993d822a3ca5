//! Explicitly regularized comparators: ridge, lasso, norm-constrained ERM and
//! population minimizers over norm balls.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{lambda_max, scaled_gram, BallQuadratic, NormBall};
use crate::problem::{GaussianLinearLaw, KernelProblem, RegressionProblem};

pub const LASSO_MAX_ITERS: usize = 1_000_000;

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "regularization parameter must be nonnegative",
        ))
    }
}

/// Solves `(ZᵀZ/n + λI)α = Zᵀy/n`.
pub fn ridge_solve(p: &RegressionProblem, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let n = p.n() as f64;
    let a = scaled_gram(p.design()) + DMatrix::identity(p.m(), p.m()) * lambda;
    let b = p.design().tr_mul(p.labels()) / n;
    let chol = a.cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(&b))
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Result of a proximal-gradient lasso solve.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub alpha: DVector<f64>,
    pub iterations: usize,
    /// `β‖α − prox(α − ∇R_n(α)/β)‖₂` at the returned point.
    pub residual: f64,
}

/// Precomputed Gram form for repeated lasso solves on one problem.
pub struct LassoSolver {
    gram: DMatrix<f64>,
    zty: DVector<f64>,
    beta: f64,
}

impl LassoSolver {
    pub fn new(p: &RegressionProblem) -> Result<Self> {
        let gram = scaled_gram(p.design());
        let beta = 2.0 * lambda_max(&gram)?;
        let zty = p.design().tr_mul(p.labels()) / p.n() as f64;
        Ok(LassoSolver { gram, zty, beta })
    }

    /// ISTA on `R_n(α) + 2λ‖α‖₁` with step `1/β`, `β = 2λ_max(ZᵀZ/n)`.
    pub fn solve(&self, lambda: f64, tol: f64, warm: Option<&DVector<f64>>) -> Result<LassoFit> {
        check_lambda(lambda)?;
        if !(tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        let m = self.zty.len();
        let mut alpha = match warm {
            Some(w) => {
                check_dim(m, w.len())?;
                w.clone()
            }
            None => DVector::zeros(m),
        };
        if self.beta == 0.0 {
            return Ok(LassoFit {
                alpha: DVector::zeros(m),
                iterations: 0,
                residual: 0.0,
            });
        }
        let step = 1.0 / self.beta;
        let thresh = 2.0 * lambda * step;
        for it in 0..LASSO_MAX_ITERS {
            let grad = (&self.gram * &alpha - &self.zty) * 2.0;
            let next = (&alpha - grad * step).map(|x| soft_threshold(x, thresh));
            let residual = self.beta * (&next - &alpha).norm();
            alpha = next;
            if residual <= tol {
                return Ok(LassoFit {
                    alpha,
                    iterations: it + 1,
                    residual,
                });
            }
        }
        Err(Error::NonConvergence(LASSO_MAX_ITERS))
    }
}

/// Minimizer of `R_n(α) + 2λ‖α‖₁`.
pub fn lasso_solve(p: &RegressionProblem, lambda: f64, tol: f64) -> Result<DVector<f64>> {
    Ok(LassoSolver::new(p)?.solve(lambda, tol, None)?.alpha)
}

/// Solutions along a grid of `λ` or `R` values with their risks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPath {
    pub grid: Vec<f64>,
    pub solutions: Vec<Vec<f64>>,
    pub risks: Vec<f64>,
}

impl RegularizationPath {
    pub fn new(grid: Vec<f64>, solutions: Vec<DVector<f64>>, risks: Vec<f64>) -> Result<Self> {
        if grid.len() != solutions.len() || grid.len() != risks.len() {
            return Err(Error::invalid(
                "grid, solutions and risks must have equal length",
            ));
        }
        let increasing = grid.windows(2).all(|w| w[0] < w[1]);
        let decreasing = grid.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err(Error::invalid("grid must be strictly monotone"));
        }
        Ok(RegularizationPath {
            grid,
            solutions: solutions
                .into_iter()
                .map(|s| s.iter().cloned().collect())
                .collect(),
            risks,
        })
    }

    pub fn param_norms(&self) -> Vec<f64> {
        self.solutions
            .iter()
            .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// CSV with columns `lambda_or_R,risk,param_norm`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let rows = self
            .grid
            .iter()
            .zip(&self.risks)
            .zip(self.param_norms())
            .map(|((&g, &r), nrm)| vec![g, r, nrm]);
        crate::io::write_rows(out, &["lambda_or_R", "risk", "param_norm"], rows)
    }
}

/// `log10`-spaced grid of `k` points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || k < 2 {
        return Err(Error::invalid(
            "log grid needs 0 < lo < hi and at least two points",
        ));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..k)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == k - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64)
            }
        })
        .collect())
}

pub fn ridge_path(p: &RegressionProblem, grid: &[f64]) -> Result<Vec<DVector<f64>>> {
    grid.iter().map(|&l| ridge_solve(p, l)).collect()
}

/// Lasso along `grid`, warm-started from the largest `λ` downwards; the
/// output follows the order of `grid`.
pub fn lasso_path(p: &RegressionProblem, grid: &[f64], tol: f64) -> Result<Vec<DVector<f64>>> {
    let solver = LassoSolver::new(p)?;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid[j].total_cmp(&grid[i]));
    let mut out = vec![DVector::zeros(p.m()); grid.len()];
    let mut warm: Option<DVector<f64>> = None;
    for i in order {
        let fit = solver.solve(grid[i], tol, warm.as_ref())?;
        warm = Some(fit.alpha.clone());
        out[i] = fit.alpha;
    }
    Ok(out)
}

/// Geometry of the constraint set of [`constrained_erm_ball`].
#[derive(Debug, Clone)]
pub enum BallGeometry {
    /// `‖α‖₂ ≤ R`.
    L2,
    /// `αᵀQα ≤ R²`, `Q` positive definite.
    Quadratic(DMatrix<f64>),
}

/// Constrained least squares `min R_n(Aw)` over `‖w‖₂ ≤ R` returned as `α = T w`.
fn erm_over_ball(
    design: &DMatrix<f64>,
    labels: &DVector<f64>,
    ball: &NormBall,
) -> Result<DVector<f64>> {
    let eff = ball.effective_design(design)?;
    let n = eff.nrows() as f64;
    // R_n(w) = wᵀ(AᵀA/n)w − 2(Aᵀy/n)ᵀw + const, i.e. ½wᵀHw − gᵀw with H = 2AᵀA/n.
    let h = eff.tr_mul(&eff) * (2.0 / n);
    let g = eff.tr_mul(labels) * (2.0 / n);
    let sol = BallQuadratic::new(&h)?.solve(&g, ball.radius())?;
    Ok(ball.lift(&sol.alpha))
}

/// Empirical risk minimizer over a norm ball.
pub fn constrained_erm_ball(
    p: &RegressionProblem,
    radius: f64,
    geometry: &BallGeometry,
) -> Result<DVector<f64>> {
    let ball = match geometry {
        BallGeometry::L2 => NormBall::l2(radius)?,
        BallGeometry::Quadratic(q) => NormBall::ellipsoid(q, radius)?,
    };
    erm_over_ball(p.design(), p.labels(), &ball)
}

/// Kernel least squares over `{β : βᵀKβ ≤ R²}` (fitted values `Kβ`).
pub fn constrained_kernel_erm(kp: &KernelProblem, radius: f64) -> Result<DVector<f64>> {
    let ball = NormBall::rkhs(kp.gram(), radius)?;
    erm_over_ball(kp.gram(), kp.labels(), &ball)
}

/// `argmin_{‖α‖₂ ≤ R} R(α)`, i.e. the Σ-projection of `α′` onto the ball.
pub fn population_ball_minimizer(law: &GaussianLinearLaw, radius: f64) -> Result<DVector<f64>> {
    population_constrained_minimizer(law, &NormBall::l2(radius)?)
}

/// `argmin R(α)` over an arbitrary [`NormBall`].
pub fn population_constrained_minimizer(
    law: &GaussianLinearLaw,
    ball: &NormBall,
) -> Result<DVector<f64>> {
    let eig = crate::linalg::SymEigen::psd(law.covariance())?;
    let half = eig.reconstruct_with(f64::sqrt);
    // R(α) − σ² = ‖Σ^{1/2}(α − α′)‖², a least-squares problem with design Σ^{1/2}.
    let design = ball.effective_design(&half)?;
    let target = &half * law.true_param();
    let h = design.tr_mul(&design) * 2.0;
    let g = design.tr_mul(&target) * 2.0;
    let sol = BallQuadratic::new(&h)?.solve(&g, ball.radius())?;
    Ok(ball.lift(&sol.alpha))
}

/// `‖(H + μI)α − g‖₂` with the multiplier recovered from the solution, for a
/// problem `min ½αᵀHα − gᵀα` over `‖α‖₂ ≤ R`; also checks complementary slackness.
pub fn ball_kkt_residual(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    alpha: &DVector<f64>,
    radius: f64,
) -> f64 {
    let grad = h * alpha - g;
    let norm = alpha.norm();
    if norm < radius * (1.0 - 1e-9) {
        return grad.norm();
    }
    // On the boundary: −grad = μ α with μ ≥ 0.
    let mu = (-grad.dot(alpha) / (norm * norm)).max(0.0);
    (grad + alpha * mu).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, m: usize, seed: u64) -> RegressionProblem {
        let mut rng = rng_from_seed(seed);
        let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        RegressionProblem::new(z, y).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn ridge_limits_and_optimality() {
        let p = random_problem(30, 4, 1);
        assert!(ridge_solve(&p, 1e9).unwrap().norm() <= 1e-6);
        let ls = ridge_solve(&p, 0.0).unwrap();
        let normal = p.design().tr_mul(&(p.design() * &ls - p.labels()));
        assert!(normal.norm() <= 1e-8);
        for lambda in [1e-3, 0.1, 10.0] {
            let a = ridge_solve(&p, lambda).unwrap();
            let grad = p.risk_gradient(&a).unwrap() + &a * (2.0 * lambda);
            assert!(grad.norm() <= 1e-8);
        }
        let wide = random_problem(3, 5, 2);
        assert!(matches!(ridge_solve(&wide, 0.0), Err(Error::RankDeficient)));
        assert!(ridge_solve(&wide, 0.1).is_ok());
        assert!(ridge_solve(&p, -1.0).is_err());
    }

    #[test]
    fn ridge_norm_shrinks_along_grid() {
        let p = random_problem(40, 6, 3);
        let grid = log_grid(1e-4, 1e2, 60).unwrap();
        let norms: Vec<f64> = ridge_path(&p, &grid)
            .unwrap()
            .iter()
            .map(|a| a.norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lasso_zero_above_threshold() {
        let p = random_problem(25, 5, 4);
        let lam_max = p.design().tr_mul(p.labels()).amax() / 25.0;
        assert_eq!(lasso_solve(&p, lam_max, 1e-10).unwrap(), DVector::zeros(5));
        assert!(lasso_solve(&p, 0.9 * lam_max, 1e-10).unwrap().amax() > 0.0);
    }

    #[test]
    fn lasso_without_penalty_is_least_squares() {
        let p = random_problem(40, 3, 5);
        let tol = 1e-9;
        let a = lasso_solve(&p, 0.0, tol).unwrap();
        let b = ridge_solve(&p, 0.0).unwrap();
        assert!((a - b).norm() <= 10.0 * tol);
    }

    #[test]
    fn lasso_one_dimensional_soft_threshold() {
        let p = RegressionProblem::new(DMatrix::from_element(1, 1, 1.0), v(&[1.0])).unwrap();
        let a = lasso_solve(&p, 0.25, 1e-12).unwrap();
        assert!((a[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lasso_objective_certificate() {
        let p = random_problem(30, 6, 6);
        let lambda = 0.05;
        let obj = |a: &DVector<f64>| p.empirical_risk(a).unwrap() + 2.0 * lambda * a.lp_norm(1);
        let a = lasso_solve(&p, lambda, 1e-10).unwrap();
        let best = obj(&a);
        let mut rng = rng_from_seed(7);
        for _ in 0..1000 {
            let b = &a + DVector::from_fn(6, |_, _| rng.random_range(-0.5..0.5));
            assert!(best <= obj(&b) + 1e-12);
        }
        // Warm-started path agrees with cold solves.
        let grid = [0.5, 0.05, 0.005];
        let path = lasso_path(&p, &grid, 1e-10).unwrap();
        for (l, sol) in grid.iter().zip(&path) {
            assert!((sol - lasso_solve(&p, *l, 1e-10).unwrap()).amax() < 1e-8);
        }
    }

    #[test]
    fn constrained_erm_cases() {
        let p = random_problem(30, 2, 8);
        let ls = p.least_squares().unwrap();
        let big = constrained_erm_ball(&p, ls.norm() * 1.01, &BallGeometry::L2).unwrap();
        assert!((big - &ls).amax() < 1e-10);
        assert_eq!(
            constrained_erm_ball(&p, 0.0, &BallGeometry::L2).unwrap(),
            DVector::zeros(2)
        );

        let radius = 0.5 * ls.norm();
        let sol = constrained_erm_ball(&p, radius, &BallGeometry::L2).unwrap();
        assert!((sol.norm() - radius).abs() <= 1e-8 * radius);
        let h = scaled_gram(p.design()) * 2.0;
        let g = p.design().tr_mul(p.labels()) * (2.0 / 30.0);
        assert!(ball_kkt_residual(&h, &g, &sol, radius) <= 1e-8);
        // Polar grid oracle on the boundary and the interior optimum.
        let mut best = f64::INFINITY;
        for k in 0..1001 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 1001.0;
            best = best.min(
                p.empirical_risk(&v(&[radius * th.cos(), radius * th.sin()]))
                    .unwrap(),
            );
        }
        assert!((p.empirical_risk(&sol).unwrap() - best).abs() <= 1e-3);
        assert!(p.empirical_risk(&sol).unwrap() <= best + 1e-12);
    }

    #[test]
    fn quadratic_geometry_constraint() {
        let p = random_problem(30, 3, 9);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
        let sol = constrained_erm_ball(&p, 0.3, &BallGeometry::Quadratic(q.clone())).unwrap();
        assert!((sol.dot(&(&q * &sol)).sqrt() - 0.3).abs() <= 1e-8 * 0.3);
        // Stationarity: ∇R_n(α) + μ·2Qα = 0 for some μ ≥ 0.
        let grad = p.risk_gradient(&sol).unwrap();
        let qa = &q * &sol * 2.0;
        let mu = -grad.dot(&qa) / qa.norm_squared();
        assert!(mu >= 0.0);
        assert!((grad + qa * mu).norm() <= 1e-8);
    }

    #[test]
    fn kernel_erm_large_radius_interpolates_range() {
        let pts = DMatrix::from_column_slice(8, 1, &[0.0, 0.1, 0.25, 0.4, 0.5, 0.7, 0.85, 1.0]);
        let k = crate::problem::rbf_gram(&pts, 0.2).unwrap();
        let y = DVector::from_fn(8, |i, _| (i as f64).sin());
        let kp = KernelProblem::new(k.clone(), y.clone(), 1.0).unwrap();
        let beta = constrained_kernel_erm(&kp, f64::INFINITY).unwrap();
        // Kβ equals the projection of y on the range of K.
        let ball = NormBall::rkhs(&k, 1.0).unwrap();
        let basis = ball.effective_design(&k).unwrap();
        let proj = &basis * basis.clone().pseudo_inverse(1e-14).unwrap() * &y;
        assert!((&k * &beta - proj).norm() <= 1e-6);

        let small = constrained_kernel_erm(&kp, 0.5).unwrap();
        assert!((small.dot(&(&k * &small)).sqrt() - 0.5).abs() <= 1e-8);
    }

    #[test]
    fn population_minimizer_cases() {
        let law = GaussianLinearLaw::correlated_2d();
        let t = law.true_param().clone();
        assert!((population_ball_minimizer(&law, t.norm() * 1.001).unwrap() - &t).amax() < 1e-10);
        assert_eq!(
            population_ball_minimizer(&law, 0.0).unwrap(),
            DVector::zeros(2)
        );
        let a = population_ball_minimizer(&law, 1.0).unwrap();
        assert!((a.norm() - 1.0).abs() <= 1e-8);
        let h = law.covariance() * 2.0;
        let g = law.covariance() * &t * 2.0;
        assert!(ball_kkt_residual(&h, &g, &a, 1.0) <= 1e-8);
    }

    #[test]
    fn path_validation_and_csv() {
        assert!(RegularizationPath::new(
            vec![1.0, 1.0],
            vec![v(&[0.0]), v(&[0.0])],
            vec![0.0, 0.0]
        )
        .is_err());
        assert!(RegularizationPath::new(vec![1.0], vec![], vec![0.0]).is_err());
        let path = RegularizationPath::new(
            vec![0.1, 1.0],
            vec![v(&[3.0, 4.0]), v(&[0.0, 0.0])],
            vec![2.0, 5.0],
        )
        .unwrap();
        assert_eq!(path.param_norms(), vec![5.0, 0.0]);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("lambda_or_R,risk,param_norm\n"));
        let g = log_grid(1e-4, 1e2, 60).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!((g[0], g[59]), (1e-4, 1e2));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
