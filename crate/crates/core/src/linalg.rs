//! Dense symmetric helpers shared by the solvers: eigen-decompositions with
//! PSD clamping and an exact minimizer of a convex quadratic over an ℓ₂ ball.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Tolerance on the smallest eigenvalue when a matrix is required to be PSD.
pub const PSD_TOL: f64 = 1e-8;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigen-decomposition of a symmetric PSD matrix; eigenvalues are clamped at 0.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Fails if the matrix is not symmetric or has an eigenvalue below
    /// `-PSD_TOL * max(1, λ_max)`.
    pub fn psd(m: &DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(m, 1e-10) {
            return Err(Error::invalid("matrix is not symmetric"));
        }
        let eig = SymmetricEigen::new(m.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL * max.max(1.0) {
            return Err(Error::invalid(format!(
                "matrix is not positive semi-definite (min eigenvalue {min:e})"
            )));
        }
        Ok(SymEigen {
            values: eig.eigenvalues.map(|v| v.max(0.0)),
            vectors: eig.eigenvectors,
        })
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalues at or below this threshold are treated as exact zeros.
    pub fn zero_threshold(&self) -> f64 {
        1e-12 * self.max_value().max(f64::MIN_POSITIVE)
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        &scaled * self.vectors.transpose()
    }
}

/// Largest eigenvalue of a symmetric PSD matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> Result<f64> {
    Ok(SymEigen::psd(m)?.max_value())
}

/// `ZᵀZ / n` for an `n × m` matrix.
pub fn scaled_gram(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.tr_mul(z) / z.nrows() as f64
}

/// Minimizer of `½ αᵀHα − gᵀα` over `‖α‖₂ ≤ radius` with `H` PSD.
#[derive(Debug, Clone)]
pub struct BallSolution {
    pub alpha: DVector<f64>,
    /// Lagrange multiplier `μ ≥ 0` of the norm constraint; `(H + μI)α = g`.
    pub multiplier: f64,
    pub on_boundary: bool,
}

/// Exact solver for convex quadratics over a Euclidean ball. The Hessian is
/// decomposed once so many linear terms can be solved cheaply.
#[derive(Debug, Clone)]
pub struct BallQuadratic {
    eigen: SymEigen,
}

const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 2000;

impl BallQuadratic {
    pub fn new(hessian: &DMatrix<f64>) -> Result<Self> {
        Ok(BallQuadratic {
            eigen: SymEigen::psd(hessian)?,
        })
    }

    pub fn from_eigen(eigen: SymEigen) -> Self {
        BallQuadratic { eigen }
    }

    pub fn dim(&self) -> usize {
        self.eigen.values.len()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    /// `radius` may be `f64::INFINITY` when the quadratic is bounded below.
    pub fn solve(&self, linear: &DVector<f64>, radius: f64) -> Result<BallSolution> {
        check_dim(self.dim(), linear.len())?;
        if radius.is_nan() || radius < 0.0 {
            return Err(Error::invalid("radius must be nonnegative"));
        }
        let m = self.dim();
        if radius == 0.0 {
            return Ok(BallSolution {
                alpha: DVector::zeros(m),
                multiplier: 0.0,
                on_boundary: true,
            });
        }
        let lam = &self.eigen.values;
        let coef = self.eigen.vectors.tr_mul(linear);
        let gnorm = coef.norm();
        if gnorm == 0.0 {
            return Ok(BallSolution {
                alpha: DVector::zeros(m),
                multiplier: 0.0,
                on_boundary: false,
            });
        }
        let zero = self.eigen.zero_threshold();
        // Linear growth along a flat direction makes the problem unbounded
        // without the constraint.
        let unbounded = (0..m).any(|i| lam[i] <= zero && coef[i].abs() > 1e-12 * gnorm);
        if !unbounded {
            let free =
                DVector::from_fn(m, |i, _| if lam[i] > zero { coef[i] / lam[i] } else { 0.0 });
            if free.norm() <= radius {
                return Ok(BallSolution {
                    alpha: &self.eigen.vectors * free,
                    multiplier: 0.0,
                    on_boundary: false,
                });
            }
        } else if radius.is_infinite() {
            return Err(Error::invalid(
                "objective is unbounded without a finite radius",
            ));
        }

        let norm_at = |mu: f64| -> f64 {
            (0..m)
                .map(|i| {
                    let v = coef[i] / (lam[i] + mu);
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        };
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        let mut doublings = 0;
        while norm_at(hi) > radius {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_DOUBLINGS || !hi.is_finite() {
                return Err(Error::Numerical(format!(
                    "multiplier bracket failed: radius {radius:e}, last bracket [{lo:e}, {hi:e}]"
                )));
            }
        }
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if norm_at(mid) > radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if (radius - norm_at(hi)).abs() <= 1e-13 * radius {
                break;
            }
        }
        let w = DVector::from_fn(m, |i, _| coef[i] / (lam[i] + hi));
        let alpha = &self.eigen.vectors * w;
        let achieved = alpha.norm();
        if (achieved - radius).abs() > 1e-8 * radius {
            return Err(Error::Numerical(format!(
                "multiplier bisection stalled: norm {achieved:e} vs radius {radius:e}, μ ∈ [{lo:e}, {hi:e}]"
            )));
        }
        Ok(BallSolution {
            alpha,
            multiplier: hi,
            on_boundary: true,
        })
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A norm ball written as the image of a Euclidean ball: `α = T w` with
/// `‖w‖₂ ≤ radius`. Lets the ℓ₂-ball solver handle ellipsoids and RKHS balls.
#[derive(Debug, Clone)]
pub struct NormBall {
    kind: BallKind,
    radius: f64,
}

#[derive(Debug, Clone)]
enum BallKind {
    L2,
    /// `αᵀQα ≤ R²`; stores `Q^{-1/2}`.
    Ellipsoid(DMatrix<f64>),
    /// `βᵀKβ ≤ R²` over the range of `K`; stores `V₊` and `λ₊`.
    Rkhs {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_nan() || radius < 0.0 {
        Err(Error::invalid("radius must be nonnegative"))
    } else {
        Ok(())
    }
}

impl NormBall {
    pub fn l2(radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(NormBall {
            kind: BallKind::L2,
            radius,
        })
    }

    /// `{α : αᵀQα ≤ radius²}` for a positive-definite `Q`.
    pub fn ellipsoid(q: &DMatrix<f64>, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let eig = SymEigen::psd(q)?;
        if eig.min_value() <= eig.zero_threshold() {
            return Err(Error::invalid("ellipsoid matrix must be positive definite"));
        }
        Ok(NormBall {
            kind: BallKind::Ellipsoid(eig.reconstruct_with(|l| 1.0 / l.sqrt())),
            radius,
        })
    }

    /// `{β : βᵀKβ ≤ radius²}`; directions in the kernel of `K` are dropped.
    pub fn rkhs(gram: &DMatrix<f64>, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        let eig = SymEigen::psd(gram)?;
        let zero = eig.zero_threshold();
        let keep: Vec<usize> = (0..eig.values.len())
            .filter(|&i| eig.values[i] > zero)
            .collect();
        let vectors = eig.vectors.select_columns(&keep);
        let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| eig.values[i]));
        Ok(NormBall {
            kind: BallKind::Rkhs { vectors, values },
            radius,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        check_radius(radius)?;
        Ok(NormBall {
            kind: self.kind.clone(),
            radius,
        })
    }

    /// `Z T`, the design seen from the `w` coordinates. For RKHS balls the
    /// design must be the Gram matrix itself and `K T = V₊ Λ₊^{1/2}` is formed
    /// directly.
    pub fn effective_design(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.kind {
            BallKind::L2 => Ok(z.clone()),
            BallKind::Ellipsoid(t) => {
                check_dim(t.nrows(), z.ncols())?;
                Ok(z * t)
            }
            BallKind::Rkhs { vectors, values } => {
                check_dim(vectors.nrows(), z.ncols())?;
                let mut out = vectors.clone();
                for (j, mut col) in out.column_iter_mut().enumerate() {
                    col *= values[j].sqrt();
                }
                Ok(out)
            }
        }
    }

    /// `α = T w`.
    pub fn lift(&self, w: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            BallKind::L2 => w.clone(),
            BallKind::Ellipsoid(t) => t * w,
            BallKind::Rkhs { vectors, values } => {
                vectors * DVector::from_fn(values.len(), |i, _| w[i] / values[i].sqrt())
            }
        }
    }

    /// `w` with `T w = α`, for `α` in the range of `T`.
    pub fn project(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            BallKind::L2 => Ok(alpha.clone()),
            BallKind::Ellipsoid(t) => {
                t.clone().cholesky().map(|c| c.solve(alpha)).ok_or_else(|| {
                    Error::Numerical("ellipsoid transform is not positive definite".into())
                })
            }
            BallKind::Rkhs { vectors, values } => {
                check_dim(vectors.nrows(), alpha.len())?;
                let c = vectors.tr_mul(alpha);
                Ok(DVector::from_fn(values.len(), |i, _| {
                    c[i] * values[i].sqrt()
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SymEigen::psd(&m).is_err());
    }

    #[test]
    fn clamps_tiny_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-15]);
        let e = SymEigen::psd(&m).unwrap();
        assert!(e.min_value() >= 0.0);
    }

    #[test]
    fn interior_solution_is_newton_point() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let s = BallQuadratic::new(&h).unwrap().solve(&g, 10.0).unwrap();
        assert!((s.alpha[0] - 0.5).abs() < 1e-14);
        assert!((s.alpha[1] - 0.25).abs() < 1e-14);
        assert_eq!(s.multiplier, 0.0);
    }

    #[test]
    fn boundary_solution_satisfies_kkt() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_vec(vec![3.0, -2.0]);
        let s = BallQuadratic::new(&h).unwrap().solve(&g, 0.5).unwrap();
        assert!((s.alpha.norm() - 0.5).abs() < 1e-8 * 0.5);
        let kkt = &h * &s.alpha - &g + s.alpha.scale(s.multiplier);
        assert!(kkt.norm() < 1e-8);
    }

    #[test]
    fn flat_direction_forces_boundary() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let g = DVector::from_vec(vec![0.0, 1.0]);
        let q = BallQuadratic::new(&h).unwrap();
        let s = q.solve(&g, 2.0).unwrap();
        assert!((s.alpha[1] - 2.0).abs() < 1e-8);
        assert!(q.solve(&g, f64::INFINITY).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16];
        assert_eq!(compensated_sum(v), 1.0);
    }

    #[test]
    fn norm_ball_reparametrizations() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let w = DVector::from_vec(vec![0.6, -0.8]);
        let ball = NormBall::ellipsoid(&q, 1.0).unwrap();
        let a = ball.lift(&w);
        assert!((a.dot(&(&q * &a)) - 1.0).abs() < 1e-12);
        assert!((&z * &a - ball.effective_design(&z).unwrap() * &w).amax() < 1e-12);
        assert!((ball.project(&a).unwrap() - &w).amax() < 1e-12);

        // Rank-2 Gram on three points.
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 1.5, 1.0]);
        let k = &f * f.transpose();
        let ball = NormBall::rkhs(&k, 2.0).unwrap();
        let eff = ball.effective_design(&k).unwrap();
        assert_eq!(eff.ncols(), 2);
        let beta = ball.lift(&w);
        assert!((beta.dot(&(&k * &beta)) - 1.0).abs() < 1e-10);
        assert!((&k * &beta - &eff * &w).amax() < 1e-10);
        assert!(NormBall::ellipsoid(&k, 1.0).is_err());
        assert!(NormBall::l2(-1.0).is_err());
    }
}
