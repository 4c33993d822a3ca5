//! Mirror maps `ψ` with their gradients `∇ψ`, inverse gradients and Bregman
//! divergences `D_ψ(α′, α) = ψ(α′) − ψ(α) − ⟨∇ψ(α), α′ − α⟩`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{is_symmetric, SymEigen};

/// Beyond this dual coordinate `sinh` is treated as divergence.
pub const SINH_ARG_CAP: f64 = 700.0;

/// Extra information some maps need to report a strong-convexity modulus.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConvexityContext {
    /// Radius of the ℓ₁ ball on which the hypentropy modulus is evaluated.
    pub l1_ball_radius: Option<f64>,
}

pub trait MirrorMap {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64>;

    /// `∇ψ(α)`.
    fn dual(&self, alpha: &DVector<f64>) -> Result<DVector<f64>>;

    /// `(∇ψ)⁻¹(θ)`.
    fn dual_inverse(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;

    /// `D_ψ(α′, α)`.
    fn bregman(&self, reference: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
        bregman_from_potential(self, reference, alpha)
    }

    /// Modulus `ρ` with `D_ψ(α′, α) ≥ (ρ/2)‖α′ − α‖²` in the map's natural norm.
    fn strong_convexity(&self, ctx: &ConvexityContext) -> Result<f64>;

    fn name(&self) -> &'static str;
}

/// The Bregman divergence straight from `ψ` and `∇ψ`.
pub fn bregman_from_potential<M: MirrorMap + ?Sized>(
    map: &M,
    reference: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<f64> {
    check_dim(reference.len(), alpha.len())?;
    let grad = map.dual(alpha)?;
    Ok(map.value(reference)? - map.value(alpha)? - grad.dot(&(reference - alpha)))
}

pub fn bregman<M: MirrorMap + ?Sized>(
    map: &M,
    reference: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<f64> {
    map.bregman(reference, alpha)
}

/// `[D(z, x) − D(z, y)] − [⟨∇ψ(x) − ∇ψ(y), x − z⟩ − D(x, y)]`, identically zero
/// for every mirror map.
pub fn three_point_gap<M: MirrorMap + ?Sized>(
    map: &M,
    z: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    check_dim(z.len(), x.len())?;
    check_dim(z.len(), y.len())?;
    let left = map.bregman(z, x)? - map.bregman(z, y)?;
    let right = (map.dual(x)? - map.dual(y)?).dot(&(x - z)) - map.bregman(x, y)?;
    Ok(left - right)
}

/// `ψ(α) = ½‖α‖₂²`; mirror descent reduces to gradient descent.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EuclideanMap;

impl MirrorMap for EuclideanMap {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        Ok(0.5 * alpha.norm_squared())
    }

    fn dual(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(alpha.clone())
    }

    fn dual_inverse(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(theta.clone())
    }

    fn bregman(&self, reference: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
        check_dim(reference.len(), alpha.len())?;
        Ok(0.5 * (reference - alpha).norm_squared())
    }

    fn strong_convexity(&self, _ctx: &ConvexityContext) -> Result<f64> {
        Ok(1.0)
    }

    fn name(&self) -> &'static str {
        "euclidean"
    }
}

/// `ψ(α) = scale · αᵀQα` for a symmetric PSD `Q`.
#[derive(Debug, Clone)]
pub struct QuadraticMap {
    q: DMatrix<f64>,
    scale: f64,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl QuadraticMap {
    /// The Cholesky factor is built eagerly; singular `Q` is accepted but then
    /// [`MirrorMap::dual_inverse`] fails with [`Error::SpecializedUpdateRequired`].
    pub fn new(q: DMatrix<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid("quadratic map scale must be positive"));
        }
        if !is_symmetric(&q, 1e-10) {
            return Err(Error::invalid("quadratic map matrix must be symmetric"));
        }
        let eig = SymEigen::psd(&q)?;
        let chol = if eig.min_value() > eig.zero_threshold().max(1e-14) {
            q.clone().cholesky()
        } else {
            None
        };
        Ok(QuadraticMap { q, scale, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_invertible(&self) -> bool {
        self.chol.is_some()
    }
}

impl MirrorMap for QuadraticMap {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        check_dim(self.q.nrows(), alpha.len())?;
        Ok(self.scale * alpha.dot(&(&self.q * alpha)))
    }

    fn dual(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.q.nrows(), alpha.len())?;
        Ok((&self.q * alpha) * (2.0 * self.scale))
    }

    fn dual_inverse(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.q.nrows(), theta.len())?;
        let chol = self.chol.as_ref().ok_or(Error::SpecializedUpdateRequired)?;
        Ok(chol.solve(&(theta / (2.0 * self.scale))))
    }

    fn strong_convexity(&self, _ctx: &ConvexityContext) -> Result<f64> {
        Ok(2.0 * self.scale)
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }
}

/// Hyperbolic entropy `φ_γ(α) = Σ α_i arcsinh(α_i/γ) − √(α_i² + γ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypentropyMap {
    gamma: f64,
}

/// `arcsinh(x/γ)` without overflow for `|x| ≫ γ` and without cancellation near 0.
fn scaled_asinh(x: f64, gamma: f64) -> f64 {
    let u = x.abs() / gamma;
    let v = if u > 1e150 {
        u.ln() + std::f64::consts::LN_2
    } else {
        (u + u * u / (1.0 + (1.0 + u * u).sqrt())).ln_1p()
    };
    v.copysign(x)
}

impl HypentropyMap {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma.is_finite() {
            Ok(HypentropyMap { gamma })
        } else {
            Err(Error::invalid("hypentropy γ must be positive"))
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl MirrorMap for HypentropyMap {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        let g = self.gamma;
        Ok(alpha
            .iter()
            .map(|&a| a * scaled_asinh(a, g) - a.hypot(g))
            .sum())
    }

    fn dual(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(alpha.map(|a| scaled_asinh(a, self.gamma)))
    }

    fn dual_inverse(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.iter().any(|t| !(t.abs() <= SINH_ARG_CAP)) {
            return Err(Error::diverged());
        }
        Ok(theta.map(|t| self.gamma * t.sinh()))
    }

    fn bregman(&self, reference: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
        // Same formula as the generic route, summed per coordinate so that each
        // term is nonnegative before accumulation.
        check_dim(reference.len(), alpha.len())?;
        let g = self.gamma;
        Ok(reference
            .iter()
            .zip(alpha.iter())
            .map(|(&r, &a)| {
                let term = r * (scaled_asinh(r, g) - scaled_asinh(a, g)) - r.hypot(g) + a.hypot(g);
                term.max(0.0)
            })
            .sum())
    }

    fn strong_convexity(&self, ctx: &ConvexityContext) -> Result<f64> {
        let radius = ctx
            .l1_ball_radius
            .ok_or_else(|| Error::invalid("hypentropy modulus needs an ℓ₁ ball radius"))?;
        if !(radius > 0.0) {
            return Err(Error::invalid("ℓ₁ ball radius must be positive"));
        }
        Ok(1.0 / (2.0 * radius))
    }

    fn name(&self) -> &'static str {
        "hypentropy"
    }
}

/// `R* = 6 ‖α′‖₁ log(3/γ)`: before stopping, hypentropy iterates stay in the
/// ℓ₁ ball of this radius. Callers are responsible for
/// `γ ≤ (‖α′‖₁ ∧ 1)/(3e²d)`.
pub fn hypentropy_ball_radius(gamma: f64, l1_norm_ref: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("γ must be positive"));
    }
    if !(l1_norm_ref >= 0.0) {
        return Err(Error::invalid("ℓ₁ norm must be nonnegative"));
    }
    Ok(6.0 * l1_norm_ref * (3.0 / gamma).ln())
}

/// Upper end of the admissible γ range, `(‖α′‖₁ ∧ 1)/(3e²d)`.
pub fn hypentropy_gamma_limit(l1_norm_ref: f64, d: usize) -> f64 {
    l1_norm_ref.min(1.0) / (3.0 * std::f64::consts::E.powi(2) * d as f64)
}

/// Closed set of maps used by the engine and the experiment runner.
#[derive(Debug, Clone)]
pub enum AnyMap {
    Euclidean(EuclideanMap),
    Quadratic(QuadraticMap),
    Hypentropy(HypentropyMap),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyMap::Euclidean($m) => $e,
            AnyMap::Quadratic($m) => $e,
            AnyMap::Hypentropy($m) => $e,
        }
    };
}

impl MirrorMap for AnyMap {
    fn value(&self, alpha: &DVector<f64>) -> Result<f64> {
        dispatch!(self, m => m.value(alpha))
    }

    fn dual(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        dispatch!(self, m => m.dual(alpha))
    }

    fn dual_inverse(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        dispatch!(self, m => m.dual_inverse(theta))
    }

    fn bregman(&self, reference: &DVector<f64>, alpha: &DVector<f64>) -> Result<f64> {
        dispatch!(self, m => m.bregman(reference, alpha))
    }

    fn strong_convexity(&self, ctx: &ConvexityContext) -> Result<f64> {
        dispatch!(self, m => m.strong_convexity(ctx))
    }

    fn name(&self) -> &'static str {
        dispatch!(self, m => m.name())
    }
}

impl From<EuclideanMap> for AnyMap {
    fn from(m: EuclideanMap) -> Self {
        AnyMap::Euclidean(m)
    }
}

impl From<QuadraticMap> for AnyMap {
    fn from(m: QuadraticMap) -> Self {
        AnyMap::Quadratic(m)
    }
}

impl From<HypentropyMap> for AnyMap {
    fn from(m: HypentropyMap) -> Self {
        AnyMap::Hypentropy(m)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Euclidean,
    Quadratic,
    Hypentropy,
}

/// JSON description of a map; quadratic maps reference their matrix as CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MapSpec {
    pub kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_path: Option<String>,
}

impl MapSpec {
    /// Relative `matrix_path`s are resolved against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<AnyMap> {
        match self.kind {
            MapKind::Euclidean => Ok(EuclideanMap.into()),
            MapKind::Hypentropy => {
                let gamma = self
                    .gamma
                    .ok_or_else(|| Error::invalid("hypentropy map needs gamma"))?;
                Ok(HypentropyMap::new(gamma)?.into())
            }
            MapKind::Quadratic => {
                let rel = self
                    .matrix_path
                    .as_ref()
                    .ok_or_else(|| Error::invalid("quadratic map needs matrix_path"))?;
                let path = match base_dir {
                    Some(dir) if Path::new(rel).is_relative() => dir.join(rel),
                    _ => Path::new(rel).to_path_buf(),
                };
                let q = crate::io::read_matrix_csv(&path)?;
                Ok(QuadraticMap::new(q, self.scale.unwrap_or(0.5))?.into())
            }
        }
    }
}
