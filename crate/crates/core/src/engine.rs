//! Discrete mirror descent, the continuous-time mirror flow, the kernel and
//! EG± updates, trajectory recording and the stopping rules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mirror::{hypentropy_ball_radius, HypentropyMap, MirrorMap, QuadraticMap};
use crate::problem::{KernelProblem, RegressionProblem};

/// One recorded iterate. `t` is the iteration index for discrete runs and
/// the flow time for continuous ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub t: f64,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub risk: f64,
    /// `R_n(α_t) − R_n(α′)`.
    pub delta: f64,
    /// `‖Z(α_t − α′)‖²/n`.
    pub r: f64,
    /// `D_ψ(α′, α_t)`.
    pub potential: f64,
}

impl IterateRecord {
    pub fn residual(&self) -> f64 {
        self.delta + self.r
    }

    pub fn alpha_vector(&self) -> Option<DVector<f64>> {
        self.alpha.as_ref().map(|a| DVector::from_column_slice(a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    /// `η` for discrete runs, the integrator step `h` for continuous ones.
    pub step_size: f64,
    pub reference: Vec<f64>,
    pub init: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &IterateRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &IterateRecord {
        self.records
            .last()
            .expect("trajectories always hold the initial record")
    }

    pub fn at_step(&self, step: usize) -> Option<&IterateRecord> {
        self.records
            .binary_search_by(|r| r.step.cmp(&step))
            .ok()
            .map(|i| &self.records[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingReport {
    pub t_star: f64,
    pub step_star: usize,
    pub epsilon: f64,
    #[serde(rename = "budget_T")]
    pub budget_t: f64,
    /// The stopping statistic at `t*`: `δ + r`, or `R_n` for the empirical rule.
    pub residual: f64,
    pub stopped_by: StopReason,
    /// Integrator step of continuous runs; the stopping time is only resolved
    /// to this grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
}

/// Stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// First `t` with `δ_t + r_t ≤ ε`.
    Oracle { epsilon: f64 },
    /// First `t` with `R_n(α_t) ≤ target`.
    EmpiricalRisk { target: f64 },
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Defaults to twice the theoretical budget.
    pub max_iters: Option<usize>,
    pub store_alpha: bool,
    /// When false the run continues to `max_iters`; the report still
    /// describes the first time the rule fired.
    pub stop_at_threshold: bool,
    /// Record every k-th step; the first, last and stopping steps are always kept.
    pub record_every: usize,
    /// Additional steps to record, sorted ascending.
    pub record_steps: Vec<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iters: None,
            store_alpha: false,
            stop_at_threshold: true,
            record_every: 1,
            record_steps: Vec::new(),
        }
    }
}

/// `ceil((D_ψ(α′, α₀) + η R_n(α′)) / (η ε))`.
pub fn discrete_budget(initial_potential: f64, eta: f64, reference_risk: f64, epsilon: f64) -> f64 {
    ((initial_potential + eta * reference_risk) / (eta * epsilon)).ceil()
}

/// `2 D_ψ(α′, α₀) / ε`.
pub fn continuous_budget(initial_potential: f64, epsilon: f64) -> f64 {
    2.0 * initial_potential / epsilon
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn ensure_finite(v: DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::diverged())
    }
}

/// One mirror-descent step `∇ψ(α⁺) = ∇ψ(α) − η ∇R_n(α)`.
pub fn md_step<M: MirrorMap + ?Sized>(
    map: &M,
    p: &RegressionProblem,
    alpha: &DVector<f64>,
    eta: f64,
) -> Result<DVector<f64>> {
    check_positive("step size", eta)?;
    let grad = p.risk_gradient(alpha)?;
    let theta = map.dual(alpha)? - grad * eta;
    ensure_finite(map.dual_inverse(&theta)?)
}

/// Positive and negative parts of the EG± iterate, `α = α⁺ − α⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct EgPmState {
    pub plus: DVector<f64>,
    pub minus: DVector<f64>,
}

impl EgPmState {
    /// `α⁺ = α⁻ = (γ/2)·1`, hence `α₀ = 0`.
    pub fn init(m: usize, gamma: f64) -> Result<Self> {
        check_positive("γ", gamma)?;
        Ok(EgPmState {
            plus: DVector::from_element(m, gamma / 2.0),
            minus: DVector::from_element(m, gamma / 2.0),
        })
    }

    pub fn alpha(&self) -> DVector<f64> {
        &self.plus - &self.minus
    }

    fn validate(&self, gamma: f64) -> Result<()> {
        check_dim(self.plus.len(), self.minus.len())?;
        let target = gamma * gamma / 4.0;
        for (p, m) in self.plus.iter().zip(self.minus.iter()) {
            if !(*p > 0.0 && *m > 0.0) {
                return Err(Error::invalid("EG± state must be entrywise positive"));
            }
            if ((p * m) - target).abs() > 1e-8 * target {
                return Err(Error::invalid(format!(
                    "EG± product {:e} differs from (γ/2)² = {target:e}",
                    p * m
                )));
            }
        }
        Ok(())
    }
}

/// `α⁺ ← α⁺ ⊙ exp(−ηg)`, `α⁻ ← α⁻ ⊙ exp(ηg)`.
pub fn eg_pm_step(state: &EgPmState, g: &DVector<f64>, eta: f64, gamma: f64) -> Result<EgPmState> {
    check_positive("step size", eta)?;
    check_positive("γ", gamma)?;
    state.validate(gamma)?;
    check_dim(state.plus.len(), g.len())?;
    let plus = state.plus.zip_map(g, |a, gi| a * (-eta * gi).exp());
    let minus = state.minus.zip_map(g, |a, gi| a * (eta * gi).exp());
    let next = EgPmState { plus, minus };
    if next
        .plus
        .iter()
        .chain(next.minus.iter())
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::diverged());
    }
    Ok(next)
}

/// `min(1, 1/λ_max(K/n))`.
pub fn kernel_step_limit(kp: &KernelProblem) -> f64 {
    let lam = kp.lambda_max_scaled();
    if lam > 0.0 {
        (1.0 / lam).min(1.0)
    } else {
        1.0
    }
}

fn check_kernel_step(kp: &KernelProblem, eta: f64, allow_unsafe: bool) -> Result<()> {
    check_positive("step size", eta)?;
    let limit = kernel_step_limit(kp);
    if !allow_unsafe && eta > limit * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "kernel step size {eta} exceeds min(1, 1/λ_max(K/n)) = {limit}"
        )));
    }
    Ok(())
}

/// `α − (η/n)(Kα − y)`.
pub fn kernel_md_step(
    kp: &KernelProblem,
    alpha: &DVector<f64>,
    eta: f64,
    allow_unsafe: bool,
) -> Result<DVector<f64>> {
    check_kernel_step(kp, eta, allow_unsafe)?;
    check_dim(kp.n(), alpha.len())?;
    let resid = kp.gram() * alpha - kp.labels();
    ensure_finite(alpha - resid * (eta / kp.n() as f64))
}

/// Risk quantities relative to a fixed reference, evaluated through
/// `G = ZᵀZ/n` so that `δ` and `r` come from differences directly.
struct Evaluator {
    gram: DMatrix<f64>,
    reference: DVector<f64>,
    risk_ref: f64,
    grad_ref: DVector<f64>,
}

struct Evaluation {
    risk: f64,
    delta: f64,
    r: f64,
    grad: DVector<f64>,
}

impl Evaluator {
    fn new(p: &RegressionProblem, reference: &DVector<f64>) -> Result<Self> {
        check_dim(p.m(), reference.len())?;
        Ok(Evaluator {
            gram: crate::linalg::scaled_gram(p.design()),
            reference: reference.clone(),
            risk_ref: p.empirical_risk(reference)?,
            grad_ref: p.risk_gradient(reference)?,
        })
    }

    fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let diff = alpha - &self.reference;
        &self.gram * diff * 2.0 + &self.grad_ref
    }

    fn evaluate(&self, alpha: &DVector<f64>) -> Evaluation {
        let diff = alpha - &self.reference;
        let gd = &self.gram * &diff;
        let r = diff.dot(&gd);
        let delta = r + self.grad_ref.dot(&diff);
        Evaluation {
            risk: self.risk_ref + delta,
            delta,
            r,
            grad: gd * 2.0 + &self.grad_ref,
        }
    }
}

struct DriveSpec<'a> {
    eval: &'a Evaluator,
    potential: &'a dyn Fn(&DVector<f64>) -> Result<f64>,
    init: &'a DVector<f64>,
    rule: StopRule,
    budget_t: f64,
    max_steps: usize,
    time_per_step: f64,
    step_size: f64,
    grid_step: Option<f64>,
    opts: &'a RunOptions,
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Maps `(α_t, ∇R_n(α_t))` to `α_{t+1}`.
type Advance<'a> = dyn FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + 'a;

fn drive(spec: DriveSpec<'_>, advance: &mut Advance<'_>) -> Result<(Trajectory, StoppingReport)> {
    let every = spec.opts.record_every.max(1);
    let mut extra = spec.opts.record_steps.iter().peekable();
    let mut traj = Trajectory {
        records: Vec::new(),
        step_size: spec.step_size,
        reference: to_vec(&spec.eval.reference),
        init: to_vec(spec.init),
    };
    let mut alpha = spec.init.clone();
    let mut first_hit: Option<(usize, f64)> = None;
    let mut last_stat = f64::NAN;
    let mut last_step = 0;
    let diverged = |traj: Trajectory, step: usize| Error::Divergence {
        step: Some(step),
        partial: Some(Box::new(traj)),
    };

    for step in 0..=spec.max_steps {
        let ev = spec.eval.evaluate(&alpha);
        if !(ev.risk.is_finite() && ev.r.is_finite() && ev.delta.is_finite()) {
            return Err(diverged(traj, step));
        }
        let (stat, threshold) = match spec.rule {
            StopRule::Oracle { epsilon } => (ev.delta + ev.r, epsilon),
            StopRule::EmpiricalRisk { target } => (ev.risk, target),
        };
        let newly_hit = first_hit.is_none() && stat <= threshold;
        if newly_hit {
            first_hit = Some((step, stat));
        }
        let is_last = step == spec.max_steps || (newly_hit && spec.opts.stop_at_threshold);
        let mut listed = false;
        while let Some(&&s) = extra.peek() {
            if s > step {
                break;
            }
            listed |= s == step;
            extra.next();
        }
        if step % every == 0 || is_last || newly_hit || listed {
            let potential = (spec.potential)(&alpha)?;
            traj.records.push(IterateRecord {
                t: step as f64 * spec.time_per_step,
                step,
                alpha: spec.opts.store_alpha.then(|| to_vec(&alpha)),
                risk: ev.risk,
                delta: ev.delta,
                r: ev.r,
                potential,
            });
        }
        last_stat = stat;
        last_step = step;
        if is_last {
            break;
        }
        alpha = match advance(&alpha, &ev.grad) {
            Ok(a) if a.iter().all(|x| x.is_finite()) => a,
            Ok(_) | Err(Error::Divergence { .. }) => return Err(diverged(traj, step + 1)),
            Err(e) => return Err(e),
        };
    }

    let epsilon = match spec.rule {
        StopRule::Oracle { epsilon } => epsilon,
        StopRule::EmpiricalRisk { target } => target,
    };
    let (step_star, residual, stopped_by) = match first_hit {
        Some((s, v)) => (s, v, StopReason::Threshold),
        None => (last_step, last_stat, StopReason::BudgetExhausted),
    };
    let report = StoppingReport {
        t_star: step_star as f64 * spec.time_per_step,
        step_star,
        epsilon,
        budget_t: spec.budget_t,
        residual,
        stopped_by,
        grid_step: spec.grid_step,
    };
    Ok((traj, report))
}

fn saturating_steps(x: f64) -> usize {
    if x.is_finite() && x >= 0.0 {
        if x >= usize::MAX as f64 {
            usize::MAX - 1
        } else {
            x.ceil() as usize
        }
    } else {
        usize::MAX - 1
    }
}

fn check_rule(rule: &StopRule) -> Result<()> {
    match *rule {
        StopRule::Oracle { epsilon } => check_positive("ε", epsilon),
        StopRule::EmpiricalRisk { target } if target.is_finite() => Ok(()),
        StopRule::EmpiricalRisk { .. } => Err(Error::invalid("risk target must be finite")),
    }
}

/// Discrete mirror descent from `init` with the `δ_t + r_t ≤ ε` rule.
pub fn run_discrete<M: MirrorMap + ?Sized>(
    map: &M,
    p: &RegressionProblem,
    init: &DVector<f64>,
    eta: f64,
    epsilon: f64,
    reference: &DVector<f64>,
    opts: &RunOptions,
) -> Result<(Trajectory, StoppingReport)> {
    run_discrete_with_rule(
        map,
        p,
        init,
        eta,
        reference,
        StopRule::Oracle { epsilon },
        opts,
    )
}

/// Discrete mirror descent under an arbitrary [`StopRule`]. For the
/// empirical-risk rule there is no theoretical budget; `budget_T` then reports
/// the iteration cap, which must be given.
pub fn run_discrete_with_rule<M: MirrorMap + ?Sized>(
    map: &M,
    p: &RegressionProblem,
    init: &DVector<f64>,
    eta: f64,
    reference: &DVector<f64>,
    rule: StopRule,
    opts: &RunOptions,
) -> Result<(Trajectory, StoppingReport)> {
    check_positive("step size", eta)?;
    check_rule(&rule)?;
    check_dim(p.m(), init.len())?;
    let eval = Evaluator::new(p, reference)?;
    let d0 = map.bregman(reference, init)?;
    let (budget_t, max_steps) = match rule {
        StopRule::Oracle { epsilon } => {
            let b = discrete_budget(d0, eta, eval.risk_ref, epsilon);
            (
                b,
                opts.max_iters.unwrap_or_else(|| saturating_steps(2.0 * b)),
            )
        }
        StopRule::EmpiricalRisk { .. } => {
            let cap = opts
                .max_iters
                .ok_or_else(|| Error::invalid("the empirical-risk rule needs max_iters"))?;
            (cap as f64, cap)
        }
    };
    let mut theta = map.dual(init)?;
    let potential = |a: &DVector<f64>| map.bregman(reference, a);
    let mut advance = |_: &DVector<f64>, grad: &DVector<f64>| {
        theta.axpy(-eta, grad, 1.0);
        map.dual_inverse(&theta)
    };
    drive(
        DriveSpec {
            eval: &eval,
            potential: &potential,
            init,
            rule,
            budget_t,
            max_steps,
            time_per_step: 1.0,
            step_size: eta,
            grid_step: None,
            opts,
        },
        &mut advance,
    )
}

/// EG± from `α₀ = 0`; the potential is measured with the hypentropy map.
pub fn run_eg_pm(
    p: &RegressionProblem,
    gamma: f64,
    eta: f64,
    epsilon: f64,
    reference: &DVector<f64>,
    opts: &RunOptions,
) -> Result<(Trajectory, StoppingReport)> {
    check_positive("step size", eta)?;
    check_positive("ε", epsilon)?;
    let map = HypentropyMap::new(gamma)?;
    let eval = Evaluator::new(p, reference)?;
    let mut state = EgPmState::init(p.m(), gamma)?;
    let init = state.alpha();
    let d0 = map.bregman(reference, &init)?;
    let budget_t = discrete_budget(d0, eta, eval.risk_ref, epsilon);
    let potential = |a: &DVector<f64>| map.bregman(reference, a);
    let mut advance = |_: &DVector<f64>, grad: &DVector<f64>| {
        state = eg_pm_step(&state, grad, eta, gamma)?;
        Ok(state.alpha())
    };
    drive(
        DriveSpec {
            eval: &eval,
            potential: &potential,
            init: &init,
            rule: StopRule::Oracle { epsilon },
            budget_t,
            max_steps: opts
                .max_iters
                .unwrap_or_else(|| saturating_steps(2.0 * budget_t)),
            time_per_step: 1.0,
            step_size: eta,
            grid_step: None,
            opts,
        },
        &mut advance,
    )
}

/// Kernel gradient descent `α_{t+1} = α_t − (η/n)(Kα_t − y)` with the
/// potential measured by `ψ(α) = αᵀKα`.
pub fn run_kernel(
    kp: &KernelProblem,
    init: &DVector<f64>,
    eta: f64,
    epsilon: f64,
    reference: &DVector<f64>,
    opts: &RunOptions,
    allow_unsafe_step: bool,
) -> Result<(Trajectory, StoppingReport)> {
    check_kernel_step(kp, eta, allow_unsafe_step)?;
    check_positive("ε", epsilon)?;
    check_dim(kp.n(), init.len())?;
    let p = kp.as_regression();
    let eval = Evaluator::new(&p, reference)?;
    let map = QuadraticMap::new(kp.gram().clone(), 1.0)?;
    let d0 = map.bregman(reference, init)?;
    let budget_t = discrete_budget(d0, eta, eval.risk_ref, epsilon);
    let potential = |a: &DVector<f64>| map.bregman(reference, a);
    let scale = eta / kp.n() as f64;
    let mut advance = |a: &DVector<f64>, _: &DVector<f64>| {
        let resid = kp.gram() * a - kp.labels();
        Ok(a - resid * scale)
    };
    drive(
        DriveSpec {
            eval: &eval,
            potential: &potential,
            init,
            rule: StopRule::Oracle { epsilon },
            budget_t,
            max_steps: opts
                .max_iters
                .unwrap_or_else(|| saturating_steps(2.0 * budget_t)),
            time_per_step: 1.0,
            step_size: eta,
            grid_step: None,
            opts,
        },
        &mut advance,
    )
}

/// `min(1e−3, ε / (10 ‖∇R_n(α₀)‖₂))`.
pub fn default_flow_step(p: &RegressionProblem, init: &DVector<f64>, epsilon: f64) -> Result<f64> {
    let g = p.risk_gradient(init)?.norm();
    Ok(if g > 0.0 {
        (epsilon / (10.0 * g)).min(1e-3)
    } else {
        1e-3
    })
}

/// Mirror flow `dθ/dt = −∇R_n((∇ψ)⁻¹(θ))`, `θ₀ = ∇ψ(α₀)`, integrated with
/// classical RK4 on a grid of step `h`. `horizon` defaults to twice the
/// budget `2 D_ψ(α′, α₀)/ε`.
#[allow(clippy::too_many_arguments)]
pub fn run_continuous<M: MirrorMap + ?Sized>(
    map: &M,
    p: &RegressionProblem,
    init: &DVector<f64>,
    epsilon: f64,
    reference: &DVector<f64>,
    horizon: Option<f64>,
    h: Option<f64>,
    opts: &RunOptions,
) -> Result<(Trajectory, StoppingReport)> {
    check_positive("ε", epsilon)?;
    check_dim(p.m(), init.len())?;
    let h = match h {
        Some(h) => h,
        None => default_flow_step(p, init, epsilon)?,
    };
    check_positive("integrator step", h)?;
    let eval = Evaluator::new(p, reference)?;
    let d0 = map.bregman(reference, init)?;
    let budget_t = continuous_budget(d0, epsilon);
    let horizon = horizon.unwrap_or(2.0 * budget_t);
    if !(horizon >= 0.0) {
        return Err(Error::invalid("horizon must be nonnegative"));
    }
    let mut max_steps = saturating_steps(horizon / h);
    if let Some(cap) = opts.max_iters {
        max_steps = max_steps.min(cap);
    }
    let mut theta = map.dual(init)?;
    let potential = |a: &DVector<f64>| map.bregman(reference, a);
    let mut advance = |_: &DVector<f64>, grad: &DVector<f64>| {
        let k1 = -grad;
        let k2 = -eval.gradient(&map.dual_inverse(&(&theta + &k1 * (h / 2.0)))?);
        let k3 = -eval.gradient(&map.dual_inverse(&(&theta + &k2 * (h / 2.0)))?);
        let k4 = -eval.gradient(&map.dual_inverse(&(&theta + &k3 * h))?);
        theta += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        map.dual_inverse(&theta)
    };
    drive(
        DriveSpec {
            eval: &eval,
            potential: &potential,
            init,
            rule: StopRule::Oracle { epsilon },
            budget_t,
            max_steps,
            time_per_step: h,
            step_size: h,
            grid_step: Some(h),
            opts,
        },
        &mut advance,
    )
}

/// Step size, `γ`, budgets and bound for hypentropy mirror descent on sparse
/// linear regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1Hyperparameters {
    pub gamma: f64,
    pub eta: f64,
    /// `√n / (η · 3κσ√(log d))`.
    pub t_star_budget: f64,
    /// `36 κ‖α′‖₁σ√(log d)/√n · log(3/γ)`.
    pub error_bound: f64,
    /// `R* κσ√(log d)/√n`.
    pub epsilon: f64,
    /// `R* = 6‖α′‖₁ log(3/γ)`.
    pub ball_radius: f64,
}

pub fn l1_hyperparameters(
    kappa: f64,
    l1_norm: f64,
    sigma: f64,
    d: usize,
    n: usize,
) -> Result<L1Hyperparameters> {
    check_positive("κ", kappa)?;
    check_positive("‖α′‖₁", l1_norm)?;
    check_positive("σ", sigma)?;
    if d < 2 || n == 0 {
        return Err(Error::invalid("need d ≥ 2 and n ≥ 1"));
    }
    let gamma = crate::mirror::hypentropy_gamma_limit(l1_norm, d);
    let log3g = (3.0 / gamma).ln();
    let eta = (1.0 / (24.0 * kappa * kappa * l1_norm * log3g)).min(l1_norm / (2.0 * sigma * sigma));
    let rate = kappa * sigma * (d as f64).ln().sqrt() / (n as f64).sqrt();
    let ball_radius = hypentropy_ball_radius(gamma, l1_norm)?;
    Ok(L1Hyperparameters {
        gamma,
        eta,
        t_star_budget: 1.0 / (eta * 3.0 * rate),
        error_bound: 36.0 * l1_norm * rate * log3g,
        epsilon: ball_radius * rate,
        ball_radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirror::EuclideanMap;
    use crate::problem::GaussianLinearLaw;
    use crate::rng::{derive_seed, rng_from_seed};
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
    fn euclidean_step_is_gradient_descent() {
        let p = random_problem(15, 4, 1);
        let a = v(&[0.3, -0.2, 1.0, 0.0]);
        let gd = &a - p.risk_gradient(&a).unwrap() * 0.05;
        let md = md_step(&EuclideanMap, &p, &a, 0.05).unwrap();
        assert!((gd - md).amax() <= 1e-12);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let a = v(&[0.5, -2.0]);
        let p = RegressionProblem::new(z.clone(), &z * &a).unwrap();
        for map in [
            crate::mirror::AnyMap::from(EuclideanMap),
            HypentropyMap::new(0.1).unwrap().into(),
        ] {
            let next = md_step(&map, &p, &a, 0.1).unwrap();
            assert!((next - &a).amax() <= 1e-12);
        }
    }

    #[test]
    fn md_step_rejects_bad_inputs() {
        let p = random_problem(5, 2, 2);
        assert!(md_step(&EuclideanMap, &p, &v(&[0.0, 0.0]), 0.0).is_err());
        assert!(md_step(&EuclideanMap, &p, &v(&[0.0]), 0.1).is_err());
        let singular = QuadraticMap::new(DMatrix::from_element(2, 2, 1.0), 1.0).unwrap();
        assert!(matches!(
            md_step(&singular, &p, &v(&[0.0, 0.0]), 0.1),
            Err(Error::SpecializedUpdateRequired)
        ));
    }

    #[test]
    fn hypentropy_step_matches_eg_pm_step() {
        let p = random_problem(20, 8, 3);
        let gamma = 1e-3;
        let state = EgPmState::init(8, gamma).unwrap();
        let g = p.risk_gradient(&state.alpha()).unwrap();
        let eg = eg_pm_step(&state, &g, 1e-2, gamma).unwrap().alpha();
        let md = md_step(
            &HypentropyMap::new(gamma).unwrap(),
            &p,
            &state.alpha(),
            1e-2,
        )
        .unwrap();
        assert!((eg - md).amax() <= 1e-10);
    }

    #[test]
    fn eg_pm_basics() {
        let s = EgPmState::init(3, 0.2).unwrap();
        assert_eq!(s.alpha(), DVector::zeros(3));
        let same = eg_pm_step(&s, &DVector::zeros(3), 0.5, 0.2).unwrap();
        assert_eq!(same, s);
        let bad = EgPmState {
            plus: v(&[0.1, -0.1, 0.1]),
            minus: v(&[0.1, 0.1, 0.1]),
        };
        assert!(eg_pm_step(&bad, &DVector::zeros(3), 0.5, 0.2).is_err());
        let off = EgPmState {
            plus: v(&[0.2, 0.1, 0.1]),
            minus: v(&[0.1, 0.1, 0.1]),
        };
        assert!(eg_pm_step(&off, &DVector::zeros(3), 0.5, 0.2).is_err());
    }

    #[test]
    fn eg_pm_matches_hypentropy_over_full_runs() {
        for seed in 0..20 {
            let p = random_problem(20, 8, derive_seed(4, seed));
            let (gamma, eta) = (1e-3, 1e-2);
            let map = HypentropyMap::new(gamma).unwrap();
            let mut state = EgPmState::init(8, gamma).unwrap();
            let mut alpha = DVector::zeros(8);
            for _ in 0..200 {
                let g = p.risk_gradient(&state.alpha()).unwrap();
                state = eg_pm_step(&state, &g, eta, gamma).unwrap();
                alpha = md_step(&map, &p, &alpha, eta).unwrap();
                assert!((state.alpha() - &alpha).amax() <= 1e-8);
                let target = gamma * gamma / 4.0;
                for (a, b) in state.plus.iter().zip(state.minus.iter()) {
                    assert!((a * b - target).abs() <= 1e-6 * target);
                }
            }
        }
    }

    fn kernel_problem(gram: DMatrix<f64>, y: DVector<f64>) -> KernelProblem {
        KernelProblem::new(gram, y, 1.0).unwrap()
    }

    #[test]
    fn kernel_step_examples() {
        let y = v(&[1.0, -2.0, 0.5]);
        let kp = kernel_problem(DMatrix::identity(3, 3), y.clone());
        let a = v(&[0.2, 0.4, -1.0]);
        let eta = 0.9;
        let expected = &a - (&a - &y) * (eta / 3.0);
        assert!((kernel_md_step(&kp, &a, eta, false).unwrap() - expected).amax() <= 1e-15);
        let one = kernel_md_step(&kp, &DVector::zeros(3), eta, false).unwrap();
        assert!((one - &y * (eta / 3.0)).amax() <= 1e-15);
        assert!(kernel_md_step(&kp, &a, 1.5, false).is_err());
        assert!(kernel_md_step(&kp, &a, 1.5, true).is_ok());
    }

    #[test]
    fn kernel_fixed_point() {
        let pts = DMatrix::from_column_slice(4, 1, &[0.0, 0.3, 0.6, 0.9]);
        let k = crate::problem::rbf_gram(&pts, 0.5).unwrap();
        let a = v(&[0.5, -1.0, 0.25, 2.0]);
        let kp = kernel_problem(k.clone(), &k * &a);
        let eta = kernel_step_limit(&kp);
        let next = kernel_md_step(&kp, &a, eta, false).unwrap();
        assert!((next - a).amax() <= 1e-12);
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(discrete_budget(1.0, 0.1, 2.0, 1.0), 12.0);
        assert_eq!(continuous_budget(1.0, 0.5), 4.0);
    }

    #[test]
    fn immediate_stop() {
        let p = random_problem(10, 3, 5);
        let a = v(&[0.1, 0.2, 0.3]);
        let (traj, rep) =
            run_discrete(&EuclideanMap, &p, &a, 0.1, 1e-3, &a, &RunOptions::default()).unwrap();
        assert_eq!(rep.step_star, 0);
        assert_eq!(rep.stopped_by, StopReason::Threshold);
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.first().potential, 0.0);
    }

    #[test]
    fn records_match_direct_evaluation() {
        let p = random_problem(30, 5, 6);
        let reference = v(&[1.0, 0.0, -1.0, 0.5, 0.0]);
        let eta = 1.0 / p.smoothness_l2().unwrap();
        let opts = RunOptions {
            max_iters: Some(50),
            store_alpha: true,
            stop_at_threshold: false,
            ..Default::default()
        };
        let (traj, _) = run_discrete(
            &EuclideanMap,
            &p,
            &DVector::zeros(5),
            eta,
            1e-9,
            &reference,
            &opts,
        )
        .unwrap();
        assert_eq!(traj.len(), 51);
        let mut alpha = DVector::zeros(5);
        for rec in &traj.records {
            let stored = rec.alpha_vector().unwrap();
            assert!((&stored - &alpha).amax() <= 1e-12);
            let risk = p.empirical_risk(&alpha).unwrap();
            assert!((rec.risk - risk).abs() <= 1e-10 * (1.0 + risk));
            let delta = risk - p.empirical_risk(&reference).unwrap();
            assert!((rec.delta - delta).abs() <= 1e-10 * (1.0 + risk));
            let r = p.empirical_distance_sq(&alpha, &reference).unwrap();
            assert!((rec.r - r).abs() <= 1e-10 * (1.0 + r));
            assert!((rec.potential - 0.5 * (&alpha - &reference).norm_squared()).abs() <= 1e-12);
            alpha = md_step(&EuclideanMap, &p, &alpha, eta).unwrap();
        }
    }

    #[test]
    fn record_stride_keeps_endpoints() {
        let p = random_problem(30, 5, 7);
        let eta = 1.0 / p.smoothness_l2().unwrap();
        let opts = RunOptions {
            max_iters: Some(23),
            stop_at_threshold: false,
            record_every: 5,
            ..Default::default()
        };
        let (traj, _) = run_discrete(
            &EuclideanMap,
            &p,
            &DVector::zeros(5),
            eta,
            1e-12,
            &DVector::zeros(5),
            &opts,
        )
        .unwrap();
        let steps: Vec<usize> = traj.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 5, 10, 15, 20, 23]);
        let opts = RunOptions {
            max_iters: Some(23),
            stop_at_threshold: false,
            record_every: usize::MAX,
            record_steps: vec![3, 3, 7, 40],
            ..Default::default()
        };
        let (traj, _) = run_discrete(
            &EuclideanMap,
            &p,
            &DVector::zeros(5),
            eta,
            1e-12,
            &DVector::zeros(5),
            &opts,
        )
        .unwrap();
        let steps: Vec<usize> = traj.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 7, 23]);
    }

    #[test]
    fn fig1_euclidean_stops_within_budget() {
        let law = GaussianLinearLaw::isotropic_sparse(100, 10, 5.0).unwrap();
        for seed in 0..50 {
            let p = law.sample_problem(200, derive_seed(8, seed)).unwrap();
            let eta = 1.0 / p.smoothness_l2().unwrap();
            let eps = 5.0;
            let (_, rep) = run_discrete(
                &EuclideanMap,
                &p,
                &DVector::zeros(100),
                eta,
                eps,
                law.true_param(),
                &RunOptions::default(),
            )
            .unwrap();
            assert_eq!(rep.stopped_by, StopReason::Threshold);
            assert!(rep.t_star <= rep.budget_t);
            assert!(rep.residual <= eps);
        }
    }

    #[test]
    fn divergence_carries_partial_trajectory() {
        let p = random_problem(10, 3, 9);
        let eta = 10.0 / p.smoothness_l2().unwrap();
        let opts = RunOptions {
            max_iters: Some(100_000),
            stop_at_threshold: false,
            ..Default::default()
        };
        match run_discrete(
            &EuclideanMap,
            &p,
            &DVector::zeros(3),
            eta,
            1e-3,
            &DVector::zeros(3),
            &opts,
        ) {
            Err(Error::Divergence {
                step: Some(s),
                partial: Some(traj),
            }) => {
                assert!(s > 0);
                assert!(!traj.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empirical_risk_rule() {
        let p = random_problem(40, 3, 10);
        let ls = p.least_squares().unwrap();
        let target = p.empirical_risk(&ls).unwrap() + 0.01;
        let eta = 1.0 / p.smoothness_l2().unwrap();
        let opts = RunOptions {
            max_iters: Some(10_000),
            ..Default::default()
        };
        let rule = StopRule::EmpiricalRisk { target };
        let (traj, rep) =
            run_discrete_with_rule(&EuclideanMap, &p, &DVector::zeros(3), eta, &ls, rule, &opts)
                .unwrap();
        assert_eq!(rep.stopped_by, StopReason::Threshold);
        assert!(traj.last().risk <= target);
        assert!(traj.records[traj.len() - 2].risk > target);
        let no_cap = RunOptions::default();
        assert!(run_discrete_with_rule(
            &EuclideanMap,
            &p,
            &DVector::zeros(3),
            eta,
            &ls,
            rule,
            &no_cap
        )
        .is_err());
    }

    #[test]
    fn continuous_matches_exponential_decay() {
        let (z, n) = (1.3_f64, 4usize);
        let design = DMatrix::from_element(n, 1, z);
        let y = v(&[0.5, 1.0, 1.5, 2.0]);
        let p = RegressionProblem::new(design, y.clone()).unwrap();
        let a_star = y.sum() / (n as f64 * z);
        let a0 = -1.0;
        let opts = RunOptions {
            stop_at_threshold: false,
            store_alpha: true,
            ..Default::default()
        };
        let (traj, _) = run_continuous(
            &EuclideanMap,
            &p,
            &v(&[a0]),
            1e-9,
            &v(&[a_star]),
            Some(1.0),
            Some(1e-3),
            &opts,
        )
        .unwrap();
        let last = traj.last();
        assert!((last.t - 1.0).abs() < 1e-9);
        let exact = a_star + (a0 - a_star) * (-(2.0 * z * z) * last.t).exp();
        assert!((last.alpha_vector().unwrap()[0] - exact).abs() <= 1e-6);
    }

    #[test]
    fn continuous_constant_from_stationary_start() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let a = v(&[0.3, 0.7]);
        let p = RegressionProblem::new(z.clone(), &z * &a).unwrap();
        let opts = RunOptions {
            stop_at_threshold: false,
            store_alpha: true,
            ..Default::default()
        };
        let h = HypentropyMap::new(0.1).unwrap();
        let (traj, _) = run_continuous(
            &h,
            &p,
            &a,
            1e-3,
            &v(&[0.0, 0.0]),
            Some(0.1),
            Some(1e-2),
            &opts,
        )
        .unwrap();
        for rec in &traj.records {
            assert!((rec.alpha_vector().unwrap() - &a).amax() <= 1e-12);
        }
    }

    #[test]
    fn l1_hyperparameter_values() {
        let hp = l1_hyperparameters(1.0, 10.0, 1.0, 100, 400).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        assert!((hp.gamma - 1.0 / (300.0 * e2)).abs() < 1e-18);
        assert!((hp.gamma - 4.511e-4).abs() < 1e-7);
        let log3g = (3.0 / hp.gamma).ln();
        assert!((hp.eta - 1.0 / (240.0 * log3g)).abs() < 1e-15);
        let rate = (100f64.ln()).sqrt() / 20.0;
        assert!((hp.error_bound - 360.0 * rate * log3g).abs() < 1e-9);
        assert!((hp.t_star_budget - 1.0 / (hp.eta * 3.0 * rate)).abs() < 1e-6);
        assert!((hp.epsilon - 60.0 * log3g * rate).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.1, 1.0, 3.0, 10.0, 100.0] {
            let eta = l1_hyperparameters(1.0, 10.0, sigma, 100, 400).unwrap().eta;
            assert!(eta <= last);
            last = eta;
        }
        assert!(l1_hyperparameters(1.0, 10.0, 1.0, 1, 400).is_err());
        assert!(l1_hyperparameters(0.0, 10.0, 1.0, 10, 400).is_err());
    }

    #[test]
    fn report_json_shape() {
        let rep = StoppingReport {
            t_star: 3.0,
            step_star: 3,
            epsilon: 0.5,
            budget_t: 12.0,
            residual: 0.25,
            stopped_by: StopReason::Threshold,
            grid_step: None,
        };
        let js = serde_json::to_value(&rep).unwrap();
        assert_eq!(js["budget_T"], 12.0);
        assert_eq!(js["stopped_by"], "threshold");
    }
}
