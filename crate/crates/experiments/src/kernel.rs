//! Kernel gradient descent with an RBF kernel on bounded labels: offset
//! residual at `t*`, Bregman confinement and RKHS distance to the class minimizer.

use std::path::Path;

use mdes_core::baselines::constrained_kernel_erm;
use mdes_core::engine::{kernel_step_limit, run_kernel, StopReason};
use mdes_core::io::{write_json, write_trajectory_csv};
use mdes_core::offset::offset_condition_residual;
use mdes_core::problem::{rbf_cross, rbf_gram};
use mdes_core::rng::{derive_seed, rng_from_seed};
use mdes_core::{KernelProblem, RunOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::runner::{Check, Experiment, ExperimentKind, RunContext};
use crate::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub n: usize,
    pub bandwidth: f64,
    pub radius: f64,
    /// Half-width of the uniform label noise.
    pub noise_halfwidth: f64,
    /// Label bound `M`; labels are `clamp(sin 2πx, ±1) + noise`.
    pub label_bound: f64,
    /// `L` with `‖g‖_∞ ≤ L‖g‖_H`.
    pub kernel_bound: f64,
    pub epsilon: f64,
    /// Step size as a fraction of `min(1, 1/λ_max(K/n))`.
    pub step_fraction: f64,
    /// Sample size of the class-minimizer proxy, fitted once per run.
    pub reference_points: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 100,
            bandwidth: 0.2,
            radius: 2.0,
            noise_halfwidth: 0.5,
            label_bound: 1.5,
            kernel_bound: 1.0,
            epsilon: 0.01,
            step_fraction: 1.0,
            reference_points: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelRecord {
    pub seed: u64,
    pub eta: f64,
    pub eta_limit: f64,
    pub stopped: bool,
    pub t_star: f64,
    pub budget_t: f64,
    pub offset_residual: f64,
    pub bregman: f64,
    pub bregman_bound: f64,
    pub rkhs_distance_sq: f64,
    pub rkhs_bound: f64,
    pub reference_norm_sq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub residual_ok: usize,
    pub confinement_ok: usize,
    pub rkhs_ok: usize,
    pub step_rule_ok: usize,
    pub replicates: Vec<KernelRecord>,
}

/// `n` points uniform on `[0, 1]` with labels `clamp(sin 2πx, ±1) + U(−w, w)`.
pub fn sample(n: usize, halfwidth: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = rng_from_seed(seed);
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
    let y = DVector::from_fn(n, |i, _| {
        let clean = (2.0 * std::f64::consts::PI * x[(i, 0)])
            .sin()
            .clamp(-1.0, 1.0);
        clean + halfwidth * (2.0 * rng.random::<f64>() - 1.0)
    });
    (x, y)
}

/// Class-minimizer proxy: constrained kernel ERM on a large fresh sample.
struct Comparator {
    points: DMatrix<f64>,
    gram: DMatrix<f64>,
    beta: DVector<f64>,
}

impl Comparator {
    fn fit(params: &Params, seed: u64) -> Result<Self> {
        let (points, labels) = sample(params.reference_points, params.noise_halfwidth, seed);
        let gram = rbf_gram(&points, params.bandwidth)?;
        let beta = constrained_kernel_erm(
            &KernelProblem::new(gram.clone(), labels, params.kernel_bound)?,
            params.radius,
        )?;
        Ok(Comparator { points, gram, beta })
    }
}

/// `artifacts`, when given, receives the trajectory CSV and stopping report of this replicate.
fn replicate(
    params: &Params,
    comparator: &Comparator,
    seed: u64,
    artifacts: Option<&Path>,
) -> Result<KernelRecord> {
    let (x, y) = sample(params.n, params.noise_halfwidth, seed);
    if y.amax() > params.label_bound {
        return Err(config_err("labels exceed the declared bound"));
    }
    let k = rbf_gram(&x, params.bandwidth)?;
    let kp = KernelProblem::new(k.clone(), y, params.kernel_bound)?;
    let reference = constrained_kernel_erm(&kp, params.radius)?;
    let eta_limit = kernel_step_limit(&kp);
    let eta = params.step_fraction * eta_limit;
    let zero = DVector::zeros(params.n);
    let opts = RunOptions {
        store_alpha: true,
        record_every: if artifacts.is_some() { 1 } else { usize::MAX },
        ..Default::default()
    };
    let (traj, rep) = run_kernel(&kp, &zero, eta, params.epsilon, &reference, &opts, false)?;
    if let Some(dir) = artifacts {
        write_trajectory_csv(&dir.join("trajectory_replicate0.csv"), &traj)?;
        write_json(&dir.join("stopping_replicate0.json"), &rep)?;
    }
    let rec = traj.at_step(rep.step_star).unwrap_or_else(|| traj.last());
    let alpha = rec
        .alpha_vector()
        .ok_or_else(|| config_err("iterates were not stored"))?;

    let offset = offset_condition_residual(&kp.as_regression(), &alpha, &reference, 0.5)?;
    let quad = |v: &DVector<f64>| v.dot(&(&k * v));
    let slack = (params.kernel_bound * params.radius + params.label_bound).powi(2);

    let beta_f = &comparator.beta;
    let cross = rbf_cross(&x, &comparator.points, params.bandwidth)?;
    let dist = quad(&alpha) - 2.0 * alpha.dot(&(&cross * beta_f))
        + beta_f.dot(&(&comparator.gram * beta_f));

    Ok(KernelRecord {
        seed,
        eta,
        eta_limit,
        stopped: rep.stopped_by == StopReason::Threshold,
        t_star: rep.t_star,
        budget_t: rep.budget_t,
        offset_residual: offset.residual,
        bregman: rec.potential,
        bregman_bound: quad(&reference) + slack,
        rkhs_distance_sq: dist.max(0.0),
        rkhs_bound: 10.0 * params.radius * params.radius + 2.0 * slack,
        reference_norm_sq: quad(&reference),
    })
}

pub struct ExpKernel;

impl Experiment for ExpKernel {
    const KIND: ExperimentKind = ExperimentKind::ExpKernel;
    const DEFAULT_REPLICATES: usize = 20;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        if !(params.step_fraction > 0.0 && params.step_fraction <= 1.0) {
            return Err(config_err("step_fraction must lie in (0, 1]"));
        }
        let comparator = Comparator::fit(params, derive_seed(ctx.seeds[0], u64::MAX))?;
        let records = ctx.replicates(|i, seed| {
            replicate(
                params,
                &comparator,
                seed,
                (i == 0).then_some(ctx.out_dir.as_path()),
            )
        })?;

        let mut table = Table::new(&[
            "replicate",
            "eta",
            "eta_limit",
            "stopped",
            "t_star",
            "budget_t",
            "offset_residual",
            "bregman",
            "bregman_bound",
            "rkhs_distance_sq",
            "rkhs_bound",
        ]);
        for (i, r) in records.iter().enumerate() {
            table.push(vec![
                i as f64,
                r.eta,
                r.eta_limit,
                f64::from(u8::from(r.stopped)),
                r.t_star,
                r.budget_t,
                r.offset_residual,
                r.bregman,
                r.bregman_bound,
                r.rkhs_distance_sq,
                r.rkhs_bound,
            ]);
        }
        table.write(&ctx.path("replicates.csv"))?;

        let count = |f: &dyn Fn(&KernelRecord) -> bool| records.iter().filter(|r| f(r)).count();
        Ok(Report {
            params: params.clone(),
            residual_ok: count(&|r| r.stopped && r.offset_residual <= params.epsilon),
            confinement_ok: count(&|r| r.bregman <= r.bregman_bound),
            rkhs_ok: count(&|r| r.rkhs_distance_sq <= r.rkhs_bound),
            step_rule_ok: count(&|r| r.eta <= r.eta_limit),
            replicates: records,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        let total = r.replicates.len();
        let all = |name: &str, ok: usize, what: &str| {
            Check::new(
                name,
                ok == total,
                format!("{ok}/{total} replicates: {what}"),
            )
        };
        vec![
            all(
                "offset_residual_half",
                r.residual_ok,
                "c = 1/2 residual at t* within ε",
            ),
            all(
                "bregman_confinement",
                r.confinement_ok,
                "D(α′, α_t*) ≤ D(α′, α₀) + (LR + M)²",
            ),
            all(
                "rkhs_distance_bound",
                r.rkhs_ok,
                "‖g_t* − g_F‖²_H ≤ 10R² + 2(LR + M)²",
            ),
            all(
                "kernel_step_rule",
                r.step_rule_ok,
                "η ≤ min(1, 1/λ_max(K/n))",
            ),
        ]
    }
}
