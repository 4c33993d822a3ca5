//! Sparse regression: risk along the hypentropy mirror descent and Euclidean
//! gradient descent paths against the lasso and ridge regularization paths.

use mdes_core::baselines::{lasso_path, log_grid, ridge_path};
use mdes_core::engine::l1_hyperparameters;
use mdes_core::{
    run_discrete, EuclideanMap, GaussianLinearLaw, HypentropyMap, RunOptions, Trajectory,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregate::{median, write_series_csv, AggregateSeries};
use crate::error::{config_err, Result};
use crate::runner::{Check, Experiment, ExperimentKind, RunContext};
use crate::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub noise_sd: f64,
    /// `σ` plugged into the hypentropy step-size formula.
    pub step_sigma: f64,
    /// Hypentropy scale; defaults to the value prescribed with the step size.
    pub gamma: Option<f64>,
    /// Path length in units of `η t`, shared by both descent runs.
    pub horizon: f64,
    pub time_points: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_points: usize,
    pub lasso_tol: f64,
    /// Gate on median(min hypentropy excess risk) / median(min Euclidean excess risk).
    pub max_median_ratio: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 200,
            d: 100,
            s: 10,
            noise_sd: 5.0,
            step_sigma: 5.0,
            gamma: None,
            horizon: 10.0,
            time_points: 201,
            lambda_min: 1e-4,
            lambda_max: 1e2,
            lambda_points: 61,
            lasso_tol: 1e-9,
            max_median_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub seed: u64,
    pub hypentropy_eta: f64,
    pub euclidean_eta: f64,
    pub hypentropy_min_excess: f64,
    pub hypentropy_argmin_t: f64,
    pub euclidean_min_excess: f64,
    pub euclidean_argmin_t: f64,
    pub lasso_min_excess: f64,
    pub ridge_min_excess: f64,
    pub hypentropy_final_empirical_risk: f64,
    pub euclidean_final_empirical_risk: f64,
    pub initial_empirical_risk: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub time_grid_points: usize,
    pub lambda_grid_points: usize,
    pub median_min_excess_hypentropy: f64,
    pub median_min_excess_euclidean: f64,
    pub median_min_excess_lasso: f64,
    pub median_min_excess_ridge: f64,
    pub median_excess_ratio: f64,
    pub bands_ordered: bool,
    pub files: Vec<String>,
    pub replicates: Vec<ReplicateSummary>,
}

pub const FILES: [&str; 4] = [
    "lasso_path.csv",
    "ridge_path.csv",
    "md_hypentropy.csv",
    "gd_euclidean.csv",
];

/// Per-replicate series: population risk, excess risk and empirical risk on a grid.
struct Curves {
    risk: Vec<f64>,
    excess: Vec<f64>,
    empirical: Vec<f64>,
}

struct ReplicateOut {
    summary: ReplicateSummary,
    hyp: Curves,
    euc: Curves,
    lasso: Curves,
    ridge: Curves,
}

fn path_curves(law: &GaussianLinearLaw, traj: &Trajectory, steps: &[usize]) -> Result<Curves> {
    let mut c = Curves {
        risk: vec![],
        excess: vec![],
        empirical: vec![],
    };
    for &s in steps {
        let rec = traj
            .at_step(s)
            .ok_or_else(|| config_err(format!("step {s} was not recorded")))?;
        let alpha = rec
            .alpha_vector()
            .ok_or_else(|| config_err("iterates were not stored"))?;
        let excess = law.population_distance_sq(&alpha, law.true_param())?;
        c.risk.push(excess + law.noise_sd().powi(2));
        c.excess.push(excess);
        c.empirical.push(rec.risk);
    }
    Ok(c)
}

/// Minimum excess risk over every recorded iterate and the time it occurs.
fn path_minimum(law: &GaussianLinearLaw, traj: &Trajectory, eta: f64) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for rec in &traj.records {
        let alpha = rec
            .alpha_vector()
            .ok_or_else(|| config_err("iterates were not stored"))?;
        let excess = law.population_distance_sq(&alpha, law.true_param())?;
        if excess < best.0 {
            best = (excess, rec.step as f64 * eta);
        }
    }
    Ok(best)
}

fn regularized_curves(
    law: &GaussianLinearLaw,
    p: &mdes_core::RegressionProblem,
    solutions: &[DVector<f64>],
) -> Result<Curves> {
    let mut c = Curves {
        risk: vec![],
        excess: vec![],
        empirical: vec![],
    };
    for a in solutions {
        let excess = law.population_distance_sq(a, law.true_param())?;
        c.risk.push(excess + law.noise_sd().powi(2));
        c.excess.push(excess);
        c.empirical.push(p.empirical_risk(a)?);
    }
    Ok(c)
}

fn replicate(
    law: &GaussianLinearLaw,
    params: &Params,
    times: &[f64],
    lambdas: &[f64],
    seed: u64,
) -> Result<ReplicateOut> {
    let p = law.sample_problem(params.n, seed)?;
    let truth = law.true_param();
    let zero = DVector::zeros(params.d);
    let hp = l1_hyperparameters(
        p.column_bound(),
        truth.lp_norm(1),
        params.step_sigma,
        params.d,
        params.n,
    )?;
    let hyp_map = HypentropyMap::new(params.gamma.unwrap_or(hp.gamma))?;
    let hyp_eta = hp.eta;
    let euc_eta = 1.0 / p.smoothness_l2()?;

    let steps_for =
        |eta: f64| -> Vec<usize> { times.iter().map(|t| (t / eta).round() as usize).collect() };
    let hyp_steps = steps_for(hyp_eta);
    let euc_steps = steps_for(euc_eta);

    let hyp_opts = RunOptions {
        max_iters: hyp_steps.last().copied(),
        store_alpha: true,
        stop_at_threshold: false,
        record_every: usize::MAX,
        record_steps: hyp_steps.clone(),
    };
    let (hyp_traj, _) = run_discrete(&hyp_map, &p, &zero, hyp_eta, hp.epsilon, truth, &hyp_opts)?;
    let euc_opts = RunOptions {
        max_iters: euc_steps.last().copied(),
        store_alpha: true,
        stop_at_threshold: false,
        record_every: 1,
        record_steps: Vec::new(),
    };
    let (euc_traj, _) = run_discrete(
        &EuclideanMap,
        &p,
        &zero,
        euc_eta,
        hp.epsilon,
        truth,
        &euc_opts,
    )?;

    let hyp = path_curves(law, &hyp_traj, &hyp_steps)?;
    let euc = path_curves(law, &euc_traj, &euc_steps)?;
    let (hyp_min, hyp_arg) = path_minimum(law, &hyp_traj, hyp_eta)?;
    let (euc_min, euc_arg) = path_minimum(law, &euc_traj, euc_eta)?;

    let lasso = regularized_curves(law, &p, &lasso_path(&p, lambdas, params.lasso_tol)?)?;
    let ridge = regularized_curves(law, &p, &ridge_path(&p, lambdas)?)?;
    let min_of = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);

    let summary = ReplicateSummary {
        seed,
        hypentropy_eta: hyp_eta,
        euclidean_eta: euc_eta,
        hypentropy_min_excess: hyp_min,
        hypentropy_argmin_t: hyp_arg,
        euclidean_min_excess: euc_min,
        euclidean_argmin_t: euc_arg,
        lasso_min_excess: min_of(&lasso.excess),
        ridge_min_excess: min_of(&ridge.excess),
        hypentropy_final_empirical_risk: hyp_traj.last().risk,
        euclidean_final_empirical_risk: euc_traj.last().risk,
        initial_empirical_risk: hyp_traj.first().risk,
    };
    Ok(ReplicateOut {
        summary,
        hyp,
        euc,
        lasso,
        ridge,
    })
}

fn bands_ordered(series: &[&AggregateSeries]) -> bool {
    series
        .iter()
        .all(|s| s.p10.iter().zip(&s.p90).all(|(lo, hi)| lo <= hi))
}

pub struct FigImplicit;

impl Experiment for FigImplicit {
    const KIND: ExperimentKind = ExperimentKind::FigImplicit;
    const DEFAULT_REPLICATES: usize = 100;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        if params.time_points < 2 || params.lambda_points < 2 || !(params.horizon > 0.0) {
            return Err(config_err(
                "need horizon > 0 and at least two time and λ points",
            ));
        }
        let law = GaussianLinearLaw::isotropic_sparse(params.d, params.s, params.noise_sd)?;
        let k = params.time_points;
        let times: Vec<f64> = (0..k)
            .map(|j| params.horizon * j as f64 / (k - 1) as f64)
            .collect();
        let lambdas = log_grid(params.lambda_min, params.lambda_max, params.lambda_points)?;

        let reps = ctx.replicates(|_, seed| replicate(&law, params, &times, &lambdas, seed))?;

        let agg = |x: &[f64], pick: &dyn Fn(&ReplicateOut) -> &Vec<f64>| {
            let rows: Vec<Vec<f64>> = reps.iter().map(|r| pick(r).clone()).collect();
            AggregateSeries::from_replicates(x.to_vec(), &rows)
        };
        let mut all = Vec::new();
        let mut write = |file: &str,
                         x_name: &str,
                         x: &[f64],
                         pick: &dyn Fn(&ReplicateOut) -> &Curves|
         -> Result<()> {
            let risk = agg(x, &|r| &pick(r).risk)?;
            let excess = agg(x, &|r| &pick(r).excess)?;
            let empirical = agg(x, &|r| &pick(r).empirical)?;
            write_series_csv(
                &ctx.path(file),
                x_name,
                &[
                    ("risk", &risk),
                    ("excess_risk", &excess),
                    ("empirical_risk", &empirical),
                ],
            )?;
            all.extend([risk, excess, empirical]);
            Ok(())
        };
        write(FILES[0], "lambda", &lambdas, &|r| &r.lasso)?;
        write(FILES[1], "lambda", &lambdas, &|r| &r.ridge)?;
        write(FILES[2], "t", &times, &|r| &r.hyp)?;
        write(FILES[3], "t", &times, &|r| &r.euc)?;
        let ordered = bands_ordered(&all.iter().collect::<Vec<_>>());

        let summaries: Vec<ReplicateSummary> = reps.into_iter().map(|r| r.summary).collect();
        let mut table = Table::new(&[
            "replicate",
            "hypentropy_min_excess",
            "hypentropy_argmin_t",
            "euclidean_min_excess",
            "euclidean_argmin_t",
            "lasso_min_excess",
            "ridge_min_excess",
            "hypentropy_eta",
            "euclidean_eta",
        ]);
        for (i, s) in summaries.iter().enumerate() {
            table.push(vec![
                i as f64,
                s.hypentropy_min_excess,
                s.hypentropy_argmin_t,
                s.euclidean_min_excess,
                s.euclidean_argmin_t,
                s.lasso_min_excess,
                s.ridge_min_excess,
                s.hypentropy_eta,
                s.euclidean_eta,
            ]);
        }
        table.write(&ctx.path("replicates.csv"))?;

        let col = |f: fn(&ReplicateSummary) -> f64| summaries.iter().map(f).collect::<Vec<_>>();
        let mh = median(&col(|s| s.hypentropy_min_excess));
        let me = median(&col(|s| s.euclidean_min_excess));
        Ok(Report {
            params: params.clone(),
            time_grid_points: times.len(),
            lambda_grid_points: lambdas.len(),
            median_min_excess_hypentropy: mh,
            median_min_excess_euclidean: me,
            median_min_excess_lasso: median(&col(|s| s.lasso_min_excess)),
            median_min_excess_ridge: median(&col(|s| s.ridge_min_excess)),
            median_excess_ratio: mh / me,
            bands_ordered: ordered,
            files: FILES.iter().map(|s| s.to_string()).collect(),
            replicates: summaries,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        vec![
            Check::new(
                "four_series_on_matched_grids",
                r.files.len() == 4 && r.time_grid_points >= 2 && r.lambda_grid_points >= 2,
                format!(
                    "{} time points, {} λ points",
                    r.time_grid_points, r.lambda_grid_points
                ),
            ),
            Check::new(
                "percentile_bands_ordered",
                r.bands_ordered,
                "p10 ≤ p90 pointwise",
            ),
            Check::new(
                "hypentropy_median_below_euclidean",
                r.median_min_excess_hypentropy < r.median_min_excess_euclidean,
                format!(
                    "median min-path excess risk: hypentropy {:.6e}, euclidean {:.6e}",
                    r.median_min_excess_hypentropy, r.median_min_excess_euclidean
                ),
            ),
            Check::new(
                "median_excess_ratio_gate",
                r.median_excess_ratio <= r.params.max_median_ratio,
                format!(
                    "ratio {:.4} (gate {})",
                    r.median_excess_ratio, r.params.max_median_ratio
                ),
            ),
        ]
    }
}
