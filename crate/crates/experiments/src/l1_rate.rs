//! In-sample error of hypentropy mirror descent stopped by the `δ + r` rule,
//! across sample sizes, against the sparse-regression bound.

use mdes_core::engine::{l1_hyperparameters, StopReason};
use mdes_core::rng::derive_seed;
use mdes_core::{run_discrete, Error as CoreError, GaussianLinearLaw, HypentropyMap, RunOptions};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregate::{fit_line, median};
use crate::error::{ExpError, Result};
use crate::runner::{Check, Experiment, ExperimentKind, RunContext};
use crate::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub sample_sizes: Vec<usize>,
    pub d: usize,
    pub s: usize,
    pub noise_sd: f64,
    /// Fraction of replicates that must fall under the bound.
    pub min_under_bound: f64,
    pub slope_range: [f64; 2],
}

impl Default for Params {
    fn default() -> Self {
        Params {
            sample_sizes: vec![100, 200, 400, 800, 1600],
            d: 100,
            s: 10,
            noise_sd: 1.0,
            min_under_bound: 0.9,
            slope_range: [-0.75, -0.25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRecord {
    pub n: usize,
    pub seed: u64,
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    pub epsilon: f64,
    /// `δ₀ + r₀`, the stopping statistic at initialization.
    pub initial_residual: f64,
    pub flagged: bool,
    pub t_star: f64,
    pub t_budget: f64,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub median_error: f64,
    pub median_bound: f64,
    pub ratio: f64,
    pub under_bound_fraction: f64,
    pub stopped_at_zero_fraction: f64,
    pub flagged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub sizes: Vec<SizeSummary>,
    pub slope: f64,
    pub intercept: f64,
    pub under_bound_fraction: f64,
    pub within_budget: bool,
    pub flagged: usize,
    pub replicates: Vec<RateRecord>,
}

fn one_run(
    law: &GaussianLinearLaw,
    n: usize,
    d: usize,
    sigma: f64,
    seed: u64,
) -> Result<RateRecord> {
    let p = law.sample_problem(n, seed)?;
    let truth = law.true_param();
    let kappa = p.column_bound();
    let hp = l1_hyperparameters(kappa, truth.lp_norm(1), sigma, d, n)?;
    let map = HypentropyMap::new(hp.gamma)?;
    let zero = DVector::zeros(d);
    let (delta0, r0) = (
        p.empirical_risk(&zero)? - p.empirical_risk(truth)?,
        p.empirical_distance_sq(&zero, truth)?,
    );
    let mut record = RateRecord {
        n,
        seed,
        kappa,
        gamma: hp.gamma,
        eta: hp.eta,
        epsilon: hp.epsilon,
        initial_residual: delta0 + r0,
        flagged: false,
        t_star: f64::NAN,
        t_budget: hp.t_star_budget,
        error: f64::NAN,
        bound: hp.error_bound,
    };
    let opts = RunOptions {
        record_every: usize::MAX,
        ..Default::default()
    };
    match run_discrete(&map, &p, &zero, hp.eta, hp.epsilon, truth, &opts) {
        Ok((traj, rep)) => {
            record.flagged = rep.stopped_by != StopReason::Threshold;
            record.t_star = rep.t_star;
            record.error = traj.at_step(rep.step_star).unwrap_or_else(|| traj.last()).r;
        }
        Err(CoreError::Divergence { .. }) => record.flagged = true,
        Err(e) => return Err(ExpError::Core(e)),
    }
    Ok(record)
}

pub struct ExpL1Rate;

impl Experiment for ExpL1Rate {
    const KIND: ExperimentKind = ExperimentKind::ExpL1Rate;
    const DEFAULT_REPLICATES: usize = 50;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        let law = GaussianLinearLaw::isotropic_sparse(params.d, params.s, params.noise_sd)?;
        let work: Vec<(usize, u64)> = params
            .sample_sizes
            .iter()
            .flat_map(|&n| {
                ctx.seeds
                    .iter()
                    .map(move |&s| (n, derive_seed(s, n as u64)))
            })
            .collect();
        let records = ctx.map(&work, |_, &(n, seed)| {
            one_run(&law, n, params.d, params.noise_sd, seed)
        })?;

        let mut sizes = Vec::new();
        let mut table = Table::new(&[
            "n",
            "median_error",
            "median_bound",
            "ratio",
            "under_bound_fraction",
            "stopped_at_zero_fraction",
            "flagged",
        ]);
        for &n in &params.sample_sizes {
            let rs: Vec<&RateRecord> = records.iter().filter(|r| r.n == n).collect();
            let ok: Vec<&&RateRecord> = rs.iter().filter(|r| !r.flagged).collect();
            let errors: Vec<f64> = ok.iter().map(|r| r.error).collect();
            let bounds: Vec<f64> = rs.iter().map(|r| r.bound).collect();
            let under = ok.iter().filter(|r| r.error <= r.bound).count();
            let at_zero = ok.iter().filter(|r| r.t_star == 0.0).count();
            let (me, mb) = (median(&errors), median(&bounds));
            let s = SizeSummary {
                n,
                median_error: me,
                median_bound: mb,
                ratio: me / mb,
                under_bound_fraction: under as f64 / rs.len() as f64,
                stopped_at_zero_fraction: at_zero as f64 / rs.len() as f64,
                flagged: rs.len() - ok.len(),
            };
            table.push(vec![
                n as f64,
                s.median_error,
                s.median_bound,
                s.ratio,
                s.under_bound_fraction,
                s.stopped_at_zero_fraction,
                s.flagged as f64,
            ]);
            sizes.push(s);
        }
        table.write(&ctx.path("rate_table.csv"))?;

        let mut rows = Table::new(&[
            "n",
            "replicate",
            "kappa",
            "eta",
            "epsilon",
            "initial_residual",
            "flagged",
            "t_star",
            "t_budget",
            "error",
            "bound",
        ]);
        for (i, r) in records.iter().enumerate() {
            rows.push(vec![
                r.n as f64,
                (i % ctx.seeds.len()) as f64,
                r.kappa,
                r.eta,
                r.epsilon,
                r.initial_residual,
                f64::from(u8::from(r.flagged)),
                r.t_star,
                r.t_budget,
                r.error,
                r.bound,
            ]);
        }
        rows.write(&ctx.path("replicates.csv"))?;

        let xs: Vec<f64> = sizes.iter().map(|s| (s.n as f64).ln()).collect();
        let ys: Vec<f64> = sizes.iter().map(|s| s.median_error.ln()).collect();
        let (slope, intercept) = fit_line(&xs, &ys);
        let under = records
            .iter()
            .filter(|r| !r.flagged && r.error <= r.bound)
            .count();
        Ok(Report {
            params: params.clone(),
            slope,
            intercept,
            under_bound_fraction: under as f64 / records.len() as f64,
            within_budget: records
                .iter()
                .filter(|r| !r.flagged)
                .all(|r| r.t_star <= r.t_budget),
            flagged: records.iter().filter(|r| r.flagged).count(),
            sizes,
            replicates: records,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        let [lo, hi] = r.params.slope_range;
        vec![
            Check::new(
                "error_under_bound",
                r.under_bound_fraction >= r.params.min_under_bound,
                format!(
                    "{:.3} of replicates under the bound",
                    r.under_bound_fraction
                ),
            ),
            Check::new(
                "t_star_within_budget",
                r.within_budget,
                format!("{} flagged replicates excluded", r.flagged),
            ),
            Check::new(
                "error_slope_in_range",
                r.slope.is_finite() && (lo..=hi).contains(&r.slope),
                format!("fitted slope {:.4}, accepted [{lo}, {hi}]", r.slope),
            ),
        ]
    }
}
