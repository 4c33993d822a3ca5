//! Two-dimensional correlated regression: mirror descent stopped by the
//! empirical-risk rule against the population minimizer over the unit ball,
//! flagging replicates that beat it in population risk.

use mdes_core::baselines::{ball_kkt_residual, population_ball_minimizer};
use mdes_core::engine::{run_discrete_with_rule, StopReason, StopRule};
use mdes_core::offset::bernstein_margin;
use mdes_core::{GaussianLinearLaw, QuadraticMap, RunOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::runner::{Check, Experiment, ExperimentKind, RunContext};
use crate::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub n: usize,
    pub true_param: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub eta: f64,
    /// Radius of the ℓ₂ ball defining the comparator.
    pub radius: f64,
    pub max_iters: usize,
    /// Bernstein constants at which margins are reported.
    pub margin_constants: Vec<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 100,
            true_param: vec![1.5, 0.5],
            covariance: vec![vec![1.0, 1.0], vec![1.0, 2.0]],
            noise_sd: 0.5,
            eta: 1e-3,
            radius: 1.0,
            max_iters: 1_000_000,
            margin_constants: vec![0.25, 0.5, 1.0],
        }
    }
}

impl Params {
    pub fn law(&self) -> Result<GaussianLinearLaw> {
        let d = self.true_param.len();
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(config_err(
                "covariance must be a square matrix matching true_param",
            ));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.covariance[i][j]);
        Ok(GaussianLinearLaw::new(
            cov,
            DVector::from_vec(self.true_param.clone()),
            self.noise_sd,
        )?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub seed: u64,
    pub censored: bool,
    pub step_star: usize,
    pub alpha_star: Vec<f64>,
    pub population_risk_star: f64,
    pub empirical_risk_star: f64,
    pub empirical_risk_comparator: f64,
    pub violation: bool,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub comparator: Vec<f64>,
    pub comparator_norm: f64,
    pub comparator_kkt_residual: f64,
    pub comparator_population_risk: f64,
    pub violations: usize,
    pub censored: usize,
    pub rule_respected: bool,
    /// Fraction of non-censored replicates with a negative margin, per constant.
    pub negative_margin_fraction: Vec<f64>,
    pub replicates: Vec<ReplicateRecord>,
}

pub struct FigBernstein;

impl Experiment for FigBernstein {
    const KIND: ExperimentKind = ExperimentKind::FigBernstein;
    const DEFAULT_REPLICATES: usize = 100;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        let law = params.law()?;
        let d = law.dim();
        let comparator = population_ball_minimizer(&law, params.radius)?;
        let risk_f = law.population_risk(&comparator)?;
        // R(α) − σ² = ½αᵀ(2Σ)α − (2Σα′)ᵀα + const.
        let h = law.covariance() * 2.0;
        let g = law.covariance() * law.true_param() * 2.0;
        let kkt = ball_kkt_residual(&h, &g, &comparator, params.radius);
        let map = QuadraticMap::new(law.covariance().clone(), 0.5)?;

        let reps = ctx.replicates(|_, seed| {
            let p = law.sample_problem(params.n, seed)?;
            let target = p.empirical_risk(&comparator)?;
            let opts = RunOptions {
                max_iters: Some(params.max_iters),
                store_alpha: true,
                record_every: usize::MAX,
                ..Default::default()
            };
            let rule = StopRule::EmpiricalRisk { target };
            let (traj, rep) = run_discrete_with_rule(
                &map,
                &p,
                &DVector::zeros(d),
                params.eta,
                &comparator,
                rule,
                &opts,
            )?;
            let censored = rep.stopped_by != StopReason::Threshold;
            let rec = traj.at_step(rep.step_star).unwrap_or_else(|| traj.last());
            let alpha = rec
                .alpha_vector()
                .ok_or_else(|| config_err("iterates were not stored"))?;
            let pop = law.population_risk(&alpha)?;
            let margins = params
                .margin_constants
                .iter()
                .map(|&c| bernstein_margin(&law, &alpha, &comparator, c))
                .collect::<mdes_core::Result<Vec<f64>>>()?;
            Ok(ReplicateRecord {
                seed,
                censored,
                step_star: rep.step_star,
                alpha_star: alpha.iter().cloned().collect(),
                population_risk_star: pop,
                empirical_risk_star: rec.risk,
                empirical_risk_comparator: target,
                violation: !censored && pop < risk_f,
                margins,
            })
        })?;

        let mut header = vec![
            "replicate".to_string(),
            "censored".into(),
            "step_star".into(),
        ];
        header.extend((0..d).map(|j| format!("alpha_star_{j}")));
        header.extend(
            [
                "population_risk_star",
                "population_risk_comparator",
                "empirical_risk_star",
                "empirical_risk_comparator",
                "violation",
            ]
            .map(String::from),
        );
        let names: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut table = Table::new(&names);
        for (i, r) in reps.iter().enumerate() {
            let mut row = vec![
                i as f64,
                f64::from(u8::from(r.censored)),
                r.step_star as f64,
            ];
            row.extend(&r.alpha_star);
            row.extend([
                r.population_risk_star,
                risk_f,
                r.empirical_risk_star,
                r.empirical_risk_comparator,
                f64::from(u8::from(r.violation)),
            ]);
            table.push(row);
        }
        table.write(&ctx.path("replicates.csv"))?;

        let live: Vec<&ReplicateRecord> = reps.iter().filter(|r| !r.censored).collect();
        let mut margin_table = Table::new(&["constant", "negative_fraction", "min_margin"]);
        let mut fractions = Vec::new();
        for (k, &c) in params.margin_constants.iter().enumerate() {
            let neg = live.iter().filter(|r| r.margins[k] < 0.0).count();
            let frac = if live.is_empty() {
                f64::NAN
            } else {
                neg as f64 / live.len() as f64
            };
            let min = live
                .iter()
                .map(|r| r.margins[k])
                .fold(f64::INFINITY, f64::min);
            margin_table.push(vec![c, frac, min]);
            fractions.push(frac);
        }
        margin_table.write(&ctx.path("margins.csv"))?;

        Ok(Report {
            params: params.clone(),
            comparator_norm: comparator.norm(),
            comparator: comparator.iter().cloned().collect(),
            comparator_kkt_residual: kkt,
            comparator_population_risk: risk_f,
            violations: reps.iter().filter(|r| r.violation).count(),
            censored: reps.len() - live.len(),
            rule_respected: live
                .iter()
                .all(|r| r.empirical_risk_star <= r.empirical_risk_comparator),
            negative_margin_fraction: fractions,
            replicates: reps,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        let on_circle =
            (r.comparator_norm - r.params.radius).abs() <= 1e-9 * r.params.radius.max(1.0);
        vec![
            Check::new(
                "at_least_one_violation",
                r.violations >= 1,
                format!(
                    "{} of {} replicates ({} censored)",
                    r.violations,
                    r.replicates.len(),
                    r.censored
                ),
            ),
            Check::new(
                "comparator_on_sphere_kkt",
                on_circle && r.comparator_kkt_residual <= 1e-9,
                format!(
                    "norm {:.12}, KKT residual {:.3e}",
                    r.comparator_norm, r.comparator_kkt_residual
                ),
            ),
            Check::new(
                "stopping_rule_respected",
                r.rule_respected,
                "R_n(α_t*) ≤ R_n(α_F) on every non-censored replicate",
            ),
        ]
    }
}
