//! Continuous-time mirror flows on the sparse regression problem: the offset
//! residual `ε_t = δ_t + r_t` and the potential `D_ψ(α′, α_t)` along the path.

use mdes_core::engine::{l1_hyperparameters, StopReason};
use mdes_core::mirror::AnyMap;
use mdes_core::{
    run_continuous, EuclideanMap, GaussianLinearLaw, HypentropyMap, RunOptions, Trajectory,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregate::{write_series_csv, AggregateSeries};
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
    /// `σ` used to set the hypentropy scale.
    pub step_sigma: f64,
    /// Stopping threshold on `ε_t`.
    pub epsilon: f64,
    pub horizon: f64,
    /// Integrator step; defaults to the engine's rule.
    pub h: Option<f64>,
    pub time_points: usize,
    /// Relative drop defining the potential's flattening point.
    pub flat_fraction: f64,
    /// Replicates that must keep the potential non-increasing while `ε_t > 0`.
    pub min_monotone_fraction: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 200,
            d: 100,
            s: 10,
            noise_sd: 5.0,
            step_sigma: 5.0,
            epsilon: 1.0,
            horizon: 10.0,
            h: None,
            time_points: 201,
            flat_fraction: 0.01,
            min_monotone_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRecord {
    pub seed: u64,
    pub h: f64,
    pub monotone: bool,
    /// Largest increase of the potential over one step while `ε_t > 0`.
    pub worst_increase: f64,
    pub reached: bool,
    pub t_star: f64,
    pub epsilon_at_t_star: f64,
    pub argmin_epsilon_t: f64,
    pub flattening_t: f64,
    pub min_before_flattening: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MapReport {
    pub map: String,
    pub monotone_replicates: usize,
    pub reached_replicates: usize,
    pub stopping_respected: bool,
    pub min_before_flattening: usize,
    pub replicates: Vec<FlowRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub maps: Vec<MapReport>,
}

const MAPS: [&str; 2] = ["euclidean", "hypentropy"];

struct FlowOut {
    record: FlowRecord,
    epsilon: Vec<f64>,
    potential: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn analyse(
    traj: &Trajectory,
    h: f64,
    params: &Params,
    grid: &[f64],
    seed: u64,
    reached: bool,
    t_star: f64,
    eps_star: f64,
) -> Result<FlowOut> {
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut monotone = true;
    for w in traj.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.residual() > 0.0 {
            let increase = b.potential - a.potential;
            worst = worst.max(increase);
            let reference_risk = a.risk - a.delta;
            if increase > 1e-8 * (1.0 + a.potential) + h * reference_risk {
                monotone = false;
            }
        }
    }
    let argmin = traj
        .records
        .iter()
        .min_by(|a, b| a.residual().total_cmp(&b.residual()))
        .map_or(0.0, |r| r.t);
    let d0 = traj.first().potential;
    let dmin = traj
        .records
        .iter()
        .map(|r| r.potential)
        .fold(f64::INFINITY, f64::min);
    let level = dmin + params.flat_fraction * (d0 - dmin);
    let flattening = traj
        .records
        .iter()
        .find(|r| r.potential <= level)
        .map_or(0.0, |r| r.t);

    let mut epsilon = Vec::with_capacity(grid.len());
    let mut potential = Vec::with_capacity(grid.len());
    for &t in grid {
        let step = (t / h).round() as usize;
        let rec = traj
            .at_step(step)
            .ok_or_else(|| config_err(format!("time {t} is beyond the integrated horizon")))?;
        epsilon.push(rec.residual());
        potential.push(rec.potential);
    }
    Ok(FlowOut {
        record: FlowRecord {
            seed,
            h,
            monotone,
            worst_increase: worst,
            reached,
            t_star,
            epsilon_at_t_star: eps_star,
            argmin_epsilon_t: argmin,
            flattening_t: flattening,
            min_before_flattening: argmin <= flattening,
        },
        epsilon,
        potential,
    })
}

pub struct FigOffsetAnalysis;

impl Experiment for FigOffsetAnalysis {
    const KIND: ExperimentKind = ExperimentKind::FigOffsetAnalysis;
    const DEFAULT_REPLICATES: usize = 100;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        if params.time_points < 2 || !(params.horizon > 0.0) {
            return Err(config_err("need horizon > 0 and at least two time points"));
        }
        let law = GaussianLinearLaw::isotropic_sparse(params.d, params.s, params.noise_sd)?;
        let k = params.time_points;
        let grid: Vec<f64> = (0..k)
            .map(|j| params.horizon * j as f64 / (k - 1) as f64)
            .collect();

        let reps = ctx.replicates(|_, seed| {
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
            let maps = [
                AnyMap::from(EuclideanMap),
                AnyMap::from(HypentropyMap::new(hp.gamma)?),
            ];
            let h = match params.h {
                Some(h) => h,
                None => mdes_core::engine::default_flow_step(&p, &zero, params.epsilon)?,
            };
            let opts = RunOptions {
                stop_at_threshold: false,
                ..Default::default()
            };
            maps.iter()
                .map(|map| {
                    // Integrate slightly past the horizon so the last grid time is always recorded.
                    let (traj, rep) = run_continuous(
                        map,
                        &p,
                        &zero,
                        params.epsilon,
                        truth,
                        Some(params.horizon + h),
                        Some(h),
                        &opts,
                    )?;
                    let reached = rep.stopped_by == StopReason::Threshold;
                    analyse(
                        &traj,
                        h,
                        params,
                        &grid,
                        seed,
                        reached,
                        rep.t_star,
                        rep.residual,
                    )
                })
                .collect::<Result<Vec<FlowOut>>>()
        })?;

        let mut maps = Vec::new();
        for (m, name) in MAPS.iter().enumerate() {
            let eps_rows: Vec<Vec<f64>> = reps.iter().map(|r| r[m].epsilon.clone()).collect();
            let pot_rows: Vec<Vec<f64>> = reps.iter().map(|r| r[m].potential.clone()).collect();
            let eps = AggregateSeries::from_replicates(grid.clone(), &eps_rows)?;
            let pot = AggregateSeries::from_replicates(grid.clone(), &pot_rows)?;
            write_series_csv(
                &ctx.path(&format!("offset_{name}.csv")),
                "t",
                &[("epsilon", &eps), ("potential", &pot)],
            )?;

            let records: Vec<FlowRecord> = reps.iter().map(|r| r[m].record.clone()).collect();
            let mut table = Table::new(&[
                "replicate",
                "monotone",
                "worst_increase",
                "reached",
                "t_star",
                "epsilon_at_t_star",
                "argmin_epsilon_t",
                "flattening_t",
            ]);
            for (i, r) in records.iter().enumerate() {
                table.push(vec![
                    i as f64,
                    f64::from(u8::from(r.monotone)),
                    r.worst_increase,
                    f64::from(u8::from(r.reached)),
                    r.t_star,
                    r.epsilon_at_t_star,
                    r.argmin_epsilon_t,
                    r.flattening_t,
                ]);
            }
            table.write(&ctx.path(&format!("replicates_{name}.csv")))?;
            maps.push(MapReport {
                map: name.to_string(),
                monotone_replicates: records.iter().filter(|r| r.monotone).count(),
                reached_replicates: records.iter().filter(|r| r.reached).count(),
                stopping_respected: records
                    .iter()
                    .filter(|r| r.reached)
                    .all(|r| r.epsilon_at_t_star <= params.epsilon),
                min_before_flattening: records.iter().filter(|r| r.min_before_flattening).count(),
                replicates: records,
            });
        }
        Ok(Report {
            params: params.clone(),
            maps,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        let mut out = Vec::new();
        for m in &r.maps {
            let total = m.replicates.len();
            let need = (r.params.min_monotone_fraction * total as f64).ceil() as usize;
            out.push(Check::new(
                &format!("{}_potential_monotone", m.map),
                m.monotone_replicates >= need,
                format!(
                    "{}/{} replicates (need {need})",
                    m.monotone_replicates, total
                ),
            ));
            out.push(Check::new(
                &format!("{}_epsilon_at_t_star", m.map),
                m.stopping_respected,
                format!(
                    "ε_t* ≤ {} on all {} replicates that reached it",
                    r.params.epsilon, m.reached_replicates
                ),
            ));
        }
        out
    }
}
