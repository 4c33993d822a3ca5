//! Early-stopped mirror flow against constrained ERM over the matching
//! Bregman ball `{α : D_ψ(α, 0) ≤ R}` on the correlated two-dimensional law.

use mdes_core::baselines::{constrained_erm_ball, population_constrained_minimizer, BallGeometry};
use mdes_core::engine::StopReason;
use mdes_core::linalg::NormBall;
use mdes_core::mirror::AnyMap;
use mdes_core::offset::{offset_complexity_mc, offset_condition_residual, ClassSpec};
use mdes_core::rng::derive_seed;
use mdes_core::{run_continuous, EuclideanMap, GaussianLinearLaw, QuadraticMap, RunOptions};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregate::{mean, std_error};
use crate::error::{config_err, Result};
use crate::runner::{Check, Experiment, ExperimentKind, RunContext};
use crate::table::Table;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub n: usize,
    pub radii: Vec<f64>,
    /// `ε = 2R / t_budget`, so the flow's stopping budget is `t_budget`.
    pub t_budget: f64,
    /// Integrator step; defaults to the engine's rule.
    pub h: Option<f64>,
    pub complexity_draws: usize,
    pub complexity_c: f64,
    pub erm_tolerance: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            n: 100,
            radii: vec![0.25, 0.5, 1.0, 2.0],
            t_budget: 100.0,
            h: None,
            complexity_draws: 200,
            complexity_c: 1.0,
            erm_tolerance: 1e-8,
        }
    }
}

const MAPS: [&str; 2] = ["euclidean", "quadratic"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub reached: bool,
    pub t_star: f64,
    pub md_residual: f64,
    pub erm_residual: f64,
    pub md_excess: f64,
    pub erm_excess: f64,
    pub offset_complexity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub map: String,
    pub radius: f64,
    pub epsilon: f64,
    pub md_excess_mean: f64,
    pub md_excess_se: f64,
    pub erm_excess_mean: f64,
    pub erm_excess_se: f64,
    pub difference_mean: f64,
    pub difference_se: f64,
    pub max_md_residual: f64,
    pub max_erm_residual: f64,
    pub offset_complexity_mean: f64,
    pub mean_t_star: f64,
    pub unreached: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Params,
    pub rows: Vec<Row>,
}

struct Setting {
    map: AnyMap,
    ball: NormBall,
    geometry: BallGeometry,
    class: ClassSpec,
    comparator: DVector<f64>,
    epsilon: f64,
}

fn settings(law: &GaussianLinearLaw, params: &Params) -> Result<Vec<Setting>> {
    let sigma = law.covariance().clone();
    let mut out = Vec::new();
    for name in MAPS {
        for &r in &params.radii {
            if !(r > 0.0) {
                return Err(config_err("radii must be positive"));
            }
            // D_ψ(α, 0) ≤ R is ‖α‖² ≤ 2R, or αᵀΣα ≤ 2R for ψ = ½αᵀΣα.
            let rad = (2.0 * r).sqrt();
            let (map, ball, geometry, class) = match name {
                "euclidean" => (
                    AnyMap::from(EuclideanMap),
                    NormBall::l2(rad)?,
                    BallGeometry::L2,
                    ClassSpec::L2Ball { radius: rad },
                ),
                _ => (
                    AnyMap::from(QuadraticMap::new(sigma.clone(), 0.5)?),
                    NormBall::ellipsoid(&sigma, rad)?,
                    BallGeometry::Quadratic(sigma.clone()),
                    ClassSpec::Ellipsoid {
                        q: sigma.clone(),
                        radius: rad,
                    },
                ),
            };
            let comparator = population_constrained_minimizer(law, &ball)?;
            out.push(Setting {
                map,
                ball,
                geometry,
                class,
                comparator,
                epsilon: 2.0 * r / params.t_budget,
            });
        }
    }
    Ok(out)
}

fn cell(
    law: &GaussianLinearLaw,
    params: &Params,
    s: &Setting,
    seed: u64,
    k: usize,
) -> Result<Cell> {
    let p = law.sample_problem(params.n, seed)?;
    let zero = DVector::zeros(law.dim());
    let erm = constrained_erm_ball(&p, s.ball.radius(), &s.geometry)?;
    let opts = RunOptions {
        store_alpha: true,
        record_every: usize::MAX,
        ..Default::default()
    };
    let (traj, rep) = run_continuous(&s.map, &p, &zero, s.epsilon, &erm, None, params.h, &opts)?;
    let rec = traj.at_step(rep.step_star).unwrap_or_else(|| traj.last());
    let md = rec
        .alpha_vector()
        .ok_or_else(|| config_err("iterates were not stored"))?;
    let risk_f = law.population_risk(&s.comparator)?;
    let complexity = offset_complexity_mc(
        p.design(),
        &s.class,
        params.complexity_c,
        params.complexity_draws,
        derive_seed(seed, k as u64),
    )?;
    Ok(Cell {
        reached: rep.stopped_by == StopReason::Threshold,
        t_star: rep.t_star,
        md_residual: offset_condition_residual(&p, &md, &erm, 1.0)?.residual,
        erm_residual: offset_condition_residual(&p, &erm, &s.comparator, 1.0)?.residual,
        md_excess: law.population_risk(&md)? - risk_f,
        erm_excess: law.population_risk(&erm)? - risk_f,
        offset_complexity: complexity.mean,
    })
}

pub struct ExpPathVsErm;

impl Experiment for ExpPathVsErm {
    const KIND: ExperimentKind = ExperimentKind::ExpPathVsErm;
    const DEFAULT_REPLICATES: usize = 50;
    type Params = Params;
    type Report = Report;

    fn run(ctx: &RunContext, params: &Params) -> Result<Report> {
        if !(params.t_budget > 0.0) {
            return Err(config_err("t_budget must be positive"));
        }
        let law = GaussianLinearLaw::correlated_2d();
        let settings = settings(&law, params)?;
        let cells = ctx.replicates(|_, seed| {
            settings
                .iter()
                .enumerate()
                .map(|(k, s)| cell(&law, params, s, seed, k))
                .collect::<Result<Vec<Cell>>>()
        })?;

        let mut rows = Vec::new();
        let mut table = Table::new(&[
            "map",
            "radius",
            "epsilon",
            "md_excess_mean",
            "md_excess_se",
            "erm_excess_mean",
            "erm_excess_se",
            "difference_mean",
            "difference_se",
            "max_md_residual",
            "max_erm_residual",
            "offset_complexity_mean",
            "mean_t_star",
            "unreached",
        ]);
        for (k, s) in settings.iter().enumerate() {
            let col: Vec<&Cell> = cells.iter().map(|c| &c[k]).collect();
            let pick = |f: fn(&Cell) -> f64| col.iter().map(|c| f(c)).collect::<Vec<f64>>();
            let md = pick(|c| c.md_excess);
            let erm = pick(|c| c.erm_excess);
            let diff: Vec<f64> = md.iter().zip(&erm).map(|(a, b)| a - b).collect();
            let max = |v: Vec<f64>| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
            let map_index = k / params.radii.len();
            let row = Row {
                map: MAPS[map_index].to_string(),
                radius: params.radii[k % params.radii.len()],
                epsilon: s.epsilon,
                md_excess_mean: mean(&md),
                md_excess_se: std_error(&md),
                erm_excess_mean: mean(&erm),
                erm_excess_se: std_error(&erm),
                difference_mean: mean(&diff),
                difference_se: std_error(&diff),
                max_md_residual: max(pick(|c| c.md_residual)),
                max_erm_residual: max(pick(|c| c.erm_residual)),
                offset_complexity_mean: mean(&pick(|c| c.offset_complexity)),
                mean_t_star: mean(&pick(|c| c.t_star)),
                unreached: col.iter().filter(|c| !c.reached).count(),
            };
            table.push(vec![
                map_index as f64,
                row.radius,
                row.epsilon,
                row.md_excess_mean,
                row.md_excess_se,
                row.erm_excess_mean,
                row.erm_excess_se,
                row.difference_mean,
                row.difference_se,
                row.max_md_residual,
                row.max_erm_residual,
                row.offset_complexity_mean,
                row.mean_t_star,
                row.unreached as f64,
            ]);
            rows.push(row);
        }
        table.write(&ctx.path("path_vs_erm.csv"))?;
        Ok(Report {
            params: params.clone(),
            rows,
        })
    }

    fn checks(r: &Report) -> Vec<Check> {
        let md_ok: Vec<String> = r
            .rows
            .iter()
            .filter(|row| row.unreached > 0 || row.max_md_residual > row.epsilon)
            .map(|row| format!("{} R={}", row.map, row.radius))
            .collect();
        let erm_worst = r
            .rows
            .iter()
            .map(|row| row.max_erm_residual)
            .fold(f64::NEG_INFINITY, f64::max);
        let diff_bad: Vec<String> = r
            .rows
            .iter()
            .filter(|row| row.difference_mean.abs() > row.epsilon + 3.0 * row.difference_se)
            .map(|row| format!("{} R={}: {:.3e}", row.map, row.radius, row.difference_mean))
            .collect();
        vec![
            Check::new(
                "md_residual_within_epsilon",
                md_ok.is_empty(),
                if md_ok.is_empty() {
                    "every map and radius".to_string()
                } else {
                    format!("failing: {}", md_ok.join(", "))
                },
            ),
            Check::new(
                "erm_residual_nonpositive",
                erm_worst <= r.params.erm_tolerance,
                format!("largest ERM residual {erm_worst:.3e}"),
            ),
            Check::new(
                "excess_risks_agree",
                diff_bad.is_empty(),
                if diff_bad.is_empty() {
                    "|mean difference| ≤ ε + 3 SE everywhere".to_string()
                } else {
                    format!("failing: {}", diff_bad.join(", "))
                },
            ),
        ]
    }
}
