//! Seeded experiments for early-stopped mirror descent: figure reproductions
//! and desk-scale checks of the risk guarantees, with CSV/JSON artifacts.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod error;
pub mod fig_bernstein;
pub mod fig_implicit;
pub mod fig_offset;
pub mod kernel;
pub mod l1_rate;
pub mod path_vs_erm;
pub mod runner;
pub mod table;

pub use error::{ExpError, Result};
pub use runner::{
    execute, Check, Experiment, ExperimentConfig, ExperimentKind, Overrides, RunContext, Verdict,
};

use std::path::Path;

/// Runs the named experiment, writing its artifacts into `out_dir`.
pub fn run_by_kind(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    ov: &Overrides,
    out_dir: &Path,
) -> Result<Verdict> {
    Ok(match kind {
        ExperimentKind::FigImplicit => {
            execute::<fig_implicit::FigImplicit>(cfg, ov, out_dir)?.verdict
        }
        ExperimentKind::FigBernstein => {
            execute::<fig_bernstein::FigBernstein>(cfg, ov, out_dir)?.verdict
        }
        ExperimentKind::FigOffsetAnalysis => {
            execute::<fig_offset::FigOffsetAnalysis>(cfg, ov, out_dir)?.verdict
        }
        ExperimentKind::ExpL1Rate => execute::<l1_rate::ExpL1Rate>(cfg, ov, out_dir)?.verdict,
        ExperimentKind::ExpKernel => execute::<kernel::ExpKernel>(cfg, ov, out_dir)?.verdict,
        ExperimentKind::ExpPathVsErm => {
            execute::<path_vs_erm::ExpPathVsErm>(cfg, ov, out_dir)?.verdict
        }
    })
}
