//! Mean–max checkpoint selection, paired bootstrap comparison and report rendering.

mod bootstrap;
mod outcomes;
mod report;
mod select;
mod tasks;

pub use bootstrap::{
    compare, compare_draws, mu_delta_rel, paired_bootstrap, paired_bootstrap_with, percentile, summarize,
    BootstrapDraws, Comparison, FullIndexPlan, IndexPlan, SeMode, SeededPlan, Summary,
};
pub use outcomes::{Aggregation, CellKey, Direction, OutcomeMatrix, OutcomeRecord, TaskSpec};
pub use report::{build_report, build_report_with, BootstrapReport, MethodRow, ReportConfig, TaskCell, DEFAULT_RESAMPLES};
pub use select::{
    mean_max_select, select_checkpoints, select_good, within_task_percentiles, GoodCandidate, GoodSelection,
    SelectedOutcomes,
};
pub use tasks::{MinimalPairTask, PerplexityTask, TaskAdapter, DEFAULT_WINDOW};
