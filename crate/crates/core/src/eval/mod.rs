//! Metrics, data splits, evaluation protocols and reports.

mod metrics;
mod protocol;
mod report;
mod splits;

pub use metrics::{auroc, histogram, histogram_overlap, mean_variance, Histogram};
pub use protocol::*;
pub use report::{AurocRecord, EvalReport, OverlapRecord, SummaryEntry, CLASS_GROUP, CSV_HEADER};
pub use splits::{make_splits, FoldSplit, SplitSpec};
