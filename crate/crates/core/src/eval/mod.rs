//! Metric benchmarking against subjective scores: logistic mapping with
//! leave-one-content-out cross-validation, correlation statistics and the
//! significance of PCC differences.

mod logistic;
mod protocol;
mod records;
mod report;
mod stats;

pub use logistic::{fit_logistic, LogisticFit};
pub use protocol::{
    contents, loocv_evaluate, pcc_difference_significance, EvalStats, LoocvResult, Prediction,
    Significance,
};
pub use records::{StimulusRecord, StimulusSet};
pub use report::{evaluate, format_sig6, EvalReport};
pub use stats::{fractional_ranks, mean, median, outlier_ratio, pearson, rmse, spearman, std_dev};
