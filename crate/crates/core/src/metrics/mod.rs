//! Zero-shot splits, ranked-retrieval metrics and evaluation reports.

mod evaluate;
mod ranking;
mod split;

pub use evaluate::{
    check_zero_shot, evaluate, evaluate_features, EvalReport, QueryFeature, QueryRecord,
};
pub use ranking::{
    accuracy_at_q, average_precision_at_k, precision_at_k, relevance_vector, Metric, RelevanceMode,
};
pub use split::{low_data_subsample, make_split, subsample_count, SplitSpec};
