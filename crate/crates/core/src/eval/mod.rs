//! Retrieval metrics, baseline user representations and the user-interest
//! classification protocol.

mod baseline;
mod interests;
mod report;
mod retrieval;

pub use baseline::{baseline_user_embedding, project_users, BaselineKind};
pub use interests::{
    f1_score, predict_user_interests, InterestLabels, InterestReport, LinearSvm, SvmConfig,
    DEFAULT_INTEREST_CLASSES,
};
pub use report::{
    interest_csv_row, interest_kv_lines, retrieval_csv_row, retrieval_kv_lines, INTEREST_CSV_HEADER,
    RETRIEVAL_CSV_HEADER,
};
pub use retrieval::{
    build_task, evaluate_retrieval, evaluate_task, joint_normalized_metric, mean_median_rank, mid_rank,
    query_median_rank, BaselineEmbedder, Embedder, ModelEmbedder, Resources, RetrievalKind,
    RetrievalReport, RetrievalTask, SplitPart, TaskResult,
};
