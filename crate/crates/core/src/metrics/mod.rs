//! Belief trajectories and the statistics computed over them: entropy,
//! step-to-step KL, exploration length, backtracking events, similarity
//! attribution, and cluster-bootstrap aggregation.

mod aggregate;
mod bootstrap;
mod events;
mod info;
mod similarity;
mod trajectory;

pub use aggregate::{
    aggregate_stats, analyze_instance, CurvePoint, EventAnalysis, InstanceAnalysis, MetricParams, RankRow, Summary,
    VariantSummary,
};
pub use bootstrap::{bootstrap_ci, cluster_bootstrap, quantile_sorted, BootstrapCI};
pub use events::{detect_backtracks, exploration_end, maximal_runs, BacktrackEvent, Run};
pub use info::{cosine, entropy, step_kl, KL_FLOOR};
pub use similarity::{similarity_rank, similarity_scores, SimilarityMode, SimilarityRank};
pub use trajectory::{
    belief_trajectory, item_trajectory, parse_trajectories_jsonl, trajectories_jsonl, BeliefTrajectory, InstanceId,
};
