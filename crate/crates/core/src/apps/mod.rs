//! Applications built on the common basis: classification by common
//! features, clustering by individual features, and evaluation metrics.

pub mod classify;
pub mod cluster;
pub mod metrics;

pub use classify::{
    classify, match_score, train_classifier, ClassModel, Classification, MatchMethod, TrainConfig, MIN_CLASS_SAMPLES,
};
pub use cluster::{cluster_pipeline, kmeans, pca_scores, ClusterConfig, ClusterReport, KMeans};
pub use metrics::{accuracy, nmi, sir, Nmi, SIR_CAP_DB};
