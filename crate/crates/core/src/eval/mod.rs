//! Similarity matrices, clustering metrics, and synthetic QA evaluation.

mod clustering;
mod qa;
mod similarity;
mod tasks;

pub use clustering::{clustering_metrics, write_embedding_csv, ClusteringMetrics};
pub use qa::{
    completion_log_likelihood, evaluate_qa, exemplar_context, predict, BucketReport, EraReport,
};
pub use similarity::{
    fill_template, year_embeddings, year_similarity_matrix, SimilarityMatrix, DEFAULT_PROBE,
    YEAR_PLACEHOLDER,
};
pub use tasks::{
    general_corpus, generate_synthetic_tasks, EraBucket, SyntheticQaItem, SyntheticSuite,
    ACTIONS, ENTITIES, OPTIONS_PER_ITEM,
};
