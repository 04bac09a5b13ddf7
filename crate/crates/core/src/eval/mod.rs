//! Automatic response metrics and the reward-distribution export.

mod embedding;
mod frequency;
mod overlap;
mod report;

pub use embedding::{
    context_matching, corpus_embedding_metrics, cosine, embedding_metrics, greedy_matching, EmbeddingScores,
    EmbeddingTable,
};
pub use frequency::{frequency_similarity, read_stopwords, FrequencyProfile};
pub use overlap::{bleu, distinct_n};
pub use report::{evaluate, export_reward_distribution, write_reward_csv, Contexts, MetricReport, RewardRow};
