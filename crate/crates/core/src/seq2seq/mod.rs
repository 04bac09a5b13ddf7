//! Attentional encoder-decoder shared by the generator and both discriminators.

mod generate;
mod lstm;
mod model;

pub use generate::{argmax, DecodeMode, GenerationResult, Termination};
pub use lstm::LstmCell;
pub use model::{
    mle_from_scores, source_row, target_row, Annotations, DecoderState, ModelConfig, Seq2Seq, TargetScores,
};

#[cfg(test)]
mod tests;
