//! Adversarial dialogue response training from query / response / future-turn
//! triples, scored by a forward (response → future) and a backward
//! (future → response) generative discriminator.

pub mod corpus;
pub mod discriminators;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod seq2seq;
pub mod trainer;

pub use error::{Error, Result};
