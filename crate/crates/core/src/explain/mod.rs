//! Post-hoc explanations of trained encoders: LIME surrogates, feature
//! frequency over explanations, and input-gradient saliency.

mod lime;
mod saliency;

pub use lime::{
    feature_frequency, lime_batch, lime_explain, weighted_ridge, write_explanations_jsonl, Explanation, LimeConfig,
    Predictor,
};
pub use saliency::{gradient_saliency, SaliencyReport};

#[cfg(test)]
mod tests;
