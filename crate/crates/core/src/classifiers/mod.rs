//! Attribute classifiers: MLP heads, random forests, linear SVMs and the
//! majority vote that fuses them.

pub mod forest;
pub mod mlp;
pub mod svm;

pub use forest::{forest_train, Forest, ForestConfig};
pub use mlp::{head_hidden_dims, head_train, HeadConfig, HeadFit, MlpHead};
pub use svm::{svm_train, LinearSvm, SvmConfig};

/// Probability to bit; exactly 0.5 maps to 0.
pub fn to_bits(probs: &[f64]) -> Vec<u8> {
    probs.iter().map(|&p| (p > 0.5) as u8).collect()
}

/// Per-attribute majority of three bit vectors.
pub fn ensemble_vote(a: &[u8], b: &[u8], c: &[u8]) -> Vec<u8> {
    debug_assert!(a.len() == b.len() && b.len() == c.len());
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((&x, &y), &z)| (x as u32 + y as u32 + z as u32 >= 2) as u8)
        .collect()
}
