//! The GcGPN model: configuration, named variants, forward pass and
//! checkpoints.

mod checkpoint;
mod config;
mod network;
mod presets;

pub use config::{Activation, ExtractorConfig, ModelConfig, SpecialCase, ThetaForm};
pub use network::{classify, EpisodeOutput, Model, Objective};
pub use presets::{variant, VARIANTS};

/// Index of the largest entry of `row`; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `argmax` restricted to `row[range]`, returned as an absolute index.
pub fn argmax_in(row: &[f64], range: std::ops::Range<usize>) -> usize {
    range.start + argmax(&row[range])
}

#[cfg(test)]
mod tests;
