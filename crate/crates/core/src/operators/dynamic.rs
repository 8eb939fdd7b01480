//! Operators built inside a tape so gradients reach prototypes, keys and
//! temperatures.

use super::blocks::{BlockSet, Layout};
use crate::diffcore::{Matrix, Tape, Var};
use crate::error::Result;

/// Which prototype-space relation a dynamic operator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtoMetric {
    Cosine,
    NegSqL2,
}

/// Pairwise relation between prototype rows of `protos`.
pub fn dynamic_prototype_operator(tape: &mut Tape, protos: Var, metric: ProtoMetric) -> Result<Var> {
    match metric {
        ProtoMetric::Cosine => tape.cosine_similarity(protos, protos),
        ProtoMetric::NegSqL2 => Ok(tape.neg_sq_dist(protos)),
    }
}

/// Row softmax with inverse temperature `exp(log_temp)`, restricted to the
/// blocks in `keep`.
pub fn normalize_operator(tape: &mut Tape, b: Var, log_temp: Var, layout: Layout, keep: BlockSet) -> Result<Var> {
    let beta = tape.exp(log_temp);
    if keep.is_all() {
        tape.softmax_rows(b, beta)
    } else {
        tape.softmax_rows_masked(b, beta, layout.mask(keep))
    }
}

/// Attention from novel classes to seen classes: the novel rows of the
/// result hold `softmax(β · cos(novel · projection, keys))` in the seen
/// columns, every other entry is zero.
pub fn key_attention_operator(
    tape: &mut Tape,
    keys: Var,
    novel_features: Var,
    projection: Var,
    log_temp: Var,
    layout: Layout,
) -> Result<Var> {
    let queries = tape.matmul(novel_features, projection)?;
    let scores = tape.cosine_similarity(queries, keys)?;
    let beta = tape.exp(log_temp);
    let attention = tape.softmax_rows(scores, beta)?;
    tape.embed(attention, layout.size(), layout.size(), layout.n_seen, 0)
}

/// Evaluates a dynamic prototype operator outside any training tape.
pub fn prototype_relation(protos: &Matrix, metric: ProtoMetric) -> Result<Matrix> {
    let mut t = Tape::new();
    let c = t.constant(protos.clone());
    let out = dynamic_prototype_operator(&mut t, c, metric)?;
    Ok(t.value(out).clone())
}
