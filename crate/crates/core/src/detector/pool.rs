//! Single-head scaled dot-product attention pooling of a query over the
//! word-level features of one knowledge unit.

use crate::autodiff::{Tape, Var};

use super::TapeModel;

/// `softmax(<proj_q(query), proj_k(word_l)> / sqrt(D)) . proj_v(word_l)`.
/// `query` is 1×D, `words` is L×D with L >= 1; returns 1×D.
pub fn attention_pool(tape: &Tape, query: Var, words: Var, model: &TapeModel) -> Var {
    let d = tape.shape(query).1;
    debug_assert!(tape.shape(words).0 >= 1, "attention pool needs words");
    let q = tape.matmul(query, model.pool_q);
    let k = tape.matmul(words, model.pool_k);
    let v = tape.matmul(words, model.pool_v);
    let scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scores, None);
    tape.matmul(weights, v)
}
