//! Speculative draft-and-verify inference for generative recommendation.
//!
//! An inductive drafter proposes candidate items by vector similarity, and an
//! autoregressive model over semantic-ID tokens verifies them by the likelihood of
//! generating their IDs. Verification is interleaved with beam-search decoding so
//! the loop can exit early once enough candidates are accepted, and falls back to
//! the beam output otherwise.

pub mod catalog;
pub mod matrix;
pub mod seqmodel;
pub mod drafter;
pub mod engine;
pub mod eval;
