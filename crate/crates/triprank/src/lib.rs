//! Two-stage next-city recommender.
//!
//! Stage one assembles a candidate pool per trip from counting models
//! (transition matrix, popularity tables, co-occurrence vectors). Stage two
//! re-ranks the pool with an attention model trained with LambdaRANK
//! gradients on NDCG@40. The crate also ships the dataset plumbing, a
//! synthetic corpus generator, ranking metrics, and the training harness
//! needed to verify each piece against independent oracles at desk scale.

pub mod candidates;
pub mod config;
pub mod dataset;
pub mod dates;
pub mod features;
pub mod ltr;
pub mod nn;
pub mod train;
