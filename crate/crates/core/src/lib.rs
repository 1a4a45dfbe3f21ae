//! Discrimination measurement for geotagged short-text corpora: keyword
//! lexicon, bag-of-n-grams classifier with active learning, targeted versus
//! self-narration delineation, lexical category profiles, bot flagging,
//! per-city aggregation and negative binomial count regression.

// `!(x > 0.0)` style guards are there so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod annotation;
pub mod botfilter;
pub mod classifier;
pub mod corpus;
pub mod delineate;
pub mod error;
pub mod fixture;
pub mod lexical;
pub mod lexicon;
pub mod matcher;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod text;
pub mod trainset;

pub use error::{Error, Result};
