//! Embedding-driven evaluation of image-caption metrics.
//!
//! Everything in this crate works over precomputed dual-encoder embeddings:
//!
//! - [`embedding_store`]: the `CAPEVEC1` vector format and the JSONL dataset schemas.
//! - [`metric_core`]: CLIPScore, RefCLIPScore and corpus averages.
//! - [`rank_correlation`]: Spearman rho, Kendall tau-b and tau-c with tie bookkeeping.
//! - [`resampling`]: stratified bootstrap standard deviations.
//! - [`task_harness`]: VALSE, XVNLI, MaRVL and Pascal-50S style accuracy tasks,
//!   plus the cross-language correlation heatmap.
//! - [`adapter_finetune`]: a linear adapter trained with contrastive and Pearson losses.
//! - [`mt_select`]: quality-filtered selection among N-best machine translations.

pub mod adapter_finetune;
pub mod embedding_store;
pub mod error;
pub mod metric_core;
pub mod mt_select;
pub mod rank_correlation;
pub mod resampling;
pub mod task_harness;

pub use error::{Error, ErrorClass, Result};
