pub mod correlate;
pub mod finetune;
pub mod heatmap;
pub mod mt_select;
pub mod score;
pub mod task;

use std::fs;
use std::path::Path;

use capeval::embedding_store::{load_store, EmbeddingStore};
use capeval::metric_core::ClipScoreConfig;

use crate::{CliError, GlobalOpts, StoreArgs};

pub(crate) fn clip_config(g: &GlobalOpts) -> Result<ClipScoreConfig, CliError> {
    Ok(ClipScoreConfig::new(g.w)?)
}

pub(crate) fn load_stores(args: &StoreArgs) -> Result<(EmbeddingStore, EmbeddingStore), CliError> {
    let images = load_store(&args.images)?;
    let texts = load_store(&args.texts)?;
    if images.dimension() != texts.dimension() {
        return Err(capeval::Error::DimensionMismatch {
            expected: images.dimension(),
            found: texts.dimension(),
        }
        .into());
    }
    Ok((images, texts))
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| {
        capeval::Error::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}
