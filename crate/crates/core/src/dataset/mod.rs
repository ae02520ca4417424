//! Dataset plumbing: COCO-format export/import, correlation-based
//! train/test splitting, four-patch decomposition, and training-time
//! augmentation.

mod augment;
mod coco;
mod patches;
mod split;

pub use augment::{augment, augment_with, sample_augment, AugmentParams};
pub use coco::{
    export_coco, frame_file_name, image_id_for_frame, import_coco, read_coco, write_coco,
    CocoAnnotation, CocoCategory, CocoDataset, CocoImage, MICROBUBBLE_CATEGORY_ID,
};
pub use patches::{split_patches, PatchLayout};
pub use split::{
    correlation_matrix, frame_correlation, split_by_correlation, verify_manifest, SplitManifest,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Sim(#[from] crate::simulator::SimError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Storage(#[from] crate::io::IoError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;
