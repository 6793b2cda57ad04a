//! Dataset ingestion, deterministic preprocessing, patch extraction, and
//! synthetic shortcut injection.
//!
//! Provided features:
//! - [`ImageBatch`] / [`LabeledDataset`] containers (NHWC, values in [-1,1])
//! - CIFAR-10 binary ingestion ([`load_cifar10`])
//! - PNG-folder ingestion with CSV labels ([`load_image_folder`])
//! - resize/crop preprocessing ([`preprocess`])
//! - shortcut injectors: a directional arrow glyph ([`inject_arrow`]) and a
//!   chromatic channel shift ([`inject_chromatic`])
//! - 3x3 patch grids and patch augmentation ([`extract_patch_grid`],
//!   [`augment_patches`])
//! - procedural datasets for experiments without external data ([`synth`])

mod cifar;
mod folder;
pub(crate) mod patches;
mod preprocess;
mod shortcut;
pub mod synth;
mod transform;
mod types;

pub use cifar::{load_cifar10, Split};
pub use folder::{load_image_folder, FolderConfig, UndecodablePolicy};
pub use patches::{augment_patches, extract_patch_grid, AugmentConfig, PatchSet};
pub use preprocess::{preprocess, CropMode, PreprocessConfig};
pub use shortcut::{inject_arrow, inject_chromatic, ShortcutConfig, ShortcutKind, ARROW_GLYPH};
pub use transform::{resize_bilinear, rotate90};
pub use types::{u8_to_unit, unit_to_u8, ImageBatch, LabeledDataset};
