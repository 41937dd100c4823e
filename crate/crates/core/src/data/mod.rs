//! Image ingestion, resizing, rotation augmentation, stratified splitting
//! and seeded batching.

mod dataset;
mod image_io;
mod transform;

pub use dataset::{
    read_manifest, rotated_path, write_manifest, Batch, Batches, Dataset, LabeledImage, ManifestRow, Split,
    SplitRatios, INPUT_SIDE,
};
pub use image_io::{decode_rgb, is_image_path, load_image, rgb_to_tensor, save_image, IMAGE_EXTENSIONS};
pub use transform::{resize, rotate, rotate_planes, Rotation};
