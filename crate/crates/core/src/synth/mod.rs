//! Paired synthetic domains: one layout generator, two appearance styles.

mod dataset;
mod io;
mod layout;
mod style;

pub use dataset::{
    class_frequencies, generate, layout_seed, splitmix64, DatasetConfig, DomainPair, TrainingData,
    SOURCE_TRAIN, TARGET_TEST, TARGET_TRAIN,
};
pub use io::{
    dataset_files, decode_sample, encode_sample, load_dataset, load_images, read_image_only,
    read_sample, write_dataset, write_sample, UnlabeledImage, MANIFEST_NAME, SAMPLE_EXTENSION,
    SAMPLE_MAGIC, SAMPLE_VERSION,
};
pub use layout::{sample_layout, validate_geometry, SceneLayout, CLASS_NAMES, MAX_CLASSES, MIN_CLASSES};
pub use style::{render, DomainStyle, Sample};
