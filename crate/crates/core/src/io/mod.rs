//! File formats, run configuration and the synthetic dataset generator.

mod config;
mod dataset;
mod features;
mod synth;

pub use config::{parse_run_config, read_run_config, run_config_to_string};
pub use dataset::{
    feature_path, label_path, list_stems, load_dataset, with_path, write_dataset, Dataset, Video, FEATURE_EXT, LABEL_EXT,
    MANIFEST,
};
pub use features::{
    features_from_bytes, features_to_bytes, labels_to_string, parse_labels, read_features, read_labels, write_features,
    write_labels, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{
    generate_synthetic, sample_prototypes, video_name, Manifest, ManifestVideo, Ordering, SyntheticDataset, SyntheticSpec,
    SyntheticVideo, MAX_PROTOTYPE_COSINE, MAX_PROTOTYPE_TRIES,
};
