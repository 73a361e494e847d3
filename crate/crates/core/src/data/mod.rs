//! Image I/O, datasets on disk, splitting, augmentation and the synthetic
//! grating corpus.

mod augment;
mod dataset;
mod netpbm;
mod synth;

pub use augment::{augment_dataset, rotate_augment, rotate_image, AugmentSpec};
pub use dataset::{ingest_dataset, kfold_partition, split_counts, split_dataset, Dataset, Fold, Sample, Split};
pub use netpbm::{decode_netpbm, encode_netpbm, read_netpbm, resize_nearest, GrayImage};
pub use synth::{synth_dataset, synth_images, write_synth, SynthSpec};
