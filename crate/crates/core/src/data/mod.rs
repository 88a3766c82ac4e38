//! Synthetic CSI: generation, angular-delay transform, normalization and
//! the dataset file format.

pub mod channel;
pub mod dataset;
pub mod transform;

pub use num_complex::Complex64;
pub use channel::{generate_spatial_frequency_channel, steering_vector, CMatrix, ChannelConfig, Path, Scenario};
pub use dataset::{
    build_dataset, dataset_file_len, decode_dataset, encode_dataset, generate_split, load_dataset, save_dataset,
    Dataset, DatasetDims, Split,
};
pub use transform::{leading_energy_fraction, to_angular_delay, truncate_and_normalize, AngularDelay, CsiSample};
