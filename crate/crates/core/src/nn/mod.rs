//! Encoder/decoder definitions, parameter handling and complexity accounting.

pub mod checkpoint;
mod complexity;
mod network;
mod spec;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use complexity::{count_complexity, ComplexityReport};
pub use network::{Network, ParamInfo, ParamKind};
pub use spec::{Activation, ConvSpec, CsiDims, FcSpec, Layer, ModelSpec, Role, LEAKY_SLOPE};
