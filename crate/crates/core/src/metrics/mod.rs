//! Evaluation metrics, experiment reports and result tables.

pub mod eval;
pub mod report;
pub mod table;

pub use eval::{codeword_mse, codeword_mse_flat, network_outputs, nmse, reconstruct, tensor_outputs, Nmse};
pub use report::{config_hash, hash_json, ExperimentReport, Method};
pub use table::{render_table, Cell, RenderedTable, TableLayout};
