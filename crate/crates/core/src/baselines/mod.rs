//! Reference models for comparison against TxT.

pub mod gru;
pub mod itemcf;

pub use gru::{GruConfig, GruModel};
pub use itemcf::{ItemCfConfig, ItemCfModel};
