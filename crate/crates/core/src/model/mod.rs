//! Autoencoder architecture, its complexity accounting and the network.

mod complexity;
mod network;
mod spec;

pub use complexity::{
    analyze_complexity, dsc_reduction_ratio, ComplexityReport, LayerCost, CONVENTIONS,
};
pub use network::{Bindings, Dscan, Parameter};
pub use spec::{
    ActShape, ArchitectureSpec, LayerDescriptor, LayerKind, DECODER_FC_WIDTH, DECODER_RESHAPE,
    EMBEDDING_DIM,
};
