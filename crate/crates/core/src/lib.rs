pub mod autodiff;
pub mod gate;
pub mod graph;
pub mod batch;
pub mod layers;
pub mod consistency;
pub mod codec;
pub mod extraction;
pub mod metrics;
pub mod data;
pub mod train;
pub mod checkpoint;
pub mod cli;
