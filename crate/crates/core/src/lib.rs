pub mod matrix_core;
pub mod test_matrices;
pub mod stream_ingest;
pub mod spi;
pub mod approximators;
pub mod precision_model;
pub mod guidance;
pub mod synthetic;
pub mod metrics;
