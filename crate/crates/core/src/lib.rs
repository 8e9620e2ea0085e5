pub mod audio;
pub mod augment;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod spectro;
