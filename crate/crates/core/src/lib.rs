pub mod channel;
pub mod dataset;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scene;
