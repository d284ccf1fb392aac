pub mod cast;
pub mod classifier_ic;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scenario;
pub mod trainer;
