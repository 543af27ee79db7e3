pub mod autograd;
pub mod corpus;
pub mod encoder;
pub mod kernels;
pub mod seed;
pub mod task;
pub mod tensor;
pub mod taskgen;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod synthetic;
pub mod experiments;
