pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gemm;
pub mod gradcheck;
pub mod gradsuite;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
