pub mod began;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod rng;
pub mod tensor;
pub mod verify;
