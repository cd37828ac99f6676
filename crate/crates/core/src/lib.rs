pub mod agent;
pub mod baselines;
pub mod converter;
pub mod dbn;
pub mod harness;
pub mod qdrl;
pub mod ulm;
