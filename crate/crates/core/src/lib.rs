pub mod analytic_bench;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod lambda;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod train;
