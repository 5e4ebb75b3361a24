pub mod analysis;
pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod koopman;
pub mod metrics;
pub mod numerics;
pub mod service;
pub mod training;
pub mod trajgen;

mod jsonfmt;
