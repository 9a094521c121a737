pub mod artifact;
pub mod benchmark;
pub mod datasets;
pub mod ep;
pub mod error;
pub mod gaussian;
pub mod gp_exact;
pub mod kernels;
pub mod linalg;
pub mod mcmc;
pub mod model_select;
pub mod optim;
pub mod predict;

pub use faer;
