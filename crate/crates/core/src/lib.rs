pub mod arm_model;
pub mod autodiff;
pub mod baselines;
pub mod cloth_sim;
pub mod distill;
pub mod env;
pub mod garment;
pub mod harness;
pub mod nets;
pub mod perception;
pub mod reward;
pub mod sac;
