#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod materials;
pub mod optim;
pub mod vae;
pub mod truss;
pub mod optimizer;
pub mod scenario;
