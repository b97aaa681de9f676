//! Adaptive world-model planning on a desk-scale driving testbed.
//!
//! The crate trains a latent dynamics model and policy on one driving task,
//! then finetunes on a shifted task by estimating which of the two mismatches
//! (dynamics vs policy) dominates and selectively updating only that
//! component: low-rank coefficient updates for the model, simplex-weight
//! updates for a policy ensemble. A separate theory module evaluates the
//! associated performance-gap bound and decision rule exactly on small
//! tabular instances.

pub mod adapt;
pub mod agent;
pub mod drivesim;
pub mod harness;
pub mod numkernel;
pub mod theory;
pub mod worldmodel;
