//! Robust inference for the prevailing model across heterogeneous data sites.
//!
//! Most of the L sites follow a shared parameter vector; a minority deviate
//! arbitrarily. This crate estimates the prevailing target functional and
//! builds a confidence region that stays honest about the uncertainty of
//! selecting which sites belong to the majority: pairwise dissimilarity
//! tests feed a voting matrix, resampled copies of the tests generate a
//! family of candidate majority sets, and the reported region is the union
//! of the per-candidate intervals.
//!
//! Modules:
//! - [`stats`]: distribution quantiles, counter-based random streams, dense
//!   linear algebra, GLM fitting, Newton root finding.
//! - [`engine`]: dissimilarity tables, voting, maximum clique, resampling,
//!   threshold tuning, and the union confidence region.
//! - [`lowdim`]: parametric site fits and delta-method functionals.
//! - [`highdim`]: penalized GLM fits with projection-based debiasing.
//! - [`ate`]: doubly robust target-population treatment effects.
//! - [`baselines`]: median, m-out-of-n bootstrap, clique-voting, and
//!   bias-aware comparator intervals.
//! - [`sim`]: data-generating processes and the replication driver.

#![forbid(unsafe_code)]

pub mod ate;
pub mod baselines;
pub mod engine;
pub mod highdim;
pub mod lowdim;
pub mod sim;
pub mod stats;
