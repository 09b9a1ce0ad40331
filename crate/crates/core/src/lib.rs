//! Bi-factor and second-order copula models for ordinal item response data.
//!
//! Items are partitioned into non-overlapping groups. The bi-factor model links
//! every item to a common latent factor and to its group factor; the second-order
//! model links items to group factors which in turn load on a single second-order
//! factor through a one-factor copula. All latent variables live on the uniform
//! scale and every link is a bivariate copula, so the Gaussian bi-factor and
//! second-order models are recovered when all links are BVN.
//!
//! The crate provides:
//! - joint pmf / log-likelihood evaluation by Gauss-Legendre quadrature ([`model`]),
//! - two-step IFM estimation with quasi-Newton maximization ([`estimate`]),
//! - simulation from fitted or designed models ([`simulate`]),
//! - heuristic per-factor copula family selection and Vuong comparisons ([`select`]),
//! - the limited-information M2 statistic with analytic margin derivatives ([`gof`]),
//! - polychoric correlation and semi-correlation diagnostics ([`diagnostics`]).
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std` feature
//! only widens error trait impls for downstream convenience.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod copula;
pub mod data;
pub mod diagnostics;
pub mod estimate;
pub mod gof;
pub mod linalg;
pub mod math;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod select;
pub mod simulate;

pub use copula::{CopulaSpec, Family};
pub use data::OrdinalDataset;
pub use estimate::{FitOptions, FitResult};
pub use gof::M2Result;
pub use model::{Cutpoints, GroupStructure, ModelSpec, Structure};
pub use quadrature::QuadratureRule;
