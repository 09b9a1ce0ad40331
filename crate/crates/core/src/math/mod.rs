//! Scalar special functions used across the crate.
//!
//! Everything here is deterministic and allocation-free apart from a lazily
//! initialized quadrature table for the bivariate normal cdf. Elementary
//! functions come from `libm` so the same code path is used with and without
//! `std`.

mod gamma_beta;
mod normal;
mod once;
mod student_t;

pub use gamma_beta::{betainc_reg, chi2_sf, gamma_q, ln_gamma};
pub use normal::{bvn_cdf, norm_cdf, norm_pdf, norm_quantile};
pub use once::Lazy;
pub use student_t::{t_cdf, t_pdf, t_quantile};

/// Machine-level clamp keeping uniform-scale arguments strictly inside (0,1).
///
/// Cutpoint boundaries sit exactly at 0 and 1; transforms such as the normal
/// or Student-t quantile are infinite there, so all copula entry points clamp
/// first.
pub const UNIT_EPS: f64 = 1e-12;

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_EPS, 1.0 - UNIT_EPS)
}
