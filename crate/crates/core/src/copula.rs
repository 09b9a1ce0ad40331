//! Bivariate linking copulas.
//!
//! Families cover the dependence types needed when latent traits are means
//! (BVN), mixtures of means (Student-t with small fixed df), maxima (Gumbel,
//! upper tail dependence) or minima (survival Gumbel, lower tail dependence),
//! plus Frank and independence. Every family exposes the cdf, the conditional
//! cdf ("h-function") and its inverse, the density, and the derivative of the
//! conditional cdf with respect to the dependence parameter, which feeds the
//! goodness-of-fit Jacobians.
//!
//! All families here are exchangeable, so a single h-function
//! `ccdf(v, u) = P(V <= v | U = u)` serves both conditioning directions.
//! Inputs on the uniform scale are clamped to [1e-12, 1 - 1e-12]: cutpoint
//! boundaries sit exactly at 0 and 1 where the normal/Student quantile
//! transforms blow up.

use crate::math::{self, bvn_cdf, norm_cdf, norm_pdf, norm_quantile, t_cdf, t_quantile};
use crate::quadrature::QuadratureRule;
use alloc::format;
use alloc::string::String;
use core::fmt;

/// Copula family tag. Student-t carries its fixed integer degrees of freedom;
/// df is a structural choice, never an estimated parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    StudentT(u32),
    Gumbel,
    SurvivalGumbel,
    Frank,
    Independence,
}

impl Family {
    /// Serialized lowercase tag: "bvn", "t2", "t5", "gumbel", "sgumbel",
    /// "frank", "indep".
    pub fn tag(&self) -> String {
        match self {
            Family::Gaussian => String::from("bvn"),
            Family::StudentT(nu) => format!("t{nu}"),
            Family::Gumbel => String::from("gumbel"),
            Family::SurvivalGumbel => String::from("sgumbel"),
            Family::Frank => String::from("frank"),
            Family::Independence => String::from("indep"),
        }
    }

    pub fn parse_tag(tag: &str) -> Option<Family> {
        match tag {
            "bvn" | "gaussian" | "normal" => Some(Family::Gaussian),
            "gumbel" => Some(Family::Gumbel),
            "sgumbel" => Some(Family::SurvivalGumbel),
            "frank" => Some(Family::Frank),
            "indep" | "independence" => Some(Family::Independence),
            t if t.starts_with('t') => t[1..].parse::<u32>().ok().filter(|&nu| nu >= 1).map(Family::StudentT),
            _ => None,
        }
    }

    /// Candidate menu used by the selection algorithm when none is supplied.
    pub fn default_candidates() -> alloc::vec::Vec<Family> {
        alloc::vec![
            Family::Gaussian,
            Family::StudentT(2),
            Family::StudentT(3),
            Family::StudentT(5),
            Family::Gumbel,
            Family::SurvivalGumbel,
            Family::Frank,
        ]
    }

    /// Whether `theta` lies in the family's parameter domain.
    pub fn theta_in_domain(&self, theta: f64) -> bool {
        match self {
            Family::Gaussian | Family::StudentT(_) => theta > -1.0 && theta < 1.0,
            Family::Gumbel | Family::SurvivalGumbel => theta >= 1.0,
            Family::Frank => theta != 0.0 && theta.is_finite(),
            Family::Independence => true,
        }
    }

    pub fn has_parameter(&self) -> bool {
        !matches!(self, Family::Independence)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CopulaError {
    /// Parameter outside the family domain.
    InvalidParameter { family: Family, theta: f64 },
    /// Requested Kendall's tau is not attainable by the family.
    TauOutOfRange { family: Family, tau: f64 },
    /// An iterative evaluation failed to converge or went non-finite.
    NumericalFailure(&'static str),
}

impl fmt::Display for CopulaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopulaError::InvalidParameter { family, theta } => {
                write!(f, "parameter {theta} outside the domain of {family}")
            }
            CopulaError::TauOutOfRange { family, tau } => {
                write!(f, "kendall tau {tau} not attainable by {family}")
            }
            CopulaError::NumericalFailure(what) => write!(f, "numerical failure in {what}"),
        }
    }
}

impl core::error::Error for CopulaError {}

/// A copula family together with its dependence parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaSpec {
    pub family: Family,
    pub theta: f64,
}

impl CopulaSpec {
    pub fn new(family: Family, theta: f64) -> Result<Self, CopulaError> {
        if !family.theta_in_domain(theta) {
            return Err(CopulaError::InvalidParameter { family, theta });
        }
        Ok(Self { family, theta })
    }

    pub fn independence() -> Self {
        Self {
            family: Family::Independence,
            theta: 0.0,
        }
    }

    /// Spec at the family's parameter for a given Kendall's tau.
    pub fn from_tau(family: Family, tau: f64) -> Result<Self, CopulaError> {
        let theta = tau_to_param(family, tau)?;
        Self::new(family, theta)
    }

    /// C(u, v).
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        let u = math::clamp_unit(u);
        let v = math::clamp_unit(v);
        match self.family {
            Family::Independence => u * v,
            Family::Gaussian => bvn_cdf(norm_quantile(u), norm_quantile(v), self.theta),
            Family::StudentT(nu) => t_copula_cdf(u, v, self.theta, nu as f64),
            Family::Gumbel => gumbel_cdf(u, v, self.theta),
            Family::SurvivalGumbel => u + v - 1.0 + gumbel_cdf(1.0 - u, 1.0 - v, self.theta),
            Family::Frank => frank_cdf(u, v, self.theta),
        }
    }

    /// Conditional cdf P(V <= v | U = u), the u-partial of the cdf.
    pub fn ccdf(&self, v: f64, u: f64) -> f64 {
        let u = math::clamp_unit(u);
        let v = math::clamp_unit(v);
        let h = match self.family {
            Family::Independence => v,
            Family::Gaussian => {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                let s = libm::sqrt(1.0 - self.theta * self.theta);
                norm_cdf((y - self.theta * x) / s)
            }
            Family::StudentT(nu) => {
                let nu = nu as f64;
                let x = t_quantile(u, nu);
                let y = t_quantile(v, nu);
                t_h(x, y, self.theta, nu)
            }
            Family::Gumbel => gumbel_h(v, u, self.theta),
            Family::SurvivalGumbel => 1.0 - gumbel_h(1.0 - v, 1.0 - u, self.theta),
            Family::Frank => frank_h(v, u, self.theta),
        };
        h.clamp(0.0, 1.0)
    }

    /// Inverse of the conditional cdf in its first argument:
    /// `ccdf(inv_ccdf(p, u), u) = p`.
    pub fn inv_ccdf(&self, p: f64, u: f64) -> Result<f64, CopulaError> {
        let p = math::clamp_unit(p);
        let u = math::clamp_unit(u);
        match self.family {
            Family::Independence => Ok(p),
            Family::Gaussian => {
                let s = libm::sqrt(1.0 - self.theta * self.theta);
                Ok(norm_cdf(s * norm_quantile(p) + self.theta * norm_quantile(u)))
            }
            Family::StudentT(nu) => {
                let nu = nu as f64;
                let x = t_quantile(u, nu);
                let se = libm::sqrt((nu + x * x) * (1.0 - self.theta * self.theta) / (nu + 1.0));
                Ok(t_cdf(self.theta * x + se * t_quantile(p, nu + 1.0), nu))
            }
            Family::Frank => {
                let e = libm::expm1(-self.theta);
                let a = libm::expm1(-self.theta * u);
                let b = p * e / (1.0 + a * (1.0 - p));
                Ok(math::clamp_unit(-libm::log1p(b) / self.theta))
            }
            Family::Gumbel => invert_h(|v| gumbel_h(v, u, self.theta), p),
            Family::SurvivalGumbel => {
                let w = invert_h(|v| gumbel_h(v, 1.0 - u, self.theta), 1.0 - p)?;
                Ok(1.0 - w)
            }
        }
    }

    /// Copula density c(u, v).
    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        let u = math::clamp_unit(u);
        let v = math::clamp_unit(v);
        match self.family {
            Family::Independence => 1.0,
            Family::Gaussian => {
                let x = norm_quantile(u);
                let y = norm_quantile(v);
                let r = self.theta;
                let s2 = 1.0 - r * r;
                libm::exp(-(r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * s2))
                    / libm::sqrt(s2)
            }
            Family::StudentT(nu) => {
                let nu = nu as f64;
                let x = t_quantile(u, nu);
                let y = t_quantile(v, nu);
                t_density_ratio(x, y, self.theta, nu)
            }
            Family::Gumbel => gumbel_pdf(u, v, self.theta),
            Family::SurvivalGumbel => gumbel_pdf(1.0 - u, 1.0 - v, self.theta),
            Family::Frank => {
                let th = self.theta;
                let e = libm::expm1(-th);
                let a = libm::expm1(-th * u);
                let b = libm::expm1(-th * v);
                let den = e + a * b;
                -th * e * libm::exp(-th * (u + v)) / (den * den)
            }
        }
    }

    /// Derivative of the conditional cdf with respect to the dependence
    /// parameter. Analytic for Gaussian and Gumbel (and their reflections);
    /// central finite differences with step 1e-6 * max(1, |theta|) elsewhere,
    /// falling back to a one-sided difference at the domain boundary.
    pub fn ccdf_dtheta(&self, v: f64, u: f64) -> f64 {
        let uc = math::clamp_unit(u);
        let vc = math::clamp_unit(v);
        match self.family {
            Family::Independence => 0.0,
            Family::Gaussian => {
                let x = norm_quantile(uc);
                let y = norm_quantile(vc);
                let r = self.theta;
                let s2 = 1.0 - r * r;
                let t = (y - r * x) / libm::sqrt(s2);
                norm_pdf(t) * (r * y - x) / (s2 * libm::sqrt(s2))
            }
            Family::Gumbel => gumbel_h_dtheta(vc, uc, self.theta),
            Family::SurvivalGumbel => -gumbel_h_dtheta(1.0 - vc, 1.0 - uc, self.theta),
            Family::StudentT(_) | Family::Frank => {
                self.fd_dtheta(|spec| spec.ccdf(v, u))
            }
        }
    }

    /// Derivative of the density with respect to the dependence parameter,
    /// by the same finite-difference convention as [`Self::ccdf_dtheta`].
    pub fn pdf_dtheta(&self, u: f64, v: f64) -> f64 {
        if self.family == Family::Independence {
            return 0.0;
        }
        self.fd_dtheta(|spec| spec.pdf(u, v))
    }

    fn fd_dtheta(&self, f: impl Fn(&CopulaSpec) -> f64) -> f64 {
        let h = 1e-6 * self.theta.abs().max(1.0);
        let up = CopulaSpec { theta: self.theta + h, ..*self };
        let dn = CopulaSpec { theta: self.theta - h, ..*self };
        let up_ok = self.family.theta_in_domain(up.theta);
        let dn_ok = self.family.theta_in_domain(dn.theta);
        match (up_ok, dn_ok) {
            (true, true) => (f(&up) - f(&dn)) / (2.0 * h),
            (true, false) => (f(&up) - f(self)) / h,
            (false, true) => (f(self) - f(&dn)) / h,
            (false, false) => 0.0,
        }
    }

    /// Kendall's tau implied by the parameter.
    pub fn tau(&self) -> f64 {
        param_to_tau(self.family, self.theta)
    }
}

/// Kendall's tau from a family parameter.
///
/// BVN/Student-t: tau = (2/pi) asin(theta). Gumbel and survival Gumbel:
/// tau = 1 - 1/theta. Frank: 1 - (4/theta)(1 - D1(theta)) with the first
/// Debye function D1, extended to negative theta by oddness.
pub fn param_to_tau(family: Family, theta: f64) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gaussian | Family::StudentT(_) => {
            2.0 / core::f64::consts::PI * libm::asin(theta)
        }
        Family::Gumbel | Family::SurvivalGumbel => 1.0 - 1.0 / theta,
        Family::Frank => frank_tau(theta),
    }
}

/// Family parameter from Kendall's tau; inverse of [`param_to_tau`].
pub fn tau_to_param(family: Family, tau: f64) -> Result<f64, CopulaError> {
    let out_of_range = || CopulaError::TauOutOfRange { family, tau };
    match family {
        Family::Independence => {
            if tau == 0.0 {
                Ok(0.0)
            } else {
                Err(out_of_range())
            }
        }
        Family::Gaussian | Family::StudentT(_) => {
            if tau <= -1.0 || tau >= 1.0 {
                return Err(out_of_range());
            }
            Ok(libm::sin(core::f64::consts::PI * tau / 2.0))
        }
        Family::Gumbel | Family::SurvivalGumbel => {
            if !(0.0..1.0).contains(&tau) {
                return Err(out_of_range());
            }
            Ok(1.0 / (1.0 - tau))
        }
        Family::Frank => {
            if tau <= -0.995 || tau >= 0.995 {
                return Err(out_of_range());
            }
            if tau == 0.0 {
                // Limiting value; theta = 0 itself is a removable singularity.
                return Ok(0.0);
            }
            let target = tau.abs();
            let mut lo = 1e-8;
            let mut hi = 1.0;
            while frank_tau(hi) < target {
                hi *= 2.0;
                if hi > 1e4 {
                    return Err(out_of_range());
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if frank_tau(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * hi.max(1.0) {
                    break;
                }
            }
            let theta = 0.5 * (lo + hi);
            Ok(if tau < 0.0 { -theta } else { theta })
        }
    }
}

/// Per-node quantities precomputed for repeated conditional-cdf evaluation
/// against a fixed set of conditioning values (quadrature nodes or
/// transformed nodes). Band-table construction evaluates `ccdf(v, u_q)` for
/// every node `u_q` and many `v`; caching the node transforms (normal or
/// Student-t quantiles, logs, exponentials) removes the dominant cost.
pub struct CondCache {
    data: CondData,
}

enum CondData {
    Indep {
        len: usize,
    },
    Gauss {
        rho: f64,
        s: f64,
        z: Vec<f64>,
    },
    StudentT {
        nu: f64,
        rho: f64,
        x: Vec<f64>,
        /// Conditional scale sqrt((nu + x^2)(1 - rho^2)/(nu + 1)) per node.
        se: Vec<f64>,
    },
    Gumbel {
        theta: f64,
        /// theta powers and logs of -ln u per node.
        xt: Vec<f64>,
        lx: Vec<f64>,
        u: Vec<f64>,
        /// Reflected evaluation (survival Gumbel).
        reflected: bool,
    },
    Frank {
        theta: f64,
        e: f64,
        /// exp(-theta u) and expm1(-theta u) per node.
        equ: Vec<f64>,
        a: Vec<f64>,
    },
}

use alloc::vec::Vec;

impl CopulaSpec {
    /// Builds the conditioning cache for a fixed slate of conditioning
    /// values.
    pub fn cond_cache(&self, cond: &[f64]) -> CondCache {
        let data = match self.family {
            Family::Independence => CondData::Indep { len: cond.len() },
            Family::Gaussian => CondData::Gauss {
                rho: self.theta,
                s: libm::sqrt(1.0 - self.theta * self.theta),
                z: cond.iter().map(|&u| norm_quantile(math::clamp_unit(u))).collect(),
            },
            Family::StudentT(nu) => {
                let nu = nu as f64;
                let rho = self.theta;
                let x: Vec<f64> = cond
                    .iter()
                    .map(|&u| t_quantile(math::clamp_unit(u), nu))
                    .collect();
                let se = x
                    .iter()
                    .map(|&xi| libm::sqrt((nu + xi * xi) * (1.0 - rho * rho) / (nu + 1.0)))
                    .collect();
                CondData::StudentT { nu, rho, x, se }
            }
            Family::Gumbel | Family::SurvivalGumbel => {
                let reflected = self.family == Family::SurvivalGumbel;
                let u: Vec<f64> = cond
                    .iter()
                    .map(|&c| {
                        let c = math::clamp_unit(c);
                        if reflected {
                            1.0 - c
                        } else {
                            c
                        }
                    })
                    .collect();
                let x: Vec<f64> = u.iter().map(|&ui| -libm::log(ui)).collect();
                let xt = x.iter().map(|&xi| libm::pow(xi, self.theta)).collect();
                let lx = x.iter().map(|&xi| libm::log(xi)).collect();
                CondData::Gumbel {
                    theta: self.theta,
                    xt,
                    lx,
                    u,
                    reflected,
                }
            }
            Family::Frank => CondData::Frank {
                theta: self.theta,
                e: libm::expm1(-self.theta),
                equ: cond
                    .iter()
                    .map(|&u| libm::exp(-self.theta * math::clamp_unit(u)))
                    .collect(),
                a: cond
                    .iter()
                    .map(|&u| libm::expm1(-self.theta * math::clamp_unit(u)))
                    .collect(),
            },
        };
        CondCache { data }
    }

    /// Writes `ccdf(v, u_q)` for every cached conditioning node into `out`.
    /// Bit-identical to calling [`Self::ccdf`] node by node.
    pub fn ccdf_row(&self, v: f64, cache: &CondCache, out: &mut [f64]) {
        let v = math::clamp_unit(v);
        match &cache.data {
            CondData::Indep { len } => {
                debug_assert_eq!(*len, out.len());
                out.iter_mut().for_each(|o| *o = v);
            }
            CondData::Gauss { rho, s, z } => {
                let y = norm_quantile(v);
                for (o, &zq) in out.iter_mut().zip(z) {
                    *o = norm_cdf((y - rho * zq) / s).clamp(0.0, 1.0);
                }
            }
            CondData::StudentT { nu, rho, x, se } => {
                let y = t_quantile(v, *nu);
                for (o, (&xq, &seq)) in out.iter_mut().zip(x.iter().zip(se)) {
                    *o = t_cdf((y - rho * xq) / seq, nu + 1.0).clamp(0.0, 1.0);
                }
            }
            CondData::Gumbel {
                theta,
                xt,
                lx,
                u,
                reflected,
            } => {
                let w = if *reflected { 1.0 - v } else { v };
                let yv = -libm::log(w);
                let yt = libm::pow(yv, *theta);
                let inv_theta = 1.0 / theta;
                for (q, o) in out.iter_mut().enumerate() {
                    let s = xt[q] + yt;
                    let ln_s = libm::log(s);
                    let t = libm::exp(ln_s * inv_theta);
                    let h = libm::exp(
                        -t + (inv_theta - 1.0) * ln_s + (theta - 1.0) * lx[q],
                    ) / u[q];
                    *o = if *reflected { 1.0 - h } else { h }.clamp(0.0, 1.0);
                }
            }
            CondData::Frank { theta, e, equ, a } => {
                let b = libm::expm1(-theta * v);
                for (o, (&equq, &aq)) in out.iter_mut().zip(equ.iter().zip(a)) {
                    *o = (equq * b / (e + aq * b)).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Derivative of Kendall's tau with respect to the family parameter, used to
/// push standard errors onto the tau scale by the delta method.
pub fn dtau_dtheta(family: Family, theta: f64) -> f64 {
    match family {
        Family::Independence => 0.0,
        Family::Gaussian | Family::StudentT(_) => {
            2.0 / (core::f64::consts::PI * libm::sqrt(1.0 - theta * theta))
        }
        Family::Gumbel | Family::SurvivalGumbel => 1.0 / (theta * theta),
        Family::Frank => {
            let h = 1e-6 * theta.abs().max(1.0);
            (frank_tau(theta + h) - frank_tau(theta - h)) / (2.0 * h)
        }
    }
}

/// Semi-correlations of the underlying normal scores in the joint lower and
/// upper quadrants, returned as (rho_minus, rho_plus).
///
/// The quadrant moments reduce to one- and two-dimensional integrals of the
/// copula density and conditional cdf against normal scores; each half line
/// is mapped through the normal quantile of a unit-interval node and handled
/// with a 48-point Gauss-Legendre rule per axis, which reproduces reference
/// tables to two decimals.
pub fn theoretical_semicorrelations(spec: &CopulaSpec) -> Result<(f64, f64), CopulaError> {
    static RULE: math::Lazy<QuadratureRule> = math::Lazy::new();
    let rule = RULE.get_or_init(|| QuadratureRule::gauss_legendre(48).expect("static rule"));

    let p_joint = spec.cdf(0.5, 0.5); // P(U<0.5, V<0.5) = P(U>0.5, V>0.5)
    if !(p_joint.is_finite() && p_joint > 0.0) {
        return Err(CopulaError::NumericalFailure("semicorrelation quadrant mass"));
    }

    let nodes = rule.nodes();
    let weights = rule.weights();
    let n = nodes.len();

    let mut rho = [0.0f64; 2];
    for (side, rho_out) in rho.iter_mut().enumerate() {
        // side 0: lower quadrant u in (0, 1/2); side 1: upper, u in (1/2, 1).
        let map = |x: f64| if side == 0 { 0.5 * x } else { 0.5 + 0.5 * x };
        let du = 0.5;

        let mut m1 = 0.0; // E[Z 1_quad]
        let mut m2 = 0.0; // E[Z^2 1_quad]
        let mut m11 = 0.0; // E[Z1 Z2 1_quad]
        let mut zs = alloc::vec![0.0f64; n];
        for q in 0..n {
            let u = map(nodes[q]);
            zs[q] = norm_quantile(u);
        }
        for q in 0..n {
            let u = map(nodes[q]);
            let z = zs[q];
            let h_half = spec.ccdf(0.5, u); // P(V <= 1/2 | U = u)
            let cond = if side == 0 { h_half } else { 1.0 - h_half };
            m1 += weights[q] * du * z * cond;
            m2 += weights[q] * du * z * z * cond;
            for r in 0..n {
                let v = map(nodes[r]);
                m11 += weights[q] * weights[r] * du * du * z * zs[r] * spec.pdf(u, v);
            }
        }
        let cross = m1 * m1 / p_joint;
        let denom = m2 - cross;
        if !(denom.is_finite() && denom > 0.0) {
            return Err(CopulaError::NumericalFailure("semicorrelation variance"));
        }
        *rho_out = (m11 - cross) / denom;
    }
    if !(rho[0].is_finite() && rho[1].is_finite()) {
        return Err(CopulaError::NumericalFailure("semicorrelation value"));
    }
    Ok((rho[0], rho[1]))
}

// ---------------------------------------------------------------------------
// Gumbel internals
// ---------------------------------------------------------------------------

fn gumbel_cdf(u: f64, v: f64, theta: f64) -> f64 {
    let x = -libm::log(u);
    let y = -libm::log(v);
    let s = libm::pow(x, theta) + libm::pow(y, theta);
    libm::exp(-libm::pow(s, 1.0 / theta))
}

fn gumbel_h(v: f64, u: f64, theta: f64) -> f64 {
    // d/du C(u,v) = C(u,v) S^{1/theta - 1} x^{theta - 1} / u, x = -ln u.
    let x = -libm::log(u);
    let y = -libm::log(v);
    let s = libm::pow(x, theta) + libm::pow(y, theta);
    let t = libm::pow(s, 1.0 / theta);
    libm::exp(-t + (1.0 / theta - 1.0) * libm::log(s) + (theta - 1.0) * libm::log(x)) / u
}

fn gumbel_pdf(u: f64, v: f64, theta: f64) -> f64 {
    let x = -libm::log(u);
    let y = -libm::log(v);
    let s = libm::pow(x, theta) + libm::pow(y, theta);
    let t = libm::pow(s, 1.0 / theta);
    let ln_core = -t
        + (theta - 1.0) * (libm::log(x) + libm::log(y))
        + (2.0 / theta - 2.0) * libm::log(s)
        - libm::log(u)
        - libm::log(v);
    libm::exp(ln_core) * (1.0 + (theta - 1.0) / t)
}

fn gumbel_h_dtheta(v: f64, u: f64, theta: f64) -> f64 {
    // h = exp(L)/u with L = -S^{1/theta} + (1/theta - 1) ln S + (theta-1) ln x.
    let x = -libm::log(u);
    let y = -libm::log(v);
    let lx = libm::log(x);
    let ly = libm::log(y);
    let xt = libm::pow(x, theta);
    let yt = libm::pow(y, theta);
    let s = xt + yt;
    let ln_s = libm::log(s);
    let t = libm::pow(s, 1.0 / theta);
    let s_dtheta = xt * lx + yt * ly;
    let t_dtheta = t * (-ln_s / (theta * theta) + s_dtheta / (theta * s));
    let l_dtheta =
        -t_dtheta - ln_s / (theta * theta) + (1.0 / theta - 1.0) * s_dtheta / s + lx;
    let h = libm::exp(-t + (1.0 / theta - 1.0) * ln_s + (theta - 1.0) * lx) / u;
    h * l_dtheta
}

// ---------------------------------------------------------------------------
// Frank internals
// ---------------------------------------------------------------------------

fn frank_cdf(u: f64, v: f64, theta: f64) -> f64 {
    let e = libm::expm1(-theta);
    let a = libm::expm1(-theta * u);
    let b = libm::expm1(-theta * v);
    -libm::log1p(a * b / e) / theta
}

fn frank_h(v: f64, u: f64, theta: f64) -> f64 {
    let e = libm::expm1(-theta);
    let a = libm::expm1(-theta * u);
    let b = libm::expm1(-theta * v);
    libm::exp(-theta * u) * b / (e + a * b)
}

/// First Debye function D1(x) = (1/x) Int_0^x t/(e^t - 1) dt for x > 0.
fn debye1(x: f64) -> f64 {
    static RULE: math::Lazy<QuadratureRule> = math::Lazy::new();
    let rule = RULE.get_or_init(|| QuadratureRule::gauss_legendre(64).expect("static rule"));
    // The integrand decays like t e^{-t}; beyond 40 the tail is below 1e-15.
    let upper = x.min(40.0);
    let integrand = |t: f64| {
        if t < 1e-8 {
            1.0 - 0.5 * t + t * t / 12.0
        } else {
            t / libm::expm1(t)
        }
    };
    let integral: f64 = rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(&z, &w)| w * integrand(upper * z))
        .sum::<f64>()
        * upper;
    integral / x
}

fn frank_tau(theta: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    let t = theta.abs();
    let tau = 1.0 - 4.0 / t * (1.0 - debye1(t));
    if theta < 0.0 {
        -tau
    } else {
        tau
    }
}

// ---------------------------------------------------------------------------
// Student-t internals
// ---------------------------------------------------------------------------

fn t_h(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
    let se = libm::sqrt((nu + x * x) * (1.0 - rho * rho) / (nu + 1.0));
    t_cdf((y - rho * x) / se, nu + 1.0)
}

fn t_density_ratio(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
    use crate::math::ln_gamma;
    let s2 = 1.0 - rho * rho;
    let ln_c = ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu)
        - 2.0 * ln_gamma(0.5 * (nu + 1.0))
        - 0.5 * libm::log(s2);
    let q = (x * x - 2.0 * rho * x * y + y * y) / (nu * s2);
    let ln = ln_c + 0.5 * (nu + 1.0) * (libm::log1p(x * x / nu) + libm::log1p(y * y / nu))
        - 0.5 * (nu + 2.0) * libm::log1p(q);
    libm::exp(ln)
}

/// Bivariate Student-t copula cdf by integrating the h-function over the
/// conditioning margin, with panels graded toward zero where the quantile
/// transform steepens. Symmetry lets us condition on the smaller argument.
fn t_copula_cdf(u: f64, v: f64, rho: f64, nu: f64) -> f64 {
    static RULE: math::Lazy<QuadratureRule> = math::Lazy::new();
    let rule = RULE.get_or_init(|| QuadratureRule::gauss_legendre(48).expect("static rule"));
    let (lo_arg, hi_arg) = if u <= v { (u, v) } else { (v, u) };
    let y = t_quantile(hi_arg, nu);
    let mut acc = 0.0;
    let panels = 22;
    let mut right = lo_arg;
    for i in 0..panels {
        let left = if i + 1 == panels {
            0.0
        } else {
            right * 0.35
        };
        let len = right - left;
        for (&z, &w) in rule.nodes().iter().zip(rule.weights()) {
            let t = left + len * z;
            let x = t_quantile(t.max(1e-300), nu);
            acc += w * len * t_h(x, y, rho, nu);
        }
        right = left;
    }
    acc.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families_with_params() -> alloc::vec::Vec<CopulaSpec> {
        alloc::vec![
            CopulaSpec::new(Family::Gaussian, 0.5).unwrap(),
            CopulaSpec::new(Family::Gaussian, -0.35).unwrap(),
            CopulaSpec::new(Family::StudentT(5), 0.5).unwrap(),
            CopulaSpec::new(Family::StudentT(2), -0.3).unwrap(),
            CopulaSpec::new(Family::Gumbel, 1.8).unwrap(),
            CopulaSpec::new(Family::SurvivalGumbel, 2.4).unwrap(),
            CopulaSpec::new(Family::Frank, 4.0).unwrap(),
            CopulaSpec::new(Family::Frank, -2.5).unwrap(),
            CopulaSpec::independence(),
        ]
    }

    #[test]
    fn domain_validation() {
        assert!(CopulaSpec::new(Family::Gaussian, 1.0).is_err());
        assert!(CopulaSpec::new(Family::Gumbel, 0.99).is_err());
        assert!(CopulaSpec::new(Family::Frank, 0.0).is_err());
        assert!(CopulaSpec::new(Family::StudentT(5), -1.0).is_err());
        assert!(CopulaSpec::new(Family::Gumbel, 1.0).is_ok());
    }

    #[test]
    fn family_tags_round_trip() {
        for fam in [
            Family::Gaussian,
            Family::StudentT(2),
            Family::StudentT(3),
            Family::StudentT(5),
            Family::Gumbel,
            Family::SurvivalGumbel,
            Family::Frank,
            Family::Independence,
        ] {
            assert_eq!(Family::parse_tag(&fam.tag()), Some(fam));
        }
        assert_eq!(Family::parse_tag("nope"), None);
        assert_eq!(Family::parse_tag("t0"), None);
    }

    #[test]
    fn independence_boundaries() {
        // Gumbel theta = 1 is exactly independence.
        let g = CopulaSpec::new(Family::Gumbel, 1.0).unwrap();
        for &(u, v) in &[(0.2, 0.7), (0.5, 0.5), (0.9, 0.1)] {
            assert!((g.cdf(u, v) - u * v).abs() < 1e-12);
            assert!((g.ccdf(v, u) - v).abs() < 1e-12);
            assert!((g.pdf(u, v) - 1.0).abs() < 1e-10);
        }
        let ind = CopulaSpec::independence();
        assert!((ind.cdf(0.3, 0.7) - 0.21).abs() < 1e-15);
        let bvn0 = CopulaSpec::new(Family::Gaussian, 0.0).unwrap();
        assert!((bvn0.cdf(0.3, 0.7) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn survival_transform_identity() {
        let theta = 2.2;
        let sg = CopulaSpec::new(Family::SurvivalGumbel, theta).unwrap();
        let g = CopulaSpec::new(Family::Gumbel, theta).unwrap();
        for &(u, v) in &[(0.15, 0.4), (0.5, 0.5), (0.8, 0.65)] {
            let want = u + v - 1.0 + g.cdf(1.0 - u, 1.0 - v);
            assert!((sg.cdf(u, v) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_median_symmetry() {
        let spec = CopulaSpec::new(Family::Gaussian, 0.5).unwrap();
        assert!((spec.ccdf(0.5, 0.5) - 0.5).abs() < 1e-12);
        // Density at the median: 1/sqrt(1 - rho^2) = 2/sqrt(3).
        assert!((spec.pdf(0.5, 0.5) - 2.0 / libm::sqrt(3.0)).abs() < 1e-12);
    }

    #[test]
    fn ccdf_is_u_partial_of_cdf() {
        // Central difference on the cdf across a 5x5 interior grid.
        let h = 1e-6;
        for spec in families_with_params() {
            for i in 1..=5 {
                for j in 1..=5 {
                    let u = i as f64 / 6.0;
                    let v = j as f64 / 6.0;
                    let fd = (spec.cdf(u + h, v) - spec.cdf(u - h, v)) / (2.0 * h);
                    let got = spec.ccdf(v, u);
                    let tol = 1e-5 * fd.abs().max(1e-4);
                    assert!(
                        (got - fd).abs() < tol,
                        "{:?} u={u} v={v}: ccdf {got} vs fd {fd}",
                        spec.family
                    );
                }
            }
        }
    }

    #[test]
    fn pdf_is_mixed_partial_of_cdf() {
        let h = 1e-5;
        for spec in families_with_params() {
            for &(u, v) in &[(0.3, 0.3), (0.5, 0.7), (0.75, 0.25)] {
                let fd = (spec.cdf(u + h, v + h) - spec.cdf(u + h, v - h) - spec.cdf(u - h, v + h)
                    + spec.cdf(u - h, v - h))
                    / (4.0 * h * h);
                let got = spec.pdf(u, v);
                assert!(
                    (got - fd).abs() < 1e-4 * got.abs().max(1.0),
                    "{:?} u={u} v={v}: pdf {got} vs fd {fd}",
                    spec.family
                );
            }
        }
    }

    #[test]
    fn pdf_normalizes_on_quadrature_grid() {
        let rule = QuadratureRule::gauss_legendre(25).unwrap();
        for spec in families_with_params() {
            let mut total = 0.0;
            for (&u, &wu) in rule.nodes().iter().zip(rule.weights()) {
                for (&v, &wv) in rule.nodes().iter().zip(rule.weights()) {
                    total += wu * wv * spec.pdf(u, v);
                }
            }
            // Tail-dependent densities carry mass into the grid corners that
            // the 25-point rule misses; the deficit grows with the tail
            // dependence coefficient (~2e-3 at the strongest level in this
            // menu). Families without tail dependence integrate to 1e-4.
            let tol = match spec.family {
                Family::StudentT(_) | Family::Gumbel | Family::SurvivalGumbel => 5e-3,
                _ => 1e-4,
            };
            assert!(
                (total - 1.0).abs() < tol,
                "{:?}: integral {total}",
                spec.family
            );
        }
    }

    #[test]
    fn inv_ccdf_round_trips() {
        for spec in families_with_params() {
            for &(p, u) in &[(0.3, 0.8), (0.05, 0.2), (0.9, 0.5), (0.5, 0.95)] {
                let v = spec.inv_ccdf(p, u).unwrap();
                let back = spec.ccdf(v, u);
                assert!(
                    (back - p).abs() < 1e-10,
                    "{:?} p={p} u={u}: v={v} back={back}",
                    spec.family
                );
            }
        }
        // Gumbel contract case from the module examples.
        let g = CopulaSpec::new(Family::Gumbel, 1.5).unwrap();
        let v = g.inv_ccdf(0.3, 0.8).unwrap();
        assert!((g.ccdf(v, 0.8) - 0.3).abs() < 1e-10);
    }

    #[test]
    fn gaussian_inverse_closed_form_matches_bisection() {
        let spec = CopulaSpec::new(Family::Gaussian, 0.6).unwrap();
        for &(p, u) in &[(0.2, 0.4), (0.77, 0.9), (0.5, 0.1)] {
            let closed = spec.inv_ccdf(p, u).unwrap();
            let iterative = invert_h(|v| spec.ccdf(v, u), p).unwrap();
            assert!((closed - iterative).abs() < 1e-9);
        }
    }

    #[test]
    fn ccdf_dtheta_matches_finite_differences() {
        // Validates the analytic Gaussian/Gumbel branches; FD families are
        // trivially consistent.
        let specs = [
            CopulaSpec::new(Family::Gaussian, 0.3).unwrap(),
            CopulaSpec::new(Family::Gaussian, -0.7).unwrap(),
            CopulaSpec::new(Family::Gumbel, 2.0).unwrap(),
            CopulaSpec::new(Family::Gumbel, 1.2).unwrap(),
            CopulaSpec::new(Family::SurvivalGumbel, 1.7).unwrap(),
        ];
        let h = 1e-6;
        for spec in specs {
            for i in 1..=4 {
                for j in 1..=4 {
                    let u = i as f64 / 5.0;
                    let v = j as f64 / 5.0;
                    let up = CopulaSpec { theta: spec.theta + h, ..spec };
                    let dn = CopulaSpec { theta: spec.theta - h, ..spec };
                    let fd = (up.ccdf(v, u) - dn.ccdf(v, u)) / (2.0 * h);
                    let got = spec.ccdf_dtheta(v, u);
                    assert!(
                        (got - fd).abs() < 1e-5 * fd.abs().max(1e-3),
                        "{:?} theta={} u={u} v={v}: {got} vs {fd}",
                        spec.family,
                        spec.theta
                    );
                }
            }
        }
        // Gaussian reference point from the module contract.
        let spec = CopulaSpec::new(Family::Gaussian, 0.3).unwrap();
        let fd = {
            let up = CopulaSpec { theta: 0.3 + 1e-6, ..spec };
            let dn = CopulaSpec { theta: 0.3 - 1e-6, ..spec };
            (up.ccdf(0.4, 0.4) - dn.ccdf(0.4, 0.4)) / 2e-6
        };
        let got = spec.ccdf_dtheta(0.4, 0.4);
        assert!((got - fd).abs() < 1e-5 * fd.abs());
    }

    #[test]
    fn gumbel_dtheta_at_independence_boundary() {
        // One-sided difference at theta = 1+.
        let spec = CopulaSpec::new(Family::Gumbel, 1.0).unwrap();
        let h = 1e-7;
        let up = CopulaSpec { theta: 1.0 + h, ..spec };
        for &(u, v) in &[(0.3, 0.6), (0.7, 0.2)] {
            let fd = (up.ccdf(v, u) - spec.ccdf(v, u)) / h;
            let got = spec.ccdf_dtheta(v, u);
            assert!(
                (got - fd).abs() < 1e-4 * fd.abs().max(1e-3),
                "u={u} v={v}: {got} vs {fd}"
            );
        }
    }

    #[test]
    fn ccdf_dtheta_vanishes_at_v_one() {
        for spec in families_with_params() {
            let d = spec.ccdf_dtheta(1.0, 0.4);
            assert!(d.abs() < 1e-4, "{:?}: {d}", spec.family);
        }
    }

    #[test]
    fn ccdf_row_matches_pointwise_ccdf() {
        let nodes: alloc::vec::Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let mut row = alloc::vec![0.0; nodes.len()];
        for spec in families_with_params() {
            let cache = spec.cond_cache(&nodes);
            for &v in &[0.05, 0.31, 0.5, 0.87, 0.999] {
                spec.ccdf_row(v, &cache, &mut row);
                for (q, &u) in nodes.iter().enumerate() {
                    let want = spec.ccdf(v, u);
                    assert!(
                        (row[q] - want).abs() < 1e-14,
                        "{:?} v={v} u={u}: {} vs {want}",
                        spec.family,
                        row[q]
                    );
                }
            }
        }
    }

    #[test]
    fn tau_round_trips() {
        let cases = [
            (Family::Gaussian, 0.5),
            (Family::StudentT(5), -0.62),
            (Family::Gumbel, 0.45),
            (Family::SurvivalGumbel, 0.3),
            (Family::Frank, 0.4),
            (Family::Frank, -0.73),
        ];
        for (family, tau) in cases {
            let theta = tau_to_param(family, tau).unwrap();
            let back = param_to_tau(family, theta);
            assert!(
                (back - tau).abs() < 1e-10,
                "{family:?} tau={tau} theta={theta} back={back}"
            );
        }
    }

    #[test]
    fn tau_reference_values() {
        // arcsin(1/2) = pi/6 so tau(0.5) = 1/3 for BVN.
        assert!((param_to_tau(Family::Gaussian, 0.5) - 1.0 / 3.0).abs() < 1e-12);
        // Gumbel tau = 0.5 -> theta = 2.
        assert!((tau_to_param(Family::Gumbel, 0.5).unwrap() - 2.0).abs() < 1e-12);
        // tau = 0 maps to each family's independence parameter.
        assert_eq!(tau_to_param(Family::Gaussian, 0.0).unwrap(), 0.0);
        assert_eq!(tau_to_param(Family::Gumbel, 0.0).unwrap(), 1.0);
        assert_eq!(tau_to_param(Family::Frank, 0.0).unwrap(), 0.0);
        assert!(tau_to_param(Family::Gumbel, -0.2).is_err());
    }

    #[test]
    fn cdf_two_increasing_and_bounded() {
        for spec in families_with_params() {
            for &(u1, u2, v1, v2) in &[(0.2, 0.5, 0.3, 0.8), (0.4, 0.9, 0.1, 0.6)] {
                let mass = spec.cdf(u2, v2) - spec.cdf(u1, v2) - spec.cdf(u2, v1)
                    + spec.cdf(u1, v1);
                assert!(mass >= -1e-9, "{:?}: rectangle mass {mass}", spec.family);
            }
            for &(u, v) in &[(0.25, 0.7), (0.6, 0.6)] {
                let c = spec.cdf(u, v);
                assert!(c >= (u + v - 1.0).max(0.0) - 1e-9 && c <= u.min(v) + 1e-9);
            }
        }
    }

    #[test]
    fn t_copula_cdf_consistent_with_h() {
        // d/du C(u,v) should recover the h-function.
        let spec = CopulaSpec::new(Family::StudentT(5), 0.5).unwrap();
        let h = 2e-5;
        for &(u, v) in &[(0.35, 0.6), (0.6, 0.35), (0.5, 0.5)] {
            let fd = (spec.cdf(u + h, v) - spec.cdf(u - h, v)) / (2.0 * h);
            let got = spec.ccdf(v, u);
            assert!((got - fd).abs() < 2e-5, "u={u} v={v}: {got} vs {fd}");
        }
    }

    #[test]
    fn semicorrelations_reference_table() {
        // BVN at rho = 0.17 gives 0.07 in both tails.
        let bvn = CopulaSpec::new(Family::Gaussian, 0.17).unwrap();
        let (lo, hi) = theoretical_semicorrelations(&bvn).unwrap();
        assert!((lo - 0.07).abs() < 0.01, "bvn lower {lo}");
        assert!((hi - 0.07).abs() < 0.01, "bvn upper {hi}");

        // t5 at rho = 0.17 gives 0.23 in both tails.
        let t5 = CopulaSpec::new(Family::StudentT(5), 0.17).unwrap();
        let (lo, hi) = theoretical_semicorrelations(&t5).unwrap();
        assert!((lo - 0.23).abs() < 0.01, "t5 lower {lo}");
        assert!((hi - 0.23).abs() < 0.01, "t5 upper {hi}");

        // Gumbel matched to rho_N = 0.17 via the tau chain: (0.05, 0.22).
        let tau = param_to_tau(Family::Gaussian, 0.17);
        let gum = CopulaSpec::from_tau(Family::Gumbel, tau).unwrap();
        let (lo, hi) = theoretical_semicorrelations(&gum).unwrap();
        assert!((lo - 0.05).abs() < 0.01, "gumbel lower {lo}");
        assert!((hi - 0.22).abs() < 0.01, "gumbel upper {hi}");

        // Survival Gumbel mirrors it.
        let sg = CopulaSpec::from_tau(Family::SurvivalGumbel, tau).unwrap();
        let (lo, hi) = theoretical_semicorrelations(&sg).unwrap();
        assert!((lo - 0.22).abs() < 0.01, "sgumbel lower {lo}");
        assert!((hi - 0.05).abs() < 0.01, "sgumbel upper {hi}");
    }

    #[test]
    fn reflection_symmetric_families_have_equal_tails() {
        for spec in [
            CopulaSpec::new(Family::Gaussian, 0.42).unwrap(),
            CopulaSpec::new(Family::StudentT(5), 0.42).unwrap(),
            CopulaSpec::from_tau(Family::Frank, param_to_tau(Family::Gaussian, 0.42)).unwrap(),
        ] {
            let (lo, hi) = theoretical_semicorrelations(&spec).unwrap();
            assert!((lo - hi).abs() < 1e-3, "{:?}: {lo} vs {hi}", spec.family);
        }
        let g = CopulaSpec::new(Family::Gumbel, 2.0).unwrap();
        let (lo, hi) = theoretical_semicorrelations(&g).unwrap();
        assert!(lo < hi, "gumbel should have stronger upper tail: {lo} {hi}");
        let sg = CopulaSpec::new(Family::SurvivalGumbel, 2.0).unwrap();
        let (slo, shi) = theoretical_semicorrelations(&sg).unwrap();
        assert!((slo - hi).abs() < 1e-9 && (shi - lo).abs() < 1e-9);
    }
}

/// Safeguarded bisection/Newton-free inversion of a monotone conditional cdf.
///
/// 200 iterations cap the bracket at width 1e-12; non-convergence surfaces as
/// a numerical failure rather than a wrong value.
fn invert_h(h: impl Fn(f64) -> f64, p: f64) -> Result<f64, CopulaError> {
    let mut lo = math::UNIT_EPS;
    let mut hi = 1.0 - math::UNIT_EPS;
    if h(lo) >= p {
        return Ok(lo);
    }
    if h(hi) <= p {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            return Ok(0.5 * (lo + hi));
        }
    }
    if hi - lo < 1e-9 {
        Ok(0.5 * (lo + hi))
    } else {
        Err(CopulaError::NumericalFailure("conditional cdf inversion"))
    }
}
