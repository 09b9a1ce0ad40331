//! Gauss-Legendre quadrature on the unit interval.
//!
//! All model integrals run over latent variables that are uniform on (0,1),
//! so rules are stored already transformed: nodes in (0,1) and weights
//! summing to one. Nodes come from Newton iterations on the Legendre
//! polynomial recurrence; only half the roots are solved and the rest are
//! mirrored, which keeps the rule symmetric to the last bit.

use alloc::vec::Vec;
use core::fmt;

/// Default number of quadrature points used across the crate; 25 points give
/// good precision for every pmf in scope while keeping likelihood sweeps cheap.
pub const DEFAULT_NQ: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuadratureError {
    /// Fewer than two points cannot carry the model integrands.
    TooFewPoints(usize),
}

impl fmt::Display for QuadratureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuadratureError::TooFewPoints(nq) => {
                write!(f, "gauss-legendre rule needs nq >= 2, got {nq}")
            }
        }
    }
}

impl core::error::Error for QuadratureError {}

impl QuadratureRule {
    /// Gauss-Legendre rule with `nq` points on (0,1).
    ///
    /// Exact for polynomials up to degree 2*nq - 1. Deterministic: the same
    /// `nq` always yields bit-identical nodes and weights.
    pub fn gauss_legendre(nq: usize) -> Result<Self, QuadratureError> {
        if nq < 2 {
            return Err(QuadratureError::TooFewPoints(nq));
        }
        let n = nq;
        let mut nodes = alloc::vec![0.0; n];
        let mut weights = alloc::vec![0.0; n];
        let half = (n + 1) / 2;
        for i in 0..half {
            // Root of P_n in (-1,1), counted from the upper end.
            let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // Map [-1,1] -> (0,1); the mirrored pair keeps symmetry exact.
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.5;
        }
        Ok(Self { nodes, weights })
    }

    /// Rule with the crate-wide default of 25 points.
    pub fn default_rule() -> Self {
        Self::gauss_legendre(DEFAULT_NQ).expect("default rule is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over (0,1).
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::default_rule()
    }
}

/// Value and derivative of the Legendre polynomial P_n at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
