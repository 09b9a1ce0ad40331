//! Two-step IFM estimation.
//!
//! Step one estimates cutpoints from univariate sample proportions. Step two
//! maximizes the joint log-likelihood over the copula parameters with the
//! cutpoints held fixed, using a BFGS quasi-Newton iteration on an
//! unconstrained reparameterization with central-difference gradients.
//!
//! The likelihood evaluator caches, per parameter state, the conditional band
//! tables and the per-row per-node inner group sums. A proposal that changes
//! a single parameter only touches one group's inner sums, which makes the
//! finite-difference gradient roughly `G` times cheaper than naive
//! re-evaluation.

use crate::copula::{dtau_dtheta, param_to_tau, tau_to_param, CopulaSpec, Family};
use crate::data::{DataError, OrdinalDataset};
use crate::model::{
    fill_band_bifactor, fill_band_conditional, transformed_nodes, Cutpoints, Edge, ModelError,
    ModelSpec, Structure, PMF_FLOOR,
};
use crate::quadrature::QuadratureRule;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Kendall-tau level at which a structurally frozen edge is pinned; an exact
/// comonotonic link is numerically singular, this surrogate is not.
pub const COMONOTONIC_TAU: f64 = 0.95;

/// Family-agnostic starting level for all free dependence parameters.
pub const START_TAU: f64 = 0.3;

/// Infinity-norm cap on one quasi-Newton proposal in the unconstrained
/// coordinates (about 0.9 of tanh headroom per move at the origin).
const MAX_STEP: f64 = 1.5;

/// Bound on unconstrained coordinates. Beyond |z| ~ 7 the tanh and
/// log reparameterizations flatten so hard that finite-difference gradients
/// drown in objective roundoff; the bound keeps boundary-attracted iterates
/// inside the region where the gradient still carries signal (tanh(7) is
/// within 2e-6 of the parameter-space edge).
const Z_BOUND: f64 = 7.0;

/// Relative step for the central-difference gradient in the unconstrained
/// coordinates.
const GRAD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Gradient infinity-norm convergence threshold.
    pub grad_tol: f64,
    /// Relative objective-change convergence threshold.
    pub obj_tol: f64,
    /// Flat starting level used when moment starts are disabled or fail.
    pub start_tau: f64,
    /// Derive starting values from rank correlations (factor-structure
    /// moment matching). Flat starts at `start_tau` sit far from strong
    /// optima and let quasi-Newton iterates wander into boundary basins.
    pub moment_start: bool,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-5,
            obj_tol: 1e-9,
            start_tau: START_TAU,
            moment_start: true,
            compute_se: true,
        }
    }
}

/// One copula family per factor: `x0` governs the links attached to the
/// common (bi-factor) or second-order factor, `groups[g]` the links of group
/// g's items to their group factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyAssignment {
    pub x0: Family,
    pub groups: Vec<Family>,
}

impl FamilyAssignment {
    pub fn uniform(family: Family, n_groups: usize) -> Self {
        Self {
            x0: family,
            groups: vec![family; n_groups],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSe {
    pub edge: Edge,
    pub family: Family,
    pub theta: f64,
    pub tau: f64,
    /// Native-scale standard error; NaN when the Hessian was not positive
    /// definite.
    pub se_theta: f64,
    /// Kendall-tau-scale standard error by the delta method.
    pub se_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub loglik: f64,
    pub aic: f64,
    pub n_free_params: usize,
    pub iterations: usize,
    pub converged: bool,
    pub se: Option<Vec<ParamSe>>,
    /// True when SEs were requested but the observed information matrix was
    /// not positive definite (SEs are NaN sentinels in that case).
    pub se_flagged: bool,
    /// Identifiability warning for groups of one or two items.
    pub small_group_warning: bool,
}

impl FitResult {
    /// Kendall-tau estimate for every free edge, in estimation order.
    pub fn taus(&self) -> Vec<(Edge, f64)> {
        self.spec
            .free_edges()
            .into_iter()
            .map(|e| (e, self.spec.copula_at(e).tau()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateError {
    DegenerateItem { item: usize },
    /// The objective is not finite at the starting point.
    InvalidStart,
    FamilyShape { expected: usize, got: usize },
    Model(ModelError),
    Data(DataError),
}

impl fmt::Display for EstimateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateError::DegenerateItem { item } => {
                write!(f, "item {item} has a single observed category")
            }
            EstimateError::InvalidStart => write!(f, "objective not finite at starting values"),
            EstimateError::FamilyShape { expected, got } => {
                write!(f, "expected {expected} group families, got {got}")
            }
            EstimateError::Model(e) => write!(f, "{e}"),
            EstimateError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EstimateError {}

impl From<ModelError> for EstimateError {
    fn from(e: ModelError) -> Self {
        EstimateError::Model(e)
    }
}

/// Cutpoints from cumulative univariate sample proportions.
///
/// Zero-count interior categories get their cumulative proportion bumped by
/// 1/(2n) so cutpoints stay strictly increasing; a backward pass keeps them
/// strictly below one when top categories are empty.
pub fn estimate_cutpoints(data: &OrdinalDataset) -> Result<Cutpoints, EstimateError> {
    let n = data.n_rows() as f64;
    let eps = 1.0 / (2.0 * n);
    let mut per_item = Vec::with_capacity(data.n_items());
    for item in 0..data.n_items() {
        let counts = data.counts(item);
        if counts.iter().filter(|&&c| c > 0).count() < 2 {
            return Err(EstimateError::DegenerateItem { item });
        }
        let k = counts.len();
        let mut cuts = Vec::with_capacity(k - 1);
        let mut cum = 0usize;
        for &c in counts.iter().take(k - 1) {
            cum += c;
            cuts.push(cum as f64 / n);
        }
        let mut prev = 0.0;
        for a in cuts.iter_mut() {
            if *a <= prev {
                *a = prev + eps;
            }
            prev = *a;
        }
        let mut upper = 1.0;
        for a in cuts.iter_mut().rev() {
            if *a >= upper {
                *a = upper - eps;
            }
            upper = *a;
        }
        if cuts[0] <= 0.0 {
            return Err(EstimateError::DegenerateItem { item });
        }
        per_item.push(cuts);
    }
    Ok(Cutpoints::new(per_item)?)
}

/// Spec at flat starting values: estimated cutpoints, every free edge at
/// `start_tau`, structurally frozen edges at their conventions (independence
/// for absorbed links, the comonotonicity surrogate for pinned ones).
pub fn initial_spec(
    data: &OrdinalDataset,
    structure: Structure,
    families: &FamilyAssignment,
    start_tau: f64,
) -> Result<ModelSpec, EstimateError> {
    let d = data.n_items();
    let n_delta = match structure {
        Structure::BiFactor => d,
        Structure::SecondOrder => data.groups().n_groups(),
    };
    spec_with_start_taus(
        data,
        structure,
        families,
        &vec![start_tau; d],
        &vec![start_tau; n_delta],
    )
}

/// Spec with per-edge starting taus (theta by item, delta by item or group).
pub fn spec_with_start_taus(
    data: &OrdinalDataset,
    structure: Structure,
    families: &FamilyAssignment,
    theta_taus: &[f64],
    delta_taus: &[f64],
) -> Result<ModelSpec, EstimateError> {
    let groups = data.groups().clone();
    let g_count = groups.n_groups();
    if families.groups.len() != g_count {
        return Err(EstimateError::FamilyShape {
            expected: g_count,
            got: families.groups.len(),
        });
    }
    let cutpoints = estimate_cutpoints(data)?;
    let at_tau = |fam: Family, tau: f64| -> Result<CopulaSpec, EstimateError> {
        if !fam.has_parameter() {
            return Ok(CopulaSpec::independence());
        }
        // Families restricted to positive dependence get a small positive
        // floor when a start tau falls outside their range.
        let tau = match fam {
            Family::Gumbel | Family::SurvivalGumbel if tau < 0.02 => 0.02,
            _ => tau.clamp(-0.95, 0.95),
        };
        let theta = tau_to_param(fam, tau).map_err(|_| EstimateError::InvalidStart)?;
        CopulaSpec::new(fam, theta).map_err(|_| EstimateError::InvalidStart)
    };

    let d = groups.total_items();
    if theta_taus.len() != d {
        return Err(EstimateError::FamilyShape { expected: d, got: theta_taus.len() });
    }
    let mut common = Vec::with_capacity(d);
    for g in 0..g_count {
        let fam = match structure {
            Structure::BiFactor => families.x0,
            Structure::SecondOrder => families.groups[g],
        };
        for j in groups.items_of(g) {
            common.push(at_tau(fam, theta_taus[j])?);
        }
    }
    let group_links = match structure {
        Structure::BiFactor => {
            if delta_taus.len() != d {
                return Err(EstimateError::FamilyShape { expected: d, got: delta_taus.len() });
            }
            let mut links = Vec::with_capacity(d);
            for g in 0..g_count {
                let fam = families.groups[g];
                let size = groups.sizes()[g];
                for (pos, j) in groups.items_of(g).enumerate() {
                    if size == 1 {
                        links.push(CopulaSpec::independence());
                    } else if size == 2 && pos == 1 {
                        links.push(at_tau(fam, COMONOTONIC_TAU)?);
                    } else {
                        links.push(at_tau(fam, delta_taus[j])?);
                    }
                }
            }
            links
        }
        Structure::SecondOrder => {
            if delta_taus.len() != g_count {
                return Err(EstimateError::FamilyShape {
                    expected: g_count,
                    got: delta_taus.len(),
                });
            }
            let mut links = Vec::with_capacity(g_count);
            for g in 0..g_count {
                let tau = if groups.sizes()[g] == 1 {
                    COMONOTONIC_TAU
                } else {
                    delta_taus[g]
                };
                links.push(at_tau(families.x0, tau)?);
            }
            links
        }
    };
    Ok(ModelSpec::new(
        structure,
        groups,
        cutpoints,
        common,
        group_links,
    )?)
}

// ---------------------------------------------------------------------------
// Moment-based starting values
// ---------------------------------------------------------------------------

/// Latent-scale starting taus per theta edge (by item) and per delta edge
/// (by item for bi-factor, by group for second-order), from Spearman rank
/// correlations pushed to the normal scale and matched to the factor
/// correlation structure.
fn moment_start_taus(
    data: &OrdinalDataset,
    structure: Structure,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = data.n_items();
    let groups = data.groups();
    let g_count = groups.n_groups();
    if d < 2 {
        return None;
    }
    // Pairwise latent-normal correlations approximated by 2 sin(pi rho_S / 6).
    let mut rho = vec![0.0; d * d];
    for a in 0..d {
        for b in (a + 1)..d {
            let r_s = spearman_from_table(&data.pair_table(a, b))?;
            let r = (2.0 * libm::sin(core::f64::consts::PI * r_s / 6.0)).clamp(-0.95, 0.95);
            rho[a * d + b] = r;
            rho[b * d + a] = r;
        }
    }
    let cross_mean = |j: usize| -> f64 {
        let g = groups.group_of(j);
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for k in 0..d {
            if k != j && groups.group_of(k) != g {
                acc += rho[j * d + k];
                cnt += 1;
            }
        }
        if cnt == 0 { 0.0 } else { acc / cnt as f64 }
    };
    let within_mean = |j: usize| -> f64 {
        let g = groups.group_of(j);
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for k in groups.items_of(g) {
            if k != j {
                acc += rho[j * d + k];
                cnt += 1;
            }
        }
        if cnt == 0 { 0.0 } else { acc / cnt as f64 }
    };
    let clip = |x: f64| x.clamp(0.05, 0.9);
    let to_tau = |loading: f64| param_to_tau(crate::copula::Family::Gaussian, loading);

    match structure {
        Structure::BiFactor => {
            // Cross-group correlations factor as theta_j * theta_k.
            let t: Vec<f64> = (0..d).map(cross_mean).collect();
            let grand = (t.iter().sum::<f64>() / d as f64).max(1e-3);
            let theta: Vec<f64> = t
                .iter()
                .map(|&tj| clip(tj.max(0.0) / libm::sqrt(grand)))
                .collect();
            // Within-group residual theta_j theta_k + gamma_j gamma_k.
            let mut delta = vec![0.0; d];
            for g in 0..g_count {
                let items: Vec<usize> = groups.items_of(g).collect();
                let resid: Vec<f64> = items
                    .iter()
                    .map(|&j| {
                        let w = within_mean(j);
                        let t_part: f64 = items
                            .iter()
                            .filter(|&&k| k != j)
                            .map(|&k| theta[j] * theta[k])
                            .sum::<f64>()
                            / (items.len().max(2) - 1) as f64;
                        (w - t_part).max(0.0)
                    })
                    .collect();
                let grand_g = (resid.iter().sum::<f64>() / resid.len() as f64).max(1e-3);
                for (pos, &j) in items.iter().enumerate() {
                    let gamma = clip(resid[pos] / libm::sqrt(grand_g));
                    let denom = libm::sqrt((1.0 - theta[j] * theta[j]).max(1e-6));
                    delta[j] = clip(gamma / denom);
                }
            }
            Some((
                theta.iter().map(|&x| to_tau(x)).collect(),
                delta.iter().map(|&x| to_tau(x)).collect(),
            ))
        }
        Structure::SecondOrder => {
            // Items load on the group factor directly.
            let w: Vec<f64> = (0..d).map(within_mean).collect();
            let mut theta = vec![0.0; d];
            let mut theta_bar = vec![0.0; g_count];
            for g in 0..g_count {
                let items: Vec<usize> = groups.items_of(g).collect();
                let grand =
                    (items.iter().map(|&j| w[j]).sum::<f64>() / items.len() as f64).max(1e-3);
                for &j in &items {
                    theta[j] = clip(w[j].max(0.0) / libm::sqrt(grand));
                }
                theta_bar[g] =
                    items.iter().map(|&j| theta[j]).sum::<f64>() / items.len() as f64;
            }
            // Cross-block correlations factor as (theta_g delta_g)(theta_h delta_h).
            let mut block = vec![0.0; g_count * g_count];
            for g in 0..g_count {
                for h in (g + 1)..g_count {
                    let mut acc = 0.0;
                    let mut cnt = 0usize;
                    for j in groups.items_of(g) {
                        for k in groups.items_of(h) {
                            acc += rho[j * d + k];
                            cnt += 1;
                        }
                    }
                    let v = if cnt == 0 { 0.0 } else { acc / cnt as f64 };
                    block[g * g_count + h] = v;
                    block[h * g_count + g] = v;
                }
            }
            let mut delta = vec![START_TAU; g_count];
            if g_count >= 2 {
                let mut all = 0.0;
                let mut cnt = 0usize;
                for g in 0..g_count {
                    for h in (g + 1)..g_count {
                        all += block[g * g_count + h].max(0.0);
                        cnt += 1;
                    }
                }
                let c_bar = libm::sqrt((all / cnt as f64).max(1e-3));
                for g in 0..g_count {
                    let mean_g = (0..g_count)
                        .filter(|&h| h != g)
                        .map(|h| block[g * g_count + h].max(0.0))
                        .sum::<f64>()
                        / (g_count - 1) as f64;
                    let c_g = mean_g / c_bar;
                    delta[g] = to_tau(clip(c_g / theta_bar[g].max(0.05)));
                }
            }
            Some((theta.iter().map(|&x| to_tau(x)).collect(), delta))
        }
    }
}

/// Spearman rank correlation from a two-way contingency table (ties get
/// average ranks).
fn spearman_from_table(table: &[Vec<usize>]) -> Option<f64> {
    let n: usize = table.iter().map(|r| r.iter().sum::<usize>()).sum();
    if n < 3 {
        return None;
    }
    let ncols = table[0].len();
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> =
        (0..ncols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let ranks = |sums: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(sums.len());
        let mut below = 0usize;
        for &s in sums {
            out.push(below as f64 + (s as f64 + 1.0) / 2.0);
            below += s;
        }
        out
    };
    let ra = ranks(&row_sums);
    let rb = ranks(&col_sums);
    let mean = (n as f64 + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (i, row) in table.iter().enumerate() {
        var_a += row_sums[i] as f64 * (ra[i] - mean) * (ra[i] - mean);
        for (j, &count) in row.iter().enumerate() {
            cov += count as f64 * (ra[i] - mean) * (rb[j] - mean);
        }
    }
    for (j, &s) in col_sums.iter().enumerate() {
        var_b += s as f64 * (rb[j] - mean) * (rb[j] - mean);
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return None;
    }
    Some(cov / libm::sqrt(var_a * var_b))
}

// ---------------------------------------------------------------------------
// Unconstrained reparameterization
// ---------------------------------------------------------------------------

/// Frank parameters this close to zero are nudged out of the removable
/// singularity of the cdf.
const FRANK_BAND: f64 = 1e-6;

pub(crate) fn to_unconstrained(family: Family, theta: f64) -> f64 {
    match family {
        Family::Gaussian | Family::StudentT(_) => {
            0.5 * libm::log((1.0 + theta) / (1.0 - theta))
        }
        Family::Gumbel | Family::SurvivalGumbel => libm::log(theta - 1.0),
        Family::Frank => theta,
        Family::Independence => 0.0,
    }
}

pub(crate) fn to_native(family: Family, z: f64) -> f64 {
    match family {
        Family::Gaussian | Family::StudentT(_) => libm::tanh(z.clamp(-Z_BOUND, Z_BOUND)),
        Family::Gumbel | Family::SurvivalGumbel => 1.0 + libm::exp(z.clamp(-700.0, Z_BOUND)),
        Family::Frank => {
            let z = z.clamp(-40.0, 40.0);
            if z.abs() < FRANK_BAND {
                if z >= 0.0 {
                    FRANK_BAND
                } else {
                    -FRANK_BAND
                }
            } else {
                z
            }
        }
        Family::Independence => 0.0,
    }
}

// ---------------------------------------------------------------------------
// Incremental likelihood evaluator
// ---------------------------------------------------------------------------

struct Evaluator<'a> {
    spec: ModelSpec,
    data: &'a OrdinalDataset,
    rule: &'a QuadratureRule,
    free: Vec<Edge>,
    nq: usize,
    kmax: usize,
    g_count: usize,
    // Committed state for the current spec parameters.
    bands: Vec<f64>,  // d * kmax * nq * nq
    cond: Vec<f64>,   // second-order: G * nq * nq transformed nodes
    inner: Vec<f64>,  // n * nq * G, layout (row * nq + q1) * G + g
    loglik: f64,
    // Scratch for proposals.
    bands_try: Vec<f64>,
    cond_try: Vec<f64>,
    inner_try: Vec<f64>, // n * nq * G (only touched groups are used)
    touched: Vec<bool>,  // per group
    rebuild_items: Vec<Vec<usize>>,
}

impl<'a> Evaluator<'a> {
    fn new(
        spec: ModelSpec,
        data: &'a OrdinalDataset,
        rule: &'a QuadratureRule,
    ) -> Result<Self, ModelError> {
        spec.check_data(data)?;
        let d = spec.n_items();
        let nq = rule.len();
        let kmax = (0..d).map(|j| spec.cutpoints.k(j)).max().unwrap_or(2);
        let g_count = spec.groups.n_groups();
        let n = data.n_rows();
        let free = spec.free_edges();
        let mut ev = Self {
            spec,
            data,
            rule,
            free,
            nq,
            kmax,
            g_count,
            bands: vec![0.0; d * kmax * nq * nq],
            cond: vec![0.0; g_count * nq * nq],
            inner: vec![0.0; n * nq * g_count],
            loglik: 0.0,
            bands_try: vec![0.0; d * kmax * nq * nq],
            cond_try: vec![0.0; g_count * nq * nq],
            inner_try: vec![0.0; n * nq * g_count],
            touched: vec![false; g_count],
            rebuild_items: vec![Vec::new(); g_count],
        };
        ev.rebuild_all()?;
        Ok(ev)
    }

    #[cfg(test)]
    fn n_free(&self) -> usize {
        self.free.len()
    }

    fn natives(&self) -> Vec<f64> {
        self.free
            .iter()
            .map(|&e| self.spec.copula_at(e).theta)
            .collect()
    }

    fn fill_item_band(
        out: &mut [f64],
        spec: &ModelSpec,
        rule: &QuadratureRule,
        cond: &[f64],
        nq: usize,
        j: usize,
        theta_over: Option<&CopulaSpec>,
        delta_over: Option<&CopulaSpec>,
    ) {
        let theta = theta_over.unwrap_or(&spec.common_links[j]);
        match spec.structure {
            Structure::BiFactor => {
                let delta = delta_over.unwrap_or(&spec.group_links[j]);
                fill_band_bifactor(out, spec.cutpoints.interior(j), theta, delta, rule);
            }
            Structure::SecondOrder => {
                fill_band_conditional(out, spec.cutpoints.interior(j), theta, cond, nq);
            }
        }
    }

    fn rebuild_all(&mut self) -> Result<(), ModelError> {
        let (nq, kmax) = (self.nq, self.kmax);
        for g in 0..self.g_count {
            let cond_slice = &mut self.cond[g * nq * nq..(g + 1) * nq * nq];
            if self.spec.structure == Structure::SecondOrder {
                transformed_nodes(&self.spec.group_links[g], self.rule, cond_slice)?;
            }
            for j in self.spec.groups.items_of(g) {
                let out = &mut self.bands[j * kmax * nq * nq..(j + 1) * kmax * nq * nq];
                Self::fill_item_band(
                    out, &self.spec, self.rule, cond_slice, nq, j, None, None,
                );
            }
        }
        for g in 0..self.g_count {
            Self::fill_inner_group(
                &mut self.inner,
                &self.bands,
                self.data,
                &self.spec,
                self.rule,
                g,
                self.g_count,
                kmax,
            );
        }
        self.loglik = self.loglik_mixed(None);
        Ok(())
    }

    /// Inner sums I_g(row, q1) = sum_q2 w_q2 prod_{j in g} band_j(y_j, q1, q2),
    /// written into `inner` at stride `g_count`.
    #[allow(clippy::too_many_arguments)]
    fn fill_inner_group(
        inner: &mut [f64],
        bands: &[f64],
        data: &OrdinalDataset,
        spec: &ModelSpec,
        rule: &QuadratureRule,
        g: usize,
        g_count: usize,
        kmax: usize,
    ) {
        let nq = rule.len();
        let weights = rule.weights();
        let items = spec.groups.items_of(g);
        let mut prod = vec![0.0f64; nq];
        for (row_idx, row) in data.rows().enumerate() {
            for q1 in 0..nq {
                prod.copy_from_slice(weights);
                for j in items.clone() {
                    let y = row[j] as usize;
                    let base = ((j * kmax + y) * nq + q1) * nq;
                    let band_row = &bands[base..base + nq];
                    for (p, &b) in prod.iter_mut().zip(band_row) {
                        *p *= b;
                    }
                }
                inner[(row_idx * nq + q1) * g_count + g] = prod.iter().sum();
            }
        }
    }

    /// Log-likelihood from committed inner sums, substituting scratch sums
    /// for the groups flagged in `self.touched` when `use_try` is set.
    fn loglik_mixed(&self, use_try: Option<()>) -> f64 {
        let nq = self.nq;
        let g_count = self.g_count;
        let weights = self.rule.weights();
        let mut ll = 0.0;
        for row_idx in 0..self.data.n_rows() {
            let mut p = 0.0;
            for (q1, &w1) in weights.iter().enumerate() {
                let base = (row_idx * nq + q1) * g_count;
                let mut prod = w1;
                for g in 0..g_count {
                    let v = if use_try.is_some() && self.touched[g] {
                        self.inner_try[base + g]
                    } else {
                        self.inner[base + g]
                    };
                    prod *= v;
                }
                p += prod;
            }
            ll += libm::log(p.max(PMF_FLOOR));
        }
        ll
    }

    /// Log-likelihood at the committed parameters with `changes` applied
    /// (free-edge index, native value). Committed caches are left untouched.
    fn eval_changes(&mut self, changes: &[(usize, f64)]) -> Result<f64, ModelError> {
        let (nq, kmax) = (self.nq, self.kmax);
        self.touched.iter_mut().for_each(|t| *t = false);
        for items in self.rebuild_items.iter_mut() {
            items.clear();
        }
        let mut group_delta_change: Vec<Option<CopulaSpec>> = vec![None; self.g_count];
        let mut item_overrides: Vec<(usize, Option<CopulaSpec>, Option<CopulaSpec>)> = Vec::new();

        for &(idx, value) in changes {
            let edge = self.free[idx];
            match edge {
                Edge::Theta(j) => {
                    let fam = self.spec.common_links[j].family;
                    let over = CopulaSpec { family: fam, theta: value };
                    let g = self.spec.groups.group_of(j);
                    self.touched[g] = true;
                    item_overrides.push((j, Some(over), None));
                }
                Edge::DeltaItem(j) => {
                    let fam = self.spec.group_links[j].family;
                    let over = CopulaSpec { family: fam, theta: value };
                    let g = self.spec.groups.group_of(j);
                    self.touched[g] = true;
                    item_overrides.push((j, None, Some(over)));
                }
                Edge::DeltaGroup(g) => {
                    let fam = self.spec.group_links[g].family;
                    self.touched[g] = true;
                    group_delta_change[g] = Some(CopulaSpec { family: fam, theta: value });
                }
            }
        }

        for g in 0..self.g_count {
            if !self.touched[g] {
                continue;
            }
            let cond_src: &[f64] = if let Some(new_delta) = &group_delta_change[g] {
                let cond_slice = &mut self.cond_try[g * nq * nq..(g + 1) * nq * nq];
                transformed_nodes(new_delta, self.rule, cond_slice)?;
                // All bands of the group move with the transformed nodes.
                for j in self.spec.groups.items_of(g) {
                    self.rebuild_items[g].push(j);
                }
                &self.cond_try[g * nq * nq..(g + 1) * nq * nq]
            } else {
                for &(j, _, _) in &item_overrides {
                    if self.spec.groups.group_of(j) == g {
                        self.rebuild_items[g].push(j);
                    }
                }
                &self.cond[g * nq * nq..(g + 1) * nq * nq]
            };
            // Copy untouched bands of the group, rebuild the changed ones.
            for j in self.spec.groups.items_of(g) {
                let range = j * kmax * nq * nq..(j + 1) * kmax * nq * nq;
                if self.rebuild_items[g].contains(&j) {
                    let theta_over = item_overrides
                        .iter()
                        .find(|&&(jj, ref t, _)| jj == j && t.is_some())
                        .and_then(|(_, t, _)| t.as_ref());
                    let delta_over = item_overrides
                        .iter()
                        .find(|&&(jj, _, ref d)| jj == j && d.is_some())
                        .and_then(|(_, _, d)| d.as_ref());
                    let (head, tail) = self.bands_try.split_at_mut(range.start);
                    let _ = head;
                    let out = &mut tail[..kmax * nq * nq];
                    Self::fill_item_band(
                        out,
                        &self.spec,
                        self.rule,
                        cond_src,
                        nq,
                        j,
                        theta_over,
                        delta_over,
                    );
                } else {
                    let (src, dst) = (&self.bands[range.clone()], range);
                    self.bands_try[dst].copy_from_slice(src);
                }
            }
            Self::fill_inner_group(
                &mut self.inner_try,
                &self.bands_try,
                self.data,
                &self.spec,
                self.rule,
                g,
                self.g_count,
                kmax,
            );
        }
        Ok(self.loglik_mixed(Some(())))
    }

    /// Commits a full parameter vector (native scale) and returns the
    /// log-likelihood.
    fn set_params(&mut self, natives: &[f64]) -> Result<f64, ModelError> {
        debug_assert_eq!(natives.len(), self.free.len());
        for (idx, &value) in natives.iter().enumerate() {
            let edge = self.free[idx];
            self.spec.copula_at_mut(edge).theta = value;
        }
        self.rebuild_all()?;
        Ok(self.loglik)
    }
}

// ---------------------------------------------------------------------------
// BFGS driver
// ---------------------------------------------------------------------------

struct OptimOutcome {
    iterations: usize,
    converged: bool,
}

fn optimize(
    ev: &mut Evaluator<'_>,
    families: &[Family],
    z: &mut [f64],
    opts: &FitOptions,
) -> Result<OptimOutcome, EstimateError> {
    let q = z.len();
    let natives = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .zip(families)
            .map(|(&zi, &fam)| to_native(fam, zi))
            .collect()
    };
    let mut f = -ev.set_params(&natives(z)).map_err(EstimateError::Model)?;
    if !f.is_finite() {
        return Err(EstimateError::InvalidStart);
    }

    // Central-difference gradient of the negative log-likelihood in the
    // unconstrained coordinates, via single-parameter partial evaluations.
    let grad = |ev: &mut Evaluator<'_>, z: &[f64]| -> Result<Vec<f64>, EstimateError> {
        let mut g = vec![0.0; q];
        for i in 0..q {
            let h = GRAD_STEP * z[i].abs().max(1.0);
            let up = to_native(families[i], z[i] + h);
            let dn = to_native(families[i], z[i] - h);
            let f_up = ev.eval_changes(&[(i, up)]).map_err(EstimateError::Model)?;
            let f_dn = ev.eval_changes(&[(i, dn)]).map_err(EstimateError::Model)?;
            g[i] = -(f_up - f_dn) / (2.0 * h);
        }
        Ok(g)
    };

    let mut g = grad(ev, z)?;
    let mut h_inv = vec![0.0; q * q];
    for i in 0..q {
        h_inv[i * q + i] = 1.0;
    }
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let g_norm = g.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if g_norm < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = vec![0.0; q];
        for i in 0..q {
            let mut s = 0.0;
            for j in 0..q {
                s += h_inv[i * q + j] * g[j];
            }
            dir[i] = -s;
        }
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // Reset to steepest descent if the approximation lost curvature.
            for i in 0..q {
                for j in 0..q {
                    h_inv[i * q + j] = if i == j { 1.0 } else { 0.0 };
                }
                dir[i] = -g[i];
            }
            slope = -g.iter().map(|x| x * x).sum::<f64>();
        }
        // Cap the proposal in the unconstrained coordinates: curvature
        // estimates go flat toward the parameter-space boundary and an
        // uncapped quasi-Newton leap can strand an iterate there.
        let dir_max = dir.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if dir_max > MAX_STEP {
            let scale = MAX_STEP / dir_max;
            for d in dir.iter_mut() {
                *d *= scale;
            }
            slope *= scale;
        }

        // Backtracking line search with an Armijo decrease condition.
        let mut step = 1.0;
        let mut accepted = false;
        let mut z_new = vec![0.0; q];
        let mut f_new = f;
        for _ in 0..50 {
            for i in 0..q {
                z_new[i] = z[i] + step * dir[i];
            }
            match ev.eval_changes(
                &z_new
                    .iter()
                    .enumerate()
                    .map(|(i, &zi)| (i, to_native(families[i], zi)))
                    .collect::<Vec<_>>(),
            ) {
                Ok(ll) => {
                    let f_try = -ll;
                    if f_try.is_finite() && f_try <= f + 1e-4 * step * slope {
                        f_new = f_try;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }

        let f_old = f;
        ev.set_params(&natives(&z_new)).map_err(EstimateError::Model)?;
        f = f_new;
        let g_new = grad(ev, &z_new)?;

        // Inverse-Hessian BFGS update.
        let s: Vec<f64> = z_new.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm: f64 = libm::sqrt(s.iter().map(|x| x * x).sum());
        let y_norm: f64 = libm::sqrt(y.iter().map(|x| x * x).sum());
        if sy > 1e-10 * s_norm * y_norm {
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; q];
            for i in 0..q {
                let mut acc = 0.0;
                for j in 0..q {
                    acc += h_inv[i * q + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..q {
                for j in 0..q {
                    h_inv[i * q + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        z.copy_from_slice(&z_new);
        g = g_new;

        if (f_old - f).abs() < opts.obj_tol * f_old.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(OptimOutcome {
        iterations,
        converged,
    })
}

/// Two-step IFM fit: cutpoints by sample proportions, then quasi-Newton
/// maximization of the copula-parameter log-likelihood.
pub fn fit(
    data: &OrdinalDataset,
    structure: Structure,
    families: &FamilyAssignment,
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<FitResult, EstimateError> {
    let spec0 = if opts.moment_start {
        match moment_start_taus(data, structure) {
            Some((theta_taus, delta_taus)) => {
                spec_with_start_taus(data, structure, families, &theta_taus, &delta_taus)?
            }
            None => initial_spec(data, structure, families, opts.start_tau)?,
        }
    } else {
        initial_spec(data, structure, families, opts.start_tau)?
    };
    let small_group_warning = spec0.groups.has_small_groups();
    let free = spec0.free_edges();
    let edge_families: Vec<Family> = free.iter().map(|&e| spec0.copula_at(e).family).collect();

    if free.is_empty() {
        let loglik = spec0.loglik(data, rule)?;
        return Ok(FitResult {
            aic: -2.0 * loglik,
            spec: spec0,
            loglik,
            n_free_params: 0,
            iterations: 0,
            converged: true,
            se: Some(Vec::new()),
            se_flagged: false,
            small_group_warning,
        });
    }

    let mut ev = Evaluator::new(spec0, data, rule)?;
    let mut z: Vec<f64> = ev
        .natives()
        .iter()
        .zip(&edge_families)
        .map(|(&th, &fam)| to_unconstrained(fam, th))
        .collect();
    let outcome = optimize(&mut ev, &edge_families, &mut z, opts)?;
    let loglik = ev.loglik;
    let n_free = free.len();
    let spec = ev.spec.clone();
    drop(ev);

    let (se, se_flagged) = if opts.compute_se {
        let table = standard_errors(&spec, data, rule)?;
        (Some(table.params), table.flagged)
    } else {
        (None, false)
    };

    Ok(FitResult {
        aic: -2.0 * loglik + 2.0 * n_free as f64,
        spec,
        loglik,
        n_free_params: n_free,
        iterations: outcome.iterations,
        converged: outcome.converged,
        se,
        se_flagged,
        small_group_warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeResult {
    pub params: Vec<ParamSe>,
    /// Set when the observed information was not positive definite.
    pub flagged: bool,
}

/// Standard errors from the inverse negative numerical Hessian of the
/// step-two log-likelihood at the fitted parameters, propagated to the tau
/// scale by the delta method. Frozen edges carry no entry.
pub fn standard_errors(
    spec: &ModelSpec,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<SeResult, EstimateError> {
    use crate::linalg::{sym_eigen, sym_inverse, Mat};

    let free = spec.free_edges();
    let q = free.len();
    if q == 0 {
        return Ok(SeResult {
            params: Vec::new(),
            flagged: false,
        });
    }
    let mut ev = Evaluator::new(spec.clone(), data, rule)?;
    let f0 = ev.loglik;
    let thetas = ev.natives();
    let steps: Vec<f64> = free
        .iter()
        .zip(&thetas)
        .map(|(&e, &th)| {
            let base = 1e-4 * th.abs().max(1.0);
            let fam = spec.copula_at(e).family;
            let slack = match fam {
                Family::Gaussian | Family::StudentT(_) => (1.0 - th.abs()) * 0.25,
                Family::Gumbel | Family::SurvivalGumbel => ((th - 1.0) * 0.25).max(1e-9),
                _ => base,
            };
            base.min(slack.max(1e-9))
        })
        .collect();

    let mut hess = Mat::zeros(q, q);
    for i in 0..q {
        let hi = steps[i];
        let f_up = ev
            .eval_changes(&[(i, thetas[i] + hi)])
            .map_err(EstimateError::Model)?;
        let f_dn = ev
            .eval_changes(&[(i, thetas[i] - hi)])
            .map_err(EstimateError::Model)?;
        hess[(i, i)] = (f_up - 2.0 * f0 + f_dn) / (hi * hi);
        for j in (i + 1)..q {
            let hj = steps[j];
            let f_pp = ev
                .eval_changes(&[(i, thetas[i] + hi), (j, thetas[j] + hj)])
                .map_err(EstimateError::Model)?;
            let f_pm = ev
                .eval_changes(&[(i, thetas[i] + hi), (j, thetas[j] - hj)])
                .map_err(EstimateError::Model)?;
            let f_mp = ev
                .eval_changes(&[(i, thetas[i] - hi), (j, thetas[j] + hj)])
                .map_err(EstimateError::Model)?;
            let f_mm = ev
                .eval_changes(&[(i, thetas[i] - hi), (j, thetas[j] - hj)])
                .map_err(EstimateError::Model)?;
            let v = (f_pp - f_pm - f_mp + f_mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    // Observed information = negative Hessian of the log-likelihood.
    let mut info = Mat::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            info[(i, j)] = -hess[(i, j)];
        }
    }
    let (evals, _) = sym_eigen(&info);
    let flagged = evals.last().map(|&l| l <= 0.0).unwrap_or(true);
    let inv = if flagged {
        None
    } else {
        Some(sym_inverse(&info, 1e-14).0)
    };

    let params = free
        .iter()
        .enumerate()
        .map(|(i, &edge)| {
            let cop = spec.copula_at(edge);
            let se_theta = match &inv {
                Some(m) if m[(i, i)] > 0.0 => libm::sqrt(m[(i, i)]),
                _ => f64::NAN,
            };
            let dtau = dtau_dtheta(cop.family, cop.theta).abs();
            ParamSe {
                edge,
                family: cop.family,
                theta: cop.theta,
                tau: param_to_tau(cop.family, cop.theta),
                se_theta,
                se_tau: dtau * se_theta,
            }
        })
        .collect();
    Ok(SeResult { params, flagged })
}
