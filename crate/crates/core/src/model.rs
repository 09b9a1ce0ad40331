//! Joint pmf, margins and log-likelihood for the bi-factor and second-order
//! copula models.
//!
//! Both structures reduce to a one-dimensional outer integral over the common
//! (or second-order) factor of a product of one-dimensional inner integrals,
//! one per group. Evaluation therefore runs as a double sum over a
//! Gauss-Legendre rule:
//!
//! - Bi-factor: the inner integrand for item j in group g is the conditional
//!   band `C_{Y|Xg;X0}(C_{Y|X0}(a_{y+1}|x_q1)|x_q2) - <same at a_y>`.
//! - Second-order: the inner nodes are first pushed through the inverse
//!   conditional cdf of the group-to-top link, `x_{q2|q1} = C^{-1}(x_q2|x_q1)`,
//!   turning the raw grid into dependent quadrature points; bands are then
//!   plain conditional bands given the transformed node.
//!
//! Per-spec band tables are computed once per parameter value and shared
//! across rows, which turns a likelihood sweep into table lookups.

use crate::copula::{CopulaError, CopulaSpec};
use crate::data::OrdinalDataset;
use crate::math::norm_quantile;
use crate::quadrature::QuadratureRule;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Floor applied to pmf values before taking logs; extreme parameter
/// proposals during optimization must not produce non-finite objectives.
pub const PMF_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    BiFactor,
    SecondOrder,
}

impl Structure {
    pub fn tag(&self) -> &'static str {
        match self {
            Structure::BiFactor => "bifactor",
            Structure::SecondOrder => "secondorder",
        }
    }

    pub fn parse_tag(s: &str) -> Option<Structure> {
        match s {
            "bifactor" | "bi-factor" => Some(Structure::BiFactor),
            "secondorder" | "second-order" => Some(Structure::SecondOrder),
            _ => None,
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    EmptyGroups,
    BadGroupSize { group: usize },
    ShapeMismatch(&'static str),
    InvalidCutpoints { item: usize },
    DuplicateItems,
    Copula(CopulaError),
    DataMismatch(&'static str),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::EmptyGroups => write!(f, "at least one group is required"),
            ModelError::BadGroupSize { group } => write!(f, "group {group} has no items"),
            ModelError::ShapeMismatch(what) => write!(f, "shape mismatch: {what}"),
            ModelError::InvalidCutpoints { item } => {
                write!(f, "cutpoints of item {item} are not strictly increasing in (0,1)")
            }
            ModelError::DuplicateItems => write!(f, "margin items must be distinct"),
            ModelError::Copula(e) => write!(f, "{e}"),
            ModelError::DataMismatch(what) => write!(f, "dataset does not match model: {what}"),
        }
    }
}

impl core::error::Error for ModelError {}

impl From<CopulaError> for ModelError {
    fn from(e: CopulaError) -> Self {
        ModelError::Copula(e)
    }
}

/// Non-overlapping, exhaustive partition of items into groups. Items are
/// indexed group-major: group 0 owns items `0..sizes[0]` and so on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self, ModelError> {
        if sizes.is_empty() {
            return Err(ModelError::EmptyGroups);
        }
        for (g, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(ModelError::BadGroupSize { group: g });
            }
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        Ok(Self { sizes, offsets })
    }

    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_items(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn items_of(&self, g: usize) -> core::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn group_of(&self, item: usize) -> usize {
        match self.offsets.binary_search(&item) {
            Ok(g) if g < self.sizes.len() => g,
            Ok(g) => g - 1,
            Err(g) => g - 1,
        }
    }

    /// Identifiability warning: groups of one or two items need fixed edges.
    pub fn has_small_groups(&self) -> bool {
        self.sizes.iter().any(|&s| s <= 2)
    }
}

/// Per-item interior cutpoints on the uniform scale; 0 and 1 are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Cutpoints {
    per_item: Vec<Vec<f64>>,
}

impl Cutpoints {
    pub fn new(per_item: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        for (item, cuts) in per_item.iter().enumerate() {
            let mut prev = 0.0;
            for &a in cuts {
                if !(a > prev && a < 1.0) {
                    return Err(ModelError::InvalidCutpoints { item });
                }
                prev = a;
            }
            if cuts.is_empty() {
                return Err(ModelError::InvalidCutpoints { item });
            }
        }
        Ok(Self { per_item })
    }

    /// Equally weighted categories: a_k = k / K for every item.
    pub fn equally_weighted(d: usize, k: usize) -> Self {
        let cuts: Vec<f64> = (1..k).map(|i| i as f64 / k as f64).collect();
        Self {
            per_item: vec![cuts; d],
        }
    }

    pub fn n_items(&self) -> usize {
        self.per_item.len()
    }

    /// Number of categories of an item.
    pub fn k(&self, item: usize) -> usize {
        self.per_item[item].len() + 1
    }

    pub fn interior(&self, item: usize) -> &[f64] {
        &self.per_item[item]
    }

    /// Cutpoint a_{item,k} with the boundary conventions a_0 = 0, a_K = 1.
    pub fn at(&self, item: usize, k: usize) -> f64 {
        let cuts = &self.per_item[item];
        if k == 0 {
            0.0
        } else if k > cuts.len() {
            1.0
        } else {
            cuts[k - 1]
        }
    }

    /// Normal-scale cutpoint alpha_{item,k} = Phi^{-1}(a_{item,k}).
    pub fn alpha(&self, item: usize, k: usize) -> f64 {
        norm_quantile(self.at(item, k))
    }

    /// Band probability a_{y+1} - a_y.
    pub fn band(&self, item: usize, y: usize) -> f64 {
        self.at(item, y + 1) - self.at(item, y)
    }
}

/// Identifier of a dependence-parameter edge in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// Item j to the common factor (bi-factor) or to its group factor
    /// (second-order): the theta link.
    Theta(usize),
    /// Item j to its group factor given the common factor (bi-factor delta).
    DeltaItem(usize),
    /// Group g to the second-order factor (second-order delta).
    DeltaGroup(usize),
}

/// Full parametric model: structure, partition, cutpoints and one copula per
/// linking edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub structure: Structure,
    pub groups: GroupStructure,
    pub cutpoints: Cutpoints,
    /// Theta links, one per item: item-to-X0 for the bi-factor model,
    /// item-to-group-factor for the second-order model.
    pub common_links: Vec<CopulaSpec>,
    /// Delta links: one per item (bi-factor) or one per group (second-order).
    pub group_links: Vec<CopulaSpec>,
}

impl ModelSpec {
    pub fn new(
        structure: Structure,
        groups: GroupStructure,
        cutpoints: Cutpoints,
        common_links: Vec<CopulaSpec>,
        group_links: Vec<CopulaSpec>,
    ) -> Result<Self, ModelError> {
        let d = groups.total_items();
        if cutpoints.n_items() != d {
            return Err(ModelError::ShapeMismatch("cutpoints vs items"));
        }
        if common_links.len() != d {
            return Err(ModelError::ShapeMismatch("theta links vs items"));
        }
        let want = match structure {
            Structure::BiFactor => d,
            Structure::SecondOrder => groups.n_groups(),
        };
        if group_links.len() != want {
            return Err(ModelError::ShapeMismatch("delta links vs structure"));
        }
        Ok(Self {
            structure,
            groups,
            cutpoints,
            common_links,
            group_links,
        })
    }

    pub fn n_items(&self) -> usize {
        self.groups.total_items()
    }

    /// Free dependence-parameter edges in estimation order (all theta by item,
    /// then delta by item or group). Excluded are parameter-free links, delta
    /// edges of single-item groups (the group factor is absorbed) and, under
    /// the bi-factor structure, the second delta edge of two-item groups
    /// (held at a comonotonicity surrogate).
    pub fn free_edges(&self) -> Vec<Edge> {
        let mut edges = Vec::new();
        for (j, link) in self.common_links.iter().enumerate() {
            if link.family.has_parameter() {
                edges.push(Edge::Theta(j));
            }
        }
        match self.structure {
            Structure::BiFactor => {
                for g in 0..self.groups.n_groups() {
                    let items = self.groups.items_of(g);
                    let size = items.len();
                    for (pos, j) in items.enumerate() {
                        if !self.group_links[j].family.has_parameter() {
                            continue;
                        }
                        if size == 1 {
                            continue;
                        }
                        if size == 2 && pos == 1 {
                            continue; // frozen at the comonotonicity surrogate
                        }
                        edges.push(Edge::DeltaItem(j));
                    }
                }
            }
            Structure::SecondOrder => {
                for g in 0..self.groups.n_groups() {
                    if !self.group_links[g].family.has_parameter() {
                        continue;
                    }
                    if self.groups.sizes()[g] == 1 {
                        continue; // absorbed into the theta link
                    }
                    edges.push(Edge::DeltaGroup(g));
                }
            }
        }
        edges
    }

    /// Number of free copula parameters (the AIC penalty count).
    pub fn n_free_params(&self) -> usize {
        self.free_edges().len()
    }

    pub fn copula_at(&self, edge: Edge) -> &CopulaSpec {
        match edge {
            Edge::Theta(j) => &self.common_links[j],
            Edge::DeltaItem(j) => &self.group_links[j],
            Edge::DeltaGroup(g) => &self.group_links[g],
        }
    }

    pub fn copula_at_mut(&mut self, edge: Edge) -> &mut CopulaSpec {
        match edge {
            Edge::Theta(j) => &mut self.common_links[j],
            Edge::DeltaItem(j) => &mut self.group_links[j],
            Edge::DeltaGroup(g) => &mut self.group_links[g],
        }
    }

    /// Conditional band P(Y_j = y | X_g = x_g, X_0 = x_0) under the bi-factor
    /// structure. With BVN links this equals the normal-ogive ratio form used
    /// by the Gaussian bi-factor model.
    pub fn item_band_bifactor(&self, item: usize, y: usize, x_g: f64, x_0: f64) -> f64 {
        debug_assert_eq!(self.structure, Structure::BiFactor);
        let theta = &self.common_links[item];
        let delta = &self.group_links[item];
        let hi = self.cond_cdf_bifactor(item, y + 1, x_g, x_0, theta, delta);
        let lo = self.cond_cdf_bifactor(item, y, x_g, x_0, theta, delta);
        (hi - lo).max(0.0)
    }

    fn cond_cdf_bifactor(
        &self,
        item: usize,
        k: usize,
        x_g: f64,
        x_0: f64,
        theta: &CopulaSpec,
        delta: &CopulaSpec,
    ) -> f64 {
        let a = self.cutpoints.at(item, k);
        if a <= 0.0 {
            return 0.0;
        }
        if a >= 1.0 {
            return 1.0;
        }
        delta.ccdf(theta.ccdf(a, x_0), x_g)
    }

    /// Band tables on the quadrature grid for repeated pmf evaluation.
    pub fn tables(&self, rule: &QuadratureRule) -> Result<PmfTables, ModelError> {
        PmfTables::build(self, rule)
    }

    /// Joint pmf of one outcome vector.
    pub fn pmf(&self, y: &[u8], rule: &QuadratureRule) -> Result<f64, ModelError> {
        Ok(self.tables(rule)?.pmf(y))
    }

    /// Joint log-likelihood of a dataset.
    pub fn loglik(&self, data: &OrdinalDataset, rule: &QuadratureRule) -> Result<f64, ModelError> {
        self.check_data(data)?;
        let tables = self.tables(rule)?;
        let mut ll = 0.0;
        for row in data.rows() {
            ll += libm::log(tables.pmf(row).max(PMF_FLOOR));
        }
        Ok(ll)
    }

    /// Per-row log pmf values (used by Vuong comparisons).
    pub fn row_logliks(
        &self,
        data: &OrdinalDataset,
        rule: &QuadratureRule,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_data(data)?;
        let tables = self.tables(rule)?;
        Ok(data
            .rows()
            .map(|row| libm::log(tables.pmf(row).max(PMF_FLOOR)))
            .collect())
    }

    /// Joint probability of a sub-vector of up to four items; items in
    /// untouched groups integrate out exactly.
    pub fn margin(
        &self,
        items: &[(usize, u8)],
        rule: &QuadratureRule,
    ) -> Result<f64, ModelError> {
        if items.is_empty() || items.len() > 4 {
            return Err(ModelError::ShapeMismatch("margin takes 1 to 4 items"));
        }
        for (i, &(a, _)) in items.iter().enumerate() {
            for &(b, _) in &items[i + 1..] {
                if a == b {
                    return Err(ModelError::DuplicateItems);
                }
            }
        }
        let tables = self.tables(rule)?;
        Ok(tables.margin(items))
    }

    pub(crate) fn check_data(&self, data: &OrdinalDataset) -> Result<(), ModelError> {
        if data.n_items() != self.n_items() {
            return Err(ModelError::DataMismatch("item count"));
        }
        if data.groups().sizes() != self.groups.sizes() {
            return Err(ModelError::DataMismatch("group partition"));
        }
        for j in 0..self.n_items() {
            if data.categories()[j] != self.cutpoints.k(j) {
                return Err(ModelError::DataMismatch("category counts"));
            }
        }
        Ok(())
    }
}

/// Cached conditional bands on the quadrature grid.
///
/// `band[j][y][q1][q2]` holds P(Y_j = y | inner node q2, outer node q1); for
/// the second-order structure the inner node is already transformed by the
/// group link, so the pmf is a plain weighted product-sum in both cases.
pub struct PmfTables {
    nq: usize,
    kmax: usize,
    band: Vec<f64>,
    group_sizes: Vec<usize>,
    group_offsets: Vec<usize>,
    weights: Vec<f64>,
    k: Vec<usize>,
}

impl PmfTables {
    fn build(spec: &ModelSpec, rule: &QuadratureRule) -> Result<Self, ModelError> {
        let d = spec.n_items();
        let nq = rule.len();
        let kmax = (0..d).map(|j| spec.cutpoints.k(j)).max().unwrap_or(2);
        let mut band = vec![0.0; d * kmax * nq * nq];
        let mut scratch = vec![0.0; nq * nq];
        for g in 0..spec.groups.n_groups() {
            let cond_nodes = match spec.structure {
                Structure::BiFactor => None,
                Structure::SecondOrder => {
                    transformed_nodes(&spec.group_links[g], rule, &mut scratch)?;
                    Some(&scratch)
                }
            };
            for j in spec.groups.items_of(g) {
                let item_band = &mut band[j * kmax * nq * nq..(j + 1) * kmax * nq * nq];
                match spec.structure {
                    Structure::BiFactor => fill_band_bifactor(
                        item_band,
                        spec.cutpoints.interior(j),
                        &spec.common_links[j],
                        &spec.group_links[j],
                        rule,
                    ),
                    Structure::SecondOrder => fill_band_conditional(
                        item_band,
                        spec.cutpoints.interior(j),
                        &spec.common_links[j],
                        cond_nodes.unwrap(),
                        nq,
                    ),
                }
            }
        }
        Ok(Self {
            nq,
            kmax,
            band,
            group_sizes: spec.groups.sizes().to_vec(),
            group_offsets: {
                let mut offs = Vec::with_capacity(spec.groups.n_groups());
                for g in 0..spec.groups.n_groups() {
                    offs.push(spec.groups.items_of(g).start);
                }
                offs
            },
            weights: rule.weights().to_vec(),
            k: (0..d).map(|j| spec.cutpoints.k(j)).collect(),
        })
    }

    #[inline]
    pub(crate) fn band_row(&self, item: usize, y: usize, q1: usize) -> &[f64] {
        let base = ((item * self.kmax + y) * self.nq + q1) * self.nq;
        &self.band[base..base + self.nq]
    }

    /// Joint pmf of a full outcome vector.
    pub fn pmf(&self, y: &[u8]) -> f64 {
        debug_assert_eq!(y.len(), self.k.len());
        let nq = self.nq;
        let mut acc = 0.0;
        let mut inner = vec![0.0; nq];
        for q1 in 0..nq {
            let mut prod = 1.0;
            for (g, &off) in self.group_offsets.iter().enumerate() {
                inner.copy_from_slice(&self.weights);
                for pos in 0..self.group_sizes[g] {
                    let j = off + pos;
                    let row = self.band_row(j, y[j] as usize, q1);
                    for (acc_q2, &b) in inner.iter_mut().zip(row) {
                        *acc_q2 *= b;
                    }
                }
                prod *= inner.iter().sum::<f64>();
            }
            acc += self.weights[q1] * prod;
        }
        acc
    }

    /// Marginal probability of a set of distinct (item, category) pairs;
    /// groups without listed items contribute an exact factor of one.
    pub fn margin(&self, items: &[(usize, u8)]) -> f64 {
        let nq = self.nq;
        let mut acc = 0.0;
        let mut inner = vec![0.0; nq];
        let mut touched: Vec<usize> = items
            .iter()
            .map(|&(j, _)| self.group_of(j))
            .collect();
        touched.sort_unstable();
        touched.dedup();
        for q1 in 0..nq {
            let mut prod = 1.0;
            for &g in &touched {
                inner.copy_from_slice(&self.weights);
                for &(j, y) in items {
                    if self.group_of(j) != g {
                        continue;
                    }
                    let row = self.band_row(j, y as usize, q1);
                    for (acc_q2, &b) in inner.iter_mut().zip(row) {
                        *acc_q2 *= b;
                    }
                }
                prod *= inner.iter().sum::<f64>();
            }
            acc += self.weights[q1] * prod;
        }
        acc
    }

    fn group_of(&self, item: usize) -> usize {
        let mut g = 0;
        for (i, &off) in self.group_offsets.iter().enumerate() {
            if item >= off {
                g = i;
            }
        }
        g
    }
}

/// Fills the band table of one bi-factor item: for each outer node x_q1 the
/// theta link conditions the cutpoints on X0, then the delta link conditions
/// on the group node x_q2. Band differences telescope to one over categories.
/// Node transforms are cached per link, so evaluation costs one quantile per
/// conditioned cutpoint plus cheap per-node arithmetic.
pub(crate) fn fill_band_bifactor(
    band: &mut [f64],
    interior: &[f64],
    theta: &CopulaSpec,
    delta: &CopulaSpec,
    rule: &QuadratureRule,
) {
    let nq = rule.len();
    let k = interior.len() + 1;
    let nodes = rule.nodes();
    let theta_cache = theta.cond_cache(nodes);
    let delta_cache = delta.cond_cache(nodes);
    // u[cat-1][q1] = C_theta(a_cat | x_q1).
    let mut u = vec![0.0; (k - 1) * nq];
    for (ki, &a) in interior.iter().enumerate() {
        theta.ccdf_row(a, &theta_cache, &mut u[ki * nq..(ki + 1) * nq]);
    }
    let mut prev = vec![0.0; nq];
    let mut cur = vec![0.0; nq];
    for q1 in 0..nq {
        prev.iter_mut().for_each(|x| *x = 0.0);
        for cat in 1..=k {
            if cat < k {
                delta.ccdf_row(u[(cat - 1) * nq + q1], &delta_cache, &mut cur);
            } else {
                cur.iter_mut().for_each(|x| *x = 1.0);
            }
            let row = &mut band[((cat - 1) * nq + q1) * nq..((cat - 1) * nq + q1) * nq + nq];
            for q2 in 0..nq {
                row[q2] = (cur[q2] - prev[q2]).max(0.0);
            }
            core::mem::swap(&mut prev, &mut cur);
        }
    }
}

/// Fills the band table of a second-order item given pre-transformed group
/// nodes (`cond[q1 * nq + q2] = C^{-1}(x_q2 | x_q1)` under the group link).
pub(crate) fn fill_band_conditional(
    band: &mut [f64],
    interior: &[f64],
    theta: &CopulaSpec,
    cond: &[f64],
    nq: usize,
) {
    let k = interior.len() + 1;
    let cells = nq * nq;
    let cache = theta.cond_cache(cond);
    let mut c = vec![0.0; (k - 1) * cells];
    for (ki, &a) in interior.iter().enumerate() {
        theta.ccdf_row(a, &cache, &mut c[ki * cells..(ki + 1) * cells]);
    }
    for idx in 0..cells {
        let mut prev = 0.0;
        for cat in 1..=k {
            let value = if cat < k { c[(cat - 1) * cells + idx] } else { 1.0 };
            band[(cat - 1) * cells + idx] = (value - prev).max(0.0);
            prev = value;
        }
    }
}

/// Dependent quadrature points for one second-order group link: element
/// `q1 * nq + q2` is the inverse conditional cdf of inner node q2 given outer
/// node q1.
pub(crate) fn transformed_nodes(
    delta: &CopulaSpec,
    rule: &QuadratureRule,
    out: &mut [f64],
) -> Result<(), ModelError> {
    let nq = rule.len();
    let nodes = rule.nodes();
    for q1 in 0..nq {
        for q2 in 0..nq {
            out[q1 * nq + q2] = delta.inv_ccdf(nodes[q2], nodes[q1])?;
        }
    }
    Ok(())
}
