//! Limited-information goodness of fit: the M2 statistic on univariate and
//! bivariate margin residuals, its analytic Jacobian, and bivariate
//! discrepancy summaries.
//!
//! The margin vector stacks univariate then bivariate model probabilities,
//! categories 1..K-1 only, item pairs in lexicographic order. With s margins
//! and q free parameters (cutpoints plus free copula parameters),
//!
//!   M2 = n (p2 - pi2)' C2 (p2 - pi2),
//!   C2 = Dc (Dc' Xi2 Dc)^{-1} Dc',
//!
//! where Dc is an orthogonal complement of the s x q Jacobian Delta2 and Xi2
//! is the multinomial covariance of the stacked sample margins, whose blocks
//! involve joint probabilities of up to four items. Under the null M2 is
//! asymptotically chi-square with s - q degrees of freedom.
//!
//! All margins, Jacobian entries and covariance blocks here are evaluated on
//! one common discrete latent measure induced by the quadrature rule (for the
//! second-order structure this is the raw-grid form weighted by the group
//! link density, matching the derivative formulas), so Xi2 is an exact
//! covariance matrix of that measure and stays positive semidefinite.

use crate::data::OrdinalDataset;
use crate::linalg::{cholesky, cholesky_solve, orth_complement, sym_eigen, Mat};
use crate::math::{chi2_sf, norm_pdf};
use crate::model::{
    fill_band_bifactor, Edge, ModelError, ModelSpec, Structure,
};
use crate::quadrature::QuadratureRule;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum GofError {
    /// Delta2 lost column rank; the complement and the degrees of freedom are
    /// ill-defined.
    RankDeficientJacobian,
    /// s - q must be positive.
    NonPositiveDf { s: usize, q: usize },
    /// The projected covariance could not be inverted even after eigenvalue
    /// cleaning.
    SingularInnerMatrix,
    Model(ModelError),
}

impl fmt::Display for GofError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GofError::RankDeficientJacobian => {
                write!(f, "margin jacobian is rank deficient; df needs adjustment")
            }
            GofError::NonPositiveDf { s, q } => {
                write!(f, "degrees of freedom s - q = {s} - {q} is not positive")
            }
            GofError::SingularInnerMatrix => write!(f, "projected covariance is singular"),
            GofError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GofError {}

impl From<ModelError> for GofError {
    fn from(e: ModelError) -> Self {
        GofError::Model(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyTable {
    /// n * max_cell |p - pi| per item pair, lexicographic order.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Averages over within-group pairs, one entry per group (NaN when a
    /// group has fewer than two items).
    pub group_means: Vec<f64>,
    /// Average over all pairs.
    pub overall_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct M2Result {
    pub m2: f64,
    /// Nominal degrees of freedom s - q.
    pub df: usize,
    /// Near-null directions dropped from the projected covariance; the
    /// p-value uses df - dropped.
    pub dropped: usize,
    pub p_value: f64,
    pub s: usize,
    pub q: usize,
    pub discrepancies: DiscrepancyTable,
}

// ---------------------------------------------------------------------------
// Margin layout
// ---------------------------------------------------------------------------

/// Stacking order of the margin vector: univariate cells (item, y) then
/// bivariate cells (j1, j2, y1, y2), categories 1..K-1 only.
pub(crate) struct MarginLayout {
    pub uni: Vec<(usize, usize)>,
    pub biv: Vec<(usize, usize, usize, usize)>,
}

impl MarginLayout {
    pub fn new(ks: &[usize]) -> Self {
        let d = ks.len();
        let mut uni = Vec::new();
        for (j, &k) in ks.iter().enumerate() {
            for y in 1..k {
                uni.push((j, y));
            }
        }
        let mut biv = Vec::new();
        for j1 in 0..d {
            for j2 in (j1 + 1)..d {
                for y1 in 1..ks[j1] {
                    for y2 in 1..ks[j2] {
                        biv.push((j1, j2, y1, y2));
                    }
                }
            }
        }
        Self { uni, biv }
    }

    pub fn s(&self) -> usize {
        self.uni.len() + self.biv.len()
    }
}

/// Sample counterpart of the margin vector.
pub fn p2(data: &OrdinalDataset) -> Vec<f64> {
    let layout = MarginLayout::new(data.categories());
    let n = data.n_rows() as f64;
    let mut out = Vec::with_capacity(layout.s());
    for &(j, y) in &layout.uni {
        let count = data.rows().filter(|r| r[j] as usize == y).count();
        out.push(count as f64 / n);
    }
    for &(j1, j2, y1, y2) in &layout.biv {
        let count = data
            .rows()
            .filter(|r| r[j1] as usize == y1 && r[j2] as usize == y2)
            .count();
        out.push(count as f64 / n);
    }
    out
}

/// Model margin vector.
pub fn pi2(spec: &ModelSpec, rule: &QuadratureRule) -> Result<Vec<f64>, GofError> {
    Ok(MarginTables::build(spec, rule)?.pi2())
}

/// Model and sample margin vectors in one stacking order.
pub fn pi2_and_p2(
    spec: &ModelSpec,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<(Vec<f64>, Vec<f64>), GofError> {
    spec.check_data(data)?;
    Ok((pi2(spec, rule)?, p2(data)))
}

/// Analytic s x q Jacobian of the margin vector; columns are cutpoints, then
/// theta links, then delta links (free edges only).
pub fn delta2(spec: &ModelSpec, rule: &QuadratureRule) -> Result<Mat, GofError> {
    Ok(MarginTables::build(spec, rule)?.delta2())
}

/// Asymptotic s x s covariance of the stacked sample margins.
pub fn xi2(spec: &ModelSpec, rule: &QuadratureRule) -> Result<Mat, GofError> {
    Ok(MarginTables::build(spec, rule)?.xi2())
}

/// Bivariate maximum-deviation table D_{j1 j2} = n max |p - pi| over all
/// cells (including category zero).
pub fn discrepancies(
    spec: &ModelSpec,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<DiscrepancyTable, GofError> {
    spec.check_data(data)?;
    Ok(MarginTables::build(spec, rule)?.discrepancies(data))
}

/// The M2 statistic with its chi-square p-value and discrepancy summaries.
pub fn m2(
    spec: &ModelSpec,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<M2Result, GofError> {
    spec.check_data(data)?;
    let tables = MarginTables::build(spec, rule)?;
    let pi = tables.pi2();
    let p = p2(data);
    let delta = tables.delta2();
    let s = delta.nrows();
    let q = delta.ncols();
    if s <= q {
        return Err(GofError::NonPositiveDf { s, q });
    }
    let df = s - q;
    let comp = orth_complement(&delta).ok_or(GofError::RankDeficientJacobian)?;
    let xi = tables.xi2();

    // W = Dc' Xi Dc, v = Dc' (p - pi); M2 = n v' W^{-1} v.
    let xi_dc = xi.matmul(&comp);
    let w = comp.transpose().matmul(&xi_dc);
    let resid: Vec<f64> = p.iter().zip(&pi).map(|(a, b)| a - b).collect();
    let v = comp.tr_matvec(&resid);
    let n = data.n_rows() as f64;

    let (quad, dropped) = match cholesky(&w, 1e-12) {
        Some(l) => {
            let x = cholesky_solve(&l, &v);
            (v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>(), 0)
        }
        None => {
            // Near-rank-deficiency at boundary parameter values: drop tiny
            // eigenvalues and count them against the degrees of freedom.
            let (vals, vecs) = sym_eigen(&w);
            let max = vals.first().copied().unwrap_or(0.0);
            if max <= 0.0 {
                return Err(GofError::SingularInnerMatrix);
            }
            let mut quad = 0.0;
            let mut kept = 0;
            for (kidx, &lambda) in vals.iter().enumerate() {
                if lambda <= 1e-10 * max {
                    continue;
                }
                kept += 1;
                let mut proj = 0.0;
                for i in 0..v.len() {
                    proj += vecs[(i, kidx)] * v[i];
                }
                quad += proj * proj / lambda;
            }
            if kept == 0 {
                return Err(GofError::SingularInnerMatrix);
            }
            (quad, v.len() - kept)
        }
    };
    let m2_value = (n * quad).max(0.0);
    let df_eff = df - dropped;
    let p_value = chi2_sf(m2_value, df_eff as f64);
    Ok(M2Result {
        m2: m2_value,
        df,
        dropped,
        p_value,
        s,
        q,
        discrepancies: tables.discrepancies(data),
    })
}

// ---------------------------------------------------------------------------
// Internal tables
// ---------------------------------------------------------------------------

/// Everything needed to evaluate margins, their parameter derivatives and the
/// covariance blocks on one quadrature measure.
pub(crate) struct MarginTables<'a> {
    spec: &'a ModelSpec,
    rule: &'a QuadratureRule,
    layout: MarginLayout,
    nq: usize,
    d: usize,
    kmax: usize,
    ks: Vec<usize>,
    free: Vec<Edge>,
    // Bi-factor: conditional bands on the (q1, q2) grid and the ingredients
    // of the derivative integrands.
    band: Vec<f64>,     // d * kmax * nq * nq
    u: Vec<f64>,        // d * (kmax+1) * nq : C_theta(a_k | x_q1)
    cth_dens: Vec<f64>, // d * (kmax+1) * nq : theta-copula density at (a_k, x_q1)
    cth_dot: Vec<f64>,  // d * (kmax+1) * nq : dC_theta/dtheta at (a_k | x_q1)
    cdl_dens: Vec<f64>, // d * (kmax+1) * nq * nq : delta-copula density at (u, x_q2)
    cdl_dot: Vec<f64>,  // d * (kmax+1) * nq * nq : dC_delta/ddelta at (u | x_q2)
    s1: Vec<f64>,       // d * kmax * nq : inner sums of single bands
    // Second-order (raw-grid density form).
    fsg: Vec<f64>,       // d * kmax * nq : band given the group node x_q2
    cth_dens2: Vec<f64>, // d * (kmax+1) * nq
    cth_dot2: Vec<f64>,  // d * (kmax+1) * nq
    dens: Vec<f64>,      // G * nq * nq : c_delta_g(x_q2, x_q1)
    ddens: Vec<f64>,     // G * nq * nq : d c / d delta_g
    t1: Vec<f64>,        // d * kmax * nq : sum_q2 w f dens
    // Within-group subset tables for joint probabilities up to dimension 4.
    subsets: Vec<GroupSubsets>,
    /// Univariate margins as exact cutpoint bands (they do not depend on the
    /// dependence parameters, matching the exact univariate Jacobian rows).
    pi_uni: Vec<f64>,
    /// Univariate margins on the quadrature measure, used inside Xi2 so the
    /// covariance matrix is exactly the covariance of one discrete measure.
    pi_uni_quad: Vec<f64>,
    pi_biv: Vec<f64>,
}

struct GroupSubsets {
    items: Vec<usize>,
    /// Sorted bitmasks over local item positions with 1..=4 bits set.
    masks: Vec<u32>,
    /// Offset of each mask's block in `values`.
    offsets: Vec<usize>,
    /// values[offset + combo * nq + q1]; combos are mixed-radix over the
    /// mask's items (ascending), digit = category - 1, radix K_j - 1.
    values: Vec<f64>,
}

impl GroupSubsets {
    fn inner(&self, members: &[(usize, usize)], ks: &[usize], nq: usize) -> &[f64] {
        // members: (local position, category), ascending positions.
        let mut mask = 0u32;
        for &(pos, _) in members {
            mask |= 1 << pos;
        }
        let mi = self.masks.binary_search(&mask).expect("subset present");
        let mut combo = 0usize;
        for &(pos, y) in members {
            let radix = ks[self.items[pos]] - 1;
            combo = combo * radix + (y - 1);
        }
        let base = self.offsets[mi] + combo * nq;
        &self.values[base..base + nq]
    }
}

impl<'a> MarginTables<'a> {
    pub fn build(spec: &'a ModelSpec, rule: &'a QuadratureRule) -> Result<Self, GofError> {
        let d = spec.n_items();
        let nq = rule.len();
        let ks: Vec<usize> = (0..d).map(|j| spec.cutpoints.k(j)).collect();
        let kmax = ks.iter().copied().max().unwrap_or(2);
        let layout = MarginLayout::new(&ks);
        let free = spec.free_edges();
        let g_count = spec.groups.n_groups();
        let nodes = rule.nodes();
        let weights = rule.weights();

        let mut tables = Self {
            spec,
            rule,
            layout,
            nq,
            d,
            kmax,
            ks,
            free,
            band: Vec::new(),
            u: Vec::new(),
            cth_dens: Vec::new(),
            cth_dot: Vec::new(),
            cdl_dens: Vec::new(),
            cdl_dot: Vec::new(),
            s1: Vec::new(),
            fsg: Vec::new(),
            cth_dens2: Vec::new(),
            cth_dot2: Vec::new(),
            dens: Vec::new(),
            ddens: Vec::new(),
            t1: Vec::new(),
            subsets: Vec::new(),
            pi_uni: Vec::new(),
            pi_uni_quad: Vec::new(),
            pi_biv: Vec::new(),
        };

        let kp = kmax + 1;
        match spec.structure {
            Structure::BiFactor => {
                tables.band = vec![0.0; d * kmax * nq * nq];
                tables.u = vec![0.0; d * kp * nq];
                tables.cth_dens = vec![0.0; d * kp * nq];
                tables.cth_dot = vec![0.0; d * kp * nq];
                tables.cdl_dens = vec![0.0; d * kp * nq * nq];
                tables.cdl_dot = vec![0.0; d * kp * nq * nq];
                tables.s1 = vec![0.0; d * kmax * nq];
                for j in 0..d {
                    let theta = &spec.common_links[j];
                    let delta = &spec.group_links[j];
                    let k = tables.ks[j];
                    fill_band_bifactor(
                        &mut tables.band[j * kmax * nq * nq..(j + 1) * kmax * nq * nq],
                        spec.cutpoints.interior(j),
                        theta,
                        delta,
                        rule,
                    );
                    for cat in 1..k {
                        let a = spec.cutpoints.at(j, cat);
                        for q1 in 0..nq {
                            let x0 = nodes[q1];
                            let uu = theta.ccdf(a, x0);
                            let base1 = (j * kp + cat) * nq + q1;
                            tables.u[base1] = uu;
                            tables.cth_dens[base1] = theta.pdf(a, x0);
                            tables.cth_dot[base1] = theta.ccdf_dtheta(a, x0);
                            let base2 = ((j * kp + cat) * nq + q1) * nq;
                            for q2 in 0..nq {
                                let xg = nodes[q2];
                                tables.cdl_dens[base2 + q2] = delta.pdf(uu, xg);
                                tables.cdl_dot[base2 + q2] = delta.ccdf_dtheta(uu, xg);
                            }
                        }
                        // Boundaries k = 0 and k = K stay zero: the conditional
                        // cdf is pinned there so every derivative vanishes.
                    }
                    for y in 0..k {
                        for q1 in 0..nq {
                            let row = &tables.band
                                [((j * kmax + y) * nq + q1) * nq..((j * kmax + y) * nq + q1) * nq + nq];
                            tables.s1[(j * kmax + y) * nq + q1] =
                                row.iter().zip(weights).map(|(b, w)| b * w).sum();
                        }
                    }
                }
            }
            Structure::SecondOrder => {
                tables.fsg = vec![0.0; d * kmax * nq];
                tables.cth_dens2 = vec![0.0; d * kp * nq];
                tables.cth_dot2 = vec![0.0; d * kp * nq];
                tables.dens = vec![0.0; g_count * nq * nq];
                tables.ddens = vec![0.0; g_count * nq * nq];
                tables.t1 = vec![0.0; d * kmax * nq];
                for g in 0..g_count {
                    let link = &spec.group_links[g];
                    for q1 in 0..nq {
                        for q2 in 0..nq {
                            let idx = (g * nq + q1) * nq + q2;
                            tables.dens[idx] = link.pdf(nodes[q2], nodes[q1]);
                            tables.ddens[idx] = link.pdf_dtheta(nodes[q2], nodes[q1]);
                        }
                    }
                }
                for j in 0..d {
                    let g = spec.groups.group_of(j);
                    let theta = &spec.common_links[j];
                    let k = tables.ks[j];
                    for q2 in 0..nq {
                        let xg = nodes[q2];
                        let mut prev = 0.0;
                        for cat in 1..=k {
                            let c = if cat < k {
                                let a = spec.cutpoints.at(j, cat);
                                let base = (j * kp + cat) * nq + q2;
                                tables.cth_dens2[base] = theta.pdf(a, xg);
                                tables.cth_dot2[base] = theta.ccdf_dtheta(a, xg);
                                theta.ccdf(a, xg)
                            } else {
                                1.0
                            };
                            tables.fsg[(j * kmax + (cat - 1)) * nq + q2] = (c - prev).max(0.0);
                            prev = c;
                        }
                    }
                    for y in 0..k {
                        for q1 in 0..nq {
                            let mut acc = 0.0;
                            for q2 in 0..nq {
                                acc += weights[q2]
                                    * tables.fsg[(j * kmax + y) * nq + q2]
                                    * tables.dens[(g * nq + q1) * nq + q2];
                            }
                            tables.t1[(j * kmax + y) * nq + q1] = acc;
                        }
                    }
                }
            }
        }

        tables.build_subsets();
        tables.cache_margins();
        Ok(tables)
    }

    /// Inner group sums for every within-group subset of up to four items
    /// over the reduced categories 1..K-1.
    fn build_subsets(&mut self) {
        let nq = self.nq;
        let weights = self.rule.weights();
        for g in 0..self.spec.groups.n_groups() {
            let items: Vec<usize> = self.spec.groups.items_of(g).collect();
            let dg = items.len();
            let mut masks = Vec::new();
            for mask in 1u32..(1 << dg) {
                if mask.count_ones() <= 4 {
                    masks.push(mask);
                }
            }
            masks.sort_unstable();
            let mut offsets = Vec::with_capacity(masks.len());
            let mut total = 0usize;
            for &mask in &masks {
                offsets.push(total);
                let mut combos = 1usize;
                for (pos, &j) in items.iter().enumerate() {
                    if mask & (1 << pos) != 0 {
                        combos *= self.ks[j] - 1;
                    }
                }
                total += combos * nq;
            }
            let mut values = vec![0.0; total];
            let mut members: Vec<usize> = Vec::with_capacity(4);
            for (mi, &mask) in masks.iter().enumerate() {
                members.clear();
                for (pos, _) in items.iter().enumerate() {
                    if mask & (1 << pos) != 0 {
                        members.push(pos);
                    }
                }
                let radices: Vec<usize> = members.iter().map(|&p| self.ks[items[p]] - 1).collect();
                let combos: usize = radices.iter().product();
                for combo in 0..combos {
                    // Decode mixed-radix digits into categories (1-based).
                    let mut cats = [0usize; 4];
                    let mut rem = combo;
                    for slot in (0..members.len()).rev() {
                        cats[slot] = rem % radices[slot] + 1;
                        rem /= radices[slot];
                    }
                    let base = offsets[mi] + combo * nq;
                    for q1 in 0..nq {
                        let mut acc = 0.0;
                        for q2 in 0..nq {
                            let mut prod = weights[q2];
                            for (slot, &pos) in members.iter().enumerate() {
                                let j = items[pos];
                                prod *= self.factor(j, cats[slot], q1, q2);
                            }
                            if self.spec.structure == Structure::SecondOrder {
                                prod *= self.dens[(g * nq + q1) * nq + q2];
                            }
                            acc += prod;
                        }
                        values[base + q1] = acc;
                    }
                }
            }
            self.subsets.push(GroupSubsets {
                items,
                masks,
                offsets,
                values,
            });
        }
    }

    /// Band factor of item j at category y for inner node q2 (and outer node
    /// q1 under the bi-factor structure).
    #[inline]
    fn factor(&self, j: usize, y: usize, q1: usize, q2: usize) -> f64 {
        match self.spec.structure {
            Structure::BiFactor => self.band[((j * self.kmax + y) * self.nq + q1) * self.nq + q2],
            Structure::SecondOrder => self.fsg[(j * self.kmax + y) * self.nq + q2],
        }
    }

    /// Joint probability of distinct (item, category>=1) pairs through the
    /// subset tables: the outer sum couples the per-group inner values.
    fn joint(&self, members: &[(usize, usize)]) -> f64 {
        debug_assert!(members.len() <= 4);
        let nq = self.nq;
        let weights = self.rule.weights();
        // Split by group, keeping ascending item order within each.
        let mut per_group: [(usize, [(usize, usize); 4], usize); 4] =
            [(usize::MAX, [(0, 0); 4], 0); 4];
        let mut n_groups = 0usize;
        for &(j, y) in members {
            let g = self.spec.groups.group_of(j);
            let pos = j - self.spec.groups.items_of(g).start;
            let slot = (0..n_groups).find(|&s| per_group[s].0 == g).unwrap_or_else(|| {
                per_group[n_groups] = (g, [(0, 0); 4], 0);
                n_groups += 1;
                n_groups - 1
            });
            let count = per_group[slot].2;
            per_group[slot].1[count] = (pos, y);
            per_group[slot].2 = count + 1;
        }
        let mut rows: [&[f64]; 4] = [&[]; 4];
        for s in 0..n_groups {
            let (g, mut local, cnt) = per_group[s];
            local[..cnt].sort_unstable();
            rows[s] = self.subsets[g].inner(&local[..cnt], &self.ks, nq);
        }
        let mut acc = 0.0;
        for q1 in 0..nq {
            let mut prod = weights[q1];
            for row in rows.iter().take(n_groups) {
                prod *= row[q1];
            }
            acc += prod;
        }
        acc
    }

    fn cache_margins(&mut self) {
        self.pi_uni = self
            .layout
            .uni
            .iter()
            .map(|&(j, y)| self.spec.cutpoints.band(j, y))
            .collect();
        self.pi_uni_quad = self
            .layout
            .uni
            .iter()
            .map(|&(j, y)| self.joint(&[(j, y)]))
            .collect();
        self.pi_biv = self
            .layout
            .biv
            .iter()
            .map(|&(j1, j2, y1, y2)| self.joint(&[(j1, y1), (j2, y2)]))
            .collect();
    }

    pub fn pi2(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout.s());
        out.extend_from_slice(&self.pi_uni);
        out.extend_from_slice(&self.pi_biv);
        out
    }

    // -- Jacobian ----------------------------------------------------------

    fn columns(&self) -> (Vec<(usize, usize)>, usize) {
        let mut cuts = Vec::new();
        for j in 0..self.d {
            for k in 1..self.ks[j] {
                cuts.push((j, k));
            }
        }
        let q = cuts.len() + self.free.len();
        (cuts, q)
    }

    pub fn delta2(&self) -> Mat {
        let (cut_cols, q) = self.columns();
        let s = self.layout.s();
        let mut out = Mat::zeros(s, q);
        let n_cuts = cut_cols.len();
        let mut cut_index = vec![usize::MAX; self.d * (self.kmax + 1)];
        for (c, &(j, k)) in cut_cols.iter().enumerate() {
            cut_index[j * (self.kmax + 1) + k] = c;
        }
        let edge_col = |edge: Edge| -> Option<usize> {
            self.free.iter().position(|&e| e == edge).map(|i| n_cuts + i)
        };

        // Univariate rows: pi_{j,y} = Phi(alpha_{y+1}) - Phi(alpha_y) depends
        // on the item's own cutpoints only.
        for (r, &(j, y)) in self.layout.uni.iter().enumerate() {
            let k = self.ks[j];
            if y + 1 < k {
                let c = cut_index[j * (self.kmax + 1) + y + 1];
                out[(r, c)] = norm_pdf(self.spec.cutpoints.alpha(j, y + 1));
            }
            // y >= 1 always holds in the reduced layout.
            let c = cut_index[j * (self.kmax + 1) + y];
            out[(r, c)] = -norm_pdf(self.spec.cutpoints.alpha(j, y));
        }

        // Bivariate rows.
        for (rb, &(j1, j2, y1, y2)) in self.layout.biv.iter().enumerate() {
            let r = self.layout.uni.len() + rb;
            let g1 = self.spec.groups.group_of(j1);
            let g2 = self.spec.groups.group_of(j2);
            let same_group = g1 == g2;
            for (target, other, y_t, y_o) in [(j1, j2, y1, y2), (j2, j1, y2, y1)] {
                // Cutpoint columns k = y_t (negative) and y_t + 1 (positive).
                for (k, sign) in [(y_t, -1.0), (y_t + 1, 1.0)] {
                    if k == 0 || k >= self.ks[target] {
                        continue;
                    }
                    let c = cut_index[target * (self.kmax + 1) + k];
                    let phi = norm_pdf(self.spec.cutpoints.alpha(target, k));
                    let integral = if same_group {
                        self.within_integral(target, other, y_o, g1, DerivKind::Alpha(k))
                    } else {
                        self.cross_integral(target, other, y_o, DerivKind::Alpha(k))
                    };
                    out[(r, c)] += sign * phi * integral;
                }
                // Theta column of the target item.
                if let Some(c) = edge_col(Edge::Theta(target)) {
                    let integral = if same_group {
                        self.within_integral(target, other, y_o, g1, DerivKind::Theta(y_t))
                    } else {
                        self.cross_integral(target, other, y_o, DerivKind::Theta(y_t))
                    };
                    out[(r, c)] += integral;
                }
                // Delta column: per item under the bi-factor structure.
                if self.spec.structure == Structure::BiFactor {
                    if let Some(c) = edge_col(Edge::DeltaItem(target)) {
                        let integral = if same_group {
                            self.within_integral(target, other, y_o, g1, DerivKind::DeltaItem(y_t))
                        } else {
                            self.cross_integral(target, other, y_o, DerivKind::DeltaItem(y_t))
                        };
                        out[(r, c)] += integral;
                    }
                }
            }
            // Second-order delta columns act on whole groups.
            if self.spec.structure == Structure::SecondOrder {
                if same_group {
                    if let Some(c) = edge_col(Edge::DeltaGroup(g1)) {
                        out[(r, c)] = self.second_within_delta(j1, j2, y1, y2, g1);
                    }
                } else {
                    for (g, target, other, y_t, y_o) in
                        [(g1, j1, j2, y1, y2), (g2, j2, j1, y2, y1)]
                    {
                        if let Some(c) = edge_col(Edge::DeltaGroup(g)) {
                            out[(r, c)] = self.second_cross_delta(target, other, y_t, y_o, g);
                        }
                    }
                }
            }
        }
        out
    }

    /// Within-group double sum of f_other x (derivative factor of the target).
    fn within_integral(
        &self,
        target: usize,
        other: usize,
        y_other: usize,
        g: usize,
        kind: DerivKind,
    ) -> f64 {
        let nq = self.nq;
        let weights = self.rule.weights();
        let mut acc = 0.0;
        for q1 in 0..nq {
            let mut inner = 0.0;
            for q2 in 0..nq {
                let fo = self.factor(other, y_other, q1, q2);
                let df = self.deriv_factor(target, kind, q1, q2);
                let mut term = fo * df;
                if self.spec.structure == Structure::SecondOrder {
                    term *= self.dens[(g * nq + q1) * nq + q2];
                }
                inner += weights[q2] * term;
            }
            acc += weights[q1] * inner;
        }
        acc
    }

    /// Cross-group: the other item's factor integrates on its own group node.
    fn cross_integral(&self, target: usize, other: usize, y_other: usize, kind: DerivKind) -> f64 {
        let nq = self.nq;
        let weights = self.rule.weights();
        let g_t = self.spec.groups.group_of(target);
        let mut acc = 0.0;
        for q1 in 0..nq {
            let s_other = match self.spec.structure {
                Structure::BiFactor => self.s1[(other * self.kmax + y_other) * nq + q1],
                Structure::SecondOrder => self.t1[(other * self.kmax + y_other) * nq + q1],
            };
            let mut s_target = 0.0;
            for q2 in 0..nq {
                let mut term = self.deriv_factor(target, kind, q1, q2);
                if self.spec.structure == Structure::SecondOrder {
                    term *= self.dens[(g_t * nq + q1) * nq + q2];
                }
                s_target += weights[q2] * term;
            }
            acc += weights[q1] * s_other * s_target;
        }
        acc
    }

    fn second_within_delta(&self, j1: usize, j2: usize, y1: usize, y2: usize, g: usize) -> f64 {
        let nq = self.nq;
        let weights = self.rule.weights();
        let mut acc = 0.0;
        for q1 in 0..nq {
            let mut inner = 0.0;
            for q2 in 0..nq {
                inner += weights[q2]
                    * self.fsg[(j1 * self.kmax + y1) * nq + q2]
                    * self.fsg[(j2 * self.kmax + y2) * nq + q2]
                    * self.ddens[(g * nq + q1) * nq + q2];
            }
            acc += weights[q1] * inner;
        }
        acc
    }

    fn second_cross_delta(
        &self,
        target: usize,
        other: usize,
        y_t: usize,
        y_o: usize,
        g: usize,
    ) -> f64 {
        let nq = self.nq;
        let weights = self.rule.weights();
        let mut acc = 0.0;
        for q1 in 0..nq {
            let mut s_target = 0.0;
            for q2 in 0..nq {
                s_target += weights[q2]
                    * self.fsg[(target * self.kmax + y_t) * nq + q2]
                    * self.ddens[(g * nq + q1) * nq + q2];
            }
            acc += weights[q1] * s_target * self.t1[(other * self.kmax + y_o) * nq + q1];
        }
        acc
    }

    /// Derivative factor of one item's band at grid point (q1, q2).
    #[inline]
    fn deriv_factor(&self, j: usize, kind: DerivKind, q1: usize, q2: usize) -> f64 {
        let kp = self.kmax + 1;
        let nq = self.nq;
        match (self.spec.structure, kind) {
            // d band / d alpha_k (without the phi(alpha) factor and sign):
            // delta-density at the conditioned cutpoint times theta-density.
            (Structure::BiFactor, DerivKind::Alpha(k)) => {
                self.cdl_dens[((j * kp + k) * nq + q1) * nq + q2]
                    * self.cth_dens[(j * kp + k) * nq + q1]
            }
            (Structure::BiFactor, DerivKind::Theta(y)) => {
                let hi = self.cdl_dens[((j * kp + y + 1) * nq + q1) * nq + q2]
                    * self.cth_dot[(j * kp + y + 1) * nq + q1];
                let lo = self.cdl_dens[((j * kp + y) * nq + q1) * nq + q2]
                    * self.cth_dot[(j * kp + y) * nq + q1];
                hi - lo
            }
            (Structure::BiFactor, DerivKind::DeltaItem(y)) => {
                self.cdl_dot[((j * kp + y + 1) * nq + q1) * nq + q2]
                    - self.cdl_dot[((j * kp + y) * nq + q1) * nq + q2]
            }
            (Structure::SecondOrder, DerivKind::Alpha(k)) => {
                self.cth_dens2[(j * kp + k) * nq + q2]
            }
            (Structure::SecondOrder, DerivKind::Theta(y)) => {
                self.cth_dot2[(j * kp + y + 1) * nq + q2] - self.cth_dot2[(j * kp + y) * nq + q2]
            }
            (Structure::SecondOrder, DerivKind::DeltaItem(_)) => 0.0,
        }
    }

    // -- Covariance --------------------------------------------------------

    pub fn xi2(&self) -> Mat {
        let s = self.layout.s();
        let nu = self.layout.uni.len();
        let mut xi = Mat::zeros(s, s);
        let pi_of = |idx: usize| -> f64 {
            if idx < nu {
                self.pi_uni_quad[idx]
            } else {
                self.pi_biv[idx - nu]
            }
        };
        let members_of = |idx: usize| -> ([(usize, usize); 2], usize) {
            if idx < nu {
                let (j, y) = self.layout.uni[idx];
                ([(j, y), (0, 0)], 1)
            } else {
                let (j1, j2, y1, y2) = self.layout.biv[idx - nu];
                ([(j1, y1), (j2, y2)], 2)
            }
        };
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(4);
        for a in 0..s {
            let (ma, na) = members_of(a);
            for b in a..s {
                let (mb, nb) = members_of(b);
                merged.clear();
                merged.extend_from_slice(&ma[..na]);
                let mut contradiction = false;
                'outer: for &(j, y) in &mb[..nb] {
                    for &(jj, yy) in merged.iter() {
                        if jj == j {
                            if yy != y {
                                contradiction = true;
                            }
                            continue 'outer;
                        }
                    }
                    merged.push((j, y));
                }
                let joint = if contradiction {
                    0.0
                } else if merged.len() == na {
                    // B's events are a subset of A's.
                    pi_of(a)
                } else {
                    merged.sort_unstable();
                    self.joint(&merged)
                };
                let cov = joint - pi_of(a) * pi_of(b);
                xi[(a, b)] = cov;
                xi[(b, a)] = cov;
            }
        }
        xi
    }

    // -- Discrepancies ------------------------------------------------------

    pub fn discrepancies(&self, data: &OrdinalDataset) -> DiscrepancyTable {
        let nq = self.nq;
        let weights = self.rule.weights();
        let n = data.n_rows() as f64;
        let g_count = self.spec.groups.n_groups();
        let mut pairs = Vec::new();
        let mut group_sum = vec![0.0; g_count];
        let mut group_cnt = vec![0usize; g_count];
        let mut total = 0.0;
        for j1 in 0..self.d {
            for j2 in (j1 + 1)..self.d {
                let table = data.pair_table(j1, j2);
                let g1 = self.spec.groups.group_of(j1);
                let g2 = self.spec.groups.group_of(j2);
                let mut worst = 0.0f64;
                for y1 in 0..self.ks[j1] {
                    for y2 in 0..self.ks[j2] {
                        let model = if g1 == g2 {
                            let mut acc = 0.0;
                            for q1 in 0..nq {
                                let mut inner = 0.0;
                                for q2 in 0..nq {
                                    let mut term = self.factor(j1, y1, q1, q2)
                                        * self.factor(j2, y2, q1, q2);
                                    if self.spec.structure == Structure::SecondOrder {
                                        term *= self.dens[(g1 * nq + q1) * nq + q2];
                                    }
                                    inner += weights[q2] * term;
                                }
                                acc += weights[q1] * inner;
                            }
                            acc
                        } else {
                            let mut acc = 0.0;
                            for q1 in 0..nq {
                                let sa = match self.spec.structure {
                                    Structure::BiFactor => {
                                        self.s1[(j1 * self.kmax + y1) * nq + q1]
                                    }
                                    Structure::SecondOrder => {
                                        self.t1[(j1 * self.kmax + y1) * nq + q1]
                                    }
                                };
                                let sb = match self.spec.structure {
                                    Structure::BiFactor => {
                                        self.s1[(j2 * self.kmax + y2) * nq + q1]
                                    }
                                    Structure::SecondOrder => {
                                        self.t1[(j2 * self.kmax + y2) * nq + q1]
                                    }
                                };
                                acc += weights[q1] * sa * sb;
                            }
                            acc
                        };
                        let sample = table[y1][y2] as f64 / n;
                        worst = worst.max((sample - model).abs());
                    }
                }
                let d_pair = n * worst;
                pairs.push((j1, j2, d_pair));
                total += d_pair;
                if g1 == g2 {
                    group_sum[g1] += d_pair;
                    group_cnt[g1] += 1;
                }
            }
        }
        let group_means = group_sum
            .iter()
            .zip(&group_cnt)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
            .collect();
        let overall_mean = if pairs.is_empty() {
            f64::NAN
        } else {
            total / pairs.len() as f64
        };
        DiscrepancyTable {
            pairs,
            group_means,
            overall_mean,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum DerivKind {
    /// Cutpoint index k.
    Alpha(usize),
    /// Band category y (derivative w.r.t. the item's theta).
    Theta(usize),
    /// Band category y (derivative w.r.t. the item's delta, bi-factor only).
    DeltaItem(usize),
}
