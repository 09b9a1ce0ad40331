//! Empirical dependence diagnostics: polychoric correlations, their joint
//! lower/upper quadrant versions, and the observed-versus-theoretical
//! semi-correlation table used to suggest linking copula families.
//!
//! A clearly larger observed correlation in one joint tail than the BVN row
//! predicts points to tail-dependent links (Gumbel for the upper tail,
//! survival Gumbel for the lower, Student-t for both).

use crate::copula::{param_to_tau, theoretical_semicorrelations, CopulaError, CopulaSpec, Family};
use crate::data::OrdinalDataset;
use crate::math::{bvn_cdf, norm_quantile};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum DiagError {
    /// Fewer than two nonempty rows or columns in a contingency table.
    DegenerateTable,
    RaggedTable,
    ShapeMismatch,
    Copula(CopulaError),
}

impl fmt::Display for DiagError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagError::DegenerateTable => write!(f, "contingency table is degenerate"),
            DiagError::RaggedTable => write!(f, "contingency table rows differ in length"),
            DiagError::ShapeMismatch => write!(f, "item code vectors differ in length"),
            DiagError::Copula(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for DiagError {}

/// Bound applied to the latent correlation during optimization; the rectangle
/// likelihood degenerates at +/-1.
pub const RHO_CLAMP: f64 = 0.999;

/// Two-step maximum likelihood polychoric correlation of a two-way table:
/// normal-scale cutpoints from the margins, then a one-dimensional search of
/// the bivariate-normal rectangle likelihood over the latent correlation.
pub fn polychoric(table: &[Vec<usize>]) -> Result<f64, DiagError> {
    let nrows = table.len();
    if nrows < 2 {
        return Err(DiagError::DegenerateTable);
    }
    let ncols = table[0].len();
    if table.iter().any(|r| r.len() != ncols) {
        return Err(DiagError::RaggedTable);
    }
    if ncols < 2 {
        return Err(DiagError::DegenerateTable);
    }
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..ncols).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    if row_sums.iter().filter(|&&s| s > 0).count() < 2
        || col_sums.iter().filter(|&&s| s > 0).count() < 2
    {
        return Err(DiagError::DegenerateTable);
    }
    let n: usize = row_sums.iter().sum();
    let thresholds = |sums: &[usize]| -> Vec<f64> {
        let mut cuts = Vec::with_capacity(sums.len() + 1);
        cuts.push(f64::NEG_INFINITY);
        let mut cum = 0usize;
        for &s in &sums[..sums.len() - 1] {
            cum += s;
            cuts.push(norm_quantile(cum as f64 / n as f64));
        }
        cuts.push(f64::INFINITY);
        cuts
    };
    let alphas = thresholds(&row_sums);
    let betas = thresholds(&col_sums);

    let loglik = |rho: f64| -> f64 {
        // Phi2 on the threshold grid, then rectangle differences.
        let mut grid = vec![0.0; alphas.len() * betas.len()];
        for (i, &a) in alphas.iter().enumerate() {
            for (j, &b) in betas.iter().enumerate() {
                grid[i * betas.len() + j] = bvn_cdf(a, b, rho);
            }
        }
        let mut ll = 0.0;
        for (r, row) in table.iter().enumerate() {
            for (c, &count) in row.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let p = grid[(r + 1) * betas.len() + (c + 1)]
                    - grid[r * betas.len() + (c + 1)]
                    - grid[(r + 1) * betas.len() + c]
                    + grid[r * betas.len() + c];
                ll += count as f64 * libm::log(p.max(1e-12));
            }
        }
        ll
    };
    Ok(golden_max(loglik, -RHO_CLAMP, RHO_CLAMP))
}

/// Golden-section maximization on [lo, hi]; unimodality holds for the
/// rectangle likelihood in the latent correlation.
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..120 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if b - a < 1e-10 {
            break;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiCorr {
    /// Quadrant polychoric correlation; `None` when the restricted table is
    /// degenerate (e.g. a half containing a single category).
    pub rho: Option<f64>,
    /// Respondents falling in the joint quadrant.
    pub n_obs: usize,
    /// Set when the quadrant holds fewer than 30 observations.
    pub flagged: bool,
}

/// Category boundary whose cumulative proportion is nearest one half: codes
/// below it form the lower half, the rest the upper half.
fn split_category(xs: &[u8], k: usize) -> usize {
    let n = xs.len() as f64;
    let mut counts = vec![0usize; k];
    for &x in xs {
        counts[x as usize] += 1;
    }
    let mut best_k = 1;
    let mut best_gap = f64::INFINITY;
    let mut cum = 0usize;
    for (cat, &c) in counts.iter().take(k - 1).enumerate() {
        cum += c;
        let gap = (cum as f64 / n - 0.5).abs();
        if gap < best_gap {
            best_gap = gap;
            best_k = cat + 1;
        }
    }
    best_k
}

/// Polychoric correlation restricted to respondents whose both responses fall
/// in the designated half of their scales.
pub fn semi_polychoric(
    xs: &[u8],
    ys: &[u8],
    kx: usize,
    ky: usize,
    tail: Tail,
) -> Result<SemiCorr, DiagError> {
    if xs.len() != ys.len() {
        return Err(DiagError::ShapeMismatch);
    }
    let sx = split_category(xs, kx);
    let sy = split_category(ys, ky);
    let (x_range, y_range) = match tail {
        Tail::Lower => ((0..sx), (0..sy)),
        Tail::Upper => ((sx..kx), (sy..ky)),
    };
    let nx = x_range.end - x_range.start;
    let ny = y_range.end - y_range.start;
    let mut sub = vec![vec![0usize; ny]; nx];
    let mut n_obs = 0usize;
    for (&x, &y) in xs.iter().zip(ys) {
        let (x, y) = (x as usize, y as usize);
        if x_range.contains(&x) && y_range.contains(&y) {
            sub[x - x_range.start][y - y_range.start] += 1;
            n_obs += 1;
        }
    }
    let flagged = n_obs < 30;
    let rho = polychoric(&sub).ok();
    Ok(SemiCorr {
        rho,
        n_obs,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    AllItems,
    Group(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::AllItems => write!(f, "all items"),
            Scope::Group(g) => write!(f, "group {}", g + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyRow {
    pub family: Family,
    /// (rho_minus, rho_plus) at the matched overall correlation; `None` when
    /// the family cannot attain the required dependence (e.g. Gumbel with a
    /// negative correlation).
    pub semicorr: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScopeSummary {
    pub scope: Scope,
    pub n_pairs: usize,
    /// Average observed polychoric correlation over the scope's pairs.
    pub rho: f64,
    /// Average observed lower/upper quadrant correlations (over pairs whose
    /// quadrant estimate exists).
    pub rho_lower: f64,
    pub rho_upper: f64,
    /// Share of pairs with a flagged (sparse) quadrant estimate.
    pub sparse_share: f64,
    pub theoretical: Vec<FamilyRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsTable {
    pub scopes: Vec<ScopeSummary>,
}

/// Theoretical semi-correlation rows at a matched overall correlation: BVN
/// and Student-t take the correlation as their parameter; Gumbel, survival
/// Gumbel and Frank are matched through Kendall's tau.
pub fn theoretical_rows(rho_n: f64, families: &[Family]) -> Vec<FamilyRow> {
    families
        .iter()
        .map(|&family| {
            let semicorr = theoretical_semicorr_at(family, rho_n);
            FamilyRow { family, semicorr }
        })
        .collect()
}

fn theoretical_semicorr_at(family: Family, rho_n: f64) -> Option<(f64, f64)> {
    let spec = match family {
        Family::Independence => return Some((0.0, 0.0)),
        Family::Gaussian | Family::StudentT(_) => {
            CopulaSpec::new(family, rho_n.clamp(-RHO_CLAMP, RHO_CLAMP)).ok()?
        }
        Family::Gumbel | Family::SurvivalGumbel | Family::Frank => {
            let tau = param_to_tau(Family::Gaussian, rho_n.clamp(-RHO_CLAMP, RHO_CLAMP));
            if tau.abs() < 1e-9 {
                return Some((0.0, 0.0));
            }
            CopulaSpec::from_tau(family, tau).ok()?
        }
    };
    theoretical_semicorrelations(&spec).ok()
}

/// Observed polychoric correlations and quadrant semi-correlations averaged
/// over all pairs and per group, with theoretical rows for each candidate
/// family at the matched correlation.
pub fn diagnostics_table(
    data: &OrdinalDataset,
    families: &[Family],
) -> Result<DiagnosticsTable, DiagError> {
    let d = data.n_items();
    let groups = data.groups().clone();
    let mut all_pairs = Vec::new();
    for a in 0..d {
        for b in (a + 1)..d {
            all_pairs.push((a, b));
        }
    }
    let mut scopes = Vec::with_capacity(groups.n_groups() + 1);
    let mut scope_pairs: Vec<(Scope, Vec<(usize, usize)>)> =
        vec![(Scope::AllItems, all_pairs.clone())];
    for g in 0..groups.n_groups() {
        let pairs: Vec<(usize, usize)> = all_pairs
            .iter()
            .copied()
            .filter(|&(a, b)| groups.group_of(a) == g && groups.group_of(b) == g)
            .collect();
        scope_pairs.push((Scope::Group(g), pairs));
    }

    // Per-pair statistics are shared between scopes; compute once.
    let mut pair_stats: Vec<((usize, usize), f64, Option<f64>, Option<f64>, bool)> = Vec::new();
    for &(a, b) in &all_pairs {
        let table = data.pair_table(a, b);
        let rho = polychoric(&table)?;
        let xs: Vec<u8> = data.rows().map(|r| r[a]).collect();
        let ys: Vec<u8> = data.rows().map(|r| r[b]).collect();
        let ka = data.categories()[a];
        let kb = data.categories()[b];
        let lo = semi_polychoric(&xs, &ys, ka, kb, Tail::Lower)?;
        let hi = semi_polychoric(&xs, &ys, ka, kb, Tail::Upper)?;
        let sparse = lo.flagged || hi.flagged;
        pair_stats.push(((a, b), rho, lo.rho, hi.rho, sparse));
    }

    for (scope, pairs) in scope_pairs {
        if pairs.is_empty() {
            scopes.push(ScopeSummary {
                scope,
                n_pairs: 0,
                rho: f64::NAN,
                rho_lower: f64::NAN,
                rho_upper: f64::NAN,
                sparse_share: f64::NAN,
                theoretical: theoretical_rows(f64::NAN, families),
            });
            continue;
        }
        let mut rho_sum = 0.0;
        let mut lo_sum = 0.0;
        let mut lo_n = 0usize;
        let mut hi_sum = 0.0;
        let mut hi_n = 0usize;
        let mut sparse = 0usize;
        for &(a, b) in &pairs {
            let &(_, rho, lo, hi, was_sparse) = pair_stats
                .iter()
                .find(|&&(p, ..)| p == (a, b))
                .expect("pair computed");
            rho_sum += rho;
            if let Some(v) = lo {
                lo_sum += v;
                lo_n += 1;
            }
            if let Some(v) = hi {
                hi_sum += v;
                hi_n += 1;
            }
            if was_sparse {
                sparse += 1;
            }
        }
        let rho = rho_sum / pairs.len() as f64;
        scopes.push(ScopeSummary {
            scope,
            n_pairs: pairs.len(),
            rho,
            rho_lower: if lo_n > 0 { lo_sum / lo_n as f64 } else { f64::NAN },
            rho_upper: if hi_n > 0 { hi_sum / hi_n as f64 } else { f64::NAN },
            sparse_share: sparse as f64 / pairs.len() as f64,
            theoretical: theoretical_rows(rho, families),
        });
    }
    Ok(DiagnosticsTable { scopes })
}
