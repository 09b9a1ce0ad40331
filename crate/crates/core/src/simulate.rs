//! Dataset simulation from a model specification.
//!
//! A bi-factor row draws the common and group factors independently uniform
//! and samples each item from its conditional bands; a second-order row draws
//! the top factor, pushes per-group uniforms through the inverse conditional
//! cdf of the group link, and samples items given the group factor. Draws are
//! keyed by (seed, replication stream) through a counter-based generator, so
//! results do not depend on scheduling.

use crate::copula::{tau_to_param, CopulaError, CopulaSpec, Family};
use crate::data::{DataError, OrdinalDataset};
use crate::model::{Cutpoints, GroupStructure, ModelError, ModelSpec, Structure};
use crate::rng::SplitMix64;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub spec: ModelSpec,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    ZeroSampleSize,
    UnsupportedCategories(usize),
    Copula(CopulaError),
    Model(ModelError),
    Data(DataError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::ZeroSampleSize => write!(f, "sample size must be at least 1"),
            SimError::UnsupportedCategories(k) => {
                write!(f, "design supports K in {{3, 5}}, got {k}")
            }
            SimError::Copula(e) => write!(f, "{e}"),
            SimError::Model(e) => write!(f, "{e}"),
            SimError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SimError {}

impl From<CopulaError> for SimError {
    fn from(e: CopulaError) -> Self {
        SimError::Copula(e)
    }
}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        SimError::Model(e)
    }
}

impl From<DataError> for SimError {
    fn from(e: DataError) -> Self {
        SimError::Data(e)
    }
}

/// Draws one dataset from the design.
pub fn draw(design: &SimDesign) -> Result<OrdinalDataset, SimError> {
    draw_replication(design, 0)
}

/// Draws the dataset of replication `stream` under the design's seed; streams
/// are mutually independent and individually reproducible.
pub fn draw_replication(design: &SimDesign, stream: u64) -> Result<OrdinalDataset, SimError> {
    if design.n == 0 {
        return Err(SimError::ZeroSampleSize);
    }
    let spec = &design.spec;
    let d = spec.n_items();
    let g_count = spec.groups.n_groups();
    let mut rng = SplitMix64::stream(design.seed, stream);
    let mut codes = Vec::with_capacity(design.n * d);
    for _ in 0..design.n {
        let x0 = rng.next_open01();
        match spec.structure {
            Structure::BiFactor => {
                for g in 0..g_count {
                    let xg = rng.next_open01();
                    for j in spec.groups.items_of(g) {
                        codes.push(sample_item_bifactor(spec, j, xg, x0, rng.next_open01()));
                    }
                }
            }
            Structure::SecondOrder => {
                for g in 0..g_count {
                    let xg = spec.group_links[g].inv_ccdf(rng.next_open01(), x0)?;
                    for j in spec.groups.items_of(g) {
                        codes.push(sample_item_conditional(spec, j, xg, rng.next_open01()));
                    }
                }
            }
        }
    }
    let names: Vec<String> = (1..=d).map(|j| format!("item{j:02}")).collect();
    let k: Vec<usize> = (0..d).map(|j| spec.cutpoints.k(j)).collect();
    Ok(OrdinalDataset::new(names, k, spec.groups.clone(), codes)?)
}

/// Inverse-cdf walk over the bi-factor conditional bands.
fn sample_item_bifactor(spec: &ModelSpec, item: usize, xg: f64, x0: f64, u: f64) -> u8 {
    let k = spec.cutpoints.k(item);
    let theta = &spec.common_links[item];
    let delta = &spec.group_links[item];
    for cat in 1..k {
        let c = delta.ccdf(theta.ccdf(spec.cutpoints.at(item, cat), x0), xg);
        if u < c {
            return (cat - 1) as u8;
        }
    }
    (k - 1) as u8
}

fn sample_item_conditional(spec: &ModelSpec, item: usize, xg: f64, u: f64) -> u8 {
    let k = spec.cutpoints.k(item);
    let theta = &spec.common_links[item];
    for cat in 1..k {
        let c = theta.ccdf(spec.cutpoints.at(item, cat), xg);
        if u < c {
            return (cat - 1) as u8;
        }
    }
    (k - 1) as u8
}

/// Kendall-tau targets reproduced by the simulation designs: per-group theta
/// and delta levels for d = 16 items in four equal groups at n = 500.
pub fn design_taus(structure: Structure) -> (&'static [f64; 4], &'static [f64; 4]) {
    match structure {
        Structure::BiFactor => (&[0.45, 0.55, 0.65, 0.75], &[0.30, 0.35, 0.40, 0.50]),
        Structure::SecondOrder => (&[0.40, 0.50, 0.60, 0.70], &[0.30, 0.35, 0.40, 0.45]),
    }
}

/// The standard simulation design: d = 16 items in G = 4 equal groups,
/// n = 500, equally weighted categories, one linking family everywhere and
/// per-group Kendall-tau levels from [`design_taus`].
pub fn table1_design(
    structure: Structure,
    family: Family,
    k: usize,
    seed: u64,
) -> Result<SimDesign, SimError> {
    if k != 3 && k != 5 {
        return Err(SimError::UnsupportedCategories(k));
    }
    let (tau_theta, tau_delta) = design_taus(structure);
    let spec = design_spec(structure, &[family; 4], family, tau_theta, tau_delta, k)?;
    Ok(SimDesign {
        spec,
        n: 500,
        seed,
    })
}

/// d = 16, G = 4 design with per-factor families: `group_families[g]` links
/// items of group g, `x0_family` links the common (or second-order) factor.
pub fn design_spec(
    structure: Structure,
    group_item_families: &[Family; 4],
    x0_family: Family,
    tau_theta: &[f64; 4],
    tau_delta: &[f64; 4],
    k: usize,
) -> Result<ModelSpec, SimError> {
    let groups = GroupStructure::new(alloc::vec![4, 4, 4, 4])?;
    let cutpoints = Cutpoints::equally_weighted(16, k);
    let mut common = Vec::with_capacity(16);
    for g in 0..4 {
        let (fam, tau) = match structure {
            Structure::BiFactor => (x0_family, tau_theta[g]),
            Structure::SecondOrder => (group_item_families[g], tau_theta[g]),
        };
        for _ in 0..4 {
            common.push(CopulaSpec::new(fam, tau_to_param(fam, tau)?)?);
        }
    }
    let group_links = match structure {
        Structure::BiFactor => {
            let mut links = Vec::with_capacity(16);
            for g in 0..4 {
                let fam = group_item_families[g];
                for _ in 0..4 {
                    links.push(CopulaSpec::new(fam, tau_to_param(fam, tau_delta[g])?)?);
                }
            }
            links
        }
        Structure::SecondOrder => {
            let mut links = Vec::with_capacity(4);
            for g in 0..4 {
                links.push(CopulaSpec::new(
                    x0_family,
                    tau_to_param(x0_family, tau_delta[g])?,
                )?);
            }
            links
        }
    };
    Ok(ModelSpec::new(structure, groups, cutpoints, common, group_links)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let design = table1_design(Structure::BiFactor, Family::Gumbel, 3, 99).unwrap();
        let a = draw(&design).unwrap();
        let b = draw(&design).unwrap();
        assert_eq!(a, b);
        let c = draw_replication(&design, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn design_parameter_counts() {
        // Bi-factor K=3: 2d = 32 copula parameters (no small groups).
        let bif = table1_design(Structure::BiFactor, Family::Gumbel, 3, 0).unwrap();
        assert_eq!(bif.spec.n_free_params(), 32);
        assert_eq!(bif.n, 500);
        // Second-order K=5: d + G = 20.
        let second = table1_design(Structure::SecondOrder, Family::Gumbel, 5, 0).unwrap();
        assert_eq!(second.spec.n_free_params(), 20);
        // Gumbel theta for tau = 0.45 is 1/(1 - 0.45).
        let theta = bif.spec.common_links[0].theta;
        assert!((theta - 1.0 / 0.55).abs() < 1e-12);
        assert!(table1_design(Structure::BiFactor, Family::Gumbel, 4, 0).is_err());
    }

    #[test]
    fn independence_links_give_uniform_categories() {
        let groups = GroupStructure::new(alloc::vec![2, 2]).unwrap();
        let spec = ModelSpec::new(
            Structure::BiFactor,
            groups,
            Cutpoints::equally_weighted(4, 4),
            alloc::vec![CopulaSpec::independence(); 4],
            alloc::vec![CopulaSpec::independence(); 4],
        )
        .unwrap();
        let design = SimDesign {
            spec,
            n: 100_000,
            seed: 5,
        };
        let data = draw(&design).unwrap();
        // Chi-square uniformity test for each item at alpha = 0.001
        // (critical value for 3 df is 16.27).
        for j in 0..4 {
            let counts = data.counts(j);
            let expect = design.n as f64 / 4.0;
            let chi2: f64 = counts
                .iter()
                .map(|&c| {
                    let diff = c as f64 - expect;
                    diff * diff / expect
                })
                .sum();
            assert!(chi2 < 16.27, "item {j}: chi2 = {chi2}, counts {counts:?}");
        }
    }

    #[test]
    fn second_order_draw_respects_group_dependence() {
        // Strong group link, independent-ish items across groups should still
        // correlate through X0; same-group items correlate more.
        let design = table1_design(Structure::SecondOrder, Family::Gaussian, 5, 31).unwrap();
        let data = draw_replication(&design, 3).unwrap();
        let corr = |a: usize, b: usize| -> f64 {
            let n = data.n_rows() as f64;
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for row in data.rows() {
                let x = row[a] as f64;
                let y = row[b] as f64;
                sa += x;
                sb += y;
                saa += x * x;
                sbb += y * y;
                sab += x * y;
            }
            let cov = sab / n - sa / n * sb / n;
            let va = saa / n - (sa / n) * (sa / n);
            let vb = sbb / n - (sb / n) * (sb / n);
            cov / libm::sqrt(va * vb)
        };
        let within = corr(0, 1);
        let across = corr(0, 15);
        assert!(within > across, "within {within} across {across}");
        assert!(across > 0.0, "cross-group correlation should be positive");
    }
}
