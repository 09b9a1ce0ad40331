//! Slower cross-validation of the model evaluation against independent
//! oracles: latent-normal Monte Carlo, bivariate-normal rectangle
//! probabilities, quadrature-resolution stability and simulation moments.

use factor_copula::copula::{param_to_tau, tau_to_param, CopulaSpec, Family};
use factor_copula::diagnostics::polychoric;
use factor_copula::math::{bvn_cdf, norm_quantile};
use factor_copula::model::{Cutpoints, GroupStructure, ModelSpec, Structure};
use factor_copula::quadrature::QuadratureRule;
use factor_copula::rng::SplitMix64;
use factor_copula::simulate::{draw, SimDesign};

fn all_bvn_bifactor(d: usize, sizes: Vec<usize>, k: usize, thetas: &[f64], deltas: &[f64]) -> ModelSpec {
    let groups = GroupStructure::new(sizes).unwrap();
    ModelSpec::new(
        Structure::BiFactor,
        groups,
        Cutpoints::equally_weighted(d, k),
        thetas
            .iter()
            .map(|&t| CopulaSpec::new(Family::Gaussian, t).unwrap())
            .collect(),
        deltas
            .iter()
            .map(|&t| CopulaSpec::new(Family::Gaussian, t).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Monte Carlo draw from the Gaussian latent representation
/// Z_j = theta_j Z0 + gamma_j Zg + sqrt(1 - theta^2 - gamma^2) eps.
fn gaussian_mc_pmf(
    spec: &ModelSpec,
    y: &[u8],
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let d = spec.n_items();
    let mut rng = SplitMix64::new(seed);
    let mut hits = 0usize;
    let alphas: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..=spec.cutpoints.k(j)).map(|c| spec.cutpoints.alpha(j, c)).collect())
        .collect();
    let gammas: Vec<f64> = (0..d)
        .map(|j| {
            let th = spec.common_links[j].theta;
            let dl = spec.group_links[j].theta;
            dl * (1.0 - th * th).sqrt()
        })
        .collect();
    for _ in 0..draws {
        let z0 = norm_quantile(rng.next_open01());
        let zg: Vec<f64> = (0..spec.groups.n_groups())
            .map(|_| norm_quantile(rng.next_open01()))
            .collect();
        let mut ok = true;
        for j in 0..d {
            let th = spec.common_links[j].theta;
            let gamma = gammas[j];
            let resid = (1.0 - th * th - gamma * gamma).max(0.0).sqrt();
            let z = th * z0 + gamma * zg[spec.groups.group_of(j)]
                + resid * norm_quantile(rng.next_open01());
            let cat = y[j] as usize;
            if !(z > alphas[j][cat] && z <= alphas[j][cat + 1]) {
                ok = false;
                break;
            }
        }
        if ok {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    (p, se)
}

#[test]
fn bifactor_bvn_pmf_matches_latent_normal_monte_carlo() {
    let spec = all_bvn_bifactor(
        4,
        vec![2, 2],
        2,
        &[0.6, 0.5, 0.55, 0.45],
        &[0.4, 0.5, 0.35, 0.45],
    );
    let rule = QuadratureRule::gauss_legendre(25).unwrap();
    let tables = spec.tables(&rule).unwrap();
    for (y, draws) in [([0u8, 0, 0, 0], 10_000_000usize), ([1, 0, 1, 1], 10_000_000)] {
        let exact = tables.pmf(&y);
        let (mc, se) = gaussian_mc_pmf(&spec, &y, draws, 99);
        assert!(
            (exact - mc).abs() < 3.0 * se,
            "y={y:?}: quadrature {exact} vs mc {mc} (se {se})"
        );
    }
}

#[test]
fn bifactor_bvn_pair_margins_match_rectangle_probabilities() {
    // Within-group latent correlation theta1*theta2 + gamma1*gamma2 and
    // cross-group theta1*theta2; margins must match the implied rectangle
    // probabilities. Resolution chosen so quadrature error sits below the
    // tolerance.
    let thetas = [0.55, 0.4, 0.6, 0.35, 0.5, 0.45];
    let deltas = [0.45, 0.5, 0.3, 0.55, 0.4, 0.35];
    let spec = all_bvn_bifactor(6, vec![3, 3], 3, &thetas, &deltas);
    let rule = QuadratureRule::gauss_legendre(256).unwrap();
    let gammas: Vec<f64> = (0..6)
        .map(|j| deltas[j] * (1.0 - thetas[j] * thetas[j]).sqrt())
        .collect();
    for (j1, j2) in [(0usize, 1usize), (1, 2), (0, 3), (2, 5), (3, 4)] {
        let same = spec.groups.group_of(j1) == spec.groups.group_of(j2);
        let rho = thetas[j1] * thetas[j2] + if same { gammas[j1] * gammas[j2] } else { 0.0 };
        for y1 in 0..3u8 {
            for y2 in 0..3u8 {
                let got = spec.margin(&[(j1, y1), (j2, y2)], &rule).unwrap();
                let rect = |a: f64, b: f64| bvn_cdf(a, b, rho);
                let (a0, a1) = (
                    spec.cutpoints.alpha(j1, y1 as usize),
                    spec.cutpoints.alpha(j1, y1 as usize + 1),
                );
                let (b0, b1) = (
                    spec.cutpoints.alpha(j2, y2 as usize),
                    spec.cutpoints.alpha(j2, y2 as usize + 1),
                );
                let want = rect(a1, b1) - rect(a0, b1) - rect(a1, b0) + rect(a0, b0);
                assert!(
                    (got - want).abs() < 1e-6,
                    "pair ({j1},{j2}) cell ({y1},{y2}): {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn pmf_stable_under_quadrature_refinement() {
    // d=8 mixed-family instances: refining nq=25 to nq=50 moves pmfs by at
    // most a few 1e-5 in absolute terms. The limit is the algebraic endpoint
    // behavior of conditional cdfs (exact rate depends on the dependence
    // level), far below any sampling noise the likelihood faces.
    let groups = GroupStructure::new(vec![4, 4]).unwrap();
    let fams = [Family::Gumbel, Family::Gaussian, Family::Frank, Family::StudentT(5)];
    let mut rng = SplitMix64::new(7);
    let common: Vec<CopulaSpec> = (0..8)
        .map(|j| {
            CopulaSpec::from_tau(fams[j % 4], 0.35 + 0.3 * rng.next_f64()).unwrap()
        })
        .collect();
    let deltas: Vec<CopulaSpec> = (0..8)
        .map(|j| {
            CopulaSpec::from_tau(fams[(j + 1) % 4], 0.25 + 0.25 * rng.next_f64()).unwrap()
        })
        .collect();
    let spec = ModelSpec::new(
        Structure::BiFactor,
        groups,
        Cutpoints::equally_weighted(8, 3),
        common,
        deltas,
    )
    .unwrap();
    let coarse = spec.tables(&QuadratureRule::gauss_legendre(25).unwrap()).unwrap();
    let fine = spec.tables(&QuadratureRule::gauss_legendre(50).unwrap()).unwrap();
    let mut y = [0u8; 8];
    for trial in 0..40 {
        for (j, slot) in y.iter_mut().enumerate() {
            *slot = (((trial * 7 + j * 3) % 3) & 0xff) as u8;
        }
        let a = coarse.pmf(&y);
        let b = fine.pmf(&y);
        assert!((a - b).abs() < 5e-5, "y={y:?}: {a} vs {b}");
        assert!((a - b).abs() < 2e-3 * a.max(1e-6), "y={y:?}: {a} vs {b}");
    }
}

#[test]
fn simulated_polychoric_correlations_match_gaussian_structure() {
    // The correlation of the latent normals under an all-BVN bi-factor model
    // is theta1 theta2 + gamma1 gamma2 within groups; sample polychoric
    // correlations of a large simulated dataset recover it.
    let tau_theta = 0.45;
    let tau_delta = 0.30;
    let theta = tau_to_param(Family::Gaussian, tau_theta).unwrap();
    let delta = tau_to_param(Family::Gaussian, tau_delta).unwrap();
    let spec = all_bvn_bifactor(4, vec![2, 2], 3, &[theta; 4], &[delta; 4]);
    let gamma = delta * (1.0 - theta * theta).sqrt();
    let design = SimDesign {
        spec,
        n: 100_000,
        seed: 123,
    };
    let data = draw(&design).unwrap();
    let within = polychoric(&data.pair_table(0, 1)).unwrap();
    let cross = polychoric(&data.pair_table(0, 2)).unwrap();
    let want_within = theta * theta + gamma * gamma;
    let want_cross = theta * theta;
    assert!(
        (within - want_within).abs() < 0.015,
        "within {within} vs {want_within}"
    );
    assert!((cross - want_cross).abs() < 0.015, "cross {cross} vs {want_cross}");
    // And the implied tau conversion chain is coherent.
    assert!((param_to_tau(Family::Gaussian, theta) - tau_theta).abs() < 1e-12);
}
