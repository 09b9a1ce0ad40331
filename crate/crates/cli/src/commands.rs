//! The five command drivers: fit, select, simulate, gof, diagnose. Each
//! returns a [`Report`]; `simulate` additionally writes the dataset CSV.

use crate::config::RunConfig;
use crate::csv;
use crate::error::CliError;
use crate::json::Json;
use crate::report::{fmt_f, Report, Table};
use factor_copula::copula::{CopulaSpec, Family};
use factor_copula::data::OrdinalDataset;
use factor_copula::diagnostics::{diagnostics_table, Scope};
use factor_copula::estimate::{fit, FamilyAssignment, FitOptions, FitResult, ParamSe};
use factor_copula::gof::m2;
use factor_copula::model::{Cutpoints, Edge, GroupStructure, ModelSpec, Structure};
use factor_copula::quadrature::QuadratureRule;
use factor_copula::select::{select_families, vuong_interval, Slot};
use factor_copula::simulate::{draw, SimDesign};
use std::path::Path;

fn rule_for(config: &RunConfig) -> Result<QuadratureRule, CliError> {
    QuadratureRule::gauss_legendre(config.nq)
        .map_err(|e| CliError::usage(format!("invalid nq: {e}")))
}

fn fit_options(config: &RunConfig, compute_se: bool) -> FitOptions {
    FitOptions {
        max_iter: config.max_iter,
        grad_tol: config.grad_tol,
        obj_tol: config.obj_tol,
        compute_se,
        ..FitOptions::default()
    }
}

/// Per-factor family assignment from the config: one family applies
/// everywhere; G+1 families map to the X0 slot then the group slots.
fn assignment_for(config: &RunConfig, g: usize) -> Result<FamilyAssignment, CliError> {
    match &config.families {
        None => Ok(FamilyAssignment::uniform(Family::Gaussian, g)),
        Some(f) if f.len() == 1 => Ok(FamilyAssignment::uniform(f[0], g)),
        Some(f) if f.len() == g + 1 => Ok(FamilyAssignment {
            x0: f[0],
            groups: f[1..].to_vec(),
        }),
        Some(f) => Err(CliError::usage(format!(
            "families must name 1 or {} entries (X0 then each group), got {}",
            g + 1,
            f.len()
        ))),
    }
}

fn candidates_for(config: &RunConfig) -> Vec<Family> {
    config
        .families
        .clone()
        .unwrap_or_else(Family::default_candidates)
}

fn require_data(data: &Option<OrdinalDataset>) -> Result<&OrdinalDataset, CliError> {
    data.as_ref()
        .ok_or_else(|| CliError::usage("this command requires --data"))
}

fn se_lookup<'a>(fit: &'a FitResult, edge: Edge) -> Option<&'a ParamSe> {
    fit.se.as_ref()?.iter().find(|p| p.edge == edge)
}

fn dataset_kv(report: &mut Report, data: &OrdinalDataset) {
    report.push_kv("n", data.n_rows().to_string());
    report.push_kv("d", data.n_items().to_string());
    report.push_json("n", Json::Int(data.n_rows() as i64));
    report.push_json("d", Json::Int(data.n_items() as i64));
}

fn fit_kv(report: &mut Report, fit: &FitResult) {
    report.push_kv("loglik", fmt_f(fit.loglik, 4));
    report.push_kv("aic", fmt_f(fit.aic, 4));
    report.push_kv("n_copula_params", fit.n_free_params.to_string());
    report.push_kv("iterations", fit.iterations.to_string());
    report.push_kv("converged", fit.converged.to_string());
    if fit.small_group_warning {
        report.push_kv("warning", "groups of size <= 2 carry fixed edges");
    }
    if fit.se_flagged {
        report.push_kv("warning_se", "information matrix not positive definite; SEs are sentinels");
    }
    report.push_json(
        "fit",
        Json::obj(vec![
            ("loglik", Json::num(fit.loglik)),
            ("aic", Json::num(fit.aic)),
            ("n_copula_params", Json::Int(fit.n_free_params as i64)),
            ("iterations", Json::Int(fit.iterations as i64)),
            ("converged", Json::Bool(fit.converged)),
            ("se_flagged", Json::Bool(fit.se_flagged)),
        ]),
    );
}

/// Estimates in Kendall-tau scale with standard errors, one row per item
/// (plus one per group link under the second-order structure).
fn estimate_tables(report: &mut Report, fit: &FitResult, data: &OrdinalDataset) {
    let spec = &fit.spec;
    let names = data.item_names();
    let mut rows = Vec::new();
    let mut jrows = Vec::new();
    for j in 0..spec.n_items() {
        let g = spec.groups.group_of(j);
        let theta = &spec.common_links[j];
        let t_se = match se_lookup(fit, Edge::Theta(j)) {
            Some(p) => fmt_f(p.se_tau, 3),
            None => "-".to_string(),
        };
        let mut row = vec![
            names[j].clone(),
            (g + 1).to_string(),
            theta.family.tag(),
            fmt_f(theta.tau(), 3),
            t_se,
        ];
        let mut jrow = vec![
            ("item", Json::str(names[j].clone())),
            ("group", Json::Int(g as i64 + 1)),
            ("theta_family", Json::str(theta.family.tag())),
            ("theta_tau", Json::num(theta.tau())),
            (
                "theta_se",
                se_lookup(fit, Edge::Theta(j))
                    .map(|p| Json::num(p.se_tau))
                    .unwrap_or(Json::Null),
            ),
        ];
        if spec.structure == Structure::BiFactor {
            let delta = &spec.group_links[j];
            let d_se = match se_lookup(fit, Edge::DeltaItem(j)) {
                Some(p) => fmt_f(p.se_tau, 3),
                None => {
                    if delta.family.has_parameter() {
                        "fixed".to_string()
                    } else {
                        "-".to_string()
                    }
                }
            };
            row.extend([delta.family.tag(), fmt_f(delta.tau(), 3), d_se]);
            jrow.extend([
                ("delta_family", Json::str(delta.family.tag())),
                ("delta_tau", Json::num(delta.tau())),
                (
                    "delta_se",
                    se_lookup(fit, Edge::DeltaItem(j))
                        .map(|p| Json::num(p.se_tau))
                        .unwrap_or(Json::Null),
                ),
            ]);
        }
        rows.push(row);
        jrows.push(Json::obj(jrow));
    }
    let header: Vec<String> = match spec.structure {
        Structure::BiFactor => [
            "item", "group", "x0_copula", "x0_tau", "x0_se", "g_copula", "g_tau", "g_se",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        Structure::SecondOrder => ["item", "group", "copula", "tau", "se"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    report.push_table(Table {
        name: "estimates".into(),
        header,
        rows,
    });
    report.push_json("estimates", Json::Arr(jrows));

    if spec.structure == Structure::SecondOrder {
        let mut rows = Vec::new();
        let mut jrows = Vec::new();
        for g in 0..spec.groups.n_groups() {
            let link = &spec.group_links[g];
            let se = match se_lookup(fit, Edge::DeltaGroup(g)) {
                Some(p) => fmt_f(p.se_tau, 3),
                None => {
                    if link.family.has_parameter() {
                        "fixed".to_string()
                    } else {
                        "-".to_string()
                    }
                }
            };
            rows.push(vec![
                (g + 1).to_string(),
                link.family.tag(),
                fmt_f(link.tau(), 3),
                se,
            ]);
            jrows.push(Json::obj(vec![
                ("group", Json::Int(g as i64 + 1)),
                ("family", Json::str(link.family.tag())),
                ("tau", Json::num(link.tau())),
                (
                    "se",
                    se_lookup(fit, Edge::DeltaGroup(g))
                        .map(|p| Json::num(p.se_tau))
                        .unwrap_or(Json::Null),
                ),
            ]));
        }
        report.push_table(Table {
            name: "group_links".into(),
            header: ["group", "copula", "tau", "se"].iter().map(|s| s.to_string()).collect(),
            rows,
        });
        report.push_json("group_links", Json::Arr(jrows));
    }
}

pub fn run_fit(config: &RunConfig, data: &Option<OrdinalDataset>) -> Result<Report, CliError> {
    let data = require_data(data)?;
    let rule = rule_for(config)?;
    let families = assignment_for(config, data.groups().n_groups())?;
    let opts = fit_options(config, true);
    let result = fit(data, config.structure, &families, &rule, &opts)
        .map_err(|e| CliError::numerical(format!("fit failed: {e}")))?;
    let mut report = Report::new("fit");
    report.echo_config(config);
    dataset_kv(&mut report, data);
    fit_kv(&mut report, &result);
    estimate_tables(&mut report, &result, data);
    Ok(report)
}

pub fn run_select(config: &RunConfig, data: &Option<OrdinalDataset>) -> Result<Report, CliError> {
    let data = require_data(data)?;
    let rule = rule_for(config)?;
    let candidates = candidates_for(config);
    let opts = fit_options(config, true);
    let trace = select_families(data, config.structure, &candidates, &rule, &opts)
        .map_err(|e| CliError::numerical(format!("selection failed: {e}")))?;

    let mut report = Report::new("select");
    report.echo_config(config);
    dataset_kv(&mut report, data);
    report.push_kv("baseline_aic", fmt_f(trace.baseline.aic, 4));

    let mut rows = Vec::new();
    let mut jsteps = Vec::new();
    for step in &trace.steps {
        let slot_label = match step.slot {
            Slot::X0 => "X0".to_string(),
            Slot::Group(g) => format!("X{}", g + 1),
        };
        let mut jentries = Vec::new();
        for entry in &step.entries {
            rows.push(vec![
                slot_label.clone(),
                entry.family.tag(),
                entry
                    .aic
                    .map(|a| fmt_f(a, 4))
                    .unwrap_or_else(|| "failed".to_string()),
                if entry.family == step.chosen { "*".to_string() } else { String::new() },
            ]);
            jentries.push(Json::obj(vec![
                ("family", Json::str(entry.family.tag())),
                ("aic", entry.aic.map(Json::num).unwrap_or(Json::Null)),
            ]));
        }
        jsteps.push(Json::obj(vec![
            ("slot", Json::str(slot_label.clone())),
            ("chosen", Json::str(step.chosen.tag())),
            ("candidates", Json::Arr(jentries)),
        ]));
    }
    report.push_table(Table {
        name: "selection".into(),
        header: ["slot", "candidate", "aic", "chosen"].iter().map(|s| s.to_string()).collect(),
        rows,
    });
    report.push_json("selection", Json::Arr(jsteps));

    let chosen: Vec<String> = std::iter::once(trace.assignment.x0.tag())
        .chain(trace.assignment.groups.iter().map(|f| f.tag()))
        .collect();
    report.push_kv("chosen_families", chosen.join(","));
    report.push_json(
        "chosen_families",
        Json::Arr(chosen.iter().map(|t| Json::str(t.clone())).collect()),
    );
    fit_kv(&mut report, &trace.final_fit);
    estimate_tables(&mut report, &trace.final_fit, data);

    // Selected model against the all-BVN baseline.
    let (lo, hi) = vuong_interval(&trace.baseline, &trace.final_fit, data, &rule)
        .map_err(|e| CliError::numerical(format!("vuong interval: {e}")))?;
    report.push_kv("vuong_vs_bvn_95ci", format!("({}, {})", fmt_f(lo, 4), fmt_f(hi, 4)));
    report.push_json(
        "vuong_vs_bvn",
        Json::obj(vec![("lower", Json::num(lo)), ("upper", Json::num(hi))]),
    );
    Ok(report)
}

/// Builds the simulation model from the config: per-group tau targets on the
/// common and group links, equally weighted categories.
fn simulation_spec(config: &RunConfig) -> Result<ModelSpec, CliError> {
    let sizes = config.group_sizes();
    if sizes.is_empty() {
        return Err(CliError::usage("simulate requires groups.<name> definitions"));
    }
    let g = sizes.len();
    let d: usize = sizes.iter().sum();
    let k = config
        .k
        .ok_or_else(|| CliError::usage("simulate requires k = <categories>"))?;
    if k < 2 {
        return Err(CliError::usage("k must be at least 2"));
    }
    let tau_common = config
        .tau_common
        .clone()
        .ok_or_else(|| CliError::usage("simulate requires tau.common = <per-group list>"))?;
    let tau_group = config
        .tau_group
        .clone()
        .ok_or_else(|| CliError::usage("simulate requires tau.group = <per-group list>"))?;
    if tau_common.len() != g || tau_group.len() != g {
        return Err(CliError::usage(format!(
            "tau.common and tau.group must list {g} values (one per group)"
        )));
    }
    let families = assignment_for(config, g)?;
    let groups = GroupStructure::new(sizes.clone())
        .map_err(|e| CliError::usage(format!("groups: {e}")))?;
    let at_tau = |fam: Family, tau: f64| -> Result<CopulaSpec, CliError> {
        CopulaSpec::from_tau(fam, tau)
            .map_err(|e| CliError::usage(format!("tau target {tau} for {fam}: {e}")))
    };
    let mut common = Vec::with_capacity(d);
    for gi in 0..g {
        let (fam, tau) = match config.structure {
            Structure::BiFactor => (families.x0, tau_common[gi]),
            Structure::SecondOrder => (families.groups[gi], tau_common[gi]),
        };
        for _ in 0..sizes[gi] {
            common.push(at_tau(fam, tau)?);
        }
    }
    let group_links = match config.structure {
        Structure::BiFactor => {
            let mut links = Vec::with_capacity(d);
            for gi in 0..g {
                for _ in 0..sizes[gi] {
                    links.push(at_tau(families.groups[gi], tau_group[gi])?);
                }
            }
            links
        }
        Structure::SecondOrder => (0..g)
            .map(|gi| at_tau(families.x0, tau_group[gi]))
            .collect::<Result<Vec<_>, _>>()?,
    };
    ModelSpec::new(
        config.structure,
        groups,
        Cutpoints::equally_weighted(d, k),
        common,
        group_links,
    )
    .map_err(|e| CliError::usage(format!("model: {e}")))
}

pub fn run_simulate(config: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let n = config
        .n
        .ok_or_else(|| CliError::usage("simulate requires n = <rows>"))?;
    let spec = simulation_spec(config)?;
    let design = SimDesign {
        spec,
        n,
        seed: config.seed,
    };
    let mut data = draw(&design).map_err(|e| CliError::numerical(format!("draw: {e}")))?;
    // Rename the generated items to the configured names.
    let names = config.grouped_items();
    data = OrdinalDataset::new(
        names,
        data.categories().to_vec(),
        data.groups().clone(),
        data.rows().flatten().copied().collect(),
    )
    .map_err(|e| CliError::numerical(format!("dataset: {e}")))?;

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("data.csv");
    let mut file = std::fs::File::create(&csv_path)?;
    csv::write_csv(&data, &mut file)?;

    let mut report = Report::new("simulate");
    report.echo_config(config);
    dataset_kv(&mut report, &data);
    report.push_kv("output", csv_path.display().to_string());
    report.push_json("output", Json::str(csv_path.display().to_string()));
    Ok(report)
}

pub fn run_gof(config: &RunConfig, data: &Option<OrdinalDataset>) -> Result<Report, CliError> {
    let data = require_data(data)?;
    let rule = rule_for(config)?;
    let families = assignment_for(config, data.groups().n_groups())?;
    let opts = fit_options(config, false);
    let result = fit(data, config.structure, &families, &rule, &opts)
        .map_err(|e| CliError::numerical(format!("fit failed: {e}")))?;
    let gof = m2(&result.spec, data, &rule)
        .map_err(|e| CliError::numerical(format!("m2 failed: {e}")))?;

    let mut report = Report::new("gof");
    report.echo_config(config);
    dataset_kv(&mut report, data);
    fit_kv(&mut report, &result);
    report.push_kv("m2", fmt_f(gof.m2, 4));
    report.push_kv("df", gof.df.to_string());
    if gof.dropped > 0 {
        report.push_kv("df_dropped", gof.dropped.to_string());
    }
    report.push_kv("p_value", format!("{:.3e}", gof.p_value));
    report.push_kv("s", gof.s.to_string());
    report.push_kv("q", gof.q.to_string());
    report.push_json(
        "m2",
        Json::obj(vec![
            ("statistic", Json::num(gof.m2)),
            ("df", Json::Int(gof.df as i64)),
            ("dropped", Json::Int(gof.dropped as i64)),
            ("p_value", Json::num(gof.p_value)),
            ("s", Json::Int(gof.s as i64)),
            ("q", Json::Int(gof.q as i64)),
        ]),
    );

    // Maximum-deviation summary in the per-group / all-items layout.
    let mut rows = Vec::new();
    for (g, mean) in gof.discrepancies.group_means.iter().enumerate() {
        rows.push(vec![format!("items in group {}", g + 1), fmt_f(*mean, 2)]);
    }
    rows.push(vec![
        "all items".to_string(),
        fmt_f(gof.discrepancies.overall_mean, 2),
    ]);
    report.push_table(Table {
        name: "max_discrepancy".into(),
        header: ["scope", "mean_D"].iter().map(|s| s.to_string()).collect(),
        rows,
    });
    report.push_json(
        "discrepancies",
        Json::obj(vec![
            (
                "group_means",
                Json::Arr(gof.discrepancies.group_means.iter().map(|&x| Json::num(x)).collect()),
            ),
            ("overall_mean", Json::num(gof.discrepancies.overall_mean)),
            (
                "pairs",
                Json::Arr(
                    gof.discrepancies
                        .pairs
                        .iter()
                        .map(|&(a, b, dval)| {
                            Json::obj(vec![
                                ("item_a", Json::str(data.item_names()[a].clone())),
                                ("item_b", Json::str(data.item_names()[b].clone())),
                                ("d", Json::num(dval)),
                            ])
                        })
                        .collect(),
                ),
            ),
        ]),
    );
    Ok(report)
}

pub fn run_diagnose(config: &RunConfig, data: &Option<OrdinalDataset>) -> Result<Report, CliError> {
    let data = require_data(data)?;
    let candidates = candidates_for(config);
    let table = diagnostics_table(data, &candidates)
        .map_err(|e| CliError::numerical(format!("diagnostics failed: {e}")))?;

    let mut report = Report::new("diagnose");
    report.echo_config(config);
    dataset_kv(&mut report, data);

    // Table-4 layout: scope blocks as columns, observed plus one row per
    // family.
    let mut header = vec!["row".to_string()];
    for scope in &table.scopes {
        let label = match scope.scope {
            Scope::AllItems => "all".to_string(),
            Scope::Group(g) => format!("g{}", g + 1),
        };
        header.push(format!("{label}_rho"));
        header.push(format!("{label}_lo"));
        header.push(format!("{label}_hi"));
    }
    let mut rows = Vec::new();
    let mut observed = vec!["observed".to_string()];
    for scope in &table.scopes {
        observed.push(fmt_f(scope.rho, 2));
        observed.push(fmt_f(scope.rho_lower, 2));
        observed.push(fmt_f(scope.rho_upper, 2));
    }
    rows.push(observed);
    for (fi, family) in candidates.iter().enumerate() {
        let mut row = vec![family.tag()];
        for scope in &table.scopes {
            match scope.theoretical[fi].semicorr {
                Some((lo, hi)) => {
                    row.push(fmt_f(scope.rho, 2));
                    row.push(fmt_f(lo, 2));
                    row.push(fmt_f(hi, 2));
                }
                None => {
                    row.push(fmt_f(scope.rho, 2));
                    row.push("-".to_string());
                    row.push("-".to_string());
                }
            }
        }
        rows.push(row);
    }
    report.push_table(Table {
        name: "semicorrelations".into(),
        header,
        rows,
    });

    report.push_json(
        "scopes",
        Json::Arr(
            table
                .scopes
                .iter()
                .map(|scope| {
                    Json::obj(vec![
                        (
                            "scope",
                            Json::str(match scope.scope {
                                Scope::AllItems => "all".to_string(),
                                Scope::Group(g) => format!("group{}", g + 1),
                            }),
                        ),
                        ("n_pairs", Json::Int(scope.n_pairs as i64)),
                        ("rho", Json::num(scope.rho)),
                        ("rho_lower", Json::num(scope.rho_lower)),
                        ("rho_upper", Json::num(scope.rho_upper)),
                        ("sparse_share", Json::num(scope.sparse_share)),
                        (
                            "theoretical",
                            Json::Arr(
                                scope
                                    .theoretical
                                    .iter()
                                    .map(|row| {
                                        Json::obj(vec![
                                            ("family", Json::str(row.family.tag())),
                                            (
                                                "lower",
                                                row.semicorr
                                                    .map(|(lo, _)| Json::num(lo))
                                                    .unwrap_or(Json::Null),
                                            ),
                                            (
                                                "upper",
                                                row.semicorr
                                                    .map(|(_, hi)| Json::num(hi))
                                                    .unwrap_or(Json::Null),
                                            ),
                                        ])
                                    })
                                    .collect(),
                            ),
                        ),
                    ])
                })
                .collect(),
        ),
    );
    Ok(report)
}
