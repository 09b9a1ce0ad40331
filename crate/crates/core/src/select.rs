//! Stepwise copula family selection and Vuong model comparison.
//!
//! Selection starts from a model with BVN links everywhere, sweeps the
//! candidate families for the links attached to the common (or second-order)
//! factor, fixes the AIC-minimizing family, then does the same per group
//! factor in order. Ties break toward BVN first, then candidate-list order.

use crate::copula::Family;
use crate::data::OrdinalDataset;
use crate::estimate::{fit, FamilyAssignment, FitOptions, FitResult};
use crate::model::{ModelError, Structure};
use crate::quadrature::QuadratureRule;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Links attached to the common or second-order factor.
    X0,
    /// Links of the items of one group to their group factor.
    Group(usize),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::X0 => write!(f, "X0"),
            Slot::Group(g) => write!(f, "X{}", g + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutcome {
    pub family: Family,
    /// AIC of the full refit with this candidate in the slot; `None` when the
    /// fit failed (candidate skipped).
    pub aic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub slot: Slot,
    pub entries: Vec<CandidateOutcome>,
    pub chosen: Family,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    /// The all-BVN starting fit (step-zero baseline).
    pub baseline: FitResult,
    pub steps: Vec<SelectionStep>,
    pub assignment: FamilyAssignment,
    pub final_fit: FitResult,
}

impl SelectionTrace {
    pub fn baseline_aic(&self) -> f64 {
        self.baseline.aic
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectError {
    EmptyCandidates,
    /// Every candidate fit failed for a slot.
    SlotFailed { slot: usize },
    MismatchedDatasets,
    Model(ModelError),
    Estimate(crate::estimate::EstimateError),
}

impl fmt::Display for SelectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectError::EmptyCandidates => write!(f, "candidate set is empty"),
            SelectError::SlotFailed { slot } => {
                write!(f, "all candidate fits failed for slot {slot}")
            }
            SelectError::MismatchedDatasets => {
                write!(f, "fits do not refer to the same dataset shape")
            }
            SelectError::Model(e) => write!(f, "{e}"),
            SelectError::Estimate(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SelectError {}

/// Runs the heuristic stepwise selection. Returns the per-step AIC table, the
/// chosen per-factor families and the final fit (with standard errors when
/// `opts.compute_se` is set; sweep fits never compute them).
pub fn select_families(
    data: &OrdinalDataset,
    structure: Structure,
    candidates: &[Family],
    rule: &QuadratureRule,
    opts: &FitOptions,
) -> Result<SelectionTrace, SelectError> {
    if candidates.is_empty() {
        return Err(SelectError::EmptyCandidates);
    }
    let g_count = data.groups().n_groups();
    let sweep_opts = FitOptions {
        compute_se: false,
        ..opts.clone()
    };

    let mut assignment = FamilyAssignment::uniform(Family::Gaussian, g_count);
    let baseline = fit(data, structure, &assignment, rule, &sweep_opts)
        .map_err(SelectError::Estimate)?;

    let mut steps = Vec::with_capacity(g_count + 1);
    // The fit whose assignment equals the current incumbent; the sweep
    // candidate matching the incumbent slot family reuses it (fits are
    // deterministic, so this changes nothing but the fit count).
    let mut incumbent = baseline.clone();
    let mut last_best: Option<FitResult> = Some(baseline.clone());

    let slots: Vec<Slot> = core::iter::once(Slot::X0)
        .chain((0..g_count).map(Slot::Group))
        .collect();
    for slot in slots {
        let mut entries = Vec::with_capacity(candidates.len());
        let mut best: Option<(f64, usize, FitResult)> = None;
        for (idx, &cand) in candidates.iter().enumerate() {
            let mut trial = assignment.clone();
            match slot {
                Slot::X0 => trial.x0 = cand,
                Slot::Group(g) => trial.groups[g] = cand,
            }
            let refit = if trial == assignment {
                Ok(incumbent.clone())
            } else {
                fit(data, structure, &trial, rule, &sweep_opts)
            };
            match refit {
                Ok(res) => {
                    let aic = res.aic;
                    entries.push(CandidateOutcome {
                        family: cand,
                        aic: Some(aic),
                    });
                    let better = match &best {
                        None => true,
                        Some((best_aic, best_idx, _)) => {
                            aic < *best_aic
                                || (aic == *best_aic
                                    && tie_rank(cand, idx) < tie_rank(candidates[*best_idx], *best_idx))
                        }
                    };
                    if better {
                        best = Some((aic, idx, res));
                    }
                }
                Err(_) => entries.push(CandidateOutcome {
                    family: cand,
                    aic: None,
                }),
            }
        }
        let (_, best_idx, best_fit) = best.ok_or(SelectError::SlotFailed {
            slot: match slot {
                Slot::X0 => 0,
                Slot::Group(g) => g + 1,
            },
        })?;
        let chosen = candidates[best_idx];
        match slot {
            Slot::X0 => assignment.x0 = chosen,
            Slot::Group(g) => assignment.groups[g] = chosen,
        }
        steps.push(SelectionStep {
            slot,
            entries,
            chosen,
        });
        incumbent = best_fit.clone();
        last_best = Some(best_fit);
    }

    // The winner of the last sweep already carries the final assignment; add
    // standard errors only if asked for.
    let mut final_fit = last_best.expect("at least one sweep ran");
    if opts.compute_se {
        let se = crate::estimate::standard_errors(&final_fit.spec, data, rule)
            .map_err(SelectError::Estimate)?;
        final_fit.se_flagged = se.flagged;
        final_fit.se = Some(se.params);
    }

    Ok(SelectionTrace {
        baseline,
        steps,
        assignment,
        final_fit,
    })
}

/// Tie preference: BVN first, then candidate-list position.
fn tie_rank(family: Family, idx: usize) -> (u8, usize) {
    (if family == Family::Gaussian { 0 } else { 1 }, idx)
}

/// 95% confidence interval of the average per-observation log-likelihood
/// difference of model B over model A: Dbar +/- 1.96 sd(D)/sqrt(n). An
/// interval entirely above zero favors B.
pub fn vuong_interval(
    fit_a: &FitResult,
    fit_b: &FitResult,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<(f64, f64), SelectError> {
    vuong(fit_a, fit_b, data, rule, false)
}

/// Variant with the AIC-style parameter-count correction subtracted from the
/// mean difference; the plain interval is the default elsewhere.
pub fn vuong_interval_adjusted(
    fit_a: &FitResult,
    fit_b: &FitResult,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
) -> Result<(f64, f64), SelectError> {
    vuong(fit_a, fit_b, data, rule, true)
}

fn vuong(
    fit_a: &FitResult,
    fit_b: &FitResult,
    data: &OrdinalDataset,
    rule: &QuadratureRule,
    adjusted: bool,
) -> Result<(f64, f64), SelectError> {
    if fit_a.spec.n_items() != data.n_items() || fit_b.spec.n_items() != data.n_items() {
        return Err(SelectError::MismatchedDatasets);
    }
    let ll_a = fit_a
        .spec
        .row_logliks(data, rule)
        .map_err(SelectError::Model)?;
    let ll_b = fit_b
        .spec
        .row_logliks(data, rule)
        .map_err(SelectError::Model)?;
    let n = ll_a.len();
    let diffs: Vec<f64> = ll_b.iter().zip(&ll_a).map(|(b, a)| b - a).collect();
    let mut mean = diffs.iter().sum::<f64>() / n as f64;
    if adjusted {
        mean -= (fit_b.n_free_params as f64 - fit_a.n_free_params as f64) / n as f64;
    }
    let var = if n > 1 {
        diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0)
    } else {
        0.0
    };
    let half = 1.96 * libm::sqrt(var / n as f64);
    Ok((mean - half, mean + half))
}
