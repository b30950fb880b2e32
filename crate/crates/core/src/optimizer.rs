//! Maximum likelihood by greedy coordinate search on the simplex blocks,
//! and AIC-based selection of the knot counts.
//!
//! Every iteration tries, for each block and coordinate, a jump of `+s`
//! (then renormalise) and a jump of `-s` floored at `lambda` (then
//! renormalise), and applies the single best improving jump. When no jump
//! gains more than `tol_fun_1` the step shrinks. A run ends once the step
//! falls below `phi`; runs restart from the incumbent with the initial step
//! until one improves by less than `tol_fun_2`.

use alloc::vec::Vec;

use crate::basis::BasisSpec;
use crate::dataset::Dataset;
use crate::error::{bail, Error, Result};
use crate::field::{BlockId, CoefficientField};
use crate::likelihood::LikelihoodState;
use crate::model::QuantileModel;
use crate::objective::BlockObjective;

/// Time-basis degree used for fitting.
pub const TIME_DEGREE: usize = 2;
/// Spatial-basis degree used for fitting.
pub const SPACE_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub s_initial: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub phi: f64,
    pub lambda: f64,
    pub tol_fun_1: f64,
    pub tol_fun_2: f64,
    pub max_iter: usize,
    pub max_runs: usize,
    /// Recorded with results; the search itself is deterministic.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            s_initial: 1.0,
            rho1: 2.0,
            rho2: 1.5,
            phi: 0.1,
            lambda: 0.01,
            tol_fun_1: 0.1,
            tol_fun_2: 0.1,
            max_iter: 5000,
            max_runs: 200,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.s_initial) {
            bail!(Validation, "initial step must be positive");
        }
        if !(self.rho1 > 1.0 && self.rho2 > 1.0) {
            bail!(Validation, "step decay factors must exceed 1");
        }
        if !(pos(self.phi) && pos(self.lambda) && pos(self.tol_fun_1) && pos(self.tol_fun_2)) {
            bail!(Validation, "thresholds and tolerances must be positive");
        }
        if self.lambda >= 1.0 {
            bail!(Validation, "sparsity threshold must be below 1");
        }
        if self.max_iter == 0 || self.max_runs == 0 {
            bail!(Validation, "iteration and run limits must be at least 1");
        }
        Ok(())
    }
}

/// One line of the optimisation trace, written after every iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub run: usize,
    pub iteration: usize,
    pub step: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub field: CoefficientField,
    pub value: f64,
    pub runs: usize,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Problem size as (spacings, free coordinates).
pub fn problem_dimensions(field: &CoefficientField) -> (usize, usize) {
    let n = field.block_count();
    (n * field.block_len(), n * field.block_len().saturating_sub(1))
}

/// Writes the jumped copy of `block` to `out`; false if the jump is a no-op.
fn jump(block: &[f64], j: usize, step: f64, lambda: f64, out: &mut Vec<f64>) -> bool {
    out.clear();
    out.extend_from_slice(block);
    if step > 0.0 {
        out[j] += step;
        let s = 1.0 + step;
        out.iter_mut().for_each(|v| *v /= s);
    } else {
        if block[j] <= lambda {
            return false;
        }
        out[j] = (block[j] + step).max(lambda);
        let s = 1.0 - (block[j] - out[j]);
        out.iter_mut().for_each(|v| *v /= s);
    }
    // exact unit sum
    let total = crate::sum::sum(out.iter().copied());
    out.iter_mut().for_each(|v| *v /= total);
    true
}

/// Maximises `objective` starting from `init`.
pub fn gcdvsms_maximize<O: BlockObjective + ?Sized>(
    objective: &mut O,
    init: &CoefficientField,
    config: &OptimConfig,
    mut trace: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<OptimOutcome> {
    config.validate()?;
    init.validate()?;
    let mut field = init.clone();
    let mut value = objective.rebase(&field);
    let ids: Vec<BlockId> = field.block_ids().collect();
    let k = field.block_len();
    let mut cand = Vec::with_capacity(k);
    let mut best_block = Vec::with_capacity(k);
    let mut iterations = 0usize;
    let mut evaluations = 0usize;
    let mut runs = 0usize;
    while runs < config.max_runs {
        runs += 1;
        let rho = if runs == 1 { config.rho1 } else { config.rho2 };
        let start = value;
        let mut step = config.s_initial;
        let mut iter = 0usize;
        while step >= config.phi && iter < config.max_iter {
            iter += 1;
            iterations += 1;
            let mut best: Option<(BlockId, f64)> = None;
            for &id in &ids {
                for j in 0..k {
                    for signed in [step, -step] {
                        if !jump(field.block(id), j, signed, config.lambda, &mut cand) {
                            continue;
                        }
                        let v = objective.with_block(&field, id, &cand);
                        evaluations += 1;
                        if v > best.map_or(value, |b| b.1) && !v.is_nan() {
                            best = Some((id, v));
                            best_block.clone_from(&cand);
                        }
                    }
                }
            }
            let gain = match best {
                Some((id, v)) => {
                    let gain = v - value;
                    field.block_mut(id).copy_from_slice(&best_block);
                    value = objective.commit_block(&field, id);
                    gain
                }
                None => 0.0,
            };
            if !(gain > config.tol_fun_1) {
                step /= rho;
            }
            if let Some(t) = trace.as_mut() {
                t(&TraceRow {
                    run: runs,
                    iteration: iter,
                    step,
                    objective: value,
                });
            }
        }
        if !(value - start >= config.tol_fun_2) {
            break;
        }
    }
    Ok(OptimOutcome {
        field,
        value,
        runs,
        iterations,
        evaluations,
    })
}

/// Empty model with the fitting degrees and `p1`, `p2` intervals.
pub fn fit_shell(data: &Dataset, p1: usize, p2: usize) -> Result<QuantileModel> {
    QuantileModel::shell(
        BasisSpec::new(TIME_DEGREE, p1)?,
        BasisSpec::new(SPACE_DEGREE, p2)?,
        data.dim(),
        data.transforms().clone(),
    )
}

/// Maximum likelihood fit from a given starting field.
pub fn fit_mle_from(
    data: &Dataset,
    shell: &QuantileModel,
    init: &CoefficientField,
    config: &OptimConfig,
    trace: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<(QuantileModel, OptimOutcome)> {
    if data.is_empty() {
        bail!(Validation, "cannot fit a model to an empty dataset");
    }
    let start = shell.with_coeffs(init.clone())?;
    let mut objective = LikelihoodState::new(&start, data)?;
    let out = gcdvsms_maximize(&mut objective, init, config, trace)?;
    if !out.value.is_finite() {
        // surface the underlying failure
        start.with_coeffs(out.field.clone())?.log_likelihood(data)?;
        bail!(Evaluation, "log-likelihood is not finite at the optimum");
    }
    Ok((shell.with_coeffs(out.field.clone())?, out))
}

/// Maximum likelihood fit with `p1` time intervals and `p2` spatial
/// intervals per axis, starting from uniform blocks.
pub fn fit_mle(data: &Dataset, p1: usize, p2: usize, config: &OptimConfig) -> Result<QuantileModel> {
    let shell = fit_shell(data, p1, p2)?;
    let init = shell.coeffs().clone();
    fit_mle_from(data, &shell, &init, config, None).map(|(m, _)| m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AicCell {
    pub p1: usize,
    pub p2: usize,
    pub aic: core::result::Result<f64, Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AicScan {
    pub best: QuantileModel,
    pub best_index: usize,
    pub table: Vec<AicCell>,
}

/// Fits every `(p1, p2)` pair and keeps the lowest AIC. Ties go to the
/// smaller `p1 + p2`, then the smaller `p1`, then the earlier entry.
pub fn aic_scan(data: &Dataset, grid: &[(usize, usize)], config: &OptimConfig) -> Result<AicScan> {
    aic_scan_traced(data, grid, config, None)
}

/// Receives each optimisation step with its `(p1, p2)` cell.
pub type CellTrace<'a> = dyn FnMut((usize, usize), &TraceRow) + 'a;

/// [`aic_scan`] reporting every optimisation step with its grid cell.
pub fn aic_scan_traced(
    data: &Dataset,
    grid: &[(usize, usize)],
    config: &OptimConfig,
    mut trace: Option<&mut CellTrace<'_>>,
) -> Result<AicScan> {
    if grid.is_empty() {
        bail!(Validation, "knot grid is empty");
    }
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, QuantileModel, f64)> = None;
    for (i, &(p1, p2)) in grid.iter().enumerate() {
        let mut cell_trace = trace.as_mut().map(|t| move |r: &TraceRow| t((p1, p2), r));
        let fitted = fit_shell(data, p1, p2).and_then(|shell| {
            let init = shell.coeffs().clone();
            let sink = cell_trace.as_mut().map(|t| t as &mut dyn FnMut(&TraceRow));
            let (m, _) = fit_mle_from(data, &shell, &init, config, sink)?;
            let aic = m.aic(data)?;
            Ok((m, aic))
        });
        match fitted {
            Ok((m, aic)) => {
                let better = match &best {
                    None => true,
                    Some((b, _, baic)) => {
                        let (bp1, bp2) = grid[*b];
                        (aic, p1 + p2, p1) < (*baic, bp1 + bp2, bp1)
                    }
                };
                if better {
                    best = Some((i, m, aic));
                }
                table.push(AicCell { p1, p2, aic: Ok(aic) });
            }
            Err(e) => table.push(AicCell { p1, p2, aic: Err(e) }),
        }
    }
    match best {
        Some((best_index, best, _)) => Ok(AicScan {
            best,
            best_index,
            table,
        }),
        None => Err(table.swap_remove(0).aic.unwrap_err()),
    }
}
