//! Block Metropolis-Hastings over the simplex blocks.
//!
//! Each block is moved by multiplying its spacings with independent
//! `U(1/r, r)` factors and renormalising. Under a uniform Dirichlet prior
//! the acceptance ratio is the likelihood ratio times the ratio of reverse
//! and forward proposal densities.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{bail, Result};
use crate::field::{floor_renormalize, BlockId, CoefficientField};
use crate::likelihood::LikelihoodState;
use crate::model::QuantileModel;
use crate::objective::BlockObjective;
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Spread of the multiplicative proposal.
    pub r: f64,
    pub seed: u64,
    /// Spacing floor applied to proposals.
    pub floor: f64,
    /// Visit blocks in a fresh random order each sweep.
    pub random_scan: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 1_000,
            thin: 1,
            r: 1.3,
            seed: 0,
            floor: 1e-8,
            random_scan: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            bail!(Validation, "iterations must be positive");
        }
        if self.burn_in >= self.iterations {
            bail!(
                Validation,
                "burn-in {} must be below the iteration count {}",
                self.burn_in,
                self.iterations
            );
        }
        if self.thin == 0 {
            bail!(Validation, "thinning interval must be positive");
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            bail!(Validation, "proposal spread r must exceed 1, got {}", self.r);
        }
        if !(self.floor >= 0.0 && self.floor < 1.0) {
            bail!(Validation, "spacing floor must lie in [0, 1), got {}", self.floor);
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn draw_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub draws: Vec<CoefficientField>,
    /// Log-likelihood after every sweep, burn-in included.
    pub loglik_trace: Vec<f64>,
    pub config: McmcConfig,
    /// Per block, in canonical block order.
    pub acceptance_rates: Vec<f64>,
}

impl PosteriorSamples {
    /// Entrywise mean of the draws. Because the quantile is linear in the
    /// spacings, the model built from it gives the posterior mean of `Q`.
    pub fn mean_field(&self) -> Result<CoefficientField> {
        CoefficientField::mean(&self.draws)
    }

    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance_rates.is_empty() {
            return 0.0;
        }
        self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64
    }
}

/// Outcome of one block move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveStatus {
    Accepted,
    Rejected,
    /// The likelihood could not be evaluated at the proposal.
    Failed,
}

/// Multiplicative proposal: `V_j = b_j U_j`, `U_j ~ U(1/r, r)`, normalised,
/// then floored at `floor` and renormalised.
pub fn propose_block<R: Rng + ?Sized>(block: &[f64], r: f64, floor: f64, rng: &mut R) -> Vec<f64> {
    let lo = 1.0 / r;
    let mut v: Vec<f64> = block
        .iter()
        .map(|b| b * (lo + (r - lo) * rng.random::<f64>()))
        .collect();
    floor_renormalize(&mut v, 0.0);
    if floor > 0.0 {
        floor_renormalize(&mut v, floor);
    }
    v
}

/// Log density of moving from `from` to `to` under [`propose_block`]
/// (without the floor), with respect to Lebesgue measure on the first
/// `K - 1` coordinates.
pub fn proposal_log_density(from: &[f64], to: &[f64], r: f64) -> Result<f64> {
    if from.len() != to.len() || from.is_empty() {
        bail!(Validation, "blocks of different lengths {} and {}", from.len(), to.len());
    }
    if let Some(v) = from.iter().find(|v| !(**v > 0.0)) {
        bail!(Domain, "proposal source has a non-positive entry {v}");
    }
    let k = from.len() as f64;
    let mut min_up = f64::INFINITY;
    let mut max_down = 0.0f64;
    let mut log_prod = NeumaierSum::new();
    for (f, t) in from.iter().zip(to) {
        min_up = min_up.min(r * f / t);
        max_down = max_down.max(f / (r * t));
        log_prod.add(libm::log(*f));
    }
    if !(min_up > max_down) {
        return Ok(f64::NEG_INFINITY);
    }
    let log_d1 = k * libm::log(min_up);
    let log_d2 = k * libm::log(max_down);
    let log_diff = log_d1 + libm::log1p(-libm::exp(log_d2 - log_d1));
    Ok(k * libm::log(r / (r * r - 1.0)) - log_prod.value() + log_diff - libm::log(k))
}

/// Log acceptance ratio of moving block `current -> proposal`.
pub fn log_acceptance(
    ll_current: f64,
    ll_proposal: f64,
    current: &[f64],
    proposal: &[f64],
    r: f64,
) -> Result<f64> {
    let reverse = proposal_log_density(proposal, current, r)?;
    let forward = proposal_log_density(current, proposal, r)?;
    Ok((ll_proposal - ll_current) + reverse - forward)
}

fn block_order<R: Rng + ?Sized>(field: &CoefficientField, random: bool, rng: &mut R) -> Vec<BlockId> {
    let mut ids: Vec<BlockId> = field.block_ids().collect();
    if random {
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
    }
    ids
}

/// One sweep over all blocks. `current` holds the objective value of
/// `state` and is kept up to date; `status` receives one entry per block in
/// canonical order.
pub fn mh_sweep<O: BlockObjective + ?Sized, R: Rng + ?Sized>(
    state: &mut CoefficientField,
    current: &mut f64,
    objective: &mut O,
    config: &McmcConfig,
    rng: &mut R,
    status: &mut Vec<MoveStatus>,
) {
    let ids = block_order(state, config.random_scan, rng);
    status.clear();
    status.resize(state.block_count(), MoveStatus::Rejected);
    let per_curve = state.blocks_per_curve();
    for id in ids {
        let slot = id.curve as usize * per_curve + id.index;
        let prop = propose_block(state.block(id), config.r, config.floor, rng);
        let ll = objective.with_block(state, id, &prop);
        if ll.is_nan() || ll == f64::NEG_INFINITY {
            status[slot] = MoveStatus::Failed;
            continue;
        }
        let accept = if *current == f64::NEG_INFINITY {
            true
        } else {
            match log_acceptance(*current, ll, state.block(id), &prop, config.r) {
                Ok(a) if a >= 0.0 => true,
                Ok(a) if a.is_nan() => false,
                Ok(a) => libm::log(rng.random::<f64>()) < a,
                Err(_) => false,
            }
        };
        if accept {
            state.block_mut(id).copy_from_slice(&prop);
            *current = objective.commit_block(state, id);
            status[slot] = MoveStatus::Accepted;
        }
    }
}

/// Runs a chain against an arbitrary objective.
pub fn run_chain_with<O: BlockObjective + ?Sized>(
    objective: &mut O,
    init: &CoefficientField,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    config.validate()?;
    init.validate()?;
    let mut rng = crate::rng_from_seed(config.seed, 0);
    let mut state = init.clone();
    if config.floor > 0.0 {
        let ids: Vec<BlockId> = state.block_ids().collect();
        for id in ids {
            if state.block(id).iter().any(|v| *v < config.floor) {
                floor_renormalize(state.block_mut(id), config.floor);
            }
        }
    }
    let mut current = objective.rebase(&state);
    let mut accepted = vec![0usize; state.block_count()];
    let mut draws = Vec::with_capacity(config.draw_count());
    let mut trace = Vec::with_capacity(config.iterations);
    let mut status = Vec::new();
    for t in 1..=config.iterations {
        mh_sweep(&mut state, &mut current, objective, config, &mut rng, &mut status);
        for (a, s) in accepted.iter_mut().zip(&status) {
            if *s == MoveStatus::Accepted {
                *a += 1;
            }
        }
        trace.push(current);
        if t > config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(state.clone());
        }
    }
    let n = config.iterations as f64;
    Ok(PosteriorSamples {
        draws,
        loglik_trace: trace,
        config: config.clone(),
        acceptance_rates: accepted.iter().map(|a| *a as f64 / n).collect(),
    })
}

/// Posterior sampling of the coefficient field given data, starting at
/// `init`.
pub fn run_chain(
    data: &Dataset,
    init: &CoefficientField,
    shell: &QuantileModel,
    config: &McmcConfig,
) -> Result<PosteriorSamples> {
    let shell = shell.with_coeffs(init.clone())?;
    let mut objective = LikelihoodState::new(&shell, data)?;
    run_chain_with(&mut objective, init, config)
}

/// Posterior mean and equal-tailed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and central `mass` interval of a sample.
pub fn summarize_values(values: &mut [f64], mass: f64) -> Result<Summary> {
    if values.is_empty() {
        bail!(Validation, "cannot summarise an empty sample");
    }
    if !(mass > 0.0 && mass <= 1.0) {
        bail!(Validation, "interval mass must lie in (0, 1], got {mass}");
    }
    let mean = crate::sum::sum(values.iter().copied()) / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - mass);
    let lower = empirical_quantile(values, a);
    let upper = empirical_quantile(values, 1.0 - a);
    // guard against rounding pushing the mean just outside
    Ok(Summary {
        mean: mean.clamp(values[0], values[values.len() - 1]),
        lower: lower.min(mean),
        upper: upper.max(mean),
    })
}

/// Summary of `Q(tau | x, z)` over the posterior draws.
pub fn summarize(
    samples: &PosteriorSamples,
    shell: &QuantileModel,
    tau: f64,
    x: f64,
    z: &[f64],
    mass: f64,
) -> Result<Summary> {
    if samples.draws.is_empty() {
        bail!(Validation, "no posterior draws to summarise");
    }
    let mut values = Vec::with_capacity(samples.draws.len());
    for d in &samples.draws {
        values.push(shell.with_coeffs(d.clone())?.quantile(tau, x, z)?);
    }
    summarize_values(&mut values, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::dataset::Site;
    use crate::field::Curve;
    use crate::model::TransformSpec;
    use crate::objective::{FlatObjective, FnObjective};
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn proposal_stays_on_simplex() {
        let mut g = rng(1);
        let b = [0.1, 0.2, 0.3, 0.4];
        for _ in 0..1000 {
            let p = propose_block(&b, 2.0, 1e-8, &mut g);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
        let p = propose_block(&b, 1.0 + 1e-12, 0.0, &mut g);
        for (a, c) in p.iter().zip(b) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn proposal_is_permutation_symmetric_in_mean() {
        let mut g = rng(2);
        let n = 1_000_000;
        let mut acc = [0.0f64; 4];
        let mut acc2 = [0.0f64; 4];
        for _ in 0..n {
            let p = propose_block(&[0.25; 4], 2.0, 0.0, &mut g);
            for j in 0..4 {
                acc[j] += p[j];
                acc2[j] += p[j] * p[j];
            }
        }
        for j in 0..4 {
            let m = acc[j] / n as f64;
            let se = ((acc2[j] / n as f64 - m * m) / n as f64).sqrt();
            assert!((m - 0.25).abs() < 3.0 * se, "coordinate {j}: {m} (se {se})");
        }
    }

    #[test]
    fn density_example_value() {
        // closed form at from = to = uniform, K = 4, r = 2
        let want: f64 = (2.0f64 / 3.0).powi(4) * 4f64.powi(4) * (2f64.powi(4) - 2f64.powi(-4)) / 4.0;
        let got = proposal_log_density(&[0.25; 4], &[0.25; 4], 2.0).unwrap();
        assert!((got - want.ln()).abs() < 1e-12, "{got} vs {}", want.ln());
        assert!((want - 201.4814814814815).abs() < 1e-9);
    }

    #[test]
    fn density_unreachable_and_domain() {
        let from = [0.25; 4];
        let to = [0.7, 0.1, 0.1, 0.1];
        assert_eq!(proposal_log_density(&from, &to, 1.5).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            proposal_log_density(&[0.0, 0.5, 0.5], &[0.2, 0.4, 0.4], 2.0),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn density_matches_histogram() {
        // K = 3: density on the (t1, t2) coordinates of `to`
        let from = [0.2, 0.3, 0.5];
        let r = 1.6;
        let mut g = rng(3);
        let n = 1_000_000;
        let (c1, c2, h) = (0.2, 0.3, 0.02);
        let mut hits = 0usize;
        for _ in 0..n {
            let p = propose_block(&from, r, 0.0, &mut g);
            if (p[0] - c1).abs() < h / 2.0 && (p[1] - c2).abs() < h / 2.0 {
                hits += 1;
            }
        }
        let empirical = hits as f64 / n as f64 / (h * h);
        // average the formula over the bin
        let m = 20;
        let mut avg = 0.0;
        for a in 0..m {
            for b in 0..m {
                let t1 = c1 - h / 2.0 + h * (a as f64 + 0.5) / m as f64;
                let t2 = c2 - h / 2.0 + h * (b as f64 + 0.5) / m as f64;
                avg += proposal_log_density(&from, &[t1, t2, 1.0 - t1 - t2], r).unwrap().exp();
            }
        }
        avg /= (m * m) as f64;
        assert!((empirical - avg).abs() / avg < 0.05, "{empirical} vs {avg}");
    }

    #[test]
    fn flat_chain_targets_uniform_dirichlet() {
        let init = CoefficientField::uniform(1, 1, 4).unwrap();
        let cfg = McmcConfig {
            iterations: 100_000,
            burn_in: 1_000,
            r: 1.5,
            seed: 7,
            floor: 0.0,
            ..McmcConfig::default()
        };
        let s = run_chain_with(&mut FlatObjective, &init, &cfg).unwrap();
        let k = 4.0;
        let want_var = (k - 1.0) / (k * k * (k + 1.0));
        for curve in [Curve::First, Curve::Second] {
            for j in 0..4 {
                let v: Vec<f64> = s.draws.iter().map(|d| d.spacings(curve)[j]).collect();
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
                // batch means for the autocorrelated chain
                let batches = 100;
                let bs = v.len() / batches;
                let bm: Vec<f64> = (0..batches)
                    .map(|b| v[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
                    .collect();
                let bmm = bm.iter().sum::<f64>() / batches as f64;
                let se = (bm.iter().map(|x| (x - bmm) * (x - bmm)).sum::<f64>()
                    / (batches as f64 - 1.0)
                    / batches as f64)
                    .sqrt();
                assert!((m - 0.25).abs() < 3.0 * se + 1e-3, "mean {m} se {se}");
                assert!((var - want_var).abs() / want_var < 0.1, "var {var} vs {want_var}");
            }
        }
    }

    #[test]
    fn chain_bookkeeping_and_determinism() {
        let init = CoefficientField::uniform(1, 2, 3).unwrap();
        let cfg = McmcConfig {
            iterations: 10,
            burn_in: 0,
            seed: 3,
            ..McmcConfig::default()
        };
        let mut obj = FnObjective::new(|f: &CoefficientField| -10.0 * f.spacings(Curve::First)[0]);
        let a = run_chain_with(&mut obj, &init, &cfg).unwrap();
        assert_eq!(a.draws.len(), 10);
        assert_eq!(a.loglik_trace.len(), 10);
        assert_eq!(a.acceptance_rates.len(), 4);
        let b = run_chain_with(&mut obj, &init, &cfg).unwrap();
        assert_eq!(a, b);
        let thin = McmcConfig {
            iterations: 25,
            burn_in: 4,
            thin: 4,
            ..cfg.clone()
        };
        assert_eq!(run_chain_with(&mut obj, &init, &thin).unwrap().draws.len(), 5);
        let bad = McmcConfig {
            burn_in: 10,
            ..cfg
        };
        assert!(run_chain_with(&mut obj, &init, &bad).is_err());
    }

    #[test]
    fn sweep_acceptance_is_hand_traceable() {
        // one site, one observation, two blocks per curve not touched by it
        let tb = BasisSpec::new(2, 2).unwrap();
        let sb = BasisSpec::new(0, 2).unwrap();
        let shell = QuantileModel::shell(tb, sb, 1, TransformSpec::unit(1)).unwrap();
        let data = Dataset::unit(
            1,
            vec![Site {
                id: "s".into(),
                coords: vec![0.2],
                obs: vec![(0.4, 0.3)],
            }],
        )
        .unwrap();
        let init = shell.coeffs().clone();
        let cfg = McmcConfig {
            r: 1.4,
            floor: 0.0,
            ..McmcConfig::default()
        };
        let mut state = init.clone();
        let mut obj = LikelihoodState::new(&shell, &data).unwrap();
        let mut current = obj.rebase(&state);
        let mut g = rng(11);
        let mut status = Vec::new();
        mh_sweep(&mut state, &mut current, &mut obj, &cfg, &mut g, &mut status);

        // replay the same random stream by hand
        let mut g = rng(11);
        let mut replay = init.clone();
        let full = |f: &CoefficientField| shell.with_coeffs(f.clone()).unwrap().log_likelihood(&data).unwrap();
        let ids: Vec<BlockId> = replay.block_ids().collect();
        for (slot, id) in ids.iter().enumerate() {
            let prop = propose_block(replay.block(*id), cfg.r, cfg.floor, &mut g);
            let mut alt = replay.clone();
            alt.set_block(*id, &prop).unwrap();
            let a = (full(&alt) - full(&replay))
                + proposal_log_density(&prop, replay.block(*id), cfg.r).unwrap()
                - proposal_log_density(replay.block(*id), &prop, cfg.r).unwrap();
            let accept = a >= 0.0 || g.random::<f64>().ln() < a;
            assert_eq!(accept, status[slot] == MoveStatus::Accepted);
            if accept {
                replay = alt;
            }
        }
        assert_eq!(replay, state);
        assert!((current - full(&state)).abs() < 1e-10);
    }

    #[test]
    fn summaries() {
        let s = summarize_values(&mut [0.2, 0.4], 1.0).unwrap();
        assert!((s.mean - 0.3).abs() < 1e-15 && s.lower == 0.2 && s.upper == 0.4);
        let s = summarize_values(&mut [0.5; 7], 0.9).unwrap();
        assert_eq!((s.mean, s.lower, s.upper), (0.5, 0.5, 0.5));
        assert!(summarize_values(&mut [], 0.9).is_err());
        assert!(summarize_values(&mut [1.0], 0.0).is_err());
    }
}
