//! Synthetic benchmark: known quantile surfaces on `[0, 1]^2`, data
//! generation by inverse-transform sampling, and mean squared errors of
//! intercept, slope and quantile values.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::{Dataset, Site};
use crate::error::{bail, Result};
use crate::field::Curve;
use crate::model::QuantileModel;
use crate::optimizer::{aic_scan, OptimConfig};
use crate::sampler::{run_chain, McmcConfig};
use crate::sum::NeumaierSum;

/// Quantile levels at which errors are measured: `0.05 t`, `t = 1..19`.
pub fn tau_grid() -> [f64; 19] {
    core::array::from_fn(|t| 0.05 * (t + 1) as f64)
}

/// Times at which quantile errors are reported.
pub const X_LIST: [f64; 3] = [0.2, 0.5, 0.8];

/// Knot grid searched by the SSTQR fitters.
pub const DEFAULT_GRID: [(usize, usize); 4] = [(3, 3), (4, 4), (5, 5), (6, 6)];

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sites: usize,
    pub points_per_site: usize,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sites: 50,
            points_per_site: 10,
            replications: 50,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            bail!(Validation, "need at least one site");
        }
        if self.points_per_site < 2 {
            bail!(Validation, "need at least two time points per site");
        }
        if self.replications == 0 {
            bail!(Validation, "need at least one replication");
        }
        Ok(())
    }
}

fn check_args(tau: f64, z: &[f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        bail!(Validation, "tau = {tau} outside [0, 1]");
    }
    if z.len() != 2 || !z.iter().all(|v| (0.0..=1.0).contains(v)) {
        bail!(Validation, "truth is defined on [0, 1]^2, got {z:?}");
    }
    Ok(())
}

/// The generating curves.
pub fn true_xi(curve: Curve, tau: f64, z: &[f64]) -> Result<f64> {
    check_args(tau, z)?;
    let (z1, z2) = (z[0], z[1]);
    Ok(match curve {
        Curve::First => {
            (1.0 - 0.5 * (z1 + z2)) * tau * tau
                + z1 * libm::log1p(tau) / (2.0 * core::f64::consts::LN_2)
                + 0.5 * z2 * tau * tau * tau
        }
        Curve::Second => {
            let w = z2 * z2;
            (1.0 - w) * libm::sin(core::f64::consts::FRAC_PI_2 * tau)
                + w * libm::expm1(tau) / (core::f64::consts::E - 1.0)
        }
    })
}

/// Anything that predicts quantiles and the intercept/slope decomposition.
pub trait Estimator {
    fn quantile(&self, tau: f64, x: f64, z: &[f64]) -> Result<f64>;
    /// `(intercept, slope)`.
    fn slope_intercept(&self, tau: f64, z: &[f64]) -> Result<(f64, f64)>;
}

impl Estimator for QuantileModel {
    fn quantile(&self, tau: f64, x: f64, z: &[f64]) -> Result<f64> {
        QuantileModel::quantile(self, tau, x, z)
    }

    fn slope_intercept(&self, tau: f64, z: &[f64]) -> Result<(f64, f64)> {
        QuantileModel::slope_intercept(self, tau, z)
    }
}

/// The generating model.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Truth;

impl Estimator for Truth {
    fn quantile(&self, tau: f64, x: f64, z: &[f64]) -> Result<f64> {
        Ok(x * true_xi(Curve::First, tau, z)? + (1.0 - x) * true_xi(Curve::Second, tau, z)?)
    }

    fn slope_intercept(&self, tau: f64, z: &[f64]) -> Result<(f64, f64)> {
        let b0 = true_xi(Curve::Second, tau, z)?;
        Ok((b0, true_xi(Curve::First, tau, z)? - b0))
    }
}

/// Draws `sites` uniform locations, then for each site and each point of
/// the equidistant time grid a response `x xi1(U) + (1 - x) xi2(U)`.
pub fn generate_with<R: Rng + ?Sized>(sites: usize, n: usize, rng: &mut R) -> Result<Dataset> {
    let coords: Vec<[f64; 2]> = (0..sites).map(|_| [rng.random(), rng.random()]).collect();
    let mut out = Vec::with_capacity(sites);
    for (l, z) in coords.iter().enumerate() {
        let mut obs = Vec::with_capacity(n);
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let u: f64 = rng.random();
            let y = Truth.quantile(u, x, z)?.clamp(0.0, 1.0);
            obs.push((x, y));
        }
        out.push(Site {
            id: format!("site{l}"),
            coords: z.to_vec(),
            obs,
        });
    }
    Dataset::unit(2, out)
}

/// Dataset of replication `rep`; each replication uses its own stream of
/// the configured seed.
pub fn generate_dataset(config: &SimConfig, rep: usize) -> Result<Dataset> {
    config.validate()?;
    let mut rng = crate::rng_from_seed(config.seed, rep as u64);
    generate_with(config.sites, config.points_per_site, &mut rng)
}

/// Mean squared errors of one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub t1: f64,
    pub t2: f64,
    /// At the times of [`X_LIST`].
    pub tx: [f64; 3],
}

impl Metrics {
    pub fn names() -> [&'static str; 5] {
        ["T1", "T2", "T0.2", "T0.5", "T0.8"]
    }

    pub fn values(&self) -> [f64; 5] {
        [self.t1, self.t2, self.tx[0], self.tx[1], self.tx[2]]
    }

    /// Entrywise average.
    pub fn average(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let col = |f: &dyn Fn(&Metrics) -> f64| all.iter().map(f).collect::<NeumaierSum>().value() / n;
        Some(Metrics {
            t1: col(&|m| m.t1),
            t2: col(&|m| m.t2),
            tx: core::array::from_fn(|i| col(&|m| m.tx[i])),
        })
    }
}

/// Errors of `estimate` against `truth` averaged over the given locations
/// and the quantile grid.
pub fn mse_metrics<E: Estimator + ?Sized, T: Estimator + ?Sized>(
    estimate: &E,
    truth: &T,
    locations: &[Vec<f64>],
    taus: &[f64],
) -> Result<Metrics> {
    if locations.is_empty() || taus.is_empty() {
        bail!(Validation, "error metrics need locations and quantile levels");
    }
    let mut t1 = NeumaierSum::new();
    let mut t2 = NeumaierSum::new();
    let mut tx = [NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new()];
    for z in locations {
        for &tau in taus {
            let (a, b) = estimate.slope_intercept(tau, z)?;
            let (a0, b0) = truth.slope_intercept(tau, z)?;
            t1.add((a - a0) * (a - a0));
            t2.add((b - b0) * (b - b0));
            for (acc, x) in tx.iter_mut().zip(X_LIST) {
                let d = estimate.quantile(tau, x, z)? - truth.quantile(tau, x, z)?;
                acc.add(d * d);
            }
        }
    }
    let n = (locations.len() * taus.len()) as f64;
    Ok(Metrics {
        t1: t1.value() / n,
        t2: t2.value() / n,
        tx: core::array::from_fn(|i| tx[i].value() / n),
    })
}

/// Per-replication scratch shared between methods, so that the Bayes
/// fitter can start from the ML fit of the same dataset.
#[derive(Debug, Default)]
pub struct ReplicationCache {
    pub ml: Option<QuantileModel>,
}

/// A fitting method that can be benchmarked.
pub trait Fitter: Sync {
    fn name(&self) -> &str;
    fn fit(&self, data: &Dataset, seed: u64, cache: &mut ReplicationCache) -> Result<Box<dyn Estimator>>;
}

/// Maximum likelihood with AIC selection over a knot grid.
#[derive(Debug, Clone)]
pub struct MlFitter {
    pub grid: Vec<(usize, usize)>,
    pub config: OptimConfig,
}

impl Default for MlFitter {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.to_vec(),
            config: OptimConfig::default(),
        }
    }
}

impl MlFitter {
    fn fit_model(&self, data: &Dataset, cache: &mut ReplicationCache) -> Result<QuantileModel> {
        if let Some(m) = &cache.ml {
            return Ok(m.clone());
        }
        let m = aic_scan(data, &self.grid, &self.config)?.best;
        cache.ml = Some(m.clone());
        Ok(m)
    }
}

impl Fitter for MlFitter {
    fn name(&self) -> &str {
        "ml"
    }

    fn fit(&self, data: &Dataset, _seed: u64, cache: &mut ReplicationCache) -> Result<Box<dyn Estimator>> {
        Ok(Box::new(self.fit_model(data, cache)?))
    }
}

/// Posterior mean from a block MH chain started at the ML fit.
#[derive(Debug, Clone, Default)]
pub struct BayesFitter {
    pub ml: MlFitter,
    pub mcmc: McmcConfig,
}

impl Fitter for BayesFitter {
    fn name(&self) -> &str {
        "bayes"
    }

    fn fit(&self, data: &Dataset, seed: u64, cache: &mut ReplicationCache) -> Result<Box<dyn Estimator>> {
        let start = self.ml.fit_model(data, cache)?;
        let config = McmcConfig {
            seed,
            ..self.mcmc.clone()
        };
        let samples = run_chain(data, start.coeffs(), &start, &config)?;
        Ok(Box::new(start.with_coeffs(samples.mean_field()?)?))
    }
}

/// Returns the truth; a zero-error reference.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleFitter;

impl Fitter for OracleFitter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fit(&self, _: &Dataset, _: u64, _: &mut ReplicationCache) -> Result<Box<dyn Estimator>> {
        Ok(Box::new(Truth))
    }
}

/// Seed for the random parts of fitting replication `rep` with `n` points.
pub fn replication_seed(base: u64, n: usize, rep: usize) -> u64 {
    // splitmix64 finaliser over the packed indices
    let mut z = base ^ ((n as u64) << 32) ^ rep as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fits every method on replication `rep` with `n` points per site.
pub fn run_replication(
    fitters: &[&dyn Fitter],
    n: usize,
    rep: usize,
    config: &SimConfig,
) -> Result<Vec<Result<Metrics>>> {
    let cfg = SimConfig {
        points_per_site: n,
        ..config.clone()
    };
    let data = generate_dataset(&cfg, rep)?;
    let locations: Vec<Vec<f64>> = data.sites().iter().map(|s| s.coords.clone()).collect();
    let taus = tau_grid();
    let seed = replication_seed(config.seed, n, rep);
    let mut cache = ReplicationCache::default();
    Ok(fitters
        .iter()
        .map(|f| {
            let est = f.fit(&data, seed, &mut cache)?;
            mse_metrics(est.as_ref(), &Truth, &locations, &taus)
        })
        .collect())
}

/// Averaged errors of one method at one `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub method: String,
    pub n: usize,
    pub metrics: Metrics,
    pub used: usize,
    pub failed: usize,
    /// First failure message, if any.
    pub failure: Option<String>,
}

impl SimRow {
    /// More than a fifth of the replications failed.
    pub fn unreliable(&self) -> bool {
        5 * self.failed > self.used + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub rows: Vec<SimRow>,
}

impl SimResult {
    pub fn row(&self, method: &str, n: usize) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    /// Builds rows from per-replication outcomes indexed
    /// `[n index][replication][method]`.
    pub fn collect(
        names: &[&str],
        n_values: &[usize],
        outcomes: &[Vec<Vec<Result<Metrics>>>],
    ) -> Self {
        let mut rows = Vec::new();
        for (ni, &n) in n_values.iter().enumerate() {
            for (mi, name) in names.iter().enumerate() {
                let mut ok = Vec::new();
                let mut failed = 0;
                let mut failure = None;
                for rep in &outcomes[ni] {
                    match &rep[mi] {
                        Ok(m) => ok.push(*m),
                        Err(e) => {
                            failed += 1;
                            failure.get_or_insert_with(|| format!("{e}"));
                        }
                    }
                }
                rows.push(SimRow {
                    method: String::from(*name),
                    n,
                    metrics: Metrics::average(&ok).unwrap_or(Metrics {
                        t1: f64::NAN,
                        t2: f64::NAN,
                        tx: [f64::NAN; 3],
                    }),
                    used: ok.len(),
                    failed,
                    failure,
                });
            }
        }
        Self { rows }
    }
}

/// Sequential benchmark over methods, `n` values and replications.
pub fn run_benchmark(fitters: &[&dyn Fitter], n_values: &[usize], config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    if fitters.is_empty() {
        bail!(Validation, "no methods to benchmark");
    }
    let mut outcomes = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut reps = Vec::with_capacity(config.replications);
        for rep in 0..config.replications {
            let cell = run_replication(fitters, n, rep, config)?;
            reps.push(cell);
        }
        outcomes.push(reps);
    }
    let names: Vec<&str> = fitters.iter().map(|f| f.name()).collect();
    Ok(SimResult::collect(&names, n_values, &outcomes))
}
