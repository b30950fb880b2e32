//! Multi-threaded driver for the simulation benchmark.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sstqr_core::simulation::{run_replication, Fitter, Metrics, SimConfig, SimResult};
use sstqr_core::Result as CoreResult;

use crate::error::{AppError, Result};

/// Runs every `(n, replication)` pair on up to `threads` worker threads.
/// The result does not depend on the thread count.
pub fn run_parallel(
    fitters: &[&dyn Fitter],
    n_values: &[usize],
    config: &SimConfig,
    threads: usize,
) -> Result<SimResult> {
    config.validate()?;
    if fitters.is_empty() {
        return Err(AppError::Validation("no methods to benchmark".into()));
    }
    if n_values.is_empty() {
        return Err(AppError::Validation("no sample sizes to benchmark".into()));
    }
    for &n in n_values {
        SimConfig {
            points_per_site: n,
            ..config.clone()
        }
        .validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..n_values.len())
        .flat_map(|ni| (0..config.replications).map(move |rep| (ni, rep)))
        .collect();
    type Cell = CoreResult<Vec<CoreResult<Metrics>>>;
    let results: Mutex<Vec<Option<Cell>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = threads.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(ni, rep)) = jobs.get(j) else {
                    break;
                };
                let n = n_values[ni];
                let started = std::time::Instant::now();
                let cell = run_replication(fitters, n, rep, config);
                log::info!(
                    "benchmark n={n} replication={rep} finished in {:.1}s",
                    started.elapsed().as_secs_f64()
                );
                results.lock().expect("result lock poisoned")[j] = Some(cell);
            });
        }
    });
    let results = results.into_inner().expect("result lock poisoned");
    let mut outcomes: Vec<Vec<Vec<CoreResult<Metrics>>>> = vec![Vec::new(); n_values.len()];
    for ((ni, _), cell) in jobs.iter().zip(results) {
        outcomes[*ni].push(cell.expect("every job ran")?);
    }
    let names: Vec<&str> = fitters.iter().map(|f| f.name()).collect();
    let result = SimResult::collect(&names, n_values, &outcomes);
    for row in &result.rows {
        if row.unreliable() {
            log::warn!(
                "{} at n={}: {} of {} replications failed ({})",
                row.method,
                row.n,
                row.failed,
                row.failed + row.used,
                row.failure.as_deref().unwrap_or("unknown")
            );
        }
    }
    Ok(result)
}

/// Long-format table: `method,n,metric,value,replications_used,unreliable`.
pub fn write_csv<W: Write>(result: &SimResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "n", "metric", "value", "replications_used", "unreliable"])?;
    for row in &result.rows {
        for (name, v) in Metrics::names().iter().zip(row.metrics.values()) {
            w.write_record([
                row.method.clone(),
                row.n.to_string(),
                (*name).to_string(),
                if v.is_nan() { String::new() } else { v.to_string() },
                row.used.to_string(),
                row.unreliable().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| AppError::io("<benchmark>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use sstqr_core::simulation::OracleFitter;

    #[test]
    fn oracle_rows_are_zero_for_any_thread_count() {
        let cfg = SimConfig {
            sites: 4,
            points_per_site: 3,
            replications: 3,
            seed: 2,
        };
        let a = run_parallel(&[&OracleFitter], &[3, 4], &cfg, 1).unwrap();
        let b = run_parallel(&[&OracleFitter], &[3, 4], &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
        let mut out = Vec::new();
        write_csv(&a, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text.lines().skip(1).all(|l| l.contains(",0,3,false")));
    }
}
