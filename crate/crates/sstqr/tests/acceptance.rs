//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use sstqr::bench::run_parallel;
use sstqr_core::basis::BasisSpec;
use sstqr_core::field::floor_renormalize;
use sstqr_core::objective::{FlatObjective, FnObjective};
use sstqr_core::optimizer::{fit_mle, gcdvsms_maximize};
use sstqr_core::sampler::{propose_block, proposal_log_density, run_chain_with};
use sstqr_core::simulation::{generate_dataset, BayesFitter, Fitter, MlFitter, SimResult};
use sstqr_core::{
    rng_from_seed, CoefficientField, Curve, McmcConfig, OptimConfig, QuantileModel, Rng, SimConfig, TransformSpec,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn dirichlet_block(k: usize, floor: f64, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    if floor > 0.0 {
        floor_renormalize(&mut v, floor);
    }
    v
}

/// A random model with time degree `deg`, uniform-Dirichlet spacings raised
/// to at least `floor`.
fn random_model(deg: usize, p1: usize, p2: usize, dim: usize, floor: f64, rng: &mut Rng) -> QuantileModel {
    let tb = BasisSpec::new(deg, p1).unwrap();
    let sb = BasisSpec::new(3, p2).unwrap();
    let count = sb.len().pow(dim as u32);
    let k = tb.len() - 1;
    let a: Vec<Vec<f64>> = (0..count).map(|_| dirichlet_block(k, floor, rng)).collect();
    let b: Vec<Vec<f64>> = (0..count).map(|_| dirichlet_block(k, floor, rng)).collect();
    let f = CoefficientField::from_blocks(dim, sb.len(), &a, &b).unwrap();
    QuantileModel::new(tb, sb, f, TransformSpec::unit(dim)).unwrap()
}

fn any_model(floor: f64, rng: &mut Rng) -> QuantileModel {
    let deg = rng.random_range(1..=4);
    let p1 = rng.random_range(1..=8);
    let p2 = rng.random_range(1..=4);
    let dim = rng.random_range(1..=2);
    random_model(deg, p1, p2, dim, floor, rng)
}

fn point(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random()).collect()
}

const N_VALUES: [usize; 3] = [5, 10, 20];

fn benchmark() -> Result<SimResult, String> {
    let config = SimConfig {
        sites: 50,
        points_per_site: 10,
        replications: 5,
        seed: 2024,
    };
    let ml = MlFitter::default();
    let bayes = BayesFitter {
        ml: ml.clone(),
        mcmc: McmcConfig {
            iterations: 10_000,
            burn_in: 1_000,
            ..McmcConfig::default()
        },
    };
    let fitters: [&dyn Fitter; 2] = [&ml, &bayes];
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_parallel(&fitters, &N_VALUES, &config, threads).map_err(|e| e.to_string())
}

fn c1(bench: &Result<SimResult, String>) -> Outcome {
    let bench = match bench {
        Ok(b) => b,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let Some(row) = bench.row("bayes", 10) else {
        return outcome(false, "no bayes row at n=10".into());
    };
    let [_, _, t02, t05, t08] = row.metrics.values();
    let pass = !row.unreliable() && t05 <= 0.03 && t02 <= 0.04 && t08 <= 0.04;
    outcome(
        pass,
        format!(
            "bayes n=10 S=5: T0.5={t05:.5} (<= 0.03), T0.2={t02:.5}, T0.8={t08:.5} (<= 0.04), {} of 5 replications used",
            row.used
        ),
    )
}

fn c2(bench: &Result<SimResult, String>) -> Outcome {
    let bench = match bench {
        Ok(b) => b,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let t05 = |m: &str, n: usize| bench.row(m, n).map_or(f64::NAN, |r| r.metrics.values()[3]);
    let mut pass = true;
    let mut parts = Vec::new();
    for n in N_VALUES {
        let (b, m) = (t05("bayes", n), t05("ml", n));
        pass &= b <= 2.0 * m;
        parts.push(format!("n={n}: bayes {b:.5} ml {m:.5}"));
    }
    for m in ["ml", "bayes"] {
        pass &= t05(m, 20) <= t05(m, 5);
    }
    pass &= bench.rows.iter().all(|r| !r.unreliable());
    outcome(pass, format!("T0.5 {}", parts.join("; ")))
}

fn c3() -> Outcome {
    let mut rng = rng_from_seed(3, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = random_model(2, rng.random_range(1..=8), rng.random_range(1..=4), 2, 0.0, &mut rng);
        let z = point(2, &mut rng);
        let x: f64 = rng.random();
        // trapezoid rule on the y-nodes Q(j/N); uniform in tau, so the
        // nodes are dense where the density is large
        let n = 20_000;
        let mut prev: Option<(f64, f64)> = None;
        let mut total = 0.0;
        for j in 0..=n {
            let y = m.quantile(j as f64 / n as f64, x, &z).unwrap();
            let f = m.log_density(x, y, &z).map_or(0.0, f64::exp);
            if let Some((py, pf)) = prev {
                total += 0.5 * (f + pf) * (y - py);
            }
            prev = Some((y, f));
        }
        worst = worst.max((total - 1.0).abs());
    }
    outcome(worst <= 1e-3, format!("max |integral - 1| over 20 models = {worst:.2e} (<= 1e-3)"))
}

fn bisect(m: &QuantileModel, y: f64, x: f64, z: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if m.quantile(mid, x, z).unwrap() < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c4() -> Outcome {
    let mut rng = rng_from_seed(4, 0);
    let started = Instant::now();
    let (mut worst_res, mut worst_tau) = (0.0f64, 0.0f64);
    let mut failures = 0;
    for _ in 0..100 {
        let m = any_model(1e-3, &mut rng);
        for _ in 0..100 {
            let z = point(m.dim(), &mut rng);
            let x: f64 = rng.random();
            let y: f64 = rng.random();
            match m.inverse_quantile(y, x, &z) {
                Ok(t) => {
                    worst_res = worst_res.max((m.quantile(t, x, &z).unwrap() - y).abs());
                    worst_tau = worst_tau.max((t - bisect(&m, y, x, &z)).abs());
                }
                Err(_) => failures += 1,
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        failures == 0 && worst_res < 1e-10 && worst_tau < 1e-9 && secs < 10.0,
        format!(
            "1e4 probes: max residual {worst_res:.2e} (< 1e-10), max |tau - bisection| {worst_tau:.2e} (< 1e-9), {failures} errors, {secs:.2}s (< 10s)"
        ),
    )
}

fn c5() -> Outcome {
    let mut rng = rng_from_seed(5, 0);
    let mut violations = 0usize;
    for _ in 0..1000 {
        let m = any_model(0.0, &mut rng);
        for _ in 0..100 {
            let z = point(m.dim(), &mut rng);
            let x: f64 = rng.random();
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let (t1, t2) = if a < b { (a, b) } else { (b, a) };
            if m.quantile(t1, x, &z).unwrap() > m.quantile(t2, x, &z).unwrap() {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("1e5 probes, {violations} violations of Q(tau1) <= Q(tau2)"))
}

/// Mean and batch-means standard error of an autocorrelated series.
fn batch_mean(v: &[f64]) -> (f64, f64) {
    let batches = 100;
    let bs = v.len() / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| v[b * bs..(b + 1) * bs].iter().sum::<f64>() / bs as f64)
        .collect();
    let m = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batches as f64 - 1.0);
    (m, (var / batches as f64).sqrt())
}

fn c6() -> Outcome {
    // p1 = 3 with quadratic time basis, d = 1, p2 = 1: four blocks of four
    // spacings per curve
    let tb = BasisSpec::new(2, 3).unwrap();
    let sb = BasisSpec::new(3, 1).unwrap();
    let k = tb.len() - 1;
    let init = CoefficientField::uniform(1, sb.len(), k).unwrap();
    let cfg = McmcConfig {
        iterations: 101_000,
        burn_in: 1_000,
        seed: 6,
        ..McmcConfig::default()
    };
    let s = run_chain_with(&mut FlatObjective, &init, &cfg).unwrap();
    let kf = k as f64;
    let (want_mean, want_var) = (1.0 / kf, (kf - 1.0) / (kf * kf * (kf + 1.0)));
    let blocks = init.blocks_per_curve();
    let mut worst: f64 = 0.0;
    for j in 0..k {
        // pooled over the independent blocks of both curves
        let per_sweep = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            s.draws
                .iter()
                .map(|d| {
                    let mut acc = 0.0;
                    for c in [Curve::First, Curve::Second] {
                        for b in 0..blocks {
                            acc += f(d.spacings(c)[b * k + j]);
                        }
                    }
                    acc / (2 * blocks) as f64
                })
                .collect()
        };
        let (m, se_m) = batch_mean(&per_sweep(&|v| v));
        let (v, se_v) = batch_mean(&per_sweep(&|v| (v - want_mean) * (v - want_mean)));
        worst = worst.max((m - want_mean).abs() / se_m).max((v - want_var).abs() / se_v);
    }
    outcome(
        worst <= 3.0,
        format!("K={k}, 1e5 sweeps: largest deviation of spacing means/variances = {worst:.2} standard errors (<= 3)"),
    )
}

fn c7() -> Outcome {
    let mut rng = rng_from_seed(7, 0);
    let mut worst: f64 = 0.0;
    let mut bins = 0;
    for _ in 0..5 {
        let from = dirichlet_block(3, 0.05, &mut rng);
        let r = 1.1 + rng.random::<f64>();
        let width = from[0].min(from[1]) * (r - 1.0 / r);
        let h = 0.15 * width;
        let mut centers: Vec<[f64; 2]> = vec![[from[0], from[1]]];
        for _ in 0..3 {
            let p = propose_block(&from, r, 0.0, &mut rng);
            centers.push([p[0], p[1]]);
        }
        let n = 1_000_000;
        let mut hits = vec![0usize; centers.len()];
        for _ in 0..n {
            let p = propose_block(&from, r, 0.0, &mut rng);
            for (c, hit) in centers.iter().zip(hits.iter_mut()) {
                if (p[0] - c[0]).abs() < h / 2.0 && (p[1] - c[1]).abs() < h / 2.0 {
                    *hit += 1;
                }
            }
        }
        for (c, hit) in centers.iter().zip(&hits) {
            let empirical = *hit as f64 / n as f64 / (h * h);
            let g = 40;
            let mut avg = 0.0;
            for a in 0..g {
                for b in 0..g {
                    let t1 = c[0] - h / 2.0 + h * (a as f64 + 0.5) / g as f64;
                    let t2 = c[1] - h / 2.0 + h * (b as f64 + 0.5) / g as f64;
                    avg += proposal_log_density(&from, &[t1, t2, 1.0 - t1 - t2], r).map_or(0.0, f64::exp);
                }
            }
            avg /= (g * g) as f64;
            worst = worst.max((empirical - avg).abs() / avg);
            bins += 1;
        }
    }
    outcome(worst < 0.05, format!("K=3, {bins} bins over 5 (from, r) pairs: max relative error {worst:.4} (< 0.05)"))
}

fn c8() -> Outcome {
    let mut rng = rng_from_seed(8, 0);
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for _ in 0..1000 {
        let deg = rng.random_range(1..=4);
        let p = rng.random_range(1..=8);
        let b = BasisSpec::new(deg, p).unwrap();
        let s = dirichlet_block(b.len() - 1, 0.0, &mut rng);
        let mut coeffs = vec![0.0];
        for v in &s {
            coeffs.push(coeffs.last().unwrap() + v);
        }
        let (db, dc) = b.derivative_expansion(&coeffs).unwrap();
        for _ in 0..10 {
            // keep the five-point stencil inside one polynomial piece
            let i = rng.random_range(0..p);
            let lo = i as f64 / p as f64 + 3.0 * h;
            let hi = (i + 1) as f64 / p as f64 - 3.0 * h;
            let t = lo + (hi - lo) * rng.random::<f64>();
            let f = |u: f64| b.eval_curve(&coeffs, u).unwrap();
            let fd = (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h);
            let d = db.eval_curve(&dc, t).unwrap();
            worst = worst.max((fd - d).abs() / d.abs());
        }
    }
    outcome(worst < 1e-6, format!("1e3 curves of degree 1-4, 1e4 points: max relative error {worst:.2e} (< 1e-6)"))
}

fn separable_deviation(config: &OptimConfig) -> f64 {
    // smallest legal shell: p1 = 3, d = 1, p2 = 1, so four blocks of K = 4
    // per curve, each started at a vertex
    let (k, side) = (4, 4);
    let blocks: Vec<Vec<f64>> = (0..side)
        .map(|b| {
            let mut v = vec![0.01 / (k - 1) as f64; k];
            v[b % k] = 0.99;
            v
        })
        .collect();
    let init = CoefficientField::from_blocks(1, side, &blocks, &blocks).unwrap();
    let target = 1.0 / k as f64;
    let mut obj = FnObjective::new(|f: &CoefficientField| {
        -[Curve::First, Curve::Second]
            .iter()
            .flat_map(|c| f.spacings(*c).iter())
            .map(|v| (v - target) * (v - target))
            .sum::<f64>()
    });
    let out = gcdvsms_maximize(&mut obj, &init, config, None).unwrap();
    [Curve::First, Curve::Second]
        .iter()
        .flat_map(|c| out.field.spacings(*c).iter())
        .map(|v| (v - target).abs())
        .fold(0.0, f64::max)
}

fn c9() -> Outcome {
    let dev = separable_deviation(&OptimConfig::default());
    let scaled = separable_deviation(&OptimConfig {
        tol_fun_1: 1e-9,
        tol_fun_2: 1e-9,
        phi: 1e-3,
        ..OptimConfig::default()
    });

    let data = generate_dataset(
        &SimConfig {
            sites: 50,
            points_per_site: 10,
            replications: 1,
            seed: 9,
        },
        0,
    )
    .unwrap();
    let fitted = fit_mle(&data, 3, 3, &OptimConfig::default()).unwrap();
    let ll = fitted.log_likelihood(&data).unwrap();
    let mut rng = rng_from_seed(9, 1);
    let (kk, count, side) = (fitted.coeffs().block_len(), fitted.coeffs().blocks_per_curve(), fitted.coeffs().side());
    let mut beaten = 0;
    let mut best_random = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a: Vec<Vec<f64>> = (0..count).map(|_| dirichlet_block(kk, 0.0, &mut rng)).collect();
        let b: Vec<Vec<f64>> = (0..count).map(|_| dirichlet_block(kk, 0.0, &mut rng)).collect();
        let f = CoefficientField::from_blocks(2, side, &a, &b).unwrap();
        let other = fitted.with_coeffs(f).unwrap().log_likelihood(&data).unwrap_or(f64::NEG_INFINITY);
        best_random = best_random.max(other);
        if other > ll {
            beaten += 1;
        }
    }
    outcome(
        dev <= 1e-2 && beaten == 0,
        format!(
            "separable objective, default tuning: max |spacing - 1/K| = {dev:.2e} (<= 1e-2) \
             [tolerances 1e-9: {scaled:.2e}]; fitted loglik {ll:.2} vs best of 100 random fields {best_random:.2}, {beaten} beat it"
        ),
    )
}

fn c10() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_sstqr");
    let run = |tag: &str| -> Result<Vec<u8>, String> {
        let p = |name: &str| dir.path().join(format!("{tag}-{name}"));
        let steps: Vec<Vec<String>> = vec![
            vec!["--seed".into(), "11".into(), "simulate".into(), "--out".into(), p("data.csv").display().to_string()],
            vec![
                "--seed".into(),
                "11".into(),
                "fit".into(),
                "--mode".into(),
                "bayes".into(),
                "--data".into(),
                p("data.csv").display().to_string(),
                "--p1".into(),
                "3".into(),
                "--p2".into(),
                "3".into(),
                "--iterations".into(),
                "1000".into(),
                "--burn-in".into(),
                "100".into(),
                "--out".into(),
                p("samples.json").display().to_string(),
            ],
            vec![
                "predict".into(),
                "--model".into(),
                p("samples.json").display().to_string(),
                "--tau".into(),
                "0.2,0.5,0.8".into(),
                "--grid".into(),
                "20x20".into(),
                "--out".into(),
                p("grid.csv").display().to_string(),
            ],
        ];
        for args in steps {
            let out = Command::new(bin)
                .args(&args)
                .env("RUST_LOG", "warn")
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(String::from_utf8_lossy(&out.stderr).into_owned());
            }
        }
        std::fs::read(p("grid.csv")).map_err(|e| e.to_string())
    };
    match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => outcome(
            a == b && !a.is_empty(),
            format!("two pipeline runs produced {} and {} byte grids, identical: {}", a.len(), b.len(), a == b),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("pipeline failed: {e}")),
    }
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let skip_bench = std::env::var_os("SSTQR_SKIP_BENCHMARK").is_some();
    let started = Instant::now();
    let bench = if skip_bench {
        Err("skipped (SSTQR_SKIP_BENCHMARK is set)".to_string())
    } else {
        benchmark()
    };
    let bench_secs = started.elapsed().as_secs_f64();
    let checks: Vec<(&str, Check<'_>)> = vec![
        ("C1 benchmark accuracy (bayes, n=10)", Box::new(|| c1(&bench))),
        ("C2 benchmark ordering", Box::new(|| c2(&bench))),
        ("C3 density normalisation", Box::new(c3)),
        ("C4 inverse quantile", Box::new(c4)),
        ("C5 non-crossing", Box::new(c5)),
        ("C6 sampler stationarity", Box::new(c6)),
        ("C7 proposal density", Box::new(c7)),
        ("C8 derivative expansion", Box::new(c8)),
        ("C9 optimiser", Box::new(c9)),
        ("C10 end-to-end determinism", Box::new(c10)),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("benchmark wall time {bench_secs:.0}s");
    if let Ok(b) = &bench {
        for row in &b.rows {
            let v = row.metrics.values();
            println!(
                "  {:<5} n={:<2} T1={:.5} T2={:.5} T0.2={:.5} T0.5={:.5} T0.8={:.5} used={}",
                row.method, row.n, v[0], v[1], v[2], v[3], v[4], row.used
            );
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
