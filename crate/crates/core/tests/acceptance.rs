//! Reference-result checks. Prints one PASS/FAIL line per check. Pass
//! check numbers (e.g. `-- 3 8`) to run a subset.
//!
//! Oracle and invariant failures (6-9) always fail the run. Misses against
//! the Monte Carlo reference values (1-5) only do so with
//! `POOLSEL_STRICT_ACCEPTANCE=1`.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use poolsel::simulation::benchmarks::*;
use poolsel::simulation::*;
use poolsel::{InfoMethod, Method};
use rayon::prelude::*;

const PILOT_REPS: usize = 150;
const TABLE_REPS: usize = 1000;
const CURVE_REPS: usize = 500;
const CURVE_POINTS: usize = 15;
const PIVOT_REPS: usize = 2000;

struct Study {
    report: StudyReport,
}

fn study(cfg: &StudyConfig) -> Study {
    let start = Instant::now();
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();
    let report = aggregate(cfg, &outcomes, start.elapsed().as_secs_f64());
    Study { report }
}

impl Study {
    fn coef(&self, method: Method, j: usize) -> &CoefSummary {
        let lambda = self.report.per_lambda[0].lambda;
        let m = self.report.method_at(lambda, method).expect("method was run");
        m.coefficients.iter().find(|c| c.coefficient == j).expect("coefficient is tracked")
    }
}

#[derive(Default)]
struct Cache {
    pilots: BTreeMap<usize, f64>,
    tables: BTreeMap<usize, Study>,
}

impl Cache {
    /// Median AIC-chosen penalty over a pilot study on the default grid.
    fn median_aic(&mut self, m: usize) -> f64 {
        *self.pilots.entry(m).or_insert_with(|| {
            let cfg = StudyConfig::new(DgpConfig::default().with_pool_size(m), lambda_grid(1000).unwrap(), PILOT_REPS, vec![], 100 + m as u64);
            let pilot = run_study(&cfg).unwrap();
            let lambda = pilot.median_aic_lambda.expect("pilot produced AIC choices");
            println!("    pilot m={m}: median AIC penalty {lambda:.4} over {PILOT_REPS} replicates");
            lambda
        })
    }

    fn table(&mut self, m: usize) -> &Study {
        let lambda = self.median_aic(m);
        self.tables.entry(m).or_insert_with(|| {
            let mut methods = vec![Method::Selective, Method::Naive];
            if m == 2 {
                methods.push(Method::Split);
            }
            let cfg = StudyConfig::new(DgpConfig::default().with_pool_size(m), vec![lambda], TABLE_REPS, methods, 200 + m as u64);
            let s = study(&cfg);
            println!("    m={m}: {TABLE_REPS} replicates at penalty {lambda:.4} in {:.0}s, {} failures", s.report.runtime_secs, s.report.failures.len());
            s
        })
    }
}

fn print_checks(checks: &[Check]) -> bool {
    for c in checks {
        println!(
            "    {:<44} {:>9.4}  target {:<16} {}",
            c.label,
            c.achieved,
            c.describe_target(),
            if c.passed() { "ok" } else { "MISS" }
        );
    }
    checks.iter().all(Check::passed)
}

fn null_coverage(cache: &mut Cache) -> bool {
    let mut checks = Vec::new();
    for (i, &m) in POOL_SIZES.iter().enumerate() {
        let s = cache.table(m);
        for j in [3, 5] {
            let sel = s.coef(Method::Selective, j).coverage;
            let naive = s.coef(Method::Naive, j).coverage;
            checks.push(Check::new(format!("m={m} beta{} selective coverage", j + 1), sel, SELECTIVE_NULL_COVERAGE[i], Band::Absolute(COVERAGE_TOL)));
            checks.push(Check::new(format!("m={m} beta{} naive coverage", j + 1), naive, NAIVE_NULL_COVERAGE[i], Band::Absolute(COVERAGE_TOL)));
            checks.push(Check::new(format!("m={m} beta{} naive below selective", j + 1), naive, sel, Band::Below));
        }
    }
    print_checks(&checks)
}

fn interval_geometry(cache: &mut Cache) -> bool {
    let mut checks = Vec::new();
    for (i, &m) in POOL_SIZES.iter().enumerate() {
        let s = cache.table(m);
        let sel = s.coef(Method::Selective, 3).mean_width;
        let naive = s.coef(Method::Naive, 3).mean_width;
        checks.push(Check::new(format!("m={m} beta4 selective mean width"), sel, SELECTIVE_NULL_WIDTH[i], Band::Relative(WIDTH_TOL)));
        checks.push(Check::new(format!("m={m} beta4 naive mean width"), naive, NAIVE_NULL_WIDTH[i], Band::Relative(WIDTH_TOL)));
        checks.push(Check::new(format!("m={m} beta4 naive narrower than selective"), naive, sel, Band::Below));
        println!(
            "    m={m} beta4 median width: selective {:.3}, naive {:.3}",
            s.coef(Method::Selective, 3).median_width,
            s.coef(Method::Naive, 3).median_width
        );
    }
    print_checks(&checks)
}

fn type_i_curve(_: &mut Cache) -> bool {
    let grid = log_grid(1.0, 7.0, CURVE_POINTS).unwrap();
    let cfg = StudyConfig::new(DgpConfig::default().with_pool_size(4), grid.clone(), CURVE_REPS, vec![Method::Selective, Method::Naive], 300);
    let s = study(&cfg);
    println!("    m=4: {CURVE_REPS} replicates x {CURVE_POINTS} penalties in {:.0}s, {} failures", s.report.runtime_secs, s.report.failures.len());
    let rate = |method| -> Vec<f64> { grid.iter().map(|&l| s.report.method_at(l, method).unwrap().type_i_error).collect() };
    let (sel, naive) = (rate(Method::Selective), rate(Method::Naive));
    let (lo, hi) = SELECTIVE_TYPE_I_BAND;
    let top = grid.len() - grid.len().div_ceil(4);
    let mut checks = Vec::new();
    for (k, &l) in grid.iter().enumerate() {
        println!("    penalty {l:>6.3}: selective {:.4}  naive {:.4}", sel[k], naive[k]);
        checks.push(Check::new(format!("selective Type I at penalty {l:.3}"), sel[k], 0.0, Band::Within(lo, hi)));
    }
    for k in top..grid.len() {
        checks.push(Check::new(format!("naive Type I at penalty {:.3}", grid[k]), -naive[k], -NAIVE_TYPE_I_FLOOR, Band::Below));
    }
    checks.push(Check::new("naive Type I Spearman vs penalty", -common::spearman(&grid, &naive), -0.8, Band::Below));
    print_checks(&checks)
}

fn misspecification(_: &mut Cache) -> bool {
    let assumed = DgpConfig::default().with_pool_size(1);
    let pilot = StudyConfig::new(assumed.clone(), lambda_grid(1000).unwrap(), PILOT_REPS, vec![], 400);
    let lambda = misspecification_study(&pilot, 0.90, 0.92).unwrap().median_aic_lambda.unwrap();
    println!("    pilot: median AIC penalty {lambda:.4}");
    let cfg = StudyConfig::new(assumed, vec![lambda], TABLE_REPS, vec![Method::Selective], 401);
    let mut truth = cfg.clone();
    truth.analysis_se = 0.95;
    truth.analysis_sp = 0.97;
    truth.dgp.se = 0.90;
    truth.dgp.sp = 0.92;
    let s = study(&truth);
    let b2 = s.coef(Method::Selective, 1);
    let b4 = s.coef(Method::Selective, 3);
    println!("    beta2 mean estimate {:.3}, beta4 intervals {}", b2.mean_point, b4.intervals);
    print_checks(&[
        Check::new("beta2 selective coverage", b2.coverage, MISSPEC_SIGNAL_COVERAGE_BOUND, Band::Below),
        Check::new("beta4 selective coverage", b4.coverage, MISSPEC_NULL_COVERAGE, Band::Absolute(COVERAGE_TOL)),
    ])
}

fn splitting(cache: &mut Cache) -> bool {
    let s = cache.table(2);
    let b2 = s.coef(Method::Split, 1);
    let b4 = s.coef(Method::Split, 3);
    println!("    beta4 split median width {:.3}", s.coef(Method::Split, 3).median_width);
    print_checks(&[
        Check::new("beta2 split coverage", b2.coverage, SPLIT_SIGNAL_COVERAGE, Band::Absolute(COVERAGE_TOL)),
        Check::new("beta4 split mean width", b4.mean_width, SPLIT_NULL_WIDTH, Band::Relative(WIDTH_TOL)),
    ])
}

fn louis_oracle(_: &mut Cache) -> bool {
    let errors: Vec<(u64, usize, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let inst = common::louis_instance(1000 + seed);
            (seed, inst.pool_size, common::louis_relative_error(&inst))
        })
        .collect();
    let worst = errors.iter().fold((0, 0, 0.0), |w, e| if e.2 > w.2 { *e } else { w });
    println!("    worst instance {} (m={}): relative Frobenius error {:.2e}", worst.0, worst.1, worst.2);
    print_checks(&[Check::new("max relative error over 50 instances", worst.2, 1e-4, Band::Below)])
}

fn polyhedral_oracle(_: &mut Cache) -> bool {
    let results: Vec<(usize, usize, usize)> =
        (0..200u64).into_par_iter().map(|seed| common::polyhedral_instance(5000 + seed, 100_000, 1e-10)).collect();
    let bad: usize = results.iter().map(|r| r.0).sum();
    let inside: usize = results.iter().map(|r| r.1).sum();
    let checked: usize = results.iter().map(|r| r.2).sum();
    println!("    {checked} points checked, {inside} inside the polyhedron");
    print_checks(&[Check::new("disagreements", bad as f64, 0.5, Band::Below)])
}

fn pivot_uniformity(cache: &mut Cache) -> bool {
    let lambda = cache.median_aic(1);
    let cal = pivot_calibration(&DgpConfig::default(), lambda, PIVOT_REPS, 10 * PIVOT_REPS, 600, InfoMethod::Louis).unwrap();
    let d = common::ks_uniform(&cal.pivots);
    let pval = common::ks_pvalue(d, cal.pivots.len());
    println!(
        "    {} pivots ({} attempted, {} skipped, {} failed), KS D = {d:.4}",
        cal.pivots.len(),
        cal.attempted,
        cal.skipped,
        cal.failures
    );
    print_checks(&[
        Check::new("pivots collected", -(cal.pivots.len() as f64), -(PIVOT_REPS as f64 - 0.5), Band::Below),
        Check::new("KS p-value", -pval, -0.01, Band::Below),
    ])
}

fn property_suites(_: &mut Cache) -> bool {
    let mut ok = true;
    for (name, res) in common::property_sweep() {
        match res {
            Ok(()) => println!("    {name:<44} ok"),
            Err(e) => {
                println!("    {name:<44} MISS ({e})");
                ok = false;
            }
        }
    }
    ok
}

type Criterion = fn(&mut Cache) -> bool;

fn main() {
    let criteria: [(u32, &str, Criterion); 9] = [
        (1, "null-coefficient coverage at the median-AIC penalty", null_coverage),
        (2, "interval widths at the median-AIC penalty", interval_geometry),
        (3, "Type I error across the penalty grid (m=4)", type_i_curve),
        (4, "misspecified assay accuracy (m=1)", misspecification),
        (5, "sample splitting (m=2)", splitting),
        (6, "Louis information vs numerical Hessian", louis_oracle),
        (7, "polyhedral truncation vs direct membership", polyhedral_oracle),
        (8, "pivot uniformity at the true value", pivot_uniformity),
        (9, "invariant suites", property_suites),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cache = Cache::default();
    let mut summary = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        println!("[{id}] {name}");
        let start = Instant::now();
        let passed = run(&mut cache);
        println!("[{id}] {} ({:.0}s)", if passed { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        summary.push((id, name, passed));
    }
    println!();
    for (id, name, passed) in &summary {
        println!("acceptance {id}: {} {name}", if *passed { "PASS" } else { "FAIL" });
    }
    let strict = std::env::var("POOLSEL_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let fatal = summary.iter().filter(|s| !s.2 && (strict || s.0 >= 6)).count();
    let reported = summary.iter().filter(|s| !s.2).count() - fatal;
    if reported > 0 {
        println!("{reported} Monte Carlo criteria missed their reference values (fatal with POOLSEL_STRICT_ACCEPTANCE=1)");
    }
    if fatal > 0 {
        std::process::exit(1);
    }
}
