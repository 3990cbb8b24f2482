//! One test per acceptance criterion. Each prints a single PASS/FAIL line with
//! the measured value, the tolerance and the runtime; run with
//! `cargo test --test acceptance -- --nocapture --test-threads 1` to read them.

use std::time::{Duration, Instant};

use pwl_core::asymptotics::QuadratureConfig;
use pwl_core::kernels::catalog::lazy_1d_symmetric;
use pwl_core::kernels::{moments, validate};
use pwl_core::verify::*;

fn report(criterion: &str, budget: Duration, parts: Vec<CheckResult>, started: Instant) {
    let elapsed = started.elapsed();
    let passed = parts.iter().all(|c| c.passed);
    let in_time = elapsed <= budget;
    println!(
        "{} {criterion} ({:.2}s, budget {}s)",
        if passed && in_time { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    for c in &parts {
        println!("    {}", c.line());
    }
    assert!(passed, "{criterion} failed");
    assert!(in_time, "{criterion} exceeded its runtime budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn representation_equivalence_antisymmetric() {
    let t = Instant::now();
    let c = check_antisymmetric_representation(&[lazy_walk(), planar_walk()], 64);
    report("representation equivalence (antisymmetric), n <= 64, 1D + 2D", secs(10), vec![c], t);
}

#[test]
fn return_probability_identity() {
    let t = Instant::now();
    let c = check_return_identity(&[lazy_walk(), planar_walk()], 64);
    report("Pi_n(0,0) = P_n(0,0), n <= 64, 1D + 2D", secs(5), vec![c], t);
}

#[test]
fn symmetric_representation() {
    let t = Instant::now();
    let c = check_symmetric_representation(&validate(lazy_1d_symmetric(1.0)).unwrap(), 16);
    report("symmetric representation, n <= 16, 1D", secs(5), vec![c], t);
}

#[test]
fn convolution_identity() {
    let t = Instant::now();
    let c = check_convolution_identity(&[lazy_walk(), planar_walk()], 32);
    report("convolution identity a*P0 = a*P, n <= 32", secs(60), vec![c], t);
}

#[test]
fn fourier_inversion() {
    let t = Instant::now();
    let c = check_fourier_inversion(&lazy_walk(), 32, 128);
    report("Fourier inversion, lazy 1D, n = 32, grid 128", secs(60), vec![c], t);
}

#[test]
fn three_way_delta_agreement() {
    let t = Instant::now();
    let cfg = QuadratureConfig::default();
    let spec = lazy_walk();
    let m = moments(&spec).unwrap();
    let parts = vec![check_closed_form(&m, 400, 20, &cfg), check_sum_form(&spec, 400, 20, &cfg)];
    report("three-way Delta agreement, n = 400, 1 <= |x| <= 20", secs(30), parts, t);
}

#[test]
fn theorem_convergence() {
    let t = Instant::now();
    let c = check_convergence(&lazy_walk(), &[100, 200, 400, 800, 1600], &[1, 2, 3, 5], &QuadratureConfig::default());
    report("remainder decay along n = 100..1600 at x = 1, 2, 3, 5", secs(120), vec![c], t);
}

#[test]
fn dimensional_locality() {
    let t = Instant::now();
    let cfg = QuadratureConfig::default();
    let parts = vec![
        check_locality(&lazy_walk_in(2), 100, &cfg),
        check_locality(&lazy_walk_in(3), 60, &cfg),
        check_long_range(&lazy_walk(), &[100, 200, 400, 800, 1600], &cfg),
    ];
    report("dimensional locality (2D, 3D) and 1D long range", secs(300), parts, t);
}

#[test]
fn psi_tail() {
    let t = Instant::now();
    let c = check_psi_tail(&lazy_walk(), &[100, 200, 400, 800], 3, 5.0, &QuadratureConfig::default());
    report("psi tail C_L stable within 4x, n = 100..800", secs(120), vec![c], t);
}

#[test]
fn appendix_bound() {
    let t = Instant::now();
    report("appendix sum limits", secs(10), vec![check_appendix(2000)], t);
}

#[test]
fn monte_carlo_calibration() {
    let t = Instant::now();
    let spec = lazy_walk();
    let parts = vec![check_mc_calibration(&spec, 16, 1_000_000, 7), check_mc_coverage(&spec, 16, 1_000_000, 100)];
    report("Monte Carlo calibration and 100-seed coverage, n = 16", secs(60), parts, t);
}
