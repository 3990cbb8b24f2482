//! The verification suite: every check runs a module against an independent
//! oracle at a pinned tolerance and reports what it measured.

use serde::Serialize;

use crate::asymptotics::{
    appendix_bound_check, delta_closed, delta_quadrature, psi_tail_check, scale_guard, DeltaSum,
    QuadratureConfig,
};
use crate::error::Result;
use crate::exact::{evolve_free, evolve_perturbed, perturbed_return_sequence, return_sequence};
use crate::field::BoxPolicy;
use crate::kernels::catalog::{lazy_1d, lazy_1d_symmetric, nearest_neighbour};
use crate::kernels::{moments, validate, MomentData, ValidatedSpec};
use crate::montecarlo::sample;
use crate::representation::{convolution_identity_check, fourier_inversion_check, pi_antisymmetric, pi_symmetric};

/// Outcome of one check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        CheckResult { name: name.into(), passed: measured <= tolerance, measured, tolerance, detail }
    }

    fn failed(name: &str, err: crate::Error) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("{}: {err}", err.name()),
        }
    }

    /// One human-readable line.
    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.6e} (tolerance {:.6e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn guard(name: &str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::failed(name, e))
}

/// Lazy 1D walk with `a(+-1) = +-0.1`.
pub fn lazy_walk() -> ValidatedSpec {
    validate(lazy_1d(0.1)).expect("valid")
}

/// Plain nearest-neighbour walk in the plane with `a(+-e_1) = +-0.05`.
pub fn planar_walk() -> ValidatedSpec {
    validate(nearest_neighbour(2, 0.0, 0.05)).expect("valid")
}

/// Lazy nearest-neighbour walk (`P(0) = 1/2`) with `a(+-e_1) = +-0.05`.
pub fn lazy_walk_in(dim: usize) -> ValidatedSpec {
    validate(nearest_neighbour(dim, 0.5, 0.05)).expect("valid")
}

/// `pi_antisymmetric` against the dynamic programme, entrywise, `n <= n_max`.
pub fn check_antisymmetric_representation(specs: &[ValidatedSpec], n_max: usize) -> CheckResult {
    const NAME: &str = "representation_antisymmetric";
    guard(NAME, || {
        let mut worst: f64 = 0.0;
        for spec in specs {
            for n in 0..=n_max {
                let rep = pi_antisymmetric(spec, n, BoxPolicy::Exact)?;
                let dp = evolve_perturbed(spec, n, BoxPolicy::Exact)?;
                worst = worst.max(rep.max_abs_diff(&dp));
            }
        }
        Ok(CheckResult::at_most(NAME, worst, 1e-12, format!("{} kernels, n <= {n_max}", specs.len())))
    })
}

/// `Pi_n(0, 0) = P_n(0, 0)` for an antisymmetric perturbation.
pub fn check_return_identity(specs: &[ValidatedSpec], n_max: usize) -> CheckResult {
    const NAME: &str = "return_probability_identity";
    let mut worst: f64 = 0.0;
    for spec in specs {
        let free = return_sequence(spec, n_max);
        let pert = perturbed_return_sequence(spec, n_max);
        for (a, b) in free.values().iter().zip(pert.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckResult::at_most(NAME, worst, 1e-12, format!("{} kernels, n <= {n_max}", specs.len()))
}

/// `pi_symmetric` against the dynamic programme.
pub fn check_symmetric_representation(spec: &ValidatedSpec, n_max: usize) -> CheckResult {
    const NAME: &str = "representation_symmetric";
    guard(NAME, || {
        let mut worst: f64 = 0.0;
        for n in 0..=n_max {
            let rep = pi_symmetric(spec, n, BoxPolicy::Exact)?;
            let dp = evolve_perturbed(spec, n, BoxPolicy::Exact)?;
            worst = worst.max(rep.max_abs_diff(&dp));
        }
        Ok(CheckResult::at_most(NAME, worst, 1e-12, format!("n <= {n_max}")))
    })
}

pub fn check_convolution_identity(specs: &[ValidatedSpec], n_max: usize) -> CheckResult {
    const NAME: &str = "convolution_identity";
    guard(NAME, || {
        let mut worst: f64 = 0.0;
        for spec in specs {
            worst = worst.max(convolution_identity_check(spec, n_max, BoxPolicy::Exact)?);
        }
        Ok(CheckResult::at_most(NAME, worst, 1e-12, format!("n <= {n_max}")))
    })
}

pub fn check_fourier_inversion(spec: &ValidatedSpec, n: usize, grid: usize) -> CheckResult {
    const NAME: &str = "fourier_inversion";
    guard(NAME, || {
        let r = fourier_inversion_check(spec, n, grid)?;
        let mut c = CheckResult::at_most(
            NAME,
            r.max_deviation,
            1e-10,
            format!("n = {n}, grid {grid}, gamma = {:.6e}, bound holds: {}", r.gamma, r.bound_holds),
        );
        c.passed &= r.gamma > 0.0 && r.bound_holds;
        Ok(c)
    })
}

fn xs_both_signs(max: i64) -> Vec<f64> {
    (1..=max).flat_map(|x| [x as f64, -(x as f64)]).collect()
}

/// `|delta_closed - delta_quadrature| <= 1e-6 |delta_quadrature|` for `1 <= |x| <= x_max`.
pub fn check_closed_form(m: &MomentData, n: usize, x_max: i64, cfg: &QuadratureConfig) -> CheckResult {
    const NAME: &str = "delta_closed_vs_quadrature";
    guard(NAME, || {
        let mut worst: f64 = 0.0;
        for x in xs_both_signs(x_max) {
            let q = delta_quadrature(m, n, &[x], cfg)?;
            let c = delta_closed(m, n, &[x])?;
            worst = worst.max((c - q).abs() / q.abs());
        }
        Ok(CheckResult::at_most(NAME, worst, 1e-6, format!("relative, n = {n}, 1 <= |x| <= {x_max}")))
    })
}

/// `|delta_sum - delta_quadrature| <= 0.02 n^{-nu/2} |x| + 1e-10`; reports the
/// largest ratio of the deviation to its allowance.
pub fn check_sum_form(spec: &ValidatedSpec, n: usize, x_max: i64, cfg: &QuadratureConfig) -> CheckResult {
    const NAME: &str = "delta_sum_vs_quadrature";
    guard(NAME, || {
        let m = moments(spec)?;
        let ds = DeltaSum::new(spec, n)?;
        let scale = (n as f64).powf(-(spec.dim() as f64) / 2.0);
        let mut worst = (0.0, 0.0);
        let mut failing = Vec::new();
        for x in xs_both_signs(x_max) {
            let q = delta_quadrature(&m, n, &[x], cfg)?;
            let ratio = (ds.eval(&[x]) - q).abs() / (0.02 * scale * x.abs() + 1e-10);
            if ratio > 1.0 {
                failing.push(x as i64);
            }
            if ratio > worst.0 {
                worst = (ratio, x);
            }
        }
        let detail = format!(
            "deviation / (0.02 n^(-nu/2) |x|), n = {n}, worst at x = {}, over the allowance at x = {failing:?}",
            worst.1
        );
        Ok(CheckResult::at_most(NAME, worst.0, 1.0, detail))
    })
}

/// `e_n(x) = n^{nu/2} |exact_correction - delta_quadrature|` strictly decreases
/// along the ladder and ends below 10% of `n^{nu/2} |delta_quadrature|`.
pub fn check_convergence(spec: &ValidatedSpec, ladder: &[usize], xs: &[i64], cfg: &QuadratureConfig) -> CheckResult {
    const NAME: &str = "theorem_convergence";
    guard(NAME, || {
        spec.require_aperiodic()?;
        let m = moments(spec)?;
        let h = spec.dim() as f64 / 2.0;
        let mut e = vec![Vec::new(); xs.len()];
        let mut last_ratio = vec![0.0; xs.len()];
        for &n in ladder {
            let corr = evolve_perturbed(spec, n, BoxPolicy::Exact)?.minus(&evolve_free(spec, n, BoxPolicy::Exact)?);
            for (i, &x) in xs.iter().enumerate() {
                let mut site = vec![0; spec.dim()];
                site[0] = x;
                let xf: Vec<f64> = site.iter().map(|&c| c as f64).collect();
                let q = delta_quadrature(&m, n, &xf, cfg)?;
                let scale = (n as f64).powf(h);
                e[i].push(scale * (corr.get(&site) - q).abs());
                last_ratio[i] = (corr.get(&site) - q).abs() / q.abs();
            }
        }
        let mut problems = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            if e[i].windows(2).any(|w| w[1] >= w[0]) {
                problems.push(format!("x={x} not decreasing"));
            }
            if last_ratio[i] > 0.1 {
                problems.push(format!("x={x} final ratio {:.3}", last_ratio[i]));
            }
        }
        let series: Vec<String> = xs
            .iter()
            .zip(&e)
            .map(|(x, s)| format!("x={x}: [{}]", s.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ")))
            .collect();
        let worst = last_ratio.iter().cloned().fold(0.0, f64::max);
        let mut c = CheckResult::at_most(NAME, worst, 0.1, format!("e_n {}; {}", series.join("; "), problems.join("; ")));
        c.passed = problems.is_empty();
        Ok(c)
    })
}

/// Lattice sites with `r_min <= |x| <= r_max`.
fn shell(dim: usize, r_min: f64, r_max: f64) -> Vec<Vec<f64>> {
    let r = r_max.floor() as i64;
    crate::asymptotics::box_sites(dim, -r, r)
        .into_iter()
        .map(|x| x.iter().map(|&c| c as f64).collect::<Vec<f64>>())
        .filter(|x| {
            let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            norm >= r_min && norm <= r_max
        })
        .collect()
}

/// `max_{|x| >= 3 sqrt n} n^{nu/2} |delta_quadrature|` relative to its value at
/// `x = e_1`; must stay below 1%. The shell is cut at the scale guard.
pub fn check_locality(spec: &ValidatedSpec, n: usize, cfg: &QuadratureConfig) -> CheckResult {
    let name = format!("locality_{}d", spec.dim());
    guard(&name, || {
        use rayon::prelude::*;
        spec.require_aperiodic()?;
        let m = moments(spec)?;
        let mut e1 = vec![0.0; spec.dim()];
        e1[0] = 1.0;
        let reference = delta_quadrature(&m, n, &e1, cfg)?.abs();
        let r_min = 3.0 * (n as f64).sqrt();
        let far = shell(spec.dim(), r_min, scale_guard(n))
            .par_iter()
            .map(|x| delta_quadrature(&m, n, x, cfg).map(f64::abs))
            .collect::<Result<Vec<f64>>>()?;
        let worst = far.iter().cloned().fold(0.0, f64::max);
        Ok(CheckResult::at_most(
            &name,
            worst / reference,
            0.01,
            format!("n = {n}, {} sites with {r_min:.2} <= |x| <= {:.2}", far.len(), scale_guard(n)),
        ))
    })
}

/// `n^{1/2} delta_quadrature(ceil(sqrt n))` stays in a factor-2 band away from zero.
pub fn check_long_range(spec: &ValidatedSpec, ladder: &[usize], cfg: &QuadratureConfig) -> CheckResult {
    const NAME: &str = "long_range_1d";
    guard(NAME, || {
        spec.require_aperiodic()?;
        let m = moments(spec)?;
        let values = ladder
            .iter()
            .map(|&n| {
                let x = (n as f64).sqrt().ceil();
                delta_quadrature(&m, n, &[x], cfg).map(|q| (n as f64).sqrt() * q.abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(0.0, f64::max);
        let mut c = CheckResult::at_most(NAME, hi / lo, 2.0, format!("values {values:.5?}"));
        c.passed &= lo > 0.0;
        Ok(c)
    })
}

/// Fitted `C_L` over the ladder; `max / min <= 4`.
pub fn check_psi_tail(spec: &ValidatedSpec, ladder: &[usize], l: i32, x_min: f64, cfg: &QuadratureConfig) -> CheckResult {
    const NAME: &str = "psi_tail";
    guard(NAME, || {
        let fits = ladder
            .iter()
            .map(|&n| psi_tail_check(spec, n, l, x_min, None, cfg).map(|t| t.c_l))
            .collect::<Result<Vec<f64>>>()?;
        let lo = fits.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = fits.iter().cloned().fold(0.0, f64::max);
        Ok(CheckResult::at_most(
            NAME,
            hi / lo,
            4.0,
            format!("L = {l}, |x| in [{x_min}, sqrt(n) ln n], C_L = {fits:.4?} for n = {ladder:?}"),
        ))
    })
}

pub fn check_appendix(horizon: usize) -> CheckResult {
    const NAME: &str = "appendix_bound";
    guard(NAME, || {
        let e = 1f64.exp();
        let first = appendix_bound_check(0, 1.0, 1, horizon)?;
        let second = appendix_bound_check(2, 1.0, 2, horizon)?;
        let dev_limit = (first.limit_estimate / (e / (e - 1.0)) - 1.0).abs();
        let dev_ratio = (second.doubling_ratio / 0.5f64 - 1.0).abs();
        let mut c = CheckResult::at_most(
            NAME,
            dev_limit / 0.01,
            1.0,
            format!(
                "n^(1/2) S(n) = {:.6} vs e/(e-1) (rel {dev_limit:.2e}); S(2n)/S(n) = {:.6} vs 1/2 (rel {dev_ratio:.2e})",
                first.limit_estimate, second.doubling_ratio
            ),
        );
        c.measured = c.measured.max(dev_ratio / 0.02);
        c.passed = dev_limit <= 0.01 && dev_ratio <= 0.02 && second.max_scaled.is_finite();
        Ok(c)
    })
}

/// Sites with exact mass at least `1e-4`, with that mass.
fn tested_sites(spec: &ValidatedSpec, n: usize) -> Result<Vec<(Vec<i64>, f64)>> {
    Ok(evolve_perturbed(spec, n, BoxPolicy::Exact)?.iter().filter(|(_, p)| *p >= 1e-4).collect())
}

fn inside(p: f64, estimate: f64, samples: u64) -> bool {
    (estimate - p).abs() <= 4.0 * (p * (1.0 - p) / samples as f64).sqrt()
}

/// Every tested site inside the 4-sigma binomial interval for one seed.
pub fn check_mc_calibration(spec: &ValidatedSpec, n: usize, samples: u64, seed: u64) -> CheckResult {
    const NAME: &str = "monte_carlo_calibration";
    guard(NAME, || {
        let sites = tested_sites(spec, n)?;
        let f = sample(spec, n, samples, seed)?;
        let mut worst: f64 = 0.0;
        for (x, p) in &sites {
            let z = (f.estimate(x) - p).abs() / (p * (1.0 - p) / samples as f64).sqrt();
            worst = worst.max(z);
        }
        Ok(CheckResult::at_most(NAME, worst, 4.0, format!("max |z| over {} sites, n = {n}, {samples} samples", sites.len())))
    })
}

/// Fraction of seeds whose 4-sigma interval covers the exact value, minimised
/// over tested sites; must be at least 99%.
pub fn check_mc_coverage(spec: &ValidatedSpec, n: usize, samples: u64, seeds: u64) -> CheckResult {
    const NAME: &str = "monte_carlo_coverage";
    guard(NAME, || {
        let sites = tested_sites(spec, n)?;
        let mut covered = vec![0u64; sites.len()];
        for seed in 0..seeds {
            let f = sample(spec, n, samples, 1000 + seed)?;
            for (c, (x, p)) in covered.iter_mut().zip(&sites) {
                *c += inside(*p, f.estimate(x), samples) as u64;
            }
        }
        let worst = covered.iter().copied().min().unwrap_or(seeds) as f64 / seeds as f64;
        Ok(CheckResult {
            name: NAME.into(),
            passed: worst >= 0.99,
            measured: worst,
            tolerance: 0.99,
            detail: format!("minimum coverage over {} sites, {seeds} seeds x {samples} samples", sites.len()),
        })
    })
}

/// Suite settings.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub quick: bool,
    pub quadrature: QuadratureConfig,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { quick: false, quadrature: QuadratureConfig::default(), seed: 20240611 }
    }
}

/// Machine-readable suite outcome.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub quick: bool,
    pub checks: Vec<CheckResult>,
}

/// Run the suite. `quick` keeps only the exact checks with `n <= 64` and a
/// single Monte Carlo calibration run.
pub fn run_suite(cfg: &SuiteConfig) -> SuiteReport {
    let q = &cfg.quadrature;
    let lazy = lazy_walk();
    let pair = [lazy.clone(), planar_walk()];
    let mut checks = vec![
        check_antisymmetric_representation(&pair, 64),
        check_return_identity(&pair, 64),
        check_symmetric_representation(&validate(lazy_1d_symmetric(1.0)).expect("valid"), 16),
        check_convolution_identity(&pair, 32),
        check_fourier_inversion(&lazy, 32, 128),
        check_appendix(2000),
        check_mc_calibration(&lazy, 16, 1_000_000, cfg.seed),
    ];
    if !cfg.quick {
        let m = moments(&lazy).expect("non-degenerate");
        let ladder = [100, 200, 400, 800, 1600];
        checks.extend([
            check_closed_form(&m, 400, 20, q),
            check_sum_form(&lazy, 400, 20, q),
            check_convergence(&lazy, &ladder, &[1, 2, 3, 5], q),
            check_locality(&lazy_walk_in(2), 100, q),
            check_locality(&lazy_walk_in(3), 60, q),
            check_long_range(&lazy, &ladder, q),
            check_psi_tail(&lazy, &[100, 200, 400, 800], 3, 5.0, q),
            check_mc_coverage(&lazy, 16, 1_000_000, 100),
        ]);
    }
    SuiteReport { passed: checks.iter().all(|c| c.passed), quick: cfg.quick, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{SignedKernel, ValidatedSpec};

    #[test]
    fn sign_flip_in_the_perturbation_is_caught() {
        // Flip a(-1) after validation: the perturbation is no longer antisymmetric.
        let mut spec = lazy_1d(0.1);
        spec.anti = SignedKernel::from_pairs(1, &[(&[-1], 0.1), (&[1], 0.1)]);
        let broken = ValidatedSpec::new_unchecked(spec);
        let c = check_return_identity(&[broken], 64);
        assert!(!c.passed, "{}", c.line());
        assert!(c.measured > 1e-3);
        assert!(check_return_identity(&[lazy_walk()], 64).passed);
    }

    #[test]
    fn quick_suite_passes_and_serializes() {
        let report = run_suite(&SuiteConfig { quick: true, ..SuiteConfig::default() });
        for c in &report.checks {
            assert!(c.passed, "{}", c.line());
        }
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["checks"].as_array().unwrap().len(), report.checks.len());
    }

    #[test]
    fn failing_checks_report_errors_instead_of_panicking() {
        // A periodic walk has no Gaussian limit; the asymptotic checks refuse it.
        let c = check_psi_tail(&planar_walk(), &[10], 3, 2.0, &QuadratureConfig::default());
        assert!(!c.passed);
        assert!(c.detail.starts_with("Periodic"));
    }
}
