//! First-return representations of `Pi_n(0, .)`, and a characteristic-function
//! cross-check.
//!
//! Convolutions follow the orientation of the dynamics:
//! `(a * P_m)(x) = sum_u a(u) P_m(x - u)`, one perturbed step `u` out of the
//! origin followed by `m` free steps. This is the orientation under which the
//! one-step case agrees with [`crate::exact::evolve_perturbed`].
//!
//! Taboo-propagated perturbations (`a * P^0_m`, `s * P^0_m`) start with one
//! perturbed step out of the origin and then move freely while avoiding the
//! origin. Their origin entry holds the mass arriving there for the first
//! time at that step.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::exact::{return_sequence, Propagator};
use crate::field::{BoxPolicy, GridKernel, MassField};
use crate::kernels::{SignedKernel, ValidatedSpec};

/// Largest `n` accepted by [`pi_symmetric`].
pub const SYMMETRIC_CAP: usize = 16;

fn require_antisymmetric(spec: &ValidatedSpec) -> Result<()> {
    if spec.is_antisymmetric_case() {
        Ok(())
    } else {
        Err(Error::WrongParity("needs epsilon = 0 (antisymmetric perturbation only)".into()))
    }
}

/// The terms `(a * P_k)(.)` for `k < horizon`, with the free fields and
/// return probabilities needed to assemble `Pi_n` for any `n <= horizon`.
#[derive(Clone, Debug)]
pub struct ConvolutionSeries {
    terms: Vec<MassField>,
    free: Vec<MassField>,
    returns: Vec<f64>,
}

impl ConvolutionSeries {
    pub fn new(spec: &ValidatedSpec, horizon: usize, policy: BoxPolicy) -> Result<Self> {
        require_antisymmetric(spec)?;
        let radius = policy.resolve(horizon, spec.step_radius())?;
        let prop = Propagator::new(spec, radius);
        let mut free = Vec::with_capacity(horizon + 1);
        free.push(prop.point_mass());
        for k in 0..horizon {
            let next = prop.free_step(&free[k]);
            free.push(next);
        }
        let returns = free.iter().map(|f| f.origin_value()).collect();
        let mut terms = Vec::with_capacity(horizon);
        if horizon > 0 {
            terms.push(MassField::from_kernel(spec.anti(), radius, 0));
            for k in 1..horizon {
                let next = prop.free_step(&terms[k - 1]);
                terms.push(next);
            }
        }
        Ok(ConvolutionSeries { terms, free, returns })
    }

    pub fn horizon(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[MassField] {
        &self.terms
    }

    /// `P_n(0, .) + sum_{k<n} p_k (a * P_{n-k-1})(.)`.
    pub fn assemble(&self, n: usize) -> MassField {
        assert!(n <= self.horizon(), "n exceeds the series horizon");
        let mut values = self.free[n].values().to_vec();
        for k in 0..n {
            let pk = self.returns[k];
            for (v, t) in values.iter_mut().zip(self.terms[n - k - 1].values()) {
                *v += pk * t;
            }
        }
        MassField::from_parts(self.free[n].grid().clone(), n, values, 0.0)
    }

    /// Largest `|term(x) + term(-x)|` over all terms.
    pub fn max_antisymmetry_defect(&self) -> f64 {
        self.terms.iter().map(|t| t.antisymmetry_defect()).fold(0.0, f64::max)
    }
}

/// `Pi_n(0, .)` from the antisymmetric first-return representation.
pub fn pi_antisymmetric(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<MassField> {
    require_antisymmetric(spec)?;
    let radius = policy.resolve(n, spec.step_radius())?;
    let prop = Propagator::new(spec, radius);
    let mut free = vec![prop.point_mass()];
    for k in 0..n {
        let next = prop.free_step(&free[k]);
        free.push(next);
    }
    let grid = prop.grid().clone();
    // S = sum_k p_k P_{n-k-1}; then Pi_n = P_n + a * S.
    let mut s = vec![0.0; grid.len()];
    for k in 0..n {
        let pk = free[k].origin_value();
        for (acc, v) in s.iter_mut().zip(free[n - k - 1].values()) {
            *acc += pk * v;
        }
    }
    let mut values = free[n].values().to_vec();
    GridKernel::new(&grid, spec.anti()).convolve_add(&grid, &s, &mut values);
    Ok(MassField::from_parts(grid, n, values, 0.0))
}

/// Taboo propagation of a signed step law out of the origin: entry `k` is the
/// field after `k` steps (`k >= 1`), origin entry = first arrival at step `k`.
fn taboo_propagate(prop: &Propagator, kernel: &SignedKernel, steps: usize) -> Vec<MassField> {
    let radius = prop.grid().radius();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(MassField::zeros(kernel.dim(), radius, 0));
    if steps == 0 {
        return out;
    }
    out.push(MassField::from_kernel(kernel, radius, 1));
    for k in 1..steps {
        let mut cleared = out[k].clone();
        let o = cleared.grid().origin();
        cleared.values_mut()[o] = 0.0;
        let (mut next, arrived) = prop.taboo_step(&cleared);
        next.values_mut()[o] = arrived;
        out.push(next);
    }
    out
}

/// Free propagation of a signed step law out of the origin; entry `k` is
/// `(kernel * P_{k-1})(.)`.
fn free_propagate(prop: &Propagator, kernel: &SignedKernel, steps: usize) -> Vec<MassField> {
    let radius = prop.grid().radius();
    let mut out = vec![MassField::zeros(kernel.dim(), radius, 0)];
    if steps == 0 {
        return out;
    }
    out.push(MassField::from_kernel(kernel, radius, 1));
    for k in 1..steps {
        let next = prop.free_step(&out[k]);
        out.push(next);
    }
    out
}

/// `max_{k <= n, x} |(a * P^0_k)(x) - (a * P_k)(x)|`.
///
/// Paths that return to the origin contribute nothing once summed against an
/// antisymmetric `a`, so the two convolutions coincide.
pub fn convolution_identity_check(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<f64> {
    require_antisymmetric(spec)?;
    let radius = policy.resolve(n + 1, spec.step_radius())?;
    let prop = Propagator::new(spec, radius);
    let taboo = taboo_propagate(&prop, spec.anti(), n + 1);
    let free = free_propagate(&prop, spec.anti(), n + 1);
    Ok(taboo
        .iter()
        .zip(&free)
        .map(|(t, f)| t.max_abs_diff(f))
        .fold(0.0, f64::max))
}

/// `Pi_n(0, .)` from the symmetric-perturbation representation (`a = 0`).
///
/// Let `p_l = P_l(0, 0)`, `h_k = (s * P_{k-1})(0)`, and
/// `G_K = sum over compositions K = k_1 + .. + k_alpha of eps^alpha prod h_{k_i}`
/// (so `G_0 = 1`, `G_K = sum_{j=1}^K eps h_j G_{K-j}`). With taboo fields
/// `P^0_k(0, .)` and `H_k = (s * P^0_{k-1})(.)`:
///
/// ```text
/// Pi_n(0, x) = P_n(0, x)
///            + eps sum_l p_l H_{n-l}(x)
///            + sum_l sum_{K=1}^{l} p_{l-K} G^{(1)}_K P^0_{n-l}(0, x)
///            + sum_l sum_{K=1}^{l} p_{l-K} G^{(>=2)}_K P^0_{n-l}(0, x)
///            + eps sum_l sum_{K=1}^{l} p_{l-K} G_K H_{n-l}(x)
/// ```
///
/// where `G^{(1)}` is the single-excursion part of `G` and `G^{(>=2)}` the rest.
pub fn pi_symmetric(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<MassField> {
    if !spec.anti().is_empty() {
        return Err(Error::WrongParity("needs a = 0 (symmetric perturbation only)".into()));
    }
    if n > SYMMETRIC_CAP {
        return Err(Error::CapExceeded { n, cap: SYMMETRIC_CAP });
    }
    let eps = spec.epsilon();
    let radius = policy.resolve(n, spec.step_radius())?;
    let prop = Propagator::new(spec, radius);
    let grid = prop.grid().clone();

    let mut free = vec![prop.point_mass()];
    for k in 0..n {
        let next = prop.free_step(&free[k]);
        free.push(next);
    }
    let p: Vec<f64> = free.iter().map(|f| f.origin_value()).collect();

    // P^0_k(0, .) with the first-return mass stored at the origin.
    let mut taboo = vec![prop.point_mass()];
    if n >= 1 {
        let (mut f, a) = prop.taboo_start(true);
        let o = grid.origin();
        f.values_mut()[o] = a;
        taboo.push(f);
        for k in 1..n {
            let mut cleared = taboo[k].clone();
            cleared.values_mut()[o] = 0.0;
            let (mut next, arrived) = prop.taboo_step(&cleared);
            next.values_mut()[o] = arrived;
            taboo.push(next);
        }
    }
    let h_fields = taboo_propagate(&prop, spec.sym(), n);
    let h: Vec<f64> = free_propagate(&prop, spec.sym(), n).iter().map(|f| f.origin_value()).collect();

    let mut g_all = vec![0.0; n + 1];
    g_all[0] = 1.0;
    for m in 1..=n {
        g_all[m] = (1..=m).map(|j| eps * h[j] * g_all[m - j]).sum();
    }
    let g_single: Vec<f64> = (0..=n).map(|m| if m == 0 { 0.0 } else { eps * h[m] }).collect();
    let g_multi: Vec<f64> = (0..=n).map(|m| if m == 0 { 0.0 } else { g_all[m] - g_single[m] }).collect();
    let weight = |g: &[f64], l: usize| -> f64 { (1..=l).map(|k| p[l - k] * g[k]).sum() };

    let mut values = free[n].values().to_vec();
    let mut add = |scale: f64, field: &MassField| {
        if scale != 0.0 {
            for (v, f) in values.iter_mut().zip(field.values()) {
                *v += scale * f;
            }
        }
    };
    for l in 0..n {
        add(eps * p[l], &h_fields[n - l]);
        add(weight(&g_single, l), &taboo[n - l]);
        add(weight(&g_multi, l), &taboo[n - l]);
        add(eps * weight(&g_all, l), &h_fields[n - l]);
    }
    Ok(MassField::from_parts(grid, n, values, 0.0))
}

/// Result of [`fourier_inversion_check`].
#[derive(Clone, Debug)]
pub struct FourierReport {
    /// `max_x |inverse transform of phi_n - Pi_n(0, x)|` over the whole grid.
    pub max_deviation: f64,
    /// Largest `gamma` with `|P~(lambda)| <= exp(-gamma |lambda|^2)` on the grid.
    pub gamma: f64,
    /// Whether `|P~(lambda)^k| <= exp(-gamma k |lambda|^2)` held for every `k <= n`.
    pub bound_holds: bool,
}

/// Characteristic function of a kernel at `lambda`: `sum_u w(u) e^{i lambda . u}`.
pub fn characteristic(kernel: &SignedKernel, lambda: &[f64]) -> Complex64 {
    kernel
        .iter()
        .map(|(u, w)| {
            let phase: f64 = u.coords().iter().zip(lambda).map(|(&c, l)| c as f64 * l).sum();
            Complex64::from_polar(w, phase)
        })
        .sum()
}

/// Frequencies `2 pi j / M` for `j` in `{0..M-1}^dim`, row-major.
fn frequency_grid(dim: usize, m: usize) -> Vec<Vec<f64>> {
    let total = m.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut lam = vec![0.0; dim];
            for d in (0..dim).rev() {
                lam[d] = 2.0 * std::f64::consts::PI * (idx % m) as f64 / m as f64;
                idx /= m;
            }
            lam
        })
        .collect()
}

fn wrap(lambda: &[f64]) -> Vec<f64> {
    use std::f64::consts::PI;
    lambda.iter().map(|&l| if l >= PI { l - 2.0 * PI } else { l }).collect()
}

/// Largest `gamma` such that `|P~(lambda)| <= exp(-gamma |lambda|^2)` at every
/// nonzero frequency of the `M`-point grid folded into `[-pi, pi)^dim`.
pub fn fit_gamma(spec: &ValidatedSpec, grid_size: usize) -> f64 {
    frequency_grid(spec.dim(), grid_size)
        .iter()
        .map(|l| wrap(l))
        .filter(|l| l.iter().any(|&c| c != 0.0))
        .filter_map(|l| {
            let modulus = characteristic(spec.free(), &l).norm();
            let norm2: f64 = l.iter().map(|c| c * c).sum();
            (modulus > 0.0).then(|| -modulus.ln() / norm2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Rebuild `Pi_n(0, .)` from
/// `phi_n = P~^n + sum_{k<n} p_k a~ P~^{n-k-1}` by an `M`-point inverse DFT
/// per axis and compare with the exact field.
pub fn fourier_inversion_check(spec: &ValidatedSpec, n: usize, grid_size: usize) -> Result<FourierReport> {
    require_antisymmetric(spec)?;
    let radius = n * spec.step_radius();
    if grid_size < 2 * radius + 1 {
        return Err(Error::GridTooSmall { grid: grid_size, required: 2 * radius + 1 });
    }
    let dim = spec.dim();
    let m = grid_size;
    let returns = return_sequence(spec, n);
    let lambdas = frequency_grid(dim, m);
    let mut data: Vec<Complex64> = lambdas
        .iter()
        .map(|l| {
            let pt = characteristic(spec.free(), l);
            let at = characteristic(spec.anti(), l);
            let mut powers = vec![Complex64::new(1.0, 0.0); n + 1];
            for k in 1..=n {
                powers[k] = powers[k - 1] * pt;
            }
            let correction: Complex64 = (0..n).map(|k| returns.get(k) * powers[n - k - 1]).sum();
            powers[n] + at * correction
        })
        .collect();

    // f(x) = M^-dim sum_j phi(lambda_j) e^{-i lambda_j . x}: a forward DFT per axis.
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut stride = 1;
    for _ in 0..dim {
        let block = stride * m;
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        for outer in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                for j in 0..m {
                    line[j] = data[outer + inner + j * stride];
                }
                fft.process(&mut line);
                for j in 0..m {
                    data[outer + inner + j * stride] = line[j];
                }
            }
        }
        stride *= m;
    }
    let norm = (m as f64).powi(dim as i32);

    let exact = crate::exact::evolve_perturbed(spec, n, BoxPolicy::Exact)?;
    let mut max_dev: f64 = 0.0;
    for (idx, value) in data.iter().enumerate() {
        // Row-major over axes with the last axis fastest after the loop above;
        // axis order of `frequency_grid` is the same, so decode identically.
        let mut rem = idx;
        let mut x = vec![0i64; dim];
        for d in (0..dim).rev() {
            let j = (rem % m) as i64;
            rem /= m;
            x[d] = if j > (m as i64) / 2 { j - m as i64 } else { j };
        }
        let v = value / norm;
        let target = exact.get(&x);
        max_dev = max_dev.max((v - target).norm());
    }

    let gamma = fit_gamma(spec, grid_size);
    let bound_holds = lambdas.iter().map(|l| wrap(l)).all(|l| {
        let modulus = characteristic(spec.free(), &l).norm();
        let norm2: f64 = l.iter().map(|c| c * c).sum();
        (1..=n).all(|k| modulus.powi(k as i32) <= (-gamma * k as f64 * norm2).exp() * (1.0 + 1e-12))
    });
    Ok(FourierReport { max_deviation: max_dev, gamma, bound_holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{evolve_free, evolve_perturbed};
    use crate::kernels::catalog::*;
    use crate::kernels::validate;
    use approx::assert_abs_diff_eq;

    #[test]
    fn no_perturbation_gives_free_walk() {
        let spec = validate(lazy_1d(0.0)).unwrap();
        for n in [0, 3, 20] {
            let a = pi_antisymmetric(&spec, n, BoxPolicy::Exact).unwrap();
            let f = evolve_free(&spec, n, BoxPolicy::Exact).unwrap();
            assert_eq!(a.max_abs_diff(&f), 0.0);
        }
    }

    #[test]
    fn single_step() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let a = pi_antisymmetric(&spec, 1, BoxPolicy::Exact).unwrap();
        assert_abs_diff_eq!(a.get(&[-1]), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(a.get(&[0]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a.get(&[1]), 0.35, epsilon = 1e-15);
    }

    #[test]
    fn antisymmetric_representation_matches_dp() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let series = ConvolutionSeries::new(&spec, 64, BoxPolicy::Exact).unwrap();
        assert!(series.max_antisymmetry_defect() <= 1e-13);
        for n in 0..=64 {
            let dp = evolve_perturbed(&spec, n, BoxPolicy::Exact).unwrap();
            let direct = pi_antisymmetric(&spec, n, BoxPolicy::Exact).unwrap();
            assert!(direct.max_abs_diff(&dp) <= 1e-12, "n={n}");
            assert!(series.assemble(n).max_abs_diff(&dp) <= 1e-12, "n={n}");
            let free = evolve_free(&spec, n, BoxPolicy::Exact).unwrap();
            assert!(dp.minus(&free).antisymmetry_defect() <= 1e-13);
        }
    }

    #[test]
    fn convolution_identity() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        assert!(convolution_identity_check(&spec, 16, BoxPolicy::Exact).unwrap() <= 1e-12);
        let none = validate(lazy_1d(0.0)).unwrap();
        assert_eq!(convolution_identity_check(&none, 16, BoxPolicy::Exact).unwrap(), 0.0);
        let sym = validate(lazy_1d_symmetric(1.0)).unwrap();
        assert_eq!(
            convolution_identity_check(&sym, 16, BoxPolicy::Exact).unwrap_err().name(),
            "WrongParity"
        );
    }

    #[test]
    fn symmetric_representation_matches_dp() {
        let spec = validate(lazy_1d_symmetric(1.0)).unwrap();
        for n in 0..=SYMMETRIC_CAP {
            let dp = evolve_perturbed(&spec, n, BoxPolicy::Exact).unwrap();
            let rep = pi_symmetric(&spec, n, BoxPolicy::Exact).unwrap();
            assert!(rep.max_abs_diff(&dp) <= 1e-12, "n={n}: {}", rep.max_abs_diff(&dp));
        }
    }

    #[test]
    fn symmetric_representation_edge_cases() {
        let zero = validate(lazy_1d_symmetric(0.0)).unwrap();
        let f = evolve_free(&zero, 9, BoxPolicy::Exact).unwrap();
        assert!(pi_symmetric(&zero, 9, BoxPolicy::Exact).unwrap().max_abs_diff(&f) <= 1e-15);

        let spec = validate(lazy_1d_symmetric(1.0)).unwrap();
        let one = pi_symmetric(&spec, 1, BoxPolicy::Exact).unwrap();
        assert_abs_diff_eq!(one.get(&[0]), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(one.get(&[1]), 0.125, epsilon = 1e-15);

        assert_eq!(pi_symmetric(&spec, 17, BoxPolicy::Exact).unwrap_err().name(), "CapExceeded");
        let anti = validate(lazy_1d(0.1)).unwrap();
        assert_eq!(pi_symmetric(&anti, 4, BoxPolicy::Exact).unwrap_err().name(), "WrongParity");
        assert_eq!(pi_antisymmetric(&spec, 4, BoxPolicy::Exact).unwrap_err().name(), "WrongParity");
    }

    #[test]
    fn planar_symmetric_representation() {
        use crate::kernels::{LatticeVector, SignedKernel, WalkSpec};
        let free = nearest_neighbour(2, 0.5, 0.0).free;
        let mut sym = vec![(LatticeVector::zero(2), 0.2)];
        for i in 0..2 {
            sym.push((LatticeVector::axis(2, i, 1), -0.05));
            sym.push((LatticeVector::axis(2, i, -1), -0.05));
        }
        let spec = validate(WalkSpec::symmetric(free, SignedKernel::new(2, sym).unwrap(), 0.7)).unwrap();
        for n in [1, 5, 12] {
            let dp = evolve_perturbed(&spec, n, BoxPolicy::Exact).unwrap();
            let rep = pi_symmetric(&spec, n, BoxPolicy::Exact).unwrap();
            assert!(rep.max_abs_diff(&dp) <= 1e-12);
        }
    }

    #[test]
    fn fourier_inversion() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let r = fourier_inversion_check(&spec, 32, 128).unwrap();
        assert!(r.max_deviation <= 1e-10, "{}", r.max_deviation);
        assert!(r.gamma > 0.0 && r.bound_holds);

        let free = validate(lazy_1d(0.0)).unwrap();
        assert!(fourier_inversion_check(&free, 32, 128).unwrap().max_deviation <= 1e-12);

        assert_eq!(fourier_inversion_check(&spec, 32, 64).unwrap_err().name(), "GridTooSmall");
    }

    #[test]
    fn fourier_inversion_in_two_dimensions() {
        let spec = validate(nearest_neighbour(2, 0.5, 0.05)).unwrap();
        let r = fourier_inversion_check(&spec, 12, 32).unwrap();
        assert!(r.max_deviation <= 1e-12, "{}", r.max_deviation);
    }

    #[test]
    fn periodic_walk_has_no_gaussian_bound() {
        // |P~(pi)| = 1 for the simple random walk.
        let spec = validate(srw_1d()).unwrap();
        assert!(fit_gamma(&spec, 64) <= 1e-12);
    }
}
