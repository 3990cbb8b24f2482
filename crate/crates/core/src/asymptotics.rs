//! Gaussian leading term and the first correction `Delta_n(x)` caused by the
//! antisymmetric perturbation.
//!
//! With `C = (2 pi)^{-nu/2} det(B)^{-1/2}`, `Q = x^T B^{-1} x` and the drift
//! coupling `d . B^{-1} x`, the correction is evaluated three ways:
//!
//! * [`delta_sum`]: `C (d . B^{-1} x) sum_{k=1}^{n-1} p_{n-k-1} k^{-(nu+2)/2} e^{-Q/2k}`
//!   with exact return probabilities `p`;
//! * [`delta_quadrature`]: the same sum with `p_k ~ C k^{-nu/2}` and the sum
//!   replaced by `C^2 (d . B^{-1} x) n^{-nu} I_n(Q)`, where
//!   `I_n(Q) = int_{1/n}^{1-1/n} e^{-Q/(2 n alpha)} alpha^{-nu/2-1} (1-alpha)^{-nu/2} d alpha`;
//! * [`delta_closed`]: `I_n(Q)` in closed form for `nu = 1, 2, 3`.

use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma_lr;

use libm::erf;

use crate::error::{Error, Result};
use crate::exact::{evolve_free, evolve_perturbed, return_sequence, ReturnSequence};
use crate::field::BoxPolicy;
use crate::kernels::{moments, MomentData, ValidatedSpec};

/// Tolerances for the adaptive Gauss-Kronrod integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { abs_tol: 1e-12, rel_tol: 1e-10, max_subdivisions: 4096 }
    }
}

impl QuadratureConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let ok = |t: f64| t.is_finite() && t > 0.0;
        if !ok(abs_tol) || !ok(rel_tol) || max_subdivisions == 0 {
            return Err(Error::InvalidArgument("quadrature tolerances must be positive".into()));
        }
        Ok(QuadratureConfig { abs_tol, rel_tol, max_subdivisions })
    }

    /// Same configuration with both tolerances halved.
    pub fn halved(&self) -> Self {
        QuadratureConfig { abs_tol: self.abs_tol / 2.0, rel_tol: self.rel_tol / 2.0, ..*self }
    }
}

/// Value and error estimate of an integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive G7-K15 integration over the union of the consecutive intervals
/// given by `breaks`, bisecting the piece with the largest error first.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], cfg: &QuadratureConfig) -> Result<Quadrature> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, error) = gauss_kronrod(&f, w[0], w[1]);
            heap.push(Piece { a: w[0], b: w[1], value, error });
        }
    }
    let mut subdivisions = 0;
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::QuadratureNotConverged { error, subdivisions });
        }
        if error <= cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
            return Ok(Quadrature { value, error, subdivisions });
        }
        if subdivisions >= cfg.max_subdivisions {
            return Err(Error::QuadratureNotConverged { error, subdivisions });
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::QuadratureNotConverged { error, subdivisions });
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gauss_kronrod(&f, a, b);
            heap.push(Piece { a, b, value, error });
        }
        subdivisions += 1;
    }
}

/// `(2 pi)^{-nu/2} det(B)^{-1/2}`.
pub fn normalization(m: &MomentData) -> f64 {
    (2.0 * PI).powf(-(m.dim() as f64) / 2.0) / m.det().sqrt()
}

fn require_steps(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidArgument("n must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn check_dim(m: &MomentData, x: &[f64]) -> Result<()> {
    if x.len() == m.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: m.dim(), found: x.len() })
    }
}

/// Gaussian local limit `(2 pi n)^{-nu/2} det(B)^{-1/2} exp(-Q / 2n)`.
pub fn gaussian_term(m: &MomentData, n: usize, x: &[f64]) -> Result<f64> {
    require_steps(n)?;
    check_dim(m, x)?;
    let nf = n as f64;
    Ok(normalization(m) * nf.powf(-(m.dim() as f64) / 2.0) * (-m.quad_form(x) / (2.0 * nf)).exp())
}

fn require_asymptotic(spec: &ValidatedSpec) -> Result<()> {
    if !spec.is_antisymmetric_case() {
        return Err(Error::WrongParity("asymptotics cover epsilon = 0 only".into()));
    }
    spec.require_aperiodic()
}

/// The discrete-sum form of the correction, with exact return probabilities.
#[derive(Clone, Debug)]
pub struct DeltaSum {
    moments: MomentData,
    n: usize,
    weights: Vec<f64>,
}

impl DeltaSum {
    pub fn new(spec: &ValidatedSpec, n: usize) -> Result<Self> {
        require_asymptotic(spec)?;
        require_steps(n)?;
        let m = moments(spec)?;
        let returns = return_sequence(spec, n);
        Ok(Self::from_returns(m, &returns, n))
    }

    /// Build from precomputed return probabilities (`returns.horizon() >= n - 1`).
    pub fn from_returns(moments: MomentData, returns: &ReturnSequence, n: usize) -> Self {
        let e = (moments.dim() as f64 + 2.0) / 2.0;
        let c = normalization(&moments);
        let weights = (0..n)
            .map(|k| if k == 0 { 0.0 } else { c * returns.get(n - k - 1) * (k as f64).powf(-e) })
            .collect();
        DeltaSum { moments, n, weights }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let coupling = self.moments.drift_coupling(x);
        if coupling == 0.0 {
            return 0.0;
        }
        let q = self.moments.quad_form(x);
        let s: f64 = self
            .weights
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, w)| w * (-q / (2.0 * k as f64)).exp())
            .sum();
        coupling * s
    }
}

/// Discrete-sum correction at `x` (see [`DeltaSum`]).
pub fn delta_sum(spec: &ValidatedSpec, n: usize, x: &[f64]) -> Result<f64> {
    let ds = DeltaSum::new(spec, n)?;
    check_dim(&ds.moments, x)?;
    Ok(ds.eval(x))
}

/// Initial breakpoints for the alpha integrals: dyadic near both ends, where
/// the integrand varies on the scale `1/n`.
fn alpha_breaks(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let (lo, hi) = (1.0 / nf, 1.0 - 1.0 / nf);
    let mut left = vec![lo];
    let mut t = 2.0 / nf;
    while t < 0.5 {
        left.push(t);
        t *= 2.0;
    }
    let mut breaks = left.clone();
    breaks.push(0.5);
    breaks.extend(left.iter().rev().map(|&a| 1.0 - a).filter(|&a| a > 0.5 && a < hi));
    breaks.push(hi);
    breaks.dedup();
    breaks
}

/// `I_n(Q) = int_{1/n}^{1-1/n} e^{-Q/(2 n alpha)} alpha^{-nu/2-1} (1-alpha)^{-nu/2} d alpha`.
pub fn alpha_integral(dim: usize, q: f64, n: usize, cfg: &QuadratureConfig) -> Result<Quadrature> {
    if n <= 2 {
        return Ok(Quadrature { value: 0.0, error: 0.0, subdivisions: 0 });
    }
    let h = dim as f64 / 2.0;
    let c = q / (2.0 * n as f64);
    integrate(
        |a: f64| (-c / a).exp() * a.powf(-h - 1.0) * (1.0 - a).powf(-h),
        &alpha_breaks(n),
        cfg,
    )
}

/// The Theorem's kernel
/// `int_{1/n}^{1-1/n} e^{-((1-alpha)/alpha) Q/2n} alpha^{-nu/2-1} (1-alpha)^{-nu/2} d alpha`.
pub fn theorem_integral(dim: usize, q: f64, n: usize, cfg: &QuadratureConfig) -> Result<Quadrature> {
    if n <= 2 {
        return Ok(Quadrature { value: 0.0, error: 0.0, subdivisions: 0 });
    }
    let h = dim as f64 / 2.0;
    let c = q / (2.0 * n as f64);
    integrate(
        |a: f64| (-c * (1.0 - a) / a).exp() * a.powf(-h - 1.0) * (1.0 - a).powf(-h),
        &alpha_breaks(n),
        cfg,
    )
}

/// Quadrature form `C^2 (d . B^{-1} x) n^{-nu} I_n(Q)`.
pub fn delta_quadrature(m: &MomentData, n: usize, x: &[f64], cfg: &QuadratureConfig) -> Result<f64> {
    require_steps(n)?;
    check_dim(m, x)?;
    let coupling = m.drift_coupling(x);
    if coupling == 0.0 {
        return Ok(0.0);
    }
    let c = normalization(m);
    let i = alpha_integral(m.dim(), m.quad_form(x), n, cfg)?;
    Ok(c * c * coupling * (n as f64).powf(-(m.dim() as f64)) * i.value)
}

/// `delta_n(x) = C^2 |x| n^{-nu/2} int e^{-((1-alpha)/alpha) Q/2n} / (...) d alpha`,
/// an O(1) function of `n` at fixed `x`.
pub fn delta_n(m: &MomentData, n: usize, x: &[f64], cfg: &QuadratureConfig) -> Result<f64> {
    require_steps(n)?;
    check_dim(m, x)?;
    let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let c = normalization(m);
    let i = theorem_integral(m.dim(), m.quad_form(x), n, cfg)?;
    Ok(c * c * norm * (n as f64).powf(-(m.dim() as f64) / 2.0) * i.value)
}

/// `|d_eff| cos(d_eff, x) e^{-Q/2n} n^{-nu/2} delta_n(x)` with `d_eff = B^{-1} d`;
/// identical to [`delta_quadrature`].
pub fn delta_theorem_form(m: &MomentData, n: usize, x: &[f64], cfg: &QuadratureConfig) -> Result<f64> {
    let dn = delta_n(m, n, x, cfg)?;
    let d_eff = m.effective_drift();
    let d_norm = d_eff.norm();
    let x_norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    if d_norm == 0.0 || x_norm == 0.0 {
        return Ok(0.0);
    }
    let cos = d_eff.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / (d_norm * x_norm);
    let nf = n as f64;
    Ok(d_norm * cos * (-m.quad_form(x) / (2.0 * nf)).exp() * nf.powf(-(m.dim() as f64) / 2.0) * dn)
}

/// `erf_sigma(x) = int_0^x e^{-t^2/sigma^2} dt = sigma (sqrt(pi)/2) erf(x/sigma)`.
pub fn erf_sigma(sigma: f64, x: f64) -> f64 {
    sigma * PI.sqrt() / 2.0 * erf(x / sigma)
}

/// `erf_B(v) = int_{|t| <= |v|} e^{-(B^{-1} t, t)} d^nu t` for `B = sigma^2 I`,
/// i.e. `sigma^nu pi^{nu/2} P(nu/2, |v|^2/sigma^2)`.
///
/// In one dimension this is `2 erf_sigma(|v|)`. Anisotropic `B` is not
/// supported.
pub fn erf_b(m: &MomentData, v: &[f64]) -> Result<f64> {
    check_dim(m, v)?;
    let s2 = m
        .isotropic_variance()
        .ok_or_else(|| Error::UnsupportedDimension("erf_B needs an isotropic covariance".into()))?;
    let h = m.dim() as f64 / 2.0;
    let r2: f64 = v.iter().map(|c| c * c).sum();
    if r2 == 0.0 {
        return Ok(0.0);
    }
    Ok(s2.powf(h) * PI.powf(h) * gamma_lr(h, r2 / s2))
}

/// Closed-form `I_n(Q)` at `x`.
///
/// * `nu = 1`: `e^{-c} sqrt(pi/c) [erf(sqrt(c(n-1))) - erf(sqrt(c/(n-1)))]`, `c = Q/2n`
///   (exact, written with `erf_sigma`);
/// * `nu = 2`: `(2n/Q) e^{-Q/2n} (e^{-Q/(2n(n-1))} - e^{-Q(n-1)/2n})`, the part that
///   dominates near the perturbation;
/// * `nu = 3`: `e^{-Q/2n} (2n/Q)^{3/2} erf_B(x/sqrt 2) / (2 pi sigma^3)`, leading order
///   in `n`; isotropic `B` only.
pub fn closed_integral(m: &MomentData, n: usize, x: &[f64]) -> Result<f64> {
    require_steps(n)?;
    check_dim(m, x)?;
    if n <= 2 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let q = m.quad_form(x);
    match m.dim() {
        1 => {
            let s = m.covariance()[(0, 0)].sqrt();
            let ax = x[0].abs();
            if ax == 0.0 {
                return Ok(2.0 * (nf - 1.0).sqrt() - 2.0 / (nf - 1.0).sqrt());
            }
            let hi = erf_sigma(s, ax / 2f64.sqrt() * ((nf - 1.0) / nf).sqrt());
            let lo = erf_sigma(s, ax / 2f64.sqrt() / (nf * (nf - 1.0)).sqrt());
            let erf_diff = (hi - lo) / (s * PI.sqrt() / 2.0);
            Ok((2.0 * PI * nf).sqrt() * s / ax * (-q / (2.0 * nf)).exp() * erf_diff)
        }
        2 => {
            if q == 0.0 {
                return Ok(nf - 1.0);
            }
            Ok(2.0 * nf / q
                * (-q / (2.0 * nf)).exp()
                * ((-q / (2.0 * nf * (nf - 1.0))).exp() - (-q * (nf - 1.0) / (2.0 * nf)).exp()))
        }
        3 => {
            let s2 = m.isotropic_variance().ok_or_else(|| {
                Error::UnsupportedDimension("three-dimensional closed form needs isotropic B".into())
            })?;
            if q == 0.0 {
                return Ok(2.0 / 3.0 * nf.powf(1.5));
            }
            let v: Vec<f64> = x.iter().map(|c| c / 2f64.sqrt()).collect();
            let eb = erf_b(m, &v)?;
            Ok((-q / (2.0 * nf)).exp() * (2.0 * nf / q).powf(1.5) * eb / (2.0 * PI * s2.powf(1.5)))
        }
        d => Err(Error::UnsupportedDimension(format!("no closed form in dimension {d}"))),
    }
}

/// Closed-form correction `C^2 (d . B^{-1} x) n^{-nu} I_n(Q)` with `I_n` from
/// [`closed_integral`].
pub fn delta_closed(m: &MomentData, n: usize, x: &[f64]) -> Result<f64> {
    let i = closed_integral(m, n, x)?;
    let coupling = m.drift_coupling(x);
    if coupling == 0.0 {
        return Ok(0.0);
    }
    let c = normalization(m);
    Ok(c * c * coupling * (n as f64).powf(-(m.dim() as f64)) * i)
}

/// One-dimensional leading-order form
/// `(1/(2 pi sigma^2)) (sqrt(2 pi) d sign(x) / (sigma sqrt n)) e^{-x^2/2n sigma^2}
/// erf_sigma(|x| sqrt((n-1)/n) / sqrt 2) / (sigma sqrt(pi)/2)`,
/// which drops the `erf(sqrt(c/(n-1)))` term of [`delta_closed`].
pub fn delta_closed_leading_1d(m: &MomentData, n: usize, x: f64) -> Result<f64> {
    require_steps(n)?;
    if m.dim() != 1 {
        return Err(Error::UnsupportedDimension("one-dimensional form".into()));
    }
    if x == 0.0 || n < 2 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let s2 = m.covariance()[(0, 0)];
    let s = s2.sqrt();
    let d = m.drift()[0];
    let core = (2.0 * PI).sqrt() * d * x.signum() / (s * nf.sqrt()) * (-x * x / (2.0 * nf * s2)).exp();
    let bracket = erf_sigma(s, x.abs() / 2f64.sqrt() * ((nf - 1.0) / nf).sqrt()) / (s * PI.sqrt() / 2.0);
    Ok(core * bracket / (2.0 * PI * s2))
}

/// Upper end of the range where the asymptotics are meaningful: `sqrt(n) ln n`.
pub fn scale_guard(n: usize) -> f64 {
    let nf = n as f64;
    nf.sqrt() * nf.ln()
}

/// Result of [`psi_tail_check`].
#[derive(Clone, Debug, Serialize)]
pub struct PsiTail {
    /// `max |psi(x)| n^{nu/2} |x|^L` over the window.
    pub c_l: f64,
    pub argmax: Vec<i64>,
    pub sites: usize,
    /// `max |psi(x) + psi(-x)|`.
    pub antisymmetry_defect: f64,
}

/// Fit `C_L` in `|psi_n(x)| <= C_L n^{-nu/2} |x|^{-L}` with
/// `psi = exact_correction - delta_quadrature`, over lattice sites with
/// `x_min <= |x| <= x_max` (`x_max` defaults to [`scale_guard`]).
pub fn psi_tail_check(
    spec: &ValidatedSpec,
    n: usize,
    l: i32,
    x_min: f64,
    x_max: Option<f64>,
    cfg: &QuadratureConfig,
) -> Result<PsiTail> {
    require_asymptotic(spec)?;
    require_steps(n)?;
    let m = moments(spec)?;
    let x_max = x_max.unwrap_or_else(|| scale_guard(n));
    let exact = evolve_perturbed(spec, n, BoxPolicy::Exact)?.minus(&evolve_free(spec, n, BoxPolicy::Exact)?);
    let sites: Vec<Vec<i64>> = exact
        .iter()
        .map(|(x, _)| x)
        .filter(|x| {
            let r = norm(x);
            r >= x_min && r <= x_max
        })
        .collect();
    let residuals: Vec<(Vec<i64>, f64)> = sites
        .par_iter()
        .map(|x| {
            let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
            delta_quadrature(&m, n, &xf, cfg).map(|q| (x.clone(), exact.get(x) - q))
        })
        .collect::<Result<_>>()?;
    let scale = (n as f64).powf(m.dim() as f64 / 2.0);
    let mut best = (0.0, vec![0; m.dim()]);
    let mut defect: f64 = 0.0;
    let lookup: std::collections::HashMap<&[i64], f64> =
        residuals.iter().map(|(x, r)| (x.as_slice(), *r)).collect();
    for (x, r) in &residuals {
        let c = r.abs() * scale * norm(x).powi(l);
        if c > best.0 {
            best = (c, x.clone());
        }
        let mirror: Vec<i64> = x.iter().map(|c| -c).collect();
        if let Some(rm) = lookup.get(mirror.as_slice()) {
            defect = defect.max((r + rm).abs());
        }
    }
    Ok(PsiTail { c_l: best.0, argmax: best.1, sites: residuals.len(), antisymmetry_defect: defect })
}

fn norm(x: &[i64]) -> f64 {
    x.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
}

/// `S(n) = sum_{k=0}^{n-2} k^l e^{-a(k-l)} / (n-k-1)^{nu/2}`.
///
/// Terms past the peak of `k^l e^{-ak}` are dropped once they fall below
/// `1e-18` of the running sum.
pub fn appendix_sum(l: u32, a: f64, dim: usize, n: usize) -> f64 {
    let h = dim as f64 / 2.0;
    let peak = l as f64 / a;
    let mut s = 0.0;
    for k in 0..n.saturating_sub(1) {
        let kf = k as f64;
        let t = kf.powi(l as i32) * (-a * (kf - l as f64)).exp() / ((n - k - 1) as f64).powf(h);
        s += t;
        if kf > peak + 1.0 && t < 1e-18 * s {
            break;
        }
    }
    s
}

/// Result of [`appendix_bound_check`].
#[derive(Clone, Debug, Serialize)]
pub struct AppendixReport {
    /// `(n, n^{nu/2} S(n))` along a doubling ladder ending at the horizon.
    pub scaled: Vec<(usize, f64)>,
    /// `n^{nu/2} S(n)` at the horizon.
    pub limit_estimate: f64,
    /// `S(N) / S(N/2)` at the horizon `N`.
    pub doubling_ratio: f64,
    /// Largest scaled value over the ladder.
    pub max_scaled: f64,
}

pub fn appendix_bound_check(l: u32, a: f64, dim: usize, horizon: usize) -> Result<AppendixReport> {
    if !(a > 0.0) || dim == 0 || horizon < 4 {
        return Err(Error::InvalidArgument("need a > 0, dim >= 1, horizon >= 4".into()));
    }
    let h = dim as f64 / 2.0;
    let mut ladder = Vec::new();
    let mut n = horizon;
    while n >= 4 {
        ladder.push(n);
        n /= 2;
    }
    ladder.reverse();
    let scaled: Vec<(usize, f64)> =
        ladder.iter().map(|&n| (n, (n as f64).powf(h) * appendix_sum(l, a, dim, n))).collect();
    let limit_estimate = scaled.last().expect("non-empty").1;
    let doubling_ratio = appendix_sum(l, a, dim, horizon) / appendix_sum(l, a, dim, horizon / 2);
    let max_scaled = scaled.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(AppendixReport { scaled, limit_estimate, doubling_ratio, max_scaled })
}

/// One lattice site of a [`CorrectionProfile`].
#[derive(Clone, Debug, Serialize)]
pub struct ProfileRow {
    pub x: Vec<i64>,
    pub exact_total: f64,
    pub gaussian: f64,
    pub exact_correction: f64,
    pub delta_sum: f64,
    pub delta_quadrature: f64,
    pub delta_closed: f64,
    pub psi_residual: f64,
}

/// Exact values and every correction form over a box of sites.
#[derive(Clone, Debug, Serialize)]
pub struct CorrectionProfile {
    pub dim: usize,
    pub n: usize,
    pub kernel_hash: String,
    /// `false` when `delta_closed` had to fall back to the quadrature value.
    pub closed_form: bool,
    pub rows: Vec<ProfileRow>,
}

pub const PROFILE_COLUMNS: [&str; 7] = [
    "exact_total",
    "gaussian",
    "exact_correction",
    "delta_sum",
    "delta_quadrature",
    "delta_closed",
    "psi_residual",
];

/// Sites `x` with every coordinate in `lo..=hi`, row-major.
pub fn box_sites(dim: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                (lo..=hi).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// Profile over `x in [lo, hi]^nu`; `policy` sizes the exact fields.
pub fn correction_profile(
    spec: &ValidatedSpec,
    n: usize,
    lo: i64,
    hi: i64,
    policy: BoxPolicy,
    cfg: &QuadratureConfig,
) -> Result<CorrectionProfile> {
    require_asymptotic(spec)?;
    require_steps(n)?;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty range {lo}..{hi}")));
    }
    let m = moments(spec)?;
    let free = evolve_free(spec, n, policy)?;
    let pert = evolve_perturbed(spec, n, policy)?;
    let ds = DeltaSum::from_returns(m.clone(), &return_sequence(spec, n), n);
    let closed_form = matches!(m.dim(), 1 | 2) || (m.dim() == 3 && m.isotropic_variance().is_some());
    let rows = box_sites(spec.dim(), lo, hi)
        .into_par_iter()
        .map(|x| {
            let xf: Vec<f64> = x.iter().map(|&c| c as f64).collect();
            let exact_total = pert.get(&x);
            let exact_correction = exact_total - free.get(&x);
            let delta_quadrature = delta_quadrature(&m, n, &xf, cfg)?;
            let delta_closed = if closed_form { delta_closed(&m, n, &xf)? } else { delta_quadrature };
            Ok(ProfileRow {
                gaussian: gaussian_term(&m, n, &xf)?,
                delta_sum: ds.eval(&xf),
                psi_residual: exact_correction - delta_quadrature,
                x,
                exact_total,
                exact_correction,
                delta_quadrature,
                delta_closed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrectionProfile { dim: spec.dim(), n, kernel_hash: spec.hash_hex(), closed_form, rows })
}

impl CorrectionProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# dim={}", self.dim).unwrap();
        writeln!(out, "# n={}", self.n).unwrap();
        writeln!(out, "# kernel={}", self.kernel_hash).unwrap();
        let closed = if self.closed_form { "closed" } else { "quadrature-fallback" };
        writeln!(out, "# delta_closed={closed}").unwrap();
        let mut cols: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        cols.extend(PROFILE_COLUMNS.iter().map(|c| c.to_string()));
        writeln!(out, "{}", cols.join(",")).unwrap();
        for r in &self.rows {
            for c in &r.x {
                write!(out, "{c},").unwrap();
            }
            let vals = [
                r.exact_total,
                r.gaussian,
                r.exact_correction,
                r.delta_sum,
                r.delta_quadrature,
                r.delta_closed,
                r.psi_residual,
            ];
            let vals: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", vals.join(",")).unwrap();
        }
        out
    }

    pub fn row(&self, x: &[i64]) -> Option<&ProfileRow> {
        self.rows.iter().find(|r| r.x == x)
    }
}
