//! Walk kernels, one-point perturbations and their moments.
//!
//! A walk is described by a symmetric free kernel `P`, an antisymmetric
//! perturbation `a` and a symmetric perturbation `s` scaled by `epsilon`.
//! Away from the origin every step is drawn from `P`; from the origin the step
//! law is `P + epsilon * s + a`.
//!
//! [`validate`] is the only way to obtain a [`ValidatedSpec`], and every other
//! module in the crate takes one.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Absolute tolerance for probability sums and parity checks.
pub const KERNEL_TOL: f64 = 1e-12;

/// Default highest moment order collected by [`moments`].
pub const DEFAULT_MOMENT_ORDER: usize = 3;

/// A point of the integer lattice.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeVector(Vec<i64>);

impl LatticeVector {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticeVector(coords)
    }

    pub fn zero(dim: usize) -> Self {
        LatticeVector(vec![0; dim])
    }

    /// The `i`-th unit vector scaled by `len`.
    pub fn axis(dim: usize, i: usize, len: i64) -> Self {
        let mut v = vec![0; dim];
        v[i] = len;
        LatticeVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        LatticeVector(self.0.iter().map(|c| -c).collect())
    }

    pub fn add(&self, other: &LatticeVector) -> Self {
        LatticeVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

impl fmt::Debug for LatticeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<i64>> for LatticeVector {
    fn from(v: Vec<i64>) -> Self {
        LatticeVector(v)
    }
}

/// Finitely supported signed measure on the lattice.
///
/// Support vectors are kept sorted and distinct; zero weights are dropped on
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedKernel {
    dim: usize,
    support: Vec<(LatticeVector, f64)>,
}

impl SignedKernel {
    pub fn new(dim: usize, entries: Vec<(LatticeVector, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be at least 1".into()));
        }
        let mut support = Vec::with_capacity(entries.len());
        for (u, w) in entries {
            if u.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: u.dim() });
            }
            if !w.is_finite() {
                return Err(Error::InvalidKernel(format!("non-finite weight at {u:?}")));
            }
            if w != 0.0 {
                support.push((u, w));
            }
        }
        support.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(pair) = support.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::InvalidKernel(format!("duplicate support vector {:?}", pair[0].0)));
        }
        Ok(SignedKernel { dim, support })
    }

    pub fn empty(dim: usize) -> Self {
        SignedKernel { dim, support: Vec::new() }
    }

    /// Build from `(coords, weight)` pairs; panics on malformed input.
    ///
    /// Meant for literals in tests and examples.
    pub fn from_pairs(dim: usize, pairs: &[(&[i64], f64)]) -> Self {
        let entries = pairs.iter().map(|(u, w)| (LatticeVector::new(u.to_vec()), *w)).collect();
        SignedKernel::new(dim, entries).expect("malformed kernel literal")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LatticeVector, f64)> {
        self.support.iter().map(|(u, w)| (u, *w))
    }

    pub fn weight(&self, u: &LatticeVector) -> f64 {
        self.support
            .binary_search_by(|(v, _)| v.cmp(u))
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, w)| w).sum()
    }

    /// Largest sup-norm over the support.
    pub fn radius(&self) -> usize {
        self.support.iter().map(|(u, _)| u.norm_inf() as usize).max().unwrap_or(0)
    }

    pub fn scaled(&self, factor: f64) -> SignedKernel {
        let entries = self.support.iter().map(|(u, w)| (u.clone(), w * factor)).collect();
        SignedKernel::new(self.dim, entries).expect("scaling preserves validity")
    }

    /// Pointwise sum of two kernels.
    pub fn plus(&self, other: &SignedKernel) -> SignedKernel {
        let mut keys: Vec<LatticeVector> =
            self.support.iter().chain(&other.support).map(|(u, _)| u.clone()).collect();
        keys.sort();
        keys.dedup();
        let entries = keys
            .into_iter()
            .map(|u| {
                let w = self.weight(&u) + other.weight(&u);
                (u, w)
            })
            .collect();
        SignedKernel::new(self.dim, entries).expect("sum of valid kernels")
    }

    /// First vector `u` with `|w(u) - w(-u)| > tol`, if any.
    fn symmetry_defect(&self, tol: f64) -> Option<(LatticeVector, f64, f64)> {
        self.support.iter().find_map(|(u, w)| {
            let m = self.weight(&u.neg());
            ((w - m).abs() > tol).then(|| (u.clone(), *w, m))
        })
    }

    fn antisymmetry_defect(&self, tol: f64) -> Option<(LatticeVector, f64, f64)> {
        self.support.iter().find_map(|(u, w)| {
            let m = self.weight(&u.neg());
            ((w + m).abs() > tol).then(|| (u.clone(), *w, m))
        })
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect(tol).is_none()
    }

    pub fn is_antisymmetric(&self, tol: f64) -> bool {
        self.antisymmetry_defect(tol).is_none()
    }

    /// `sum_u u * w(u)`.
    pub fn first_moment(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (u, w) in &self.support {
            for (mi, &ui) in m.iter_mut().zip(u.coords()) {
                *mi += ui as f64 * w;
            }
        }
        m
    }

    /// `sum_u u u^T w(u)`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.dim, self.dim);
        for (u, w) in &self.support {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    b[(i, j)] += (u.coords()[i] * u.coords()[j]) as f64 * w;
                }
            }
        }
        b
    }

    /// Raw moments `sum_u u^alpha w(u)` for every multi-index with `|alpha| <= order`.
    pub fn raw_moments(&self, order: usize) -> Vec<(Vec<usize>, f64)> {
        multi_indices(self.dim, order)
            .into_iter()
            .map(|alpha| {
                let m = self
                    .support
                    .iter()
                    .map(|(u, w)| {
                        let mono: f64 = alpha
                            .iter()
                            .zip(u.coords())
                            .map(|(&k, &c)| (c as f64).powi(k as i32))
                            .product();
                        mono * w
                    })
                    .sum();
                (alpha, m)
            })
            .collect()
    }
}

fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0; dim];
    fn rec(pos: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for k in 0..=left {
            current[pos] = k;
            rec(pos + 1, left - k, current, out);
        }
        current[pos] = 0;
    }
    rec(0, order, &mut current, &mut out);
    out.sort_by_key(|a| (a.iter().sum::<usize>(), a.clone()));
    out
}

/// Unvalidated walk description: free kernel plus the origin perturbation
/// `c = epsilon * sym + anti`.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkSpec {
    pub free: SignedKernel,
    pub anti: SignedKernel,
    pub sym: SignedKernel,
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct KernelEntry {
    u: Vec<i64>,
    w: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelFile {
    dim: usize,
    #[serde(rename = "P")]
    free: Vec<KernelEntry>,
    #[serde(default)]
    a: Vec<KernelEntry>,
    #[serde(default)]
    s: Vec<KernelEntry>,
    #[serde(default)]
    epsilon: f64,
}

fn kernel_from_entries(dim: usize, entries: Vec<KernelEntry>) -> Result<SignedKernel> {
    SignedKernel::new(dim, entries.into_iter().map(|e| (LatticeVector::new(e.u), e.w)).collect())
}

fn entries_from_kernel(k: &SignedKernel) -> Vec<KernelEntry> {
    k.iter().map(|(u, w)| KernelEntry { u: u.coords().to_vec(), w }).collect()
}

impl WalkSpec {
    /// Antisymmetric-only perturbation (`epsilon = 0`).
    pub fn antisymmetric(free: SignedKernel, anti: SignedKernel) -> Self {
        let dim = free.dim();
        WalkSpec { free, anti, sym: SignedKernel::empty(dim), epsilon: 0.0 }
    }

    pub fn symmetric(free: SignedKernel, sym: SignedKernel, epsilon: f64) -> Self {
        let dim = free.dim();
        WalkSpec { free, anti: SignedKernel::empty(dim), sym, epsilon }
    }

    pub fn dim(&self) -> usize {
        self.free.dim()
    }

    /// Parse the JSON kernel-spec format:
    /// `{"dim": 1, "P": [{"u": [0], "w": 0.5}, ...], "a": [...], "s": [...], "epsilon": 0.0}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: KernelFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidKernel(e.to_string()))?;
        if file.dim == 0 {
            return Err(Error::InvalidKernel("dimension must be at least 1".into()));
        }
        Ok(WalkSpec {
            free: kernel_from_entries(file.dim, file.free)?,
            anti: kernel_from_entries(file.dim, file.a)?,
            sym: kernel_from_entries(file.dim, file.s)?,
            epsilon: file.epsilon,
        })
    }

    /// Canonical JSON (sorted supports, zero weights dropped).
    pub fn to_json(&self) -> String {
        let file = KernelFile {
            dim: self.dim(),
            free: entries_from_kernel(&self.free),
            a: entries_from_kernel(&self.anti),
            s: entries_from_kernel(&self.sym),
            epsilon: self.epsilon,
        };
        serde_json::to_string(&file).expect("kernel file serializes")
    }

    /// Step law from the origin, `P + epsilon * s + a`.
    pub fn origin_row(&self) -> SignedKernel {
        self.free.plus(&self.sym.scaled(self.epsilon)).plus(&self.anti)
    }

    /// Perturbation `c = epsilon * s + a`.
    pub fn perturbation(&self) -> SignedKernel {
        self.sym.scaled(self.epsilon).plus(&self.anti)
    }
}

/// A [`WalkSpec`] that passed [`validate`].
#[derive(Clone, Debug)]
pub struct ValidatedSpec {
    spec: WalkSpec,
    origin_row: SignedKernel,
    perturbation: SignedKernel,
    periodic: bool,
}

impl ValidatedSpec {
    /// Wrap a spec without checking it.
    ///
    /// Only for fault-injection harnesses that need to feed a deliberately
    /// broken walk through the validated-only entry points.
    #[doc(hidden)]
    pub fn new_unchecked(spec: WalkSpec) -> Self {
        let origin_row = spec.origin_row();
        let perturbation = spec.perturbation();
        let periodic = is_periodic(&spec.free);
        ValidatedSpec { spec, origin_row, perturbation, periodic }
    }

    pub fn spec(&self) -> &WalkSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn free(&self) -> &SignedKernel {
        &self.spec.free
    }

    pub fn anti(&self) -> &SignedKernel {
        &self.spec.anti
    }

    pub fn sym(&self) -> &SignedKernel {
        &self.spec.sym
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon
    }

    pub fn origin_row(&self) -> &SignedKernel {
        &self.origin_row
    }

    pub fn perturbation(&self) -> &SignedKernel {
        &self.perturbation
    }

    /// Largest sup-norm of a single step, free or from the origin.
    pub fn step_radius(&self) -> usize {
        self.spec.free.radius().max(self.origin_row.radius()).max(1)
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// True when the perturbation has no symmetric part.
    pub fn is_antisymmetric_case(&self) -> bool {
        self.spec.epsilon == 0.0 || self.spec.sym.is_empty()
    }

    pub fn require_aperiodic(&self) -> Result<()> {
        if self.periodic {
            Err(Error::Periodic)
        } else {
            Ok(())
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.spec.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Check every walk invariant and return the validated spec.
pub fn validate(spec: WalkSpec) -> Result<ValidatedSpec> {
    let dim = spec.free.dim();
    for k in [&spec.anti, &spec.sym] {
        if k.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: k.dim() });
        }
    }
    if spec.free.is_empty() {
        return Err(Error::NotAProbability("free kernel is empty".into()));
    }
    if !spec.epsilon.is_finite() || spec.epsilon < 0.0 {
        return Err(Error::InvalidKernel(format!("epsilon must be finite and >= 0, got {}", spec.epsilon)));
    }
    if let Some((u, w)) = spec.free.iter().find(|(_, w)| *w < 0.0) {
        return Err(Error::NotAProbability(format!("free weight P({u:?}) = {w} is negative")));
    }
    let total = spec.free.total();
    if (total - 1.0).abs() > KERNEL_TOL {
        return Err(Error::NotAProbability(format!("free kernel sums to {total}")));
    }
    if let Some((u, w, m)) = spec.free.symmetry_defect(KERNEL_TOL) {
        return Err(Error::NotSymmetric(format!("P({u:?}) = {w} but P(-u) = {m}")));
    }
    if let Some((u, w, m)) = spec.anti.antisymmetry_defect(KERNEL_TOL) {
        return Err(Error::NotAntisymmetric(format!("a({u:?}) = {w} but a(-u) = {m}")));
    }
    if let Some((u, w, m)) = spec.sym.symmetry_defect(KERNEL_TOL) {
        return Err(Error::NotSymmetric(format!("s({u:?}) = {w} but s(-u) = {m}")));
    }
    let row = spec.origin_row();
    if let Some((u, w)) = row.iter().find(|(_, w)| *w < -KERNEL_TOL) {
        return Err(Error::NotAProbability(format!("origin row weight at {u:?} is {w}")));
    }
    let row_total = row.total();
    if (row_total - 1.0).abs() > KERNEL_TOL {
        return Err(Error::NotAProbability(format!("origin row sums to {row_total}")));
    }
    check_reachability(&spec.free, &row)?;
    Ok(ValidatedSpec::new_unchecked(spec))
}

/// Sites reachable from the origin under the free kernel inside `[-r, r]^dim`.
fn reachable_set(free: &SignedKernel, r: i64) -> HashSet<LatticeVector> {
    let dim = free.dim();
    let start = LatticeVector::zero(dim);
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for (u, _) in free.iter() {
            let y = x.add(u);
            if y.norm_inf() <= r && seen.insert(y.clone()) {
                queue.push_back(y);
            }
        }
    }
    seen
}

fn check_reachability(free: &SignedKernel, origin_row: &SignedKernel) -> Result<()> {
    let dim = free.dim();
    let r = 4 * free.radius().max(origin_row.radius()).max(1) as i64;
    let reach = reachable_set(free, r);
    let points: Vec<f64> = reach.iter().flat_map(|v| v.to_f64()).collect();
    let rank = DMatrix::from_row_slice(reach.len(), dim, &points).rank(1e-9);
    if rank < dim {
        return Err(Error::Reducible(format!(
            "free steps span a rank-{rank} sublattice of Z^{dim}"
        )));
    }
    if let Some((u, _)) = origin_row.iter().find(|(u, _)| !reach.contains(*u)) {
        return Err(Error::Reducible(format!(
            "origin step {u:?} leaves the class reachable by the free walk"
        )));
    }
    Ok(())
}

/// A symmetric walk has period 1 or 2; it is aperiodic iff some odd-length
/// loop through the origin exists. Searched on the same box as reachability.
fn is_periodic(free: &SignedKernel) -> bool {
    let dim = free.dim();
    let r = 4 * free.radius().max(1) as i64;
    let start = (LatticeVector::zero(dim), false);
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([start]);
    while let Some((x, odd)) = queue.pop_front() {
        for (u, _) in free.iter() {
            let y = (x.add(u), !odd);
            if y.0.is_zero() && y.1 {
                return false;
            }
            if y.0.norm_inf() <= r && seen.insert(y.clone()) {
                queue.push_back(y);
            }
        }
    }
    true
}

/// Covariance of the free step, drift of the antisymmetric part, and raw
/// moments of `P` and `c`.
#[derive(Clone, Debug)]
pub struct MomentData {
    covariance: DMatrix<f64>,
    covariance_inv: DMatrix<f64>,
    det: f64,
    drift: DVector<f64>,
    order: usize,
    free_moments: Vec<(Vec<usize>, f64)>,
    perturbation_moments: Vec<(Vec<usize>, f64)>,
}

impl MomentData {
    /// Build directly from a covariance matrix and drift vector.
    pub fn from_parts(covariance: DMatrix<f64>, drift: DVector<f64>) -> Result<Self> {
        let dim = covariance.nrows();
        if covariance.ncols() != dim {
            return Err(Error::SingularCovariance);
        }
        if drift.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: drift.len() });
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > KERNEL_TOL {
            return Err(Error::SingularCovariance);
        }
        let chol = covariance.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let det = chol.determinant();
        if !(det > 0.0) {
            return Err(Error::SingularCovariance);
        }
        let covariance_inv = chol.inverse();
        Ok(MomentData {
            covariance,
            covariance_inv,
            det,
            drift,
            order: 0,
            free_moments: Vec::new(),
            perturbation_moments: Vec::new(),
        })
    }

    /// Isotropic covariance `sigma2 * I`.
    pub fn isotropic(dim: usize, sigma2: f64, drift: &[f64]) -> Result<Self> {
        MomentData::from_parts(
            DMatrix::identity(dim, dim) * sigma2,
            DVector::from_column_slice(drift),
        )
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn covariance_inv(&self) -> &DMatrix<f64> {
        &self.covariance_inv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn drift(&self) -> &DVector<f64> {
        &self.drift
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn free_moments(&self) -> &[(Vec<usize>, f64)] {
        &self.free_moments
    }

    pub fn perturbation_moments(&self) -> &[(Vec<usize>, f64)] {
        &self.perturbation_moments
    }

    /// `(B^{-1} x, x)`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * &self.covariance_inv * &v)[(0, 0)]
    }

    /// `B^{-1} d`, the drift direction the correction actually couples to.
    pub fn effective_drift(&self) -> DVector<f64> {
        &self.covariance_inv * &self.drift
    }

    /// `(d, B^{-1} x)`.
    pub fn drift_coupling(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        self.effective_drift().dot(&v)
    }

    /// `Some(sigma^2)` when `B = sigma^2 I` up to `1e-12`.
    pub fn isotropic_variance(&self) -> Option<f64> {
        let s = self.covariance[(0, 0)];
        let iso = DMatrix::identity(self.dim(), self.dim()) * s;
        ((&self.covariance - iso).abs().max() <= KERNEL_TOL).then_some(s)
    }
}

/// Moments up to [`DEFAULT_MOMENT_ORDER`].
pub fn moments(spec: &ValidatedSpec) -> Result<MomentData> {
    moments_with_order(spec, DEFAULT_MOMENT_ORDER)
}

pub fn moments_with_order(spec: &ValidatedSpec, order: usize) -> Result<MomentData> {
    let covariance = spec.free().second_moment();
    let drift = DVector::from_vec(spec.anti().first_moment());
    let mut m = MomentData::from_parts(covariance, drift).map_err(|e| match e {
        Error::SingularCovariance => Error::DegenerateCovariance,
        other => other,
    })?;
    m.order = order;
    m.free_moments = spec.free().raw_moments(order);
    m.perturbation_moments = spec.perturbation().raw_moments(order);
    Ok(m)
}

/// Named kernels used throughout the tests, the CLI and the verification suite.
pub mod catalog {
    use super::*;

    /// `P(0) = 1/2`, `P(+-1) = 1/4`.
    pub fn lazy_1d_free() -> SignedKernel {
        SignedKernel::from_pairs(1, &[(&[-1], 0.25), (&[0], 0.5), (&[1], 0.25)])
    }

    /// Lazy 1D walk with `a(+-1) = +-beta`.
    pub fn lazy_1d(beta: f64) -> WalkSpec {
        WalkSpec::antisymmetric(
            lazy_1d_free(),
            SignedKernel::from_pairs(1, &[(&[-1], -beta), (&[1], beta)]),
        )
    }

    /// Simple random walk `P(+-1) = 1/2`, unperturbed.
    pub fn srw_1d() -> WalkSpec {
        WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-1], 0.5), (&[1], 0.5)]),
            SignedKernel::empty(1),
        )
    }

    /// Nearest-neighbour walk in `dim` dimensions with holding probability `hold`
    /// and `a(+-e_1) = +-beta`.
    pub fn nearest_neighbour(dim: usize, hold: f64, beta: f64) -> WalkSpec {
        let step = (1.0 - hold) / (2 * dim) as f64;
        let mut free = Vec::new();
        if hold > 0.0 {
            free.push((LatticeVector::zero(dim), hold));
        }
        for i in 0..dim {
            free.push((LatticeVector::axis(dim, i, 1), step));
            free.push((LatticeVector::axis(dim, i, -1), step));
        }
        let anti = vec![
            (LatticeVector::axis(dim, 0, 1), beta),
            (LatticeVector::axis(dim, 0, -1), -beta),
        ];
        WalkSpec::antisymmetric(
            SignedKernel::new(dim, free).expect("valid"),
            SignedKernel::new(dim, anti).expect("valid"),
        )
    }

    /// Lazy 1D walk perturbed symmetrically: `s(0) = 1/4`, `s(+-1) = -1/8`,
    /// giving origin row `(1/8, 3/4, 1/8)` at `epsilon = 1`.
    pub fn lazy_1d_symmetric(epsilon: f64) -> WalkSpec {
        WalkSpec::symmetric(
            lazy_1d_free(),
            SignedKernel::from_pairs(1, &[(&[-1], -0.125), (&[0], 0.25), (&[1], -0.125)]),
            epsilon,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lazy_walk_is_valid() {
        let v = validate(lazy_1d(0.1)).unwrap();
        assert!(!v.is_periodic());
        for (_, w) in v.origin_row().iter() {
            assert!(w >= 0.0);
        }
        assert_abs_diff_eq!(v.origin_row().weight(&LatticeVector::new(vec![1])), 0.35, epsilon = 1e-15);
    }

    #[test]
    fn negative_origin_row_is_rejected() {
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-1], 0.5), (&[1], 0.5)]),
            SignedKernel::from_pairs(1, &[(&[-1], -0.6), (&[1], 0.6)]),
        );
        assert_eq!(validate(spec).unwrap_err().name(), "NotAProbability");
    }

    #[test]
    fn unbalanced_anti_is_rejected() {
        let spec = WalkSpec::antisymmetric(
            lazy_1d_free(),
            SignedKernel::from_pairs(1, &[(&[-1], -0.2), (&[1], 0.1)]),
        );
        assert_eq!(validate(spec).unwrap_err().name(), "NotAntisymmetric");
    }

    #[test]
    fn asymmetric_free_kernel_is_rejected() {
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-1], 0.3), (&[0], 0.5), (&[1], 0.2)]),
            SignedKernel::empty(1),
        );
        assert_eq!(validate(spec).unwrap_err().name(), "NotSymmetric");
    }

    #[test]
    fn free_kernel_must_sum_to_one() {
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-1], 0.25), (&[1], 0.25)]),
            SignedKernel::empty(1),
        );
        assert_eq!(validate(spec).unwrap_err().name(), "NotAProbability");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = WalkSpec {
            free: lazy_1d_free(),
            anti: SignedKernel::from_pairs(2, &[(&[1, 0], 0.1), (&[-1, 0], -0.1)]),
            sym: SignedKernel::empty(1),
            epsilon: 0.0,
        };
        assert_eq!(validate(spec).unwrap_err().name(), "DimensionMismatch");
    }

    #[test]
    fn walk_confined_to_a_line_is_reducible() {
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(2, &[(&[-1, 0], 0.5), (&[1, 0], 0.5)]),
            SignedKernel::empty(2),
        );
        assert_eq!(validate(spec).unwrap_err().name(), "Reducible");
    }

    #[test]
    fn origin_step_outside_free_class_is_reducible() {
        // Free steps of length 2 never return from an odd site.
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-2], 0.25), (&[0], 0.5), (&[2], 0.25)]),
            SignedKernel::from_pairs(1, &[(&[-1], -0.1), (&[1], 0.1)]),
        );
        let spec = WalkSpec {
            free: spec.free,
            anti: spec.anti,
            sym: SignedKernel::from_pairs(1, &[(&[-1], 0.1), (&[0], -0.2), (&[1], 0.1)]),
            epsilon: 1.0,
        };
        assert_eq!(validate(spec).unwrap_err().name(), "Reducible");
    }

    #[test]
    fn periodicity_flag() {
        assert!(validate(srw_1d()).unwrap().is_periodic());
        assert!(validate(nearest_neighbour(2, 0.0, 0.05)).unwrap().is_periodic());
        assert!(!validate(nearest_neighbour(2, 0.5, 0.05)).unwrap().is_periodic());
        // Steps {+-1, +-2} contain an odd loop 1 + 1 - 2.
        let spec = WalkSpec::antisymmetric(
            SignedKernel::from_pairs(1, &[(&[-2], 0.25), (&[-1], 0.25), (&[1], 0.25), (&[2], 0.25)]),
            SignedKernel::empty(1),
        );
        assert!(!validate(spec).unwrap().is_periodic());
    }

    #[test]
    fn lazy_moments() {
        let m = moments(&validate(lazy_1d(0.1)).unwrap()).unwrap();
        assert_abs_diff_eq!(m.covariance()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.drift()[0], 0.2, epsilon = 1e-15);
        assert_eq!(m.order(), 3);
        // Odd free moments vanish.
        for (alpha, v) in m.free_moments() {
            if alpha.iter().sum::<usize>() % 2 == 1 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn planar_moments() {
        let m = moments(&validate(nearest_neighbour(2, 0.0, 0.05)).unwrap()).unwrap();
        assert_abs_diff_eq!(m.covariance()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.covariance()[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.covariance()[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.drift()[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m.drift()[1], 0.0, epsilon = 1e-15);
        assert_eq!(m.isotropic_variance(), Some(0.5));
    }

    #[test]
    fn no_perturbation_means_no_drift() {
        let m = moments(&validate(srw_1d()).unwrap()).unwrap();
        assert_eq!(m.drift()[0], 0.0);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = MomentData::from_parts(b, DVector::zeros(2)).unwrap_err();
        assert_eq!(err.name(), "SingularCovariance");
    }

    #[test]
    fn json_round_trip() {
        let spec = lazy_1d(0.1);
        let parsed = WalkSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(parsed, spec);
        let minimal = r#"{"dim":1,"P":[{"u":[-1],"w":0.5},{"u":[1],"w":0.5}]}"#;
        let parsed = WalkSpec::from_json(minimal).unwrap();
        assert!(parsed.anti.is_empty() && parsed.sym.is_empty());
        assert_eq!(parsed.epsilon, 0.0);
    }

    #[test]
    fn duplicate_support_is_rejected() {
        let text = r#"{"dim":1,"P":[{"u":[1],"w":0.5},{"u":[1],"w":0.5}]}"#;
        assert_eq!(WalkSpec::from_json(text).unwrap_err().name(), "InvalidKernel");
    }

    #[test]
    fn multi_index_count() {
        // Number of multi-indices of total degree <= 3 in 3 variables is C(6, 3).
        assert_eq!(multi_indices(3, 3).len(), 20);
        assert_eq!(multi_indices(1, 3).len(), 4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn drift_is_linear_in_anti(beta in 0.0f64..0.25, scale in 0.0f64..1.0) {
                let base = moments(&validate(lazy_1d(beta)).unwrap()).unwrap();
                let scaled = moments(&validate(lazy_1d(beta * scale)).unwrap()).unwrap();
                prop_assert!((scaled.drift()[0] - scale * base.drift()[0]).abs() <= 1e-15);
            }

            #[test]
            fn origin_row_is_nonnegative(hold in 0.05f64..0.9, frac in 0.0f64..1.0) {
                let step = (1.0 - hold) / 4.0;
                let spec = nearest_neighbour(2, hold, frac * step);
                let v = validate(spec).unwrap();
                for (_, w) in v.origin_row().iter() {
                    prop_assert!(w >= 0.0);
                }
            }
        }
    }
}
