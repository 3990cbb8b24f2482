//! Exact dynamic-programming evolution of the free, perturbed and taboo walks.
//!
//! Every field here is a finite convolution power computed in double
//! precision on a box large enough that nothing leaves it (unless a
//! [`BoxPolicy::Loose`] radius is requested). The rest of the crate checks its
//! formulas against these fields.
//!
//! Taboo convention: a taboo field at time `n` counts paths that avoid the
//! origin at times `1..n-1`. Its origin entry is always zero; mass that lands
//! on the origin at time `n` is reported separately as the first-return mass.

use crate::error::{Error, Result};
use crate::field::{BoxPolicy, Grid, GridKernel, MassField};
use crate::kernels::ValidatedSpec;

/// Largest `n` accepted by [`rho_direct`].
pub const RHO_DIRECT_CAP: usize = 64;

/// One-step operators of a walk on a fixed box.
#[derive(Clone, Debug)]
pub struct Propagator {
    grid: Grid,
    free: GridKernel,
    origin_row: GridKernel,
    perturbation: GridKernel,
    perturbation_total: f64,
    // Steps that provably stay inside the box; leakage is only measured beyond.
    safe_steps: usize,
}

impl Propagator {
    pub fn new(spec: &ValidatedSpec, radius: usize) -> Self {
        let grid = Grid::new(spec.dim(), radius);
        Propagator {
            free: GridKernel::new(&grid, spec.free()),
            origin_row: GridKernel::new(&grid, spec.origin_row()),
            perturbation: GridKernel::new(&grid, spec.perturbation()),
            perturbation_total: spec.perturbation().total(),
            safe_steps: radius / spec.step_radius(),
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn point_mass(&self) -> MassField {
        MassField::point_mass(self.grid.dim(), self.grid.radius())
    }

    /// Apply the free kernel everywhere.
    pub fn free_step(&self, f: &MassField) -> MassField {
        let mut values = vec![0.0; self.grid.len()];
        self.free.convolve(&self.grid, f.values(), &mut values);
        self.finish(f, values, f.total() * self.free.total())
    }

    /// Free kernel everywhere plus the perturbation applied to the origin mass.
    pub fn perturbed_step(&self, f: &MassField) -> MassField {
        let mut values = vec![0.0; self.grid.len()];
        self.free.convolve(&self.grid, f.values(), &mut values);
        let o = f.origin_value();
        self.perturbation.scatter_from_origin(&self.grid, o, &mut values);
        self.finish(f, values, f.total() * self.free.total() + o * self.perturbation_total)
    }

    /// Free step, then remove what arrived at the origin. Returns the removed mass.
    pub fn taboo_step(&self, f: &MassField) -> (MassField, f64) {
        let mut next = self.free_step(f);
        let o = self.grid.origin();
        let arrived = next.values()[o];
        next.values_mut()[o] = 0.0;
        (next, arrived)
    }

    /// First step of a taboo walk started at the origin.
    pub fn taboo_start(&self, use_free: bool) -> (MassField, f64) {
        let row = if use_free { &self.free } else { &self.origin_row };
        let mut values = vec![0.0; self.grid.len()];
        row.scatter_from_origin(&self.grid, 1.0, &mut values);
        let start = self.point_mass();
        let mut f = self.finish(&start, values, row.total());
        let o = self.grid.origin();
        let arrived = f.values()[o];
        f.values_mut()[o] = 0.0;
        (f, arrived)
    }

    fn finish(&self, prev: &MassField, values: Vec<f64>, expected_total: f64) -> MassField {
        let leaked = if prev.time() < self.safe_steps {
            prev.leaked()
        } else {
            let total: f64 = values.iter().sum();
            prev.leaked() + (expected_total - total)
        };
        MassField::from_parts(self.grid.clone(), prev.time() + 1, values, leaked)
    }
}

fn radius_for(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<usize> {
    policy.resolve(n, spec.step_radius())
}

/// `P_n(0, .)`.
pub fn evolve_free(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<MassField> {
    let prop = Propagator::new(spec, radius_for(spec, n, policy)?);
    let mut f = prop.point_mass();
    for _ in 0..n {
        f = prop.free_step(&f);
    }
    Ok(f)
}

/// `Pi_n(0, .)` for the walk perturbed at the origin.
pub fn evolve_perturbed(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<MassField> {
    let prop = Propagator::new(spec, radius_for(spec, n, policy)?);
    let mut f = prop.point_mass();
    for _ in 0..n {
        f = prop.perturbed_step(&f);
    }
    Ok(f)
}

/// All free fields `P_0 .. P_n` on one box.
pub fn free_fields(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<Vec<MassField>> {
    let prop = Propagator::new(spec, radius_for(spec, n, policy)?);
    let mut out = Vec::with_capacity(n + 1);
    out.push(prop.point_mass());
    for k in 0..n {
        let next = prop.free_step(&out[k]);
        out.push(next);
    }
    Ok(out)
}

/// Taboo field at time `n` together with the mass that first reached the
/// origin exactly at time `n`.
#[derive(Clone, Debug)]
pub struct TabooField {
    pub field: MassField,
    pub first_return: f64,
}

/// `P^0_n(0, .)` (`use_free`) or `Pi^0_n(0, .)`.
pub fn evolve_taboo(
    spec: &ValidatedSpec,
    n: usize,
    policy: BoxPolicy,
    use_free: bool,
) -> Result<TabooField> {
    let prop = Propagator::new(spec, radius_for(spec, n, policy)?);
    if n == 0 {
        return Ok(TabooField { field: prop.point_mass(), first_return: 0.0 });
    }
    let (mut f, mut arrived) = prop.taboo_start(use_free);
    for _ in 1..n {
        (f, arrived) = prop.taboo_step(&f);
    }
    Ok(TabooField { field: f, first_return: arrived })
}

/// All taboo fields `1..=n` (index 0 holds the point mass) and first-return
/// masses `f_0 = 0, f_1, .., f_n`.
pub fn taboo_fields(
    spec: &ValidatedSpec,
    n: usize,
    policy: BoxPolicy,
    use_free: bool,
) -> Result<(Vec<MassField>, Vec<f64>)> {
    let prop = Propagator::new(spec, radius_for(spec, n, policy)?);
    let mut fields = vec![prop.point_mass()];
    let mut first = vec![0.0];
    if n == 0 {
        return Ok((fields, first));
    }
    let (f, a) = prop.taboo_start(use_free);
    fields.push(f);
    first.push(a);
    for k in 1..n {
        let (f, a) = prop.taboo_step(&fields[k]);
        fields.push(f);
        first.push(a);
    }
    Ok((fields, first))
}

/// Return probabilities `p_0 .. p_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSequence {
    values: Vec<f64>,
}

impl ReturnSequence {
    pub fn new(values: Vec<f64>) -> Self {
        ReturnSequence { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: usize) -> f64 {
        self.values[n]
    }

    /// Largest `n` stored.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }
}

/// Smallest box that keeps every origin value up to time `horizon` exact:
/// mass outside radius `R` needs more than `2R / r` steps to come back.
fn return_radius(spec: &ValidatedSpec, horizon: usize) -> usize {
    (horizon * spec.step_radius()).div_ceil(2).max(1)
}

/// Free return probabilities `p_n = P_n(0, 0)` for `n <= horizon`.
pub fn return_sequence(spec: &ValidatedSpec, horizon: usize) -> ReturnSequence {
    let prop = Propagator::new(spec, return_radius(spec, horizon));
    let mut f = prop.point_mass();
    let mut values = vec![1.0];
    for _ in 0..horizon {
        f = prop.free_step(&f);
        values.push(f.origin_value());
    }
    ReturnSequence::new(values)
}

/// Perturbed return probabilities `Pi_n(0, 0)` for `n <= horizon`.
pub fn perturbed_return_sequence(spec: &ValidatedSpec, horizon: usize) -> ReturnSequence {
    let prop = Propagator::new(spec, return_radius(spec, horizon));
    let mut f = prop.point_mass();
    let mut values = vec![1.0];
    for _ in 0..horizon {
        f = prop.perturbed_step(&f);
        values.push(f.origin_value());
    }
    ReturnSequence::new(values)
}

/// `rho_n = P_n(0, .) - P^0_n(0, .)`, the mass of paths that visit the origin
/// at some time in `1..n-1` (plus, at the origin itself, all of `P_n(0, 0)`).
pub fn rho(spec: &ValidatedSpec, n: usize, policy: BoxPolicy) -> Result<MassField> {
    let free = evolve_free(spec, n, policy)?;
    let taboo = evolve_taboo(spec, n, policy, true)?;
    Ok(free.minus(&taboo.field))
}

/// `rho_n(x)` for `x != 0` from the alternating sum over chains of returns
/// `n > k_1 > .. > k_p >= 1`:
///
/// `rho_n(x) = sum_p (-1)^(p+1) sum P_{n-k_1}(0,0) P_{k_1-k_2}(0,0) .. P_{k_p}(0,x)`.
///
/// The chain sums are accumulated by recursion on the last index, `O(n^3)`.
pub fn rho_direct(spec: &ValidatedSpec, n: usize, x: &[i64]) -> Result<f64> {
    if n > RHO_DIRECT_CAP {
        return Err(Error::CapExceeded { n, cap: RHO_DIRECT_CAP });
    }
    if x.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("direct rho evaluator is defined for x != 0 only".into()));
    }
    if n < 2 {
        return Ok(0.0);
    }
    let fields = free_fields(spec, n, BoxPolicy::Exact)?;
    let p: Vec<f64> = fields.iter().map(|f| f.origin_value()).collect();
    let at_x: Vec<f64> = fields.iter().map(|f| f.get(x)).collect();
    // chain[k]: signed sum over chains whose smallest index is 1..=k and that
    // end at k, including the P_{k_p}(0, x) tail.
    let mut chain: Vec<f64> = (0..n).map(|k| if k >= 1 { at_x[k] } else { 0.0 }).collect();
    let mut total = 0.0;
    for p_len in 1..n {
        let term: f64 = (1..n).map(|k| p[n - k] * chain[k]).sum();
        let sign = if p_len % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * term;
        let mut next = vec![0.0; n];
        for k in 2..n {
            next[k] = (1..k).map(|j| p[k - j] * chain[j]).sum();
        }
        chain = next;
        if chain.iter().all(|&v| v == 0.0) {
            break;
        }
    }
    Ok(total)
}
