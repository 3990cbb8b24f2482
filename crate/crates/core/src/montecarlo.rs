//! Trajectory sampling of the perturbed walk.
//!
//! Trajectories are split into fixed-size shards; shard `i` draws from a
//! ChaCha8 stream seeded with `seed` on stream `i`, so the result depends only
//! on `(spec, n, samples, seed)` and not on the number of worker threads.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::kernels::{LatticeVector, SignedKernel, ValidatedSpec};

/// Trajectories per shard.
pub const SHARD_SIZE: u64 = 1 << 16;

/// Above this many sites, shards count into a hash map instead of an array.
const DENSE_LIMIT: usize = 1 << 20;

/// Endpoint counts of sampled trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalField {
    pub dim: usize,
    pub n: usize,
    pub samples: u64,
    pub seed: u64,
    pub counts: BTreeMap<LatticeVector, u64>,
}

impl EmpiricalField {
    pub fn count(&self, x: &[i64]) -> u64 {
        self.counts.get(&LatticeVector::new(x.to_vec())).copied().unwrap_or(0)
    }

    pub fn estimate(&self, x: &[i64]) -> f64 {
        self.count(x) as f64 / self.samples as f64
    }

    /// Binomial standard error `sqrt(p (1 - p) / samples)` of [`Self::estimate`].
    pub fn stderr(&self, x: &[i64]) -> f64 {
        let p = self.estimate(x);
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }

    /// CSV with columns `x_1..x_dim,value,count,stderr` over visited sites.
    pub fn to_csv(&self, kernel_hash: &str) -> String {
        let mut out = String::new();
        writeln!(out, "# dim={}", self.dim).unwrap();
        writeln!(out, "# n={}", self.n).unwrap();
        writeln!(out, "# samples={}", self.samples).unwrap();
        writeln!(out, "# seed={}", self.seed).unwrap();
        writeln!(out, "# kernel={kernel_hash}").unwrap();
        let cols: Vec<String> = (1..=self.dim).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},value,count,stderr", cols.join(",")).unwrap();
        for (x, &c) in &self.counts {
            for v in x.coords() {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{:e},{c},{:e}", self.estimate(x.coords()), self.stderr(x.coords())).unwrap();
        }
        out
    }
}

struct StepTable {
    alias: WeightedAliasIndex<f64>,
    offsets: Vec<isize>,
}

impl StepTable {
    fn new(grid: &Grid, kernel: &SignedKernel) -> Result<Self> {
        // Validation allows round-off negatives in the origin row.
        let (offsets, weights): (Vec<isize>, Vec<f64>) =
            kernel.iter().map(|(u, w)| (grid.offset(u.coords()), w.max(0.0))).unzip();
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::InvalidKernel(format!("cannot sample step law: {e}")))?;
        Ok(StepTable { alias, offsets })
    }

    #[inline]
    fn step(&self, rng: &mut ChaCha8Rng) -> isize {
        self.offsets[self.alias.sample(rng)]
    }
}

enum Counter {
    Dense(Vec<u64>),
    Sparse(HashMap<usize, u64>),
}

impl Counter {
    fn new(len: usize) -> Self {
        if len <= DENSE_LIMIT {
            Counter::Dense(vec![0; len])
        } else {
            Counter::Sparse(HashMap::new())
        }
    }

    fn hit(&mut self, idx: usize) {
        match self {
            Counter::Dense(v) => v[idx] += 1,
            Counter::Sparse(m) => *m.entry(idx).or_insert(0) += 1,
        }
    }

    fn drain(self) -> Vec<(usize, u64)> {
        match self {
            Counter::Dense(v) => v.into_iter().enumerate().filter(|(_, c)| *c > 0).collect(),
            Counter::Sparse(m) => m.into_iter().collect(),
        }
    }
}

/// Sample `samples` trajectories of `n` steps from the origin: the origin row
/// `P + c` at the origin, the free row `P` elsewhere.
pub fn sample(spec: &ValidatedSpec, n: usize, samples: u64, seed: u64) -> Result<EmpiricalField> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let grid = Grid::new(spec.dim(), n * spec.step_radius());
    let free = StepTable::new(&grid, spec.free())?;
    let origin_row = StepTable::new(&grid, spec.origin_row())?;
    let origin = grid.origin();
    let shards = samples.div_ceil(SHARD_SIZE);

    let per_shard: Vec<Vec<(usize, u64)>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            let count = SHARD_SIZE.min(samples - shard * SHARD_SIZE);
            let mut counter = Counter::new(grid.len());
            for _ in 0..count {
                let mut pos = origin;
                for _ in 0..n {
                    let table = if pos == origin { &origin_row } else { &free };
                    pos = pos.wrapping_add_signed(table.step(&mut rng));
                }
                counter.hit(pos);
            }
            counter.drain()
        })
        .collect();

    let mut counts = BTreeMap::new();
    for (idx, c) in per_shard.into_iter().flatten() {
        *counts.entry(LatticeVector::new(grid.coords(idx))).or_insert(0) += c;
    }
    Ok(EmpiricalField { dim: spec.dim(), n, samples, seed, counts })
}

/// Empirical mean displacement `sum_x x * estimate(x)`.
pub fn drift_estimate(field: &EmpiricalField) -> Vec<f64> {
    let mut mean = vec![0.0; field.dim];
    for (x, &c) in &field.counts {
        for (m, &v) in mean.iter_mut().zip(x.coords()) {
            *m += v as f64 * c as f64;
        }
    }
    mean.iter().map(|m| m / field.samples as f64).collect()
}

/// Standard error of each component of [`drift_estimate`].
pub fn drift_stderr(field: &EmpiricalField) -> Vec<f64> {
    let mean = drift_estimate(field);
    let mut second = vec![0.0; field.dim];
    for (x, &c) in &field.counts {
        for (s, &v) in second.iter_mut().zip(x.coords()) {
            *s += (v * v) as f64 * c as f64;
        }
    }
    let n = field.samples as f64;
    second.iter().zip(&mean).map(|(s, m)| ((s / n - m * m).max(0.0) / n).sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::evolve_perturbed;
    use crate::field::BoxPolicy;
    use crate::kernels::catalog::*;
    use crate::kernels::validate;

    #[test]
    fn zero_steps() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let f = sample(&spec, 0, 1, 7).unwrap();
        assert_eq!(f.count(&[0]), 1);
        assert_eq!(f.counts.values().sum::<u64>(), 1);
        assert!(sample(&spec, 3, 0, 7).is_err());
    }

    #[test]
    fn reproducible() {
        let spec = validate(nearest_neighbour(2, 0.5, 0.05)).unwrap();
        let a = sample(&spec, 12, 150_000, 42).unwrap();
        let b = sample(&spec, 12, 150_000, 42).unwrap();
        let c = sample(&spec, 12, 150_000, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts, c.counts);
        assert_eq!(a.counts.values().sum::<u64>(), 150_000);
    }

    #[test]
    fn agrees_with_exact_field() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let n = 16;
        let f = sample(&spec, n, 200_000, 1).unwrap();
        let exact = evolve_perturbed(&spec, n, BoxPolicy::Exact).unwrap();
        for (x, p) in exact.iter() {
            if p >= 1e-4 {
                let se = (p * (1.0 - p) / f.samples as f64).sqrt();
                assert!((f.estimate(&x) - p).abs() <= 4.5 * se, "x={x:?}");
            }
        }
    }

    #[test]
    fn drift_examples() {
        let one = validate(lazy_1d(0.1)).unwrap();
        let f = sample(&one, 1, 400_000, 3).unwrap();
        let (m, se) = (drift_estimate(&f)[0], drift_stderr(&f)[0]);
        assert!((m - 0.2).abs() <= 4.0 * se);
        let none = validate(lazy_1d(0.0)).unwrap();
        let f = sample(&none, 10, 400_000, 3).unwrap();
        assert!(drift_estimate(&f)[0].abs() <= 4.0 * drift_stderr(&f)[0]);
        let f = sample(&one, 10, 400_000, 3).unwrap();
        assert!(drift_estimate(&f)[0] > 0.0);
    }

    #[test]
    fn csv_columns() {
        let spec = validate(lazy_1d(0.1)).unwrap();
        let f = sample(&spec, 2, 1000, 5).unwrap();
        let csv = f.to_csv(&spec.hash_hex());
        assert!(csv.lines().any(|l| l == "x_1,value,count,stderr"));
        let rows = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
        assert_eq!(rows, f.counts.len());
    }
}
