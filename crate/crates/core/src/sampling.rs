//! Latin Hypercube designs, region grids and per-region seed derivation.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded through
//! [`rng_from_seed`]. Region streams are keyed by [`derive_seed`], which is a
//! bijection of the region index for a fixed master seed, so two regions of the
//! same sweep can never share a stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box carrying the uniform parameter density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterSpace {
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if names.len() != lower.len() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter space has {} names, {} lower and {} upper bounds",
                names.len(),
                lower.len(),
                upper.len()
            )));
        }
        if names.is_empty() {
            return Err(Error::InvalidArgument("parameter space has no axes".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "axis {} ({}) has bounds [{lo}, {hi}]",
                    i, names[i]
                )));
            }
        }
        Ok(ParameterSpace { names, lower, upper })
    }

    /// The unit cube `[0,1]^m` with axes named `x1..xm`.
    pub fn unit(m: usize) -> Self {
        ParameterSpace {
            names: (1..=m).map(|i| format!("x{i}")).collect(),
            lower: vec![0.0; m],
            upper: vec![1.0; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Maps a point of this box to unit-scaled coordinates.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| (v - self.lower[i]) / self.width(i)).collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(i, v)| self.lower[i] + v * self.width(i)).collect()
    }

    /// Copy of this box with one axis narrowed to `[lo, hi]`.
    pub fn restrict(&self, axis: usize, lo: f64, hi: f64) -> Result<Self> {
        if axis >= self.dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        let mut out = self.clone();
        out.lower[axis] = lo;
        out.upper[axis] = hi;
        ParameterSpace::new(out.names, out.lower, out.upper)
    }

    pub fn is_subset_of(&self, other: &ParameterSpace) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] && self.upper[i] <= other.upper[i])
    }
}

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream belonging to `region_index` under `master_seed`.
///
/// For a fixed master seed the map `region_index -> seed` is injective.
pub fn derive_seed(master_seed: u64, region_index: u64) -> u64 {
    mix64(master_seed ^ mix64(region_index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the open interval (0, 1).
pub(crate) fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Latin Hypercube design of `count` points over `space`.
///
/// Each axis is cut into `count` equal strata and receives one point per
/// stratum, placed uniformly in the open interior of the stratum. Stratum
/// permutations are drawn independently per axis.
pub fn lhs(count: usize, space: &ParameterSpace, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    lhs_with_rng(count, space, &mut rng)
}

pub fn lhs_with_rng<R: Rng + ?Sized>(
    count: usize,
    space: &ParameterSpace,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let m = space.dim();
    let mut points = vec![vec![0.0; m]; count];
    if count == 0 {
        return points;
    }
    let mut perm: Vec<usize> = (0..count).collect();
    let scale = count as f64;
    for axis in 0..m {
        perm.shuffle(rng);
        let (lo, width) = (space.lower[axis], space.width(axis));
        for (point, &stratum) in points.iter_mut().zip(&perm) {
            let u = (stratum as f64 + open01(rng)) / scale;
            // keep the point strictly inside the stratum after rounding
            point[axis] = (lo + u * width).clamp(lo, space.upper[axis]);
        }
    }
    points
}

/// Partition of a parameter space into `k^m` equal axis-aligned regions.
///
/// Regions are indexed in mixed radix with the first declared axis as the
/// most significant digit. Bins are half-open `[lo, hi)` except the last bin
/// of each axis, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub space: ParameterSpace,
    pub bins_per_dim: usize,
    pub total_regions: u64,
}

pub fn grid_partition(space: &ParameterSpace, bins_per_dim: usize) -> Result<RegionGrid> {
    if bins_per_dim == 0 {
        return Err(Error::InvalidArgument("bins per dimension must be at least 1".into()));
    }
    let mut total: u64 = 1;
    for _ in 0..space.dim() {
        total = total.checked_mul(bins_per_dim as u64).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{bins_per_dim}^{} regions overflow a 64-bit index",
                space.dim()
            ))
        })?;
    }
    Ok(RegionGrid { space: space.clone(), bins_per_dim, total_regions: total })
}

impl RegionGrid {
    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn check(&self, index: u64) -> Result<()> {
        if index >= self.total_regions {
            Err(Error::RegionOutOfRange { index, total: self.total_regions })
        } else {
            Ok(())
        }
    }

    pub fn multi_index(&self, index: u64) -> Result<Vec<usize>> {
        self.check(index)?;
        let k = self.bins_per_dim as u64;
        let mut digits = vec![0usize; self.dim()];
        let mut rest = index;
        for d in digits.iter_mut().rev() {
            *d = (rest % k) as usize;
            rest /= k;
        }
        Ok(digits)
    }

    pub fn index_of(&self, multi: &[usize]) -> Result<u64> {
        if multi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: multi.len() });
        }
        let k = self.bins_per_dim as u64;
        let mut index = 0u64;
        for &b in multi {
            if b >= self.bins_per_dim {
                return Err(Error::InvalidArgument(format!(
                    "bin {b} out of range for {} bins per axis",
                    self.bins_per_dim
                )));
            }
            index = index * k + b as u64;
        }
        Ok(index)
    }

    fn bin_edges(&self, axis: usize, bin: usize) -> (f64, f64) {
        let k = self.bins_per_dim as f64;
        let (lo, w) = (self.space.lower[axis], self.space.width(axis));
        let a = lo + w * (bin as f64 / k);
        let b = if bin + 1 == self.bins_per_dim {
            self.space.upper[axis]
        } else {
            lo + w * ((bin + 1) as f64 / k)
        };
        (a, b)
    }

    pub fn region_bounds(&self, index: u64) -> Result<ParameterSpace> {
        let multi = self.multi_index(index)?;
        let (lower, upper) = multi
            .iter()
            .enumerate()
            .map(|(axis, &b)| self.bin_edges(axis, b))
            .unzip();
        Ok(ParameterSpace { names: self.space.names.clone(), lower, upper })
    }

    /// Region containing `x`, honouring the half-open bin convention.
    pub fn locate(&self, x: &[f64]) -> Option<u64> {
        if !self.space.contains(x) {
            return None;
        }
        let k = self.bins_per_dim;
        let mut multi = Vec::with_capacity(self.dim());
        for (axis, &v) in x.iter().enumerate() {
            let u = (v - self.space.lower[axis]) / self.space.width(axis);
            let mut b = ((u * k as f64).floor() as usize).min(k - 1);
            // correct for rounding at bin edges
            let (a, hi) = self.bin_edges(axis, b);
            if v < a && b > 0 {
                b -= 1;
            } else if v >= hi && b + 1 < k {
                b += 1;
            }
            multi.push(b);
        }
        self.index_of(&multi).ok()
    }
}

/// Seeded sampling contract for a sweep: `samples` points per region drawn
/// from the stream `derive_seed(master_seed, region_index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub samples: usize,
    pub master_seed: u64,
}

impl SamplingPlan {
    pub fn region_design(&self, grid: &RegionGrid, region_index: u64) -> Result<Vec<Vec<f64>>> {
        let bounds = grid.region_bounds(region_index)?;
        Ok(lhs(self.samples, &bounds, derive_seed(self.master_seed, region_index)))
    }
}

/// Replayable description of a sweep design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub space: ParameterSpace,
    pub bins_per_dim: usize,
    pub samples: usize,
    pub master_seed: u64,
}

impl PlanDocument {
    pub fn new(grid: &RegionGrid, plan: &SamplingPlan) -> Self {
        PlanDocument {
            space: grid.space.clone(),
            bins_per_dim: grid.bins_per_dim,
            samples: plan.samples,
            master_seed: plan.master_seed,
        }
    }

    pub fn into_parts(self) -> Result<(RegionGrid, SamplingPlan)> {
        let space = ParameterSpace::new(self.space.names, self.space.lower, self.space.upper)?;
        let grid = grid_partition(&space, self.bins_per_dim)?;
        Ok((grid, SamplingPlan { samples: self.samples, master_seed: self.master_seed }))
    }
}
