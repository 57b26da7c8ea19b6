//! Lattice Voronoi discretization of the action cube `[0,1]^n`.
//!
//! Loci sit at the centers of a regular `m^n` grid of boxes, so each Voronoi
//! cell is exactly one box and its measure is `m^-n`. Ties between loci go to
//! the smaller index; on the lattice that means a boundary point belongs to
//! the lower cell along each axis, so cell `i` along an axis is
//! `(i/m, (i+1)/m]` (closed at 0 for the first cell).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ThresholdAction;

pub const DEFAULT_LOCUS_CEILING: usize = 100_000;
pub const MAX_DIMS: usize = 4;
/// Floor applied to the theoretical cover radius to keep the locus count usable.
pub const EPSILON_FLOOR: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiActionSpace {
    dims: usize,
    per_axis: usize,
    loci: Vec<Vec<f64>>,
    cover_radius: f64,
    region_measures: Vec<f64>,
}

/// Cover radius suggested by the regret bound, `1 / (2ρ(1+𝒱)KH√d)`.
pub fn theoretical_epsilon(rho: f64, dual_ceiling: f64, episodes: usize, horizon: usize, d: usize) -> f64 {
    1.0 / (2.0 * rho * (1.0 + dual_ceiling) * (episodes * horizon) as f64 * (d as f64).sqrt())
}

/// Smallest lattice whose cover radius is at most `epsilon`.
pub fn build_grid_cover(dims: usize, epsilon: f64) -> Result<VoronoiActionSpace> {
    build_grid_cover_with_ceiling(dims, epsilon, DEFAULT_LOCUS_CEILING)
}

pub fn build_grid_cover_with_ceiling(
    dims: usize,
    epsilon: f64,
    ceiling: usize,
) -> Result<VoronoiActionSpace> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!("cover radius {epsilon} must be positive")));
    }
    let per_axis = ((dims as f64).sqrt() / (2.0 * epsilon)).ceil().max(1.0);
    if per_axis.powi(dims as i32) > ceiling as f64 {
        return Err(Error::Resource(format!(
            "cover radius {epsilon} needs {per_axis}^{dims} loci, above the ceiling of {ceiling}; use a larger epsilon"
        )));
    }
    VoronoiActionSpace::lattice(dims, per_axis as usize)
}

impl VoronoiActionSpace {
    /// `per_axis^dims` loci at box centers.
    pub fn lattice(dims: usize, per_axis: usize) -> Result<Self> {
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::Unsupported(format!(
                "action dimension {dims} outside 1..={MAX_DIMS}"
            )));
        }
        if per_axis == 0 {
            return Err(Error::config("lattice needs at least one point per axis"));
        }
        let count = per_axis.pow(dims as u32);
        let m = per_axis as f64;
        let loci = (0..count)
            .map(|idx| {
                Self::cell_coords(idx, dims, per_axis)
                    .into_iter()
                    .map(|i| (i as f64 + 0.5) / m)
                    .collect()
            })
            .collect();
        Ok(VoronoiActionSpace {
            dims,
            per_axis,
            loci,
            cover_radius: (dims as f64).sqrt() / (2.0 * m),
            region_measures: vec![m.powi(-(dims as i32)); count],
        })
    }

    /// Axis indices of a cell; the first axis varies slowest.
    fn cell_coords(mut idx: usize, dims: usize, per_axis: usize) -> Vec<usize> {
        let mut out = vec![0; dims];
        for slot in out.iter_mut().rev() {
            *slot = idx % per_axis;
            idx /= per_axis;
        }
        out
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn len(&self) -> usize {
        self.loci.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loci.is_empty()
    }

    pub fn loci(&self) -> &[Vec<f64>] {
        &self.loci
    }

    pub fn locus(&self, index: usize) -> &[f64] {
        &self.loci[index]
    }

    pub fn cover_radius(&self) -> f64 {
        self.cover_radius
    }

    pub fn region_measures(&self) -> &[f64] {
        &self.region_measures
    }

    /// Box `[lo, hi]` per axis of region `index`.
    pub fn region_bounds(&self, index: usize) -> Vec<(f64, f64)> {
        let m = self.per_axis as f64;
        Self::cell_coords(index, self.dims, self.per_axis)
            .into_iter()
            .map(|i| (i as f64 / m, (i + 1) as f64 / m))
            .collect()
    }

    /// `min_i argmin ‖a - I_i‖₂`, by exhaustive scan.
    pub fn locus_of(&self, action: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, locus) in self.loci.iter().enumerate() {
            let dist: f64 = locus.iter().zip(action).map(|(l, a)| (l - a) * (l - a)).sum();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }

    /// Uniform draw from region `index`.
    pub fn sample_uniform_in_region<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> ThresholdAction {
        let thresholds = self
            .region_bounds(index)
            .into_iter()
            .map(|(lo, hi)| {
                // 1 - u lies in (0, 1], matching the half-open cell (lo, hi].
                let u: f64 = rng.random();
                let x = lo + (1.0 - u) * (hi - lo);
                if lo == 0.0 && x <= 0.0 { 0.0 } else { x.min(hi) }
            })
            .collect();
        ThresholdAction { thresholds }
    }
}
