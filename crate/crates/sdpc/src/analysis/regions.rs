//! Region geometry of interaction maps and the co-linearity /
//! co-circularity statistics over those regions.
//!
//! Grid cells are classified by the angle of their position vector relative
//! to the center: within 30 degrees of the preferred orientation (mod 180)
//! is the end-zone, within 30 degrees of its orthogonal the side-zone, the
//! middle cell is the center, and diagonal cells stay unclassified so they
//! contaminate neither statistic.

use super::gabor::angular_distance_pi;
use super::interaction::InteractionMap;
use crate::error::{Result, SdpcError};
use ndarray::Array2;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Center,
    End,
    Side,
    Other,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::Center => "center",
            Region::End => "end",
            Region::Side => "side",
            Region::Other => "other",
        }
    }
}

/// Classification of every cell of a `(2R+1)^2` grid.
#[derive(Debug, Clone)]
pub struct RegionMask {
    pub grid: Array2<Region>,
    pub radius: usize,
}

const SECTOR_HALF_WIDTH_DEG: f64 = 30.0;

/// Builds the angular-sector region mask for a preferred orientation.
pub fn region_mask(theta_c: f64, radius: usize) -> RegionMask {
    let side = 2 * radius + 1;
    let mut grid = Array2::from_elem((side, side), Region::Other);
    let half = SECTOR_HALF_WIDTH_DEG.to_radians();
    for r in 0..side {
        for c in 0..side {
            let dy = r as f64 - radius as f64;
            let dx = c as f64 - radius as f64;
            if dx == 0.0 && dy == 0.0 {
                grid[(r, c)] = Region::Center;
                continue;
            }
            let position_angle = dy.atan2(dx);
            let to_axis = angular_distance_pi(position_angle, theta_c);
            let to_orthogonal = angular_distance_pi(position_angle, theta_c + PI / 2.0);
            if to_axis <= half + 1e-12 {
                grid[(r, c)] = Region::End;
            } else if to_orthogonal <= half + 1e-12 {
                grid[(r, c)] = Region::Side;
            }
        }
    }
    RegionMask { grid, radius }
}

/// Median statistic per region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMedians {
    pub end: f64,
    pub side: f64,
    pub center: f64,
    pub other: f64,
}

fn per_region_median(values: &Array2<f64>, mask: &RegionMask, skip: Option<&Array2<bool>>) -> RegionMedians {
    let mut buckets: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for ((idx, &region), &v) in mask.grid.indexed_iter().zip(values.iter()) {
        if let Some(valid) = skip {
            if !valid[idx] {
                continue;
            }
        }
        let slot = match region {
            Region::End => 0,
            Region::Side => 1,
            Region::Center => 2,
            Region::Other => 3,
        };
        buckets[slot].push(v);
    }
    let med = |v: &Vec<f64>| super::stats::median(v);
    RegionMedians {
        end: med(&buckets[0]),
        side: med(&buckets[1]),
        center: med(&buckets[2]),
        other: med(&buckets[3]),
    }
}

/// Per-cell co-linearity deviation: circular distance (mod 180) between the
/// map orientation and the preferred orientation, in degrees.
pub fn colinearity_cells(map: &InteractionMap, theta_c: f64) -> Array2<f64> {
    map.theta_bar
        .mapv(|t| angular_distance_pi(t, theta_c).to_degrees())
}

/// Median co-linearity deviation per region, degrees in `[0, 90]`.
pub fn colinearity_deviation(map: &InteractionMap, theta_c: f64, mask: &RegionMask) -> RegionMedians {
    per_region_median(&colinearity_cells(map, theta_c), mask, None)
}

/// Orientation of the co-circular reference field at a centered cell
/// position. Cells on the preferred axis (or the center itself) sit on the
/// degenerate infinite-radius circle, whose tangent is the preferred
/// orientation.
pub fn cocircular_reference(theta_c: f64, x: f64, y: f64) -> f64 {
    let denom = theta_c.sin() * x - theta_c.cos() * y;
    if denom.abs() < 1e-9 {
        return theta_c.rem_euclid(PI);
    }
    let r2 = x * x + y * y;
    let x_co = theta_c.sin() * r2 / (2.0 * denom);
    // evaluated directly rather than through tan(theta + pi/2), which blows
    // up for horizontal preferred orientations
    let y_co = -theta_c.cos() * r2 / (2.0 * denom);
    let radius_angle = (y - y_co).atan2(x - x_co);
    (radius_angle + PI / 2.0).rem_euclid(PI)
}

/// Per-cell co-circularity deviation in degrees.
pub fn cocircularity_cells(map: &InteractionMap, theta_c: f64) -> Array2<f64> {
    let radius = map.radius as f64;
    let side = 2 * map.radius + 1;
    let mut out = Array2::zeros((side, side));
    for r in 0..side {
        for c in 0..side {
            let x = c as f64 - radius;
            let y = r as f64 - radius;
            let reference = cocircular_reference(theta_c, x, y);
            out[(r, c)] =
                angular_distance_pi(map.theta_bar[(r, c)], reference).to_degrees();
        }
    }
    out
}

/// Median co-circularity deviation per region, degrees in `[0, 90]`.
pub fn cocircularity_deviation(
    map: &InteractionMap,
    theta_c: f64,
    mask: &RegionMask,
) -> RegionMedians {
    per_region_median(&cocircularity_cells(map, theta_c), mask, None)
}

/// Precision ratio of a marginal deviation against an in-map deviation;
/// above 1 means the region is better aligned than the baseline.
#[derive(Debug, Clone, Copy)]
pub struct PrecisionRatio {
    pub ratio: f64,
    /// Set when the in-map deviation was zero and the ratio was capped.
    pub capped: bool,
}

const RATIO_CAP: f64 = 1e6;

pub fn precision_ratio(marginal_deviation: f64, in_map_deviation: f64) -> PrecisionRatio {
    if in_map_deviation <= 0.0 {
        PrecisionRatio {
            ratio: RATIO_CAP,
            capped: true,
        }
    } else {
        PrecisionRatio {
            ratio: marginal_deviation / in_map_deviation,
            capped: false,
        }
    }
}

/// Median activity-ratio per region, honoring the validity mask of cells
/// whose reference magnitude vanished.
pub fn activity_ratio_by_region(
    ratio: &Array2<f64>,
    valid: &Array2<bool>,
    mask: &RegionMask,
) -> RegionMedians {
    per_region_median(ratio, mask, Some(valid))
}

/// Median activity ratio over end-zone-and-center cells, binned by rounded
/// distance from the center: the spatial profile along the preferred axis.
pub fn axis_profile(
    ratio: &Array2<f64>,
    valid: &Array2<bool>,
    mask: &RegionMask,
) -> Vec<(usize, f64)> {
    let radius = mask.radius;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); radius + 1];
    for ((idx, &region), (&v, &ok)) in mask
        .grid
        .indexed_iter()
        .zip(ratio.iter().zip(valid.iter()))
    {
        if !ok || !matches!(region, Region::End | Region::Center) {
            continue;
        }
        let dy = idx.0 as f64 - radius as f64;
        let dx = idx.1 as f64 - radius as f64;
        let dist = (dx * dx + dy * dy).sqrt().round() as usize;
        if dist <= radius {
            bins[dist].push(v);
        }
    }
    bins.into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(d, b)| (d, super::stats::median(&b)))
        .collect()
}

/// Checks that the four regions tile the grid exactly once.
pub fn mask_is_partition(mask: &RegionMask) -> bool {
    let side = 2 * mask.radius + 1;
    let mut center_count = 0;
    for &r in mask.grid.iter() {
        if r == Region::Center {
            center_count += 1;
        }
    }
    center_count == 1 && mask.grid.len() == side * side
}

/// Validates grid compatibility between a map and a mask.
pub fn check_same_grid(map: &InteractionMap, mask: &RegionMask) -> Result<()> {
    if map.radius != mask.radius {
        return Err(SdpcError::Analysis(format!(
            "map radius {} does not match mask radius {}",
            map.radius, mask.radius
        )));
    }
    Ok(())
}
