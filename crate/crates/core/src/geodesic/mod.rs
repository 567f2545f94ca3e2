//! Geodesic and Euclidean distance transforms from seed sets, and the
//! interaction encoding that feeds the refinement network.
//!
//! Distances are computed on the 8-connected pixel grid (26-connected for
//! volumes). The step cost between neighbours `a` and `b` is
//!
//! ```text
//! sqrt(lambda^2 * |pos_a - pos_b|^2 + sum_c (I_c(a) - I_c(b))^2)
//! ```
//!
//! so with `lambda = 0` the distance is the accumulated intensity change
//! along the cheapest path.

mod dijkstra;
mod edt;
mod encode;

pub use dijkstra::dijkstra_geodesic_oracle;
pub use edt::euclidean_distance_map;
pub use encode::{encode_interactions, EncodeOptions, InitialSegmentation, Metric};

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Multi-channel scalar field over a 2-D (`[H, W]`) or 3-D (`[D, H, W]`) grid.
///
/// Values are channel-major: channel `c` occupies `data[c * n..(c + 1) * n]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub channels: usize,
    pub extents: Vec<usize>,
    pub spacing: Vec<Scalar>,
    pub data: Vec<Scalar>,
}

impl ImageGrid {
    pub fn new(channels: usize, extents: &[usize], data: Vec<Scalar>) -> Result<Self> {
        let spacing = vec![1.0; extents.len()];
        Self::with_spacing(channels, extents, &spacing, data)
    }

    pub fn with_spacing(
        channels: usize,
        extents: &[usize],
        spacing: &[Scalar],
        data: Vec<Scalar>,
    ) -> Result<Self> {
        if !(2..=3).contains(&extents.len()) || spacing.len() != extents.len() {
            return Err(Error::Shape(format!(
                "extents {extents:?} / spacing {spacing:?} must be 2-D or 3-D"
            )));
        }
        if channels == 0 || extents.contains(&0) {
            return Err(Error::Shape(format!(
                "empty grid: {channels} channels, extents {extents:?}"
            )));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Invalid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        let n: usize = extents.iter().product();
        if data.len() != channels * n {
            return Err(Error::Shape(format!(
                "{} values for {channels} x {extents:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image values".into()));
        }
        Ok(ImageGrid {
            channels,
            extents: extents.to_vec(),
            spacing: spacing.to_vec(),
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[Scalar] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    /// `(depth, height, width)`, with depth 1 for 2-D grids.
    pub fn dims3(&self) -> (usize, usize, usize) {
        dims3(&self.extents)
    }

    /// Length of the grid diagonal in physical units.
    pub fn diagonal(&self) -> Scalar {
        self.extents
            .iter()
            .zip(&self.spacing)
            .map(|(&e, &s)| (e as Scalar * s).powi(2))
            .sum::<Scalar>()
            .sqrt()
    }
}

pub(crate) fn dims3(extents: &[usize]) -> (usize, usize, usize) {
    match *extents {
        [h, w] => (1, h, w),
        [d, h, w] => (d, h, w),
        _ => panic!("grid must be 2-D or 3-D"),
    }
}

/// Foreground and background scribble pixels of a 2-D image, as `(row, col)`.
///
/// A pixel carries at most one label; relabelling replaces the old label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScribbleSet {
    labels: BTreeMap<(usize, usize), u8>,
}

impl ScribbleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `pixel` to `label` (1 = foreground, 0 = background). Returns
    /// `false` if the pixel already carried the same label.
    pub fn insert(&mut self, pixel: (usize, usize), label: u8) -> bool {
        self.labels.insert(pixel, label) != Some(label)
    }

    pub fn add_foreground(&mut self, pixel: (usize, usize)) -> bool {
        self.insert(pixel, 1)
    }

    pub fn add_background(&mut self, pixel: (usize, usize)) -> bool {
        self.insert(pixel, 0)
    }

    pub fn label(&self, pixel: (usize, usize)) -> Option<u8> {
        self.labels.get(&pixel).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), u8)> + '_ {
        self.labels.iter().map(|(&p, &l)| (p, l))
    }

    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.with_label(1)
    }

    pub fn background(&self) -> Vec<(usize, usize)> {
        self.with_label(0)
    }

    pub fn with_label(&self, label: u8) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .filter(|(_, &l)| l == label)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn extend(&mut self, other: &ScribbleSet) {
        for (p, l) in other.iter() {
            self.insert(p, l);
        }
    }

    /// Errors with every out-of-bounds pixel.
    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        let bad: Vec<Vec<usize>> = self
            .labels
            .keys()
            .filter(|(r, c)| *r >= height || *c >= width)
            .map(|&(r, c)| vec![r, c])
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::OutOfBounds(bad))
        }
    }

    /// Dense per-pixel constraint vector (`None` = unconstrained).
    pub fn constraint_map(&self, height: usize, width: usize) -> Result<Vec<Option<u8>>> {
        self.check_bounds(height, width)?;
        let mut out = vec![None; height * width];
        for (&(r, c), &l) in &self.labels {
            out[r * width + c] = Some(l);
        }
        Ok(out)
    }
}

/// Non-negative distance field over a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub extents: Vec<usize>,
    pub values: Vec<Scalar>,
}

impl DistanceMap {
    pub fn max_abs_diff(&self, other: &DistanceMap) -> Scalar {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Scalar::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// One forward and one backward raster sweep.
    SinglePass,
    /// Sweep pairs until nothing changes (bounded by [`MAX_SWEEP_PAIRS`]).
    #[default]
    Converged,
}

/// Upper bound on forward/backward sweep pairs in [`SweepMode::Converged`].
pub const MAX_SWEEP_PAIRS: usize = 10;

/// Seed pixels given as grid coordinates; validated and linearised.
pub(crate) fn linear_seeds(extents: &[usize], seeds: &[Vec<usize>]) -> Result<Vec<usize>> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let bad: Vec<Vec<usize>> = seeds
        .iter()
        .filter(|s| s.len() != extents.len() || s.iter().zip(extents).any(|(&c, &e)| c >= e))
        .cloned()
        .collect();
    if !bad.is_empty() {
        return Err(Error::OutOfBounds(bad));
    }
    Ok(seeds
        .iter()
        .map(|s| s.iter().zip(extents).fold(0, |acc, (&c, &e)| acc * e + c))
        .collect())
}

/// Neighbour offsets `(dz, dy, dx)` with squared physical length.
pub(crate) fn neighbour_offsets(
    extents: &[usize],
    spacing: &[Scalar],
) -> Vec<(isize, isize, isize, Scalar)> {
    let (d, _, _) = dims3(extents);
    let (sz, sy, sx) = match *spacing {
        [sy, sx] => (1.0, sy, sx),
        [sz, sy, sx] => (sz, sy, sx),
        _ => unreachable!(),
    };
    let zr: &[isize] = if d > 1 { &[-1, 0, 1] } else { &[0] };
    let mut out = Vec::new();
    for &dz in zr {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if (dz, dy, dx) == (0, 0, 0) {
                    continue;
                }
                let len2 = (dz as Scalar * sz).powi(2)
                    + (dy as Scalar * sy).powi(2)
                    + (dx as Scalar * sx).powi(2);
                out.push((dz, dy, dx, len2));
            }
        }
    }
    out
}

/// Cost of one step between linear pixel indices `a` and `b`.
#[inline]
pub(crate) fn step_cost(image: &ImageGrid, a: usize, b: usize, lambda2_len2: Scalar) -> Scalar {
    let n = image.pixels();
    let mut s = lambda2_len2;
    for c in 0..image.channels {
        let diff = image.data[c * n + a] - image.data[c * n + b];
        s += diff * diff;
    }
    s.sqrt()
}

/// Geodesic distance from `seeds` by raster scanning.
///
/// Returns the map and the number of forward/backward sweep pairs performed.
pub fn geodesic_distance_map_with_stats(
    image: &ImageGrid,
    seeds: &[Vec<usize>],
    lambda_spatial: Scalar,
    mode: SweepMode,
) -> Result<(DistanceMap, usize)> {
    let seeds = linear_seeds(&image.extents, seeds)?;
    let (d, h, w) = image.dims3();
    let n = image.pixels();
    let mut dist = vec![Scalar::INFINITY; n];
    for &s in &seeds {
        dist[s] = 0.0;
    }
    let lambda2 = lambda_spatial * lambda_spatial;
    let offsets = neighbour_offsets(&image.extents, &image.spacing);
    // Causal half for the forward sweep: offsets preceding the centre in scan order.
    let forward: Vec<_> = offsets
        .iter()
        .filter(|(dz, dy, dx, _)| (*dz, *dy, *dx) < (0, 0, 0))
        .map(|&(dz, dy, dx, l2)| (dz, dy, dx, lambda2 * l2))
        .collect();
    let backward: Vec<_> = forward
        .iter()
        .map(|&(dz, dy, dx, c)| (-dz, -dy, -dx, c))
        .collect();

    let sweep =
        |dist: &mut [Scalar], offs: &[(isize, isize, isize, Scalar)], reverse: bool| -> bool {
            let mut changed = false;
            let mut visit = |z: usize, y: usize, x: usize| {
                let i = (z * h + y) * w + x;
                let mut best = dist[i];
                for &(dz, dy, dx, sp) in offs {
                    let (nz, ny, nx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if nz < 0
                        || ny < 0
                        || nx < 0
                        || nz >= d as isize
                        || ny >= h as isize
                        || nx >= w as isize
                    {
                        continue;
                    }
                    let j = (nz as usize * h + ny as usize) * w + nx as usize;
                    if dist[j].is_finite() {
                        let cand = dist[j] + step_cost(image, i, j, sp);
                        if cand < best {
                            best = cand;
                        }
                    }
                }
                if best < dist[i] {
                    dist[i] = best;
                    changed = true;
                }
            };
            if reverse {
                for z in (0..d).rev() {
                    for y in (0..h).rev() {
                        for x in (0..w).rev() {
                            visit(z, y, x);
                        }
                    }
                }
            } else {
                for z in 0..d {
                    for y in 0..h {
                        for x in 0..w {
                            visit(z, y, x);
                        }
                    }
                }
            }
            changed
        };

    let mut pairs = 0;
    loop {
        let a = sweep(&mut dist, &forward, false);
        let b = sweep(&mut dist, &backward, true);
        pairs += 1;
        if mode == SweepMode::SinglePass || !(a || b) || pairs >= MAX_SWEEP_PAIRS {
            break;
        }
    }
    Ok((
        DistanceMap {
            extents: image.extents.clone(),
            values: dist,
        },
        pairs,
    ))
}

/// Geodesic distance from `seeds` (grid coordinates) by raster scanning.
pub fn geodesic_distance_map(
    image: &ImageGrid,
    seeds: &[Vec<usize>],
    lambda_spatial: Scalar,
    mode: SweepMode,
) -> Result<DistanceMap> {
    geodesic_distance_map_with_stats(image, seeds, lambda_spatial, mode).map(|(m, _)| m)
}
