use super::{dims3, linear_seeds, neighbour_offsets, step_cost, DistanceMap, ImageGrid};
use crate::error::Result;
use crate::tensor::Scalar;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(PartialEq)]
struct Entry(Scalar, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact multi-source shortest paths on the same weighted grid graph the
/// raster scan uses.
pub fn dijkstra_geodesic_oracle(
    image: &ImageGrid,
    seeds: &[Vec<usize>],
    lambda_spatial: Scalar,
) -> Result<DistanceMap> {
    let seeds = linear_seeds(&image.extents, seeds)?;
    let (d, h, w) = dims3(&image.extents);
    let lambda2 = lambda_spatial * lambda_spatial;
    let offsets = neighbour_offsets(&image.extents, &image.spacing);
    let mut dist = vec![Scalar::INFINITY; image.pixels()];
    let mut done = vec![false; image.pixels()];
    let mut heap = BinaryHeap::new();
    for &s in &seeds {
        dist[s] = 0.0;
        heap.push(Entry(0.0, s));
    }
    while let Some(Entry(du, u)) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        let (z, y, x) = (u / (h * w), (u / w) % h, u % w);
        for &(dz, dy, dx, len2) in &offsets {
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
            let v = (nz as usize * h + ny as usize) * w + nx as usize;
            if done[v] {
                continue;
            }
            // Same operand order as the raster scan: dist[neighbour] + cost(pixel, neighbour).
            let cand = du + step_cost(image, v, u, lambda2 * len2);
            if cand < dist[v] {
                dist[v] = cand;
                heap.push(Entry(cand, v));
            }
        }
    }
    Ok(DistanceMap {
        extents: image.extents.clone(),
        values: dist,
    })
}
