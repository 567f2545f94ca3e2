use super::{linear_seeds, DistanceMap};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Exact squared distance along one axis (lower envelope of parabolas),
/// sampling positions `i * spacing`. `f` holds squared distances, `INFINITY`
/// where nothing has been reached yet.
fn envelope_1d(
    f: &[Scalar],
    spacing: Scalar,
    out: &mut [Scalar],
    v: &mut [usize],
    z: &mut [Scalar],
) {
    let n = f.len();
    let pos = |i: usize| i as Scalar * spacing;
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = Scalar::NEG_INFINITY;
                z[1] = Scalar::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s =
                ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = Scalar::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.iter_mut().for_each(|o| *o = Scalar::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < pos(q) {
            j += 1;
        }
        let p = v[j];
        let dq = pos(q) - pos(p);
        *o = dq * dq + f[p];
    }
}

/// Exact Euclidean distance to the nearest seed via separable squared
/// distance transforms, one axis at a time.
pub fn euclidean_distance_map(
    seeds: &[Vec<usize>],
    extents: &[usize],
    spacing: &[Scalar],
) -> Result<DistanceMap> {
    if extents.is_empty() || spacing.len() != extents.len() || extents.contains(&0) {
        return Err(Error::Shape(format!(
            "bad extents {extents:?} / spacing {spacing:?}"
        )));
    }
    if spacing.iter().any(|&s| s <= 0.0) {
        return Err(Error::Invalid("spacing must be positive".into()));
    }
    let seeds = linear_seeds(extents, seeds)?;
    let n: usize = extents.iter().product();
    let mut grid = vec![Scalar::INFINITY; n];
    for s in seeds {
        grid[s] = 0.0;
    }
    let longest = *extents.iter().max().unwrap();
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..extents.len() {
        let len = extents[axis];
        let stride: usize = extents[axis + 1..].iter().product();
        let outer: usize = extents[..axis].iter().product();
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * len * stride + inner;
                for i in 0..len {
                    line[i] = grid[base + i * stride];
                }
                envelope_1d(&line[..len], spacing[axis], &mut out[..len], &mut v, &mut z);
                for i in 0..len {
                    grid[base + i * stride] = out[i];
                }
            }
        }
    }
    Ok(DistanceMap {
        extents: extents.to_vec(),
        values: grid.into_iter().map(Scalar::sqrt).collect(),
    })
}
