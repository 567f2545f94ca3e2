use super::{pairwise_potential, CrfHead};
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::geodesic::ImageGrid;
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const MAX_ORACLE_PIXELS: usize = 64;

/// Literal nested-loop mean-field on a tiny instance: every pixel, every
/// label, every in-patch neighbour, with the pairwise potential evaluated
/// one pair at a time.
#[allow(clippy::needless_range_loop)]
pub fn brute_force_meanfield_oracle(
    unary_logits: &Tensor,
    features: &ImageGrid,
    store: &ParamStore,
    head: &CrfHead,
    constraints: Option<&[Option<u8>]>,
) -> Result<ProbabilityField> {
    let (l, h, w) = unary_logits.chw()?;
    if h * w > MAX_ORACLE_PIXELS {
        return Err(Error::TooLarge(h * w));
    }
    head.config.validate()?;
    let n = h * w;
    let z = |lab: usize, y: usize, x: usize| unary_logits.data()[(lab * h + y) * w + x];
    let feat = |y: usize, x: usize| -> Vec<Scalar> {
        (0..features.channels)
            .map(|c| features.channel(c)[y * w + x])
            .collect()
    };
    let pin = |q: &mut Vec<Vec<Scalar>>| {
        if let Some(c) = constraints {
            for (i, s) in c.iter().enumerate() {
                if let Some(s) = s {
                    for lab in 0..l {
                        q[i][lab] = if lab == *s as usize { 1.0 } else { 0.0 };
                    }
                }
            }
        }
    };
    let normalise = |e: Vec<Scalar>| -> Vec<Scalar> {
        let m = e.iter().cloned().fold(Scalar::NEG_INFINITY, Scalar::max);
        let ex: Vec<Scalar> = e.iter().map(|v| (v - m).exp()).collect();
        let s: Scalar = ex.iter().sum();
        ex.into_iter().map(|v| v / s).collect()
    };

    let mut q: Vec<Vec<Scalar>> = (0..n)
        .map(|i| normalise((0..l).map(|lab| z(lab, i / w, i % w)).collect()))
        .collect();
    pin(&mut q);
    let (ry, rx) = (
        (head.config.patch[0] / 2) as isize,
        (head.config.patch[1] / 2) as isize,
    );
    let [sy, sx] = head.config.spacing;
    for _ in 0..head.config.iterations {
        let mut next = Vec::with_capacity(n);
        for y in 0..h {
            for x in 0..w {
                let fi = feat(y, x);
                let mut energy = Vec::with_capacity(l);
                for lab in 0..l {
                    let mut phi = 0.0;
                    for lp in 0..l {
                        let mut msg = 0.0;
                        for dy in -ry..=ry {
                            for dx in -rx..=rx {
                                let (ny, nx) = (y as isize + dy, x as isize + dx);
                                if (dy, dx) == (0, 0)
                                    || ny < 0
                                    || nx < 0
                                    || ny >= h as isize
                                    || nx >= w as isize
                                {
                                    continue;
                                }
                                let fj = feat(ny as usize, nx as usize);
                                let fdiff: Vec<Scalar> =
                                    fi.iter().zip(&fj).map(|(a, b)| a - b).collect();
                                let d = ((dy as Scalar * sy).powi(2) + (dx as Scalar * sx).powi(2))
                                    .sqrt();
                                let f = pairwise_potential(&head.pairwise, store, &fdiff, d)?;
                                msg += f * q[ny as usize * w + nx as usize][lp];
                            }
                        }
                        phi += head.compat.get(store, lab, lp) * msg;
                    }
                    energy.push(z(lab, y, x) - phi);
                }
                next.push(normalise(energy));
            }
        }
        q = next;
        pin(&mut q);
    }
    let mut data = vec![0.0; l * n];
    for (i, row) in q.iter().enumerate() {
        for lab in 0..l {
            data[lab * n + i] = row[lab];
        }
    }
    Ok(ProbabilityField {
        labels: l,
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::{mean_field_iterate, CrfConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_large_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let head = CrfHead::new(&mut store, "crf", 1, CrfConfig::default(), &mut rng).unwrap();
        let z = Tensor::zeros(&[2, 9, 8]);
        let f = ImageGrid::new(1, &[9, 8], vec![0.0; 72]).unwrap();
        assert!(matches!(
            brute_force_meanfield_oracle(&z, &f, &store, &head, None),
            Err(Error::TooLarge(72))
        ));
    }

    #[test]
    fn matches_patch_implementation_on_small_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for case in 0..10 {
            let mut store = ParamStore::new();
            let cfg = CrfConfig {
                iterations: 1 + case % 3,
                ..Default::default()
            };
            let head = CrfHead::new(&mut store, "crf", 1, cfg, &mut rng).unwrap();
            for id in head.param_ids() {
                for v in store.get_mut(id).value.data_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
            }
            let z = Tensor::from_vec(
                &[2, 3, 3],
                (0..18).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let f =
                ImageGrid::new(1, &[3, 3], (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
            let cons: Vec<Option<u8>> = (0..9)
                .map(|i| {
                    if case % 2 == 1 && i == 4 {
                        Some(1)
                    } else {
                        None
                    }
                })
                .collect();
            let a = mean_field_iterate(&z, &f, &store, &head, Some(&cons)).unwrap();
            let b = brute_force_meanfield_oracle(&z, &f, &store, &head, Some(&cons)).unwrap();
            assert!(a.to_tensor().max_abs_diff(&b.to_tensor()) < 1e-9);
        }
    }

    #[test]
    fn symmetric_instance_gives_symmetric_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = CrfHead::new(&mut store, "crf", 1, CrfConfig::default(), &mut rng).unwrap();
        // left-right mirror symmetric unary and features
        let row = [0.3, -1.0, 0.3];
        let z: Vec<f64> = (0..2)
            .flat_map(|l| (0..3).flat_map(move |_| row.map(|v| if l == 0 { -v } else { v })))
            .collect();
        let z = Tensor::from_vec(&[2, 3, 3], z).unwrap();
        let f =
            ImageGrid::new(1, &[3, 3], (0..9).map(|i| [0.1, 0.9, 0.1][i % 3]).collect()).unwrap();
        let q = brute_force_meanfield_oracle(&z, &f, &store, &head, None).unwrap();
        for y in 0..3 {
            assert!((q.data[9 + y * 3] - q.data[9 + y * 3 + 2]).abs() < 1e-12);
        }
    }
}
