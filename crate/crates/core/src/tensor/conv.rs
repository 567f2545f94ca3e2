use super::{gemm, MatRef, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

/// Square dilated convolution kernel with extent `2r+1` and dilation `q`.
///
/// Weights are `[out, in, 2r+1, 2r+1]`, bias is `[out]`; both live in a
/// [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub radius: usize,
    pub dilation: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvKernel {
    pub fn validate_geometry(radius: usize, dilation: usize) -> Result<()> {
        if dilation < 1 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        if radius > 1 {
            return Err(Error::Config(format!(
                "kernel radius must be 0 or 1, got {radius}"
            )));
        }
        if radius == 0 && dilation != 1 {
            return Err(Error::Config("1x1 kernels must use dilation 1".into()));
        }
        Ok(())
    }

    /// New kernel with He-uniform weights and zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        out_channels: usize,
        in_channels: usize,
        radius: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::validate_geometry(radius, dilation)?;
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        let k = 2 * radius + 1;
        let fan_in = (in_channels * k * k) as Scalar;
        let bound = (6.0 / fan_in).sqrt();
        let n = out_channels * in_channels * k * k;
        let w: Vec<Scalar> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::from_vec(&[out_channels, in_channels, k, k], w)?,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Ok(ConvKernel {
            out_channels,
            in_channels,
            radius,
            dilation,
            weight,
            bias,
        })
    }

    pub fn extent(&self) -> usize {
        2 * self.radius + 1
    }
}

/// Iterates `(kernel row, kernel col, row shift, col shift)` for the taps of
/// a kernel; input is sampled at `(y + dy, x + dx)`.
fn taps(radius: usize, dilation: usize) -> impl Iterator<Item = (usize, usize, isize, isize)> {
    let k = 2 * radius + 1;
    let r = radius as isize;
    let q = dilation as isize;
    (0..k).flat_map(move |a| {
        (0..k).map(move |b| (a, b, -(a as isize - r) * q, -(b as isize - r) * q))
    })
}

/// Output range `[lo, hi)` along one axis of length `n` for which `i + shift` is in bounds.
fn valid_range(n: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (n as isize - shift).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds `input` into `[C * K * K, H * W]` columns; out-of-image taps are zero.
fn im2col(
    input: &[Scalar],
    c: usize,
    h: usize,
    w: usize,
    radius: usize,
    dilation: usize,
) -> Vec<Scalar> {
    let k = 2 * radius + 1;
    let plane = h * w;
    let mut col = vec![0.0; c * k * k * plane];
    for ci in 0..c {
        let in_plane = &input[ci * plane..(ci + 1) * plane];
        for (a, b, dy, dx) in taps(radius, dilation) {
            let row = &mut col[((ci * k + a) * k + b) * plane..][..plane];
            let (y0, y1) = valid_range(h, dy);
            let (x0, x1) = valid_range(w, dx);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let sx0 = (x0 as isize + dx) as usize;
                row[y * w + x0..y * w + x1]
                    .copy_from_slice(&in_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
fn col2im(
    col: &[Scalar],
    c: usize,
    h: usize,
    w: usize,
    radius: usize,
    dilation: usize,
) -> Vec<Scalar> {
    let k = 2 * radius + 1;
    let plane = h * w;
    let mut out = vec![0.0; c * plane];
    for ci in 0..c {
        let out_plane = &mut out[ci * plane..(ci + 1) * plane];
        for (a, b, dy, dx) in taps(radius, dilation) {
            let row = &col[((ci * k + a) * k + b) * plane..][..plane];
            let (y0, y1) = valid_range(h, dy);
            let (x0, x1) = valid_range(w, dx);
            if x0 >= x1 {
                continue;
            }
            for y in y0..y1 {
                let sy = (y as isize + dy) as usize;
                let sx0 = (x0 as isize + dx) as usize;
                let dst = &mut out_plane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                for (d, g) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                    *d += g;
                }
            }
        }
    }
    out
}

/// Zero-padded, stride-1 dilated convolution:
/// `out(y, x) = b + sum_{a,b} in(y - q(a - r), x - q(b - r)) * K(a, b)`.
pub fn dilated_conv2d_raw(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    radius: usize,
    dilation: usize,
) -> Result<Tensor> {
    ConvKernel::validate_geometry(radius, dilation)?;
    let (c, h, w) = input.chw()?;
    let k = 2 * radius + 1;
    let (co, wc) = match weight.shape() {
        &[co, wc, ka, kb] if ka == k && kb == k => (co, wc),
        s => {
            return Err(Error::Shape(format!(
                "kernel shape {s:?} does not match radius {radius}"
            )))
        }
    };
    if wc != c {
        return Err(Error::Shape(format!(
            "input has {c} channels, kernel expects {wc}"
        )));
    }
    if bias.len() != co {
        return Err(Error::Shape(format!(
            "bias has {} entries for {co} output channels",
            bias.len()
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0; co * plane];
    for (o, b) in bias.data().iter().enumerate() {
        out[o * plane..(o + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *b);
    }
    let ckk = c * k * k;
    if radius == 0 {
        gemm(
            co,
            ckk,
            plane,
            MatRef::rows(weight.data(), ckk),
            MatRef::rows(input.data(), plane),
            1.0,
            &mut out,
        );
    } else {
        let col = im2col(input.data(), c, h, w, radius, dilation);
        gemm(
            co,
            ckk,
            plane,
            MatRef::rows(weight.data(), ckk),
            MatRef::rows(&col, plane),
            1.0,
            &mut out,
        );
    }
    Tensor::from_vec(&[co, h, w], out)
}

/// Gradients of [`dilated_conv2d_raw`] w.r.t. input (when `need_input`), weight and bias.
pub(crate) fn dilated_conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    radius: usize,
    dilation: usize,
    need_input: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (c, h, w) = input.chw().expect("conv input shape checked in forward");
    let co = weight.shape()[0];
    let k = 2 * radius + 1;
    let plane = h * w;
    let ckk = c * k * k;
    let go = grad_out.data();
    let gb = (0..co)
        .map(|o| go[o * plane..(o + 1) * plane].iter().sum())
        .collect();
    let col_storage;
    let col: &[Scalar] = if radius == 0 {
        input.data()
    } else {
        col_storage = im2col(input.data(), c, h, w, radius, dilation);
        &col_storage
    };
    let mut gw = vec![0.0; weight.len()];
    gemm(
        co,
        plane,
        ckk,
        MatRef::rows(go, plane),
        MatRef::transposed(col, plane),
        0.0,
        &mut gw,
    );
    let gin = need_input.then(|| {
        let mut gcol = vec![0.0; ckk * plane];
        gemm(
            ckk,
            co,
            plane,
            MatRef::transposed(weight.data(), ckk),
            MatRef::rows(go, plane),
            0.0,
            &mut gcol,
        );
        let data = if radius == 0 {
            gcol
        } else {
            col2im(&gcol, c, h, w, radius, dilation)
        };
        Tensor {
            shape: input.shape().to_vec(),
            data,
        }
    });
    (
        gin,
        Tensor {
            shape: weight.shape().to_vec(),
            data: gw,
        },
        Tensor {
            shape: vec![co],
            data: gb,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn impulse_response_with_dilation_two() {
        let mut input = Tensor::zeros(&[1, 9, 9]);
        input.data_mut()[4 * 9 + 4] = 1.0;
        let weight = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let out = dilated_conv2d_raw(&input, &weight, &Tensor::zeros(&[1]), 1, 2).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let expected = if [2, 4, 6].contains(&y) && [2, 4, 6].contains(&x) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(out.data()[y * 9 + x], expected, "({y},{x})");
            }
        }
    }

    #[test]
    fn one_by_one_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(&[3, 5, 4], &mut rng);
        let mut weight = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            weight.data_mut()[c * 3 + c] = 1.0;
        }
        let out = dilated_conv2d_raw(&input, &weight, &Tensor::zeros(&[3]), 0, 1).unwrap();
        assert_eq!(out, input);
    }

    /// Dense (undilated) convolution with an explicitly zero-inserted kernel.
    fn dense_conv_zero_inserted(input: &Tensor, weight: &Tensor, q: usize) -> Tensor {
        let (c, h, w) = input.chw().unwrap();
        let co = weight.shape()[0];
        let ke = 2 * q + 1;
        let mut big = vec![0.0; co * c * ke * ke];
        for o in 0..co {
            for ci in 0..c {
                for a in 0..3 {
                    for b in 0..3 {
                        big[((o * c + ci) * ke + a * q) * ke + b * q] =
                            weight.data()[((o * c + ci) * 3 + a) * 3 + b];
                    }
                }
            }
        }
        let half = q as isize;
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for a in 0..ke as isize {
                            for b in 0..ke as isize {
                                let sy = y - (a - half);
                                let sx = x - (b - half);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += input.data()[(ci * h + sy as usize) * w + sx as usize]
                                    * big[((o * c + ci) * ke + a as usize) * ke + b as usize];
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + x as usize] = s;
                }
            }
        }
        Tensor::from_vec(&[co, h, w], out).unwrap()
    }

    #[test]
    fn matches_zero_inserted_dense_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random(&[3, 8, 8], &mut rng);
        let weight = random(&[4, 3, 3, 3], &mut rng);
        let out = dilated_conv2d_raw(&input, &weight, &Tensor::zeros(&[4]), 1, 3).unwrap();
        let oracle = dense_conv_zero_inserted(&input, &weight, 3);
        assert!(out.max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn rejects_bad_geometry_and_channels() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let weight = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            dilated_conv2d_raw(&input, &weight, &Tensor::zeros(&[1]), 1, 1),
            Err(Error::Shape(_))
        ));
        let weight = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(matches!(
            dilated_conv2d_raw(&input, &weight, &Tensor::zeros(&[1]), 1, 0),
            Err(Error::Config(_))
        ));
    }
}
