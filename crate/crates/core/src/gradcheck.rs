//! Central finite-difference gradient checks.
//!
//! [`standard_suite`] covers every differentiable tape op plus a small P-Net
//! with its CRF head.

use crate::crf::{mean_field, CrfConfig, CrfHead};
use crate::error::Result;
use crate::geodesic::ImageGrid;
use crate::netzoo::{build_model, NetworkConfig, SegmentationModel};
use crate::tensor::{ParamStore, PatchOffsets, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const EPS: Scalar = 1e-5;

/// Denominator floor of [`rel_err`]. Central differences at [`EPS`] carry
/// roundoff of about `ulp(loss) / EPS`, near 1e-9 for losses of order 10.
pub const REL_FLOOR: Scalar = 1e-5;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(a: Scalar, n: Scalar) -> Scalar {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: String,
    /// Largest relative error over all checked elements.
    pub worst: Scalar,
    pub checked: usize,
    /// Elements whose analytic gradient exceeds `1e-8` in magnitude.
    pub active: usize,
    /// Where the largest error occurred: input or parameter name and flat index.
    pub worst_at: (String, usize),
    /// Perturbations that flipped at least one ReLU; central differences are
    /// not exact there.
    pub kinks_crossed: usize,
}

/// Values in `±[0.05, 1)`, away from the ReLU kink.
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: Scalar = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Records `f` on fresh tapes with tracked inputs and compares analytic and
/// numeric gradients of `sum(f(..) * R)` for a fixed random `R`.
pub fn check_inputs(
    name: &str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let record = |inputs: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let shape = {
        let (tape, _, out) = record(&inputs)?;
        tape.value(out).shape().to_vec()
    };
    let proj = random_tensor(&shape, &mut rng);
    let project = |tape: &mut Tape, out: Var| -> Result<Var> {
        let pv = tape.constant(proj.clone());
        let m = tape.mul(out, pv)?;
        Ok(tape.sum(m))
    };
    let value = |inputs: &[Tensor]| -> Result<(Scalar, Vec<bool>)> {
        let (mut tape, _, out) = record(inputs)?;
        let l = project(&mut tape, out)?;
        Ok((tape.value(l).data()[0], tape.relu_pattern()))
    };
    let (mut tape, vars, out) = record(&inputs)?;
    let loss = project(&mut tape, out)?;
    let pattern = tape.relu_pattern();
    tape.backward(loss)?;
    let mut worst: Scalar = 0.0;
    let mut checked = 0;
    let mut active = 0;
    let mut worst_at = (String::new(), 0);
    let mut kinks_crossed = 0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            let ((up, pu), (down, pd)) = (value(&plus)?, value(&minus)?);
            kinks_crossed += (pu != pattern || pd != pattern) as usize;
            let numeric = (up - down) / (2.0 * EPS);
            let e = rel_err(analytic.data()[i], numeric);
            if e > worst {
                worst = e;
                worst_at = (format!("input {k}"), i);
            }
            checked += 1;
            active += (analytic.data()[i].abs() > 1e-8) as usize;
        }
    }
    Ok(GradReport {
        name: name.into(),
        worst,
        checked,
        active,
        worst_at,
        kinks_crossed,
    })
}

/// Compares the store-parameter gradients of `loss` against central differences.
pub fn check_params(
    name: &str,
    store: &mut ParamStore,
    loss: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<GradReport> {
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    tape.backward(l)?;
    store.zero_grads();
    tape.write_grads(store);
    let pattern = tape.relu_pattern();
    let value = |store: &ParamStore| -> Result<(Scalar, Vec<bool>)> {
        let mut t = Tape::new();
        let l = loss(&mut t, store)?;
        Ok((t.value(l).data()[0], t.relu_pattern()))
    };
    let ids: Vec<_> = store.ids().collect();
    let mut worst: Scalar = 0.0;
    let mut checked = 0;
    let mut active = 0;
    let mut worst_at = (String::new(), 0);
    let mut kinks_crossed = 0;
    for id in ids {
        let analytic = store.get(id).grad.clone();
        for i in 0..analytic.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + EPS;
            let (up, pu) = value(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - EPS;
            let (down, pd) = value(store)?;
            kinks_crossed += (pu != pattern || pd != pattern) as usize;
            store.get_mut(id).value.data_mut()[i] = orig;
            let e = rel_err(analytic.data()[i], (up - down) / (2.0 * EPS));
            if e > worst {
                worst = e;
                worst_at = (store.name(id).to_string(), i);
            }
            checked += 1;
            active += (analytic.data()[i].abs() > 1e-8) as usize;
        }
    }
    Ok(GradReport {
        name: name.into(),
        worst,
        checked,
        active,
        worst_at,
        kinks_crossed,
    })
}

fn op_suite() -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (r, q) in [(1, 1), (1, 2), (1, 3), (0, 1)] {
        let k = 2 * r + 1;
        let inputs = vec![
            random_tensor(&[2, 6, 5], &mut rng),
            random_tensor(&[3, 2, k, k], &mut rng),
            random_tensor(&[3], &mut rng),
        ];
        out.push(check_inputs(
            &format!("conv r={r} q={q}"),
            inputs,
            |t, v| t.conv2d(v[0], v[1], v[2], r, q),
        )?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_tensor(&[2, 3, 4], &mut rng);
    let b = random_tensor(&[2, 3, 4], &mut rng);
    out.push(check_inputs("relu", vec![a.clone()], |t, v| {
        Ok(t.relu(v[0]))
    })?);
    out.push(check_inputs("add", vec![a.clone(), b.clone()], |t, v| {
        t.add(v[0], v[1])
    })?);
    out.push(check_inputs("sub", vec![a.clone(), b.clone()], |t, v| {
        t.sub(v[0], v[1])
    })?);
    out.push(check_inputs("mul", vec![a.clone(), b.clone()], |t, v| {
        t.mul(v[0], v[1])
    })?);
    out.push(check_inputs("scale", vec![a.clone()], |t, v| {
        Ok(t.scale(v[0], -1.7))
    })?);
    out.push(check_inputs(
        "sum",
        vec![a.clone()],
        |t, v| Ok(t.sum(v[0])),
    )?);
    let c = random_tensor(&[1, 3, 4], &mut rng);
    out.push(check_inputs("concat", vec![a.clone(), c], |t, v| {
        t.concat_channels(&[v[0], v[1]])
    })?);
    out.push(check_inputs(
        "slice",
        vec![random_tensor(&[4, 3, 4], &mut rng)],
        |t, v| t.slice_channels(v[0], 1, 2),
    )?);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_tensor(&[3, 4, 4], &mut rng);
    out.push(check_inputs("softmax", vec![z.clone()], |t, v| {
        t.softmax_channels(v[0])
    })?);
    let labels: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
    out.push(check_inputs("cross-entropy", vec![z.clone()], |t, v| {
        let s = t.softmax_channels(v[0])?;
        t.cross_entropy(s, &labels)
    })?);
    let target = random_tensor(&[3, 4, 4], &mut rng);
    out.push(check_inputs("mse", vec![z], |t, v| {
        t.mse(v[0], target.clone())
    })?);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&[3, 7], &mut rng);
    let w = random_tensor(&[5, 3], &mut rng);
    let bias = random_tensor(&[5], &mut rng);
    out.push(check_inputs(
        "linear+bias",
        vec![x, w.clone(), bias],
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    )?);
    out.push(check_inputs(
        "linear",
        vec![random_tensor(&[3, 2, 4], &mut rng), w],
        |t, v| t.linear(v[0], v[1], None),
    )?);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let offsets = vec![(-1, 0), (0, 2), (1, 1), (-2, -1)];
    let patch = Arc::new(PatchOffsets {
        height: 4,
        width: 5,
        offsets,
    });
    let vals = random_tensor(&[2, 4, 5], &mut rng);
    let wts = random_tensor(&[4, 20], &mut rng);
    out.push(check_inputs(
        "patch-aggregate",
        vec![vals.clone(), wts],
        |t, v| t.patch_aggregate(v[0], v[1], patch.clone()),
    )?);
    let cons: Vec<Option<u8>> = (0..20)
        .map(|i| [None, Some(0), None, Some(1)][i % 4])
        .collect();
    let cons = Arc::new(cons);
    out.push(check_inputs("constrain", vec![vals], |t, v| {
        let s = t.softmax_channels(v[0])?;
        t.constrain(s, cons.clone())
    })?);
    Ok(out)
}

/// Mean-field parameters on a 4x4 instance with a small positive
/// Pairwise-Net output layer, unconstrained and constrained.
fn mean_field_suite() -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let head = CrfHead::new(
        &mut store,
        "crf",
        1,
        CrfConfig {
            iterations: 3,
            ..Default::default()
        },
        &mut rng,
    )?;
    for v in store.get_mut(head.compat.id).value.data_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    for id in [head.pairwise.w3, head.pairwise.b3] {
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.random_range(0.0..0.05);
        }
    }
    let z = random_tensor(&[2, 4, 4], &mut rng);
    let feats = ImageGrid::new(1, &[4, 4], random_tensor(&[16], &mut rng).into_data())?;
    let labels: Vec<u8> = (0..16).map(|i| (i % 2) as u8).collect();
    for constrained in [false, true] {
        let cons: Vec<Option<u8>> = (0..16)
            .map(|i| {
                if constrained && i % 5 == 0 {
                    Some(1)
                } else {
                    None
                }
            })
            .collect();
        let name = if constrained {
            "mean-field, constrained"
        } else {
            "mean-field"
        };
        out.push(check_params(name, &mut store, |t, s| {
            let zv = t.input(z.clone());
            let q = mean_field(t, s, &head, zv, &feats, Some(&cons))?;
            t.cross_entropy(q, &labels)
        })?);
    }
    Ok(out)
}

/// Width-2 P-Net on a 9x9 image. Biases are made positive so units stay
/// active, the Pairwise-Net output layer is kept small so mean-field energies
/// stay moderate, and the classifier is rescaled to unit-scale logits. The
/// seed is one where no perturbation flips a ReLU.
fn pnet_mini_suite() -> Result<GradReport> {
    let (seed, out_scale, side) = (5, 0.05, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        width: 2,
        ..NetworkConfig::pnet(1)
    };
    let model = build_model(&cfg, &mut rng)?;
    let mut store = model.store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let range = if name.contains("pairwise.fc3") {
            0.0..out_scale
        } else if name.ends_with("bias") && !name.contains("pairwise") {
            0.05..0.3
        } else {
            continue;
        };
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.random_range(range.clone());
        }
    }
    let x = random_tensor(&[1, side, side], &mut rng);
    let labels: Vec<u8> = (0..side * side).map(|_| rng.random_range(0..2)).collect();
    let unary = {
        let m = SegmentationModel {
            store: store.clone(),
            ..model.clone()
        };
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let out = m.forward(&mut t, xv, false, None)?;
        let z = t.value(out.logits).data().to_vec();
        let mean = z.iter().sum::<Scalar>() / z.len() as Scalar;
        (z.iter().map(|v| (v - mean).powi(2)).sum::<Scalar>() / z.len() as Scalar).sqrt()
    };
    let last = model.classifier[1].clone();
    for id in [last.weight, last.bias] {
        for v in store.get_mut(id).value.data_mut() {
            *v /= unary.max(1e-12);
        }
    }
    check_params("P-Net-mini + CRF-Net(f)", &mut store, |t, s| {
        let m = SegmentationModel {
            store: s.clone(),
            ..model.clone()
        };
        let xv = t.constant(x.clone());
        let out = m.forward(t, xv, true, None)?;
        t.cross_entropy(out.probs, &labels)
    })
}

/// Every tape op, the mean-field parameters, and a width-2 P-Net with CRF head.
pub fn standard_suite() -> Result<Vec<GradReport>> {
    let mut out = op_suite()?;
    out.extend(mean_field_suite()?);
    out.push(pnet_mini_suite()?);
    Ok(out)
}
