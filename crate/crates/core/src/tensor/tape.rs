use super::conv::{dilated_conv2d_backward, dilated_conv2d_raw};
use super::{gemm, MatRef, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Probability floor used by the cross-entropy loss.
pub const PROB_FLOOR: Scalar = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Neighbour offsets for local weighted aggregation over an `H x W` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchOffsets {
    pub height: usize,
    pub width: usize,
    pub offsets: Vec<(isize, isize)>,
}

impl PatchOffsets {
    /// Output range along one axis where `i + shift` stays in bounds.
    fn range(n: usize, shift: isize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (n as isize - shift).clamp(0, n as isize) as usize;
        (lo.min(hi), hi)
    }
}

enum Op {
    Leaf,
    Param,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        radius: usize,
        dilation: usize,
    },
    Relu(Var),
    Concat(Vec<Var>),
    SliceChannels {
        input: Var,
        start: usize,
    },
    SoftmaxChannels(Var),
    CrossEntropy {
        probs: Var,
        labels: Arc<Vec<u8>>,
    },
    Mse {
        pred: Var,
        target: Arc<Tensor>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Scalar),
    Sum(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    PatchAggregate {
        values: Var,
        weights: Var,
        patch: Arc<PatchOffsets>,
    },
    Constrain {
        input: Var,
        labels: Arc<Vec<Option<u8>>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Counters collected while recording.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Pixels whose target-class probability fell below [`PROB_FLOOR`] in a cross-entropy loss.
    pub clamped_probabilities: usize,
}

/// Recorded forward pass; rebuilt for every forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: Vec<(ParamId, Var)>,
    pub diagnostics: Diagnostics,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Which ReLU inputs are positive, over every ReLU node in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&a| a > 0.0));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (e.g. a network input being probed).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter from `store`; repeated binds return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.bound.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.bound.push((id, v));
        v
    }

    /// Adds every bound parameter's gradient into `store`.
    pub fn write_grads(&self, store: &mut ParamStore) {
        for &(id, v) in &self.bound {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g);
            } else {
                store.accumulate_grad(id, &Tensor::zeros(self.value(v).shape()));
            }
        }
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        radius: usize,
        dilation: usize,
    ) -> Result<Var> {
        let out = dilated_conv2d_raw(
            self.value(input),
            self.value(weight),
            self.value(bias),
            radius,
            dilation,
        )?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                radius,
                dilation,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| if a > 0.0 { a } else { 0.0 })
            .collect();
        let out = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Stacks `[Ci, H, W]` tensors along the channel axis in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero tensors".into()));
        }
        let (_, h, w) = self.value(parts[0]).chw()?;
        let mut total = 0;
        for &p in parts {
            let (c, ph, pw) = self.value(p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!(
                    "concat spatial mismatch: {h}x{w} vs {ph}x{pw}"
                )));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(total * h * w);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor {
                shape: vec![total, h, w],
                data,
            },
            Op::Concat(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if start + count > c || count == 0 {
            return Err(Error::Shape(format!(
                "channel slice {start}..{} of {c}",
                start + count
            )));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + count) * plane].to_vec();
        let ng = self.needs(x);
        Ok(self.push(
            Tensor {
                shape: vec![count, h, w],
                data,
            },
            Op::SliceChannels { input: x, start },
            ng,
        ))
    }

    /// Per-pixel softmax over the channel axis of `[L, H, W]`.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (l, h, w) = self.value(x).chw()?;
        if l < 2 {
            return Err(Error::Shape("softmax needs at least two channels".into()));
        }
        let out = softmax_channels_raw(self.value(x), l, h * w);
        let ng = self.needs(x);
        Ok(self.push(out, Op::SoftmaxChannels(x), ng))
    }

    /// Mean over pixels of `-ln q(label)`, with `q` floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[u8]) -> Result<Var> {
        let (l, h, w) = self.value(probs).chw()?;
        let n = h * w;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} pixels",
                labels.len()
            )));
        }
        let q = self.value(probs).data();
        let mut loss = 0.0;
        let mut clamped = 0;
        for (i, &lab) in labels.iter().enumerate() {
            let lab = lab as usize;
            if lab >= l {
                return Err(Error::Invalid(format!("label {lab} outside 0..{l}")));
            }
            let p = q[lab * n + i];
            if p < PROB_FLOOR {
                clamped += 1;
            }
            loss -= p.max(PROB_FLOOR).ln();
        }
        self.diagnostics.clamped_probabilities += clamped;
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(loss / n as Scalar),
            Op::CrossEntropy {
                probs,
                labels: Arc::new(labels.to_vec()),
            },
            ng,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::Shape(format!(
                "mse: {} predictions, {} targets",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as Scalar;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<Scalar>()
            / n;
        let ng = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: Arc::new(target),
            },
            ng,
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(Scalar, Scalar) -> Scalar,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: Scalar) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|a| a * k).collect(),
        };
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Feature-major dense layer: input `[Din, N]` (or `[Din, H, W]`),
    /// weight `[Dout, Din]`, optional bias `[Dout]`; output keeps the trailing axes.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (dout, din) = match wt.shape() {
            &[o, i] => (o, i),
            s => {
                return Err(Error::Shape(format!(
                    "linear weight must be 2-D, got {s:?}"
                )))
            }
        };
        if x.shape().first() != Some(&din) {
            return Err(Error::Shape(format!(
                "linear expects {din} input features, got {:?}",
                x.shape()
            )));
        }
        let n = x.len() / din;
        let mut out = vec![0.0; dout * n];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.len() != dout {
                return Err(Error::Shape(format!(
                    "linear bias has {} entries, expected {dout}",
                    bv.len()
                )));
            }
            for o in 0..dout {
                out[o * n..(o + 1) * n]
                    .iter_mut()
                    .for_each(|v| *v = bv.data()[o]);
            }
        }
        gemm(
            dout,
            din,
            n,
            MatRef::rows(wt.data(), din),
            MatRef::rows(x.data(), n),
            1.0,
            &mut out,
        );
        let mut shape = x.shape().to_vec();
        shape[0] = dout;
        let ng = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Linear {
                input,
                weight,
                bias,
            },
            ng,
        ))
    }

    /// `out[l, p] = sum_k weights[k, p] * values[l, p + offset_k]` over in-bounds neighbours.
    pub fn patch_aggregate(
        &mut self,
        values: Var,
        weights: Var,
        patch: Arc<PatchOffsets>,
    ) -> Result<Var> {
        let (l, h, w) = self.value(values).chw()?;
        if (h, w) != (patch.height, patch.width) {
            return Err(Error::Shape(format!(
                "patch geometry {}x{} vs values {h}x{w}",
                patch.height, patch.width
            )));
        }
        let k = patch.offsets.len();
        if self.value(weights).len() != k * h * w {
            return Err(Error::Shape(format!(
                "patch weights hold {} values, expected {}",
                self.value(weights).len(),
                k * h * w
            )));
        }
        let plane = h * w;
        let vd = self.value(values).data();
        let wd = self.value(weights).data();
        let mut out = vec![0.0; l * plane];
        for (ki, &(dy, dx)) in patch.offsets.iter().enumerate() {
            let (y0, y1) = PatchOffsets::range(h, dy);
            let (x0, x1) = PatchOffsets::range(w, dx);
            if x0 >= x1 {
                continue;
            }
            let wplane = &wd[ki * plane..(ki + 1) * plane];
            for li in 0..l {
                let vplane = &vd[li * plane..(li + 1) * plane];
                let oplane = &mut out[li * plane..(li + 1) * plane];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let o = &mut oplane[y * w + x0..y * w + x1];
                    let wr = &wplane[y * w + x0..y * w + x1];
                    let vr = &vplane[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for ((ov, wv), vv) in o.iter_mut().zip(wr).zip(vr) {
                        *ov += wv * vv;
                    }
                }
            }
        }
        let ng = self.needs(values) || self.needs(weights);
        Ok(self.push(
            Tensor {
                shape: vec![l, h, w],
                data: out,
            },
            Op::PatchAggregate {
                values,
                weights,
                patch,
            },
            ng,
        ))
    }

    /// Overwrites the distribution at labelled pixels with a one-hot vector.
    /// Gradient does not flow through overwritten pixels.
    pub fn constrain(&mut self, q: Var, labels: Arc<Vec<Option<u8>>>) -> Result<Var> {
        let (l, h, w) = self.value(q).chw()?;
        let n = h * w;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} constraint slots for {n} pixels",
                labels.len()
            )));
        }
        let mut out = self.value(q).clone();
        for (i, lab) in labels.iter().enumerate() {
            if let Some(s) = *lab {
                if s as usize >= l {
                    return Err(Error::Invalid(format!("scribble label {s} outside 0..{l}")));
                }
                for c in 0..l {
                    out.data_mut()[c * n + i] = if c == s as usize { 1.0 } else { 0.0 };
                }
            }
        }
        let ng = self.needs(q);
        Ok(self.push(out, Op::Constrain { input: q, labels }, ng))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::NoForward);
        }
        if target.0 >= self.nodes.len() {
            return Err(Error::Invalid("backward target is not on this tape".into()));
        }
        if self.value(target).len() != 1 {
            return Err(Error::Shape("backward target must be a scalar".into()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(Tensor::filled(self.value(target).shape(), 1.0));
        for idx in (0..=target.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                self.grads[idx] = Some(g);
                continue;
            }
            for (v, contrib) in self.local_grads(idx, &g) {
                if !self.needs(v) {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let like = |v: Var, data: Vec<Scalar>| Tensor {
            shape: self.value(v).shape().to_vec(),
            data,
        };
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::Conv {
                input,
                weight,
                bias,
                radius,
                dilation,
            } => {
                let (gi, gw, gb) = dilated_conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *radius,
                    *dilation,
                    self.needs(*input),
                );
                let mut out = vec![(*weight, gw), (*bias, gb)];
                out.extend(gi.map(|t| (*input, t)));
                out
            }
            Op::Relu(x) => {
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*x, like(*x, data))]
            }
            Op::Concat(parts) => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = self.value(p).len();
                        let t = like(p, g.data()[off..off + n].to_vec());
                        off += n;
                        (p, t)
                    })
                    .collect()
            }
            Op::SliceChannels { input, start } => {
                let (_, h, w) = self.value(*input).chw().unwrap();
                let mut data = vec![0.0; self.value(*input).len()];
                let off = start * h * w;
                data[off..off + g.len()].copy_from_slice(g.data());
                vec![(*input, like(*input, data))]
            }
            Op::SoftmaxChannels(x) => {
                let s = &node.value;
                let (l, h, w) = s.chw().unwrap();
                let n = h * w;
                let mut data = vec![0.0; l * n];
                for i in 0..n {
                    let dotp: Scalar = (0..l)
                        .map(|c| g.data()[c * n + i] * s.data()[c * n + i])
                        .sum();
                    for c in 0..l {
                        data[c * n + i] = s.data()[c * n + i] * (g.data()[c * n + i] - dotp);
                    }
                }
                vec![(*x, like(*x, data))]
            }
            Op::CrossEntropy { probs, labels } => {
                let q = self.value(*probs);
                let n = labels.len();
                let scale = g.data()[0] / n as Scalar;
                let mut data = vec![0.0; q.len()];
                for (i, &lab) in labels.iter().enumerate() {
                    let j = lab as usize * n + i;
                    let p = q.data()[j];
                    if p >= PROB_FLOOR {
                        data[j] = -scale / p;
                    }
                }
                vec![(*probs, like(*probs, data))]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let k = 2.0 * g.data()[0] / p.len() as Scalar;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| k * (a - b))
                    .collect();
                vec![(*pred, like(*pred, data))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![
                (*a, g.clone()),
                (*b, like(*b, g.data().iter().map(|v| -v).collect())),
            ],
            Op::Mul(a, b) => {
                let ga = g
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(x, y)| x * y)
                    .collect();
                let gb = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, y)| x * y)
                    .collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Scale(x, k) => vec![(*x, like(*x, g.data().iter().map(|v| v * k).collect()))],
            Op::Sum(x) => vec![(*x, Tensor::filled(self.value(*x).shape(), g.data()[0]))],
            Op::Linear {
                input,
                weight,
                bias,
            } => self.linear_backward(*input, *weight, *bias, g),
            Op::PatchAggregate {
                values,
                weights,
                patch,
            } => self.patch_backward(*values, *weights, patch, g),
            Op::Constrain { input, labels } => {
                let n = labels.len();
                let mut data = g.data().to_vec();
                let l = data.len() / n;
                for (i, lab) in labels.iter().enumerate() {
                    if lab.is_some() {
                        for c in 0..l {
                            data[c * n + i] = 0.0;
                        }
                    }
                }
                vec![(*input, like(*input, data))]
            }
        }
    }

    fn linear_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        g: &Tensor,
    ) -> Vec<(Var, Tensor)> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (dout, din) = (wt.shape()[0], wt.shape()[1]);
        let n = x.len() / din;
        let gd = g.data();
        let xd = x.data();
        let wd = wt.data();
        let mut out = Vec::with_capacity(3);
        if self.needs(input) {
            let mut gx = vec![0.0; din * n];
            gemm(
                din,
                dout,
                n,
                MatRef::transposed(wd, din),
                MatRef::rows(gd, n),
                0.0,
                &mut gx,
            );
            out.push((
                input,
                Tensor {
                    shape: x.shape().to_vec(),
                    data: gx,
                },
            ));
        }
        if self.needs(weight) {
            let mut gw = vec![0.0; dout * din];
            gemm(
                dout,
                n,
                din,
                MatRef::rows(gd, n),
                MatRef::transposed(xd, n),
                0.0,
                &mut gw,
            );
            out.push((
                weight,
                Tensor {
                    shape: wt.shape().to_vec(),
                    data: gw,
                },
            ));
        }
        if let Some(b) = bias {
            let gb = (0..dout)
                .map(|o| gd[o * n..(o + 1) * n].iter().sum())
                .collect();
            out.push((
                b,
                Tensor {
                    shape: vec![dout],
                    data: gb,
                },
            ));
        }
        out
    }

    fn patch_backward(
        &self,
        values: Var,
        weights: Var,
        patch: &PatchOffsets,
        g: &Tensor,
    ) -> Vec<(Var, Tensor)> {
        let (l, h, w) = self.value(values).chw().unwrap();
        let plane = h * w;
        let vd = self.value(values).data();
        let wd = self.value(weights).data();
        let gd = g.data();
        let mut gv = vec![0.0; l * plane];
        let mut gw = vec![0.0; wd.len()];
        for (ki, &(dy, dx)) in patch.offsets.iter().enumerate() {
            let (y0, y1) = PatchOffsets::range(h, dy);
            let (x0, x1) = PatchOffsets::range(w, dx);
            if x0 >= x1 {
                continue;
            }
            for li in 0..l {
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let span = x1 - x0;
                    let go = &gd[li * plane + y * w + x0..li * plane + y * w + x1];
                    let src = li * plane + sy * w + sx0;
                    let widx = ki * plane + y * w + x0;
                    for t in 0..span {
                        gw[widx + t] += go[t] * vd[src + t];
                        gv[src + t] += go[t] * wd[widx + t];
                    }
                }
            }
        }
        let wshape = self.value(weights).shape().to_vec();
        vec![
            (
                values,
                Tensor {
                    shape: vec![l, h, w],
                    data: gv,
                },
            ),
            (
                weights,
                Tensor {
                    shape: wshape,
                    data: gw,
                },
            ),
        ]
    }
}

pub(crate) fn softmax_channels_raw(x: &Tensor, l: usize, n: usize) -> Tensor {
    let xd = x.data();
    let mut data = vec![0.0; l * n];
    for i in 0..n {
        let m = (0..l)
            .map(|c| xd[c * n + i])
            .fold(Scalar::NEG_INFINITY, Scalar::max);
        let mut z = 0.0;
        for c in 0..l {
            let e = (xd[c * n + i] - m).exp();
            data[c * n + i] = e;
            z += e;
        }
        for c in 0..l {
            data[c * n + i] /= z;
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}
