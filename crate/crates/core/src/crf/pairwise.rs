//! Pairwise-Net: a small MLP mapping `(feature difference, pixel distance)`
//! to a pairwise potential, and its pre-training against a contrast-sensitive
//! target function.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Scalar, Sgd, SgdConfig, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Hidden widths of the Pairwise-Net.
pub const HIDDEN: [usize; 2] = [32, 16];

const FEATURE_GAIN: Scalar = 10.0;

/// MLP `F+1 -> 32 -> 16 -> 1`, ReLU hidden units, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseNet {
    pub feature_dim: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

impl PairwiseNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Config(
                "pairwise feature dimension must be >= 1".into(),
            ));
        }
        let dims = [feature_dim + 1, HIDDEN[0], HIDDEN[1], 1];
        let mut ids = Vec::new();
        for (li, pair) in dims.windows(2).enumerate() {
            let (din, dout) = (pair[0], pair[1]);
            // Small output layer so the untrained potential starts near zero.
            let bound = if dout == 1 {
                0.01
            } else {
                (6.0 / din as Scalar).sqrt()
            };
            let mut w: Vec<Scalar> = (0..din * dout)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            if li == 0 {
                for (k, v) in w.iter_mut().enumerate() {
                    if k % din < feature_dim {
                        *v *= FEATURE_GAIN;
                    }
                }
            }
            ids.push(store.add(
                format!("{prefix}.fc{}.weight", li + 1),
                Tensor::from_vec(&[dout, din], w)?,
            ));
            ids.push(store.add(
                format!("{prefix}.fc{}.bias", li + 1),
                Tensor::zeros(&[dout]),
            ));
        }
        Ok(PairwiseNet {
            feature_dim,
            w1: ids[0],
            b1: ids[1],
            w2: ids[2],
            b2: ids[3],
            w3: ids[4],
            b3: ids[5],
        })
    }

    pub fn layers(&self) -> [(ParamId, ParamId); 3] {
        [(self.w1, self.b1), (self.w2, self.b2), (self.w3, self.b3)]
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]
    }

    /// Records the network on `tape` for feature-major input `[F+1, N]`; output `[1, N]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let mut x = input;
        for (i, (w, b)) in self.layers().into_iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            x = tape.linear(x, wv, Some(bv))?;
            if i < 2 {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Sets every parameter to zero, making the pairwise term vanish.
    pub fn zero(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store
                .get_mut(id)
                .value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
}

/// Evaluates the potential for a single pair without recording a graph.
pub fn pairwise_potential(
    net: &PairwiseNet,
    store: &ParamStore,
    fdiff: &[Scalar],
    dist: Scalar,
) -> Result<Scalar> {
    if fdiff.len() != net.feature_dim {
        return Err(Error::Shape(format!(
            "{} feature differences for a {}-feature net",
            fdiff.len(),
            net.feature_dim
        )));
    }
    if dist <= 0.0 {
        return Err(Error::Invalid(format!(
            "pixel distance must be positive, got {dist}"
        )));
    }
    let mut x: Vec<Scalar> = fdiff.to_vec();
    x.push(dist);
    for (i, (w, b)) in net.layers().into_iter().enumerate() {
        let wt = &store.get(w).value;
        let bt = &store.get(b).value;
        let (dout, din) = (wt.shape()[0], wt.shape()[1]);
        let mut y: Vec<Scalar> = (0..dout)
            .map(|o| {
                bt.data()[o]
                    + (0..din)
                        .map(|k| wt.data()[o * din + k] * x[k])
                        .sum::<Scalar>()
            })
            .collect();
        if i < 2 {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        x = y;
    }
    Ok(x[0])
}

/// Contrast-sensitive pairwise function used as the pre-training target:
/// `exp(-|fdiff|^2 / (2 sigma^2 F)) * omega / dist`.
pub fn contrast_sensitive_target(
    fdiff: &[Scalar],
    dist: Scalar,
    sigma: Scalar,
    omega: Scalar,
) -> Scalar {
    let f = fdiff.len() as Scalar;
    let sq: Scalar = fdiff.iter().map(|v| v * v).sum();
    (-sq / (2.0 * sigma * sigma * f)).exp() * omega / dist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSetConfig {
    pub samples: usize,
    pub sigma: Scalar,
    pub omega: Scalar,
    /// Standard deviation of each feature-difference component.
    pub feature_std: Scalar,
    pub dist_low: Scalar,
    pub dist_high: Scalar,
}

impl Default for PretrainSetConfig {
    fn default() -> Self {
        PretrainSetConfig {
            samples: 100_000,
            sigma: 0.08,
            omega: 0.5,
            feature_std: 2.0,
            dist_low: 1.0,
            dist_high: 8.0,
        }
    }
}

/// Samples `x = (fdiff, d)` with targets from [`contrast_sensitive_target`].
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSet {
    pub feature_dim: usize,
    /// Row-major `[n, F+1]`.
    pub inputs: Vec<Scalar>,
    pub targets: Vec<Scalar>,
}

impl PretrainSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[Scalar] {
        let d = self.feature_dim + 1;
        &self.inputs[i * d..(i + 1) * d]
    }

    /// Feature-major `[F+1, k]` tensor of the chosen rows, with their targets.
    fn batch(&self, rows: &[usize]) -> (Tensor, Tensor) {
        let d = self.feature_dim + 1;
        let k = rows.len();
        let mut x = vec![0.0; d * k];
        for (j, &r) in rows.iter().enumerate() {
            for c in 0..d {
                x[c * k + j] = self.inputs[r * d + c];
            }
        }
        let y = rows.iter().map(|&r| self.targets[r]).collect();
        (
            Tensor::from_vec(&[d, k], x).unwrap(),
            Tensor::from_vec(&[1, k], y).unwrap(),
        )
    }
}

pub fn generate_pretrain_set(
    feature_dim: usize,
    cfg: &PretrainSetConfig,
    rng: &mut impl Rng,
) -> Result<PretrainSet> {
    if feature_dim == 0 {
        return Err(Error::Config("feature dimension must be >= 1".into()));
    }
    if !(cfg.dist_high > cfg.dist_low && cfg.dist_low >= 0.0) {
        return Err(Error::Config(format!(
            "distance range [{}, {}) is empty",
            cfg.dist_low, cfg.dist_high
        )));
    }
    let normal = Normal::new(0.0, cfg.feature_std).map_err(|e| Error::Config(e.to_string()))?;
    let uniform =
        Uniform::new(cfg.dist_low, cfg.dist_high).map_err(|e| Error::Config(e.to_string()))?;
    let mut inputs = Vec::with_capacity(cfg.samples * (feature_dim + 1));
    let mut targets = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let start = inputs.len();
        inputs.extend((0..feature_dim).map(|_| normal.sample(rng)));
        // U(0, d) can return exactly 0; the target is undefined there.
        let mut d = uniform.sample(rng);
        while d <= 0.0 {
            d = uniform.sample(rng);
        }
        inputs.push(d);
        targets.push(contrast_sensitive_target(
            &inputs[start..start + feature_dim],
            d,
            cfg.sigma,
            cfg.omega,
        ));
    }
    Ok(PretrainSet {
        feature_dim,
        inputs,
        targets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    pub batch: usize,
    pub holdout_fraction: Scalar,
    /// Projects the output layer onto `w >= 0, b >= min_output_bias` after
    /// each step so the pre-trained potential is strictly positive.
    pub nonnegative_output: bool,
    pub min_output_bias: Scalar,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                weight_decay: 0.0,
                lr_halving_period_iters: 100_000,
                minibatch: 16,
            },
            epochs: 100,
            batch: 16,
            holdout_fraction: 0.1,
            nonnegative_output: true,
            min_output_bias: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_train_mse: Vec<Scalar>,
    pub holdout_mse: Scalar,
    pub holdout_size: usize,
}

fn project_output(net: &PairwiseNet, store: &mut ParamStore, min_bias: Scalar) {
    for v in store.get_mut(net.w3).value.data_mut() {
        *v = v.max(0.0);
    }
    for v in store.get_mut(net.b3).value.data_mut() {
        *v = v.max(min_bias);
    }
}

/// Mean squared error of `net` over the given rows.
pub fn pairwise_mse(
    net: &PairwiseNet,
    store: &ParamStore,
    set: &PretrainSet,
    rows: &[usize],
) -> Result<Scalar> {
    let mut total = 0.0;
    for chunk in rows.chunks(4096) {
        let (x, y) = set.batch(chunk);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = net.forward(&mut tape, store, xv)?;
        total += tape
            .value(out)
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<Scalar>();
    }
    Ok(total / rows.len() as Scalar)
}

/// Fits `net` to the samples with minibatch SGD on a quadratic loss; the last
/// `holdout_fraction` of the samples is held out for the reported MSE.
pub fn pretrain_pairwise_net(
    net: &PairwiseNet,
    store: &mut ParamStore,
    set: &PretrainSet,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Result<PretrainReport> {
    if set.is_empty() {
        return Err(Error::Invalid("empty pre-training set".into()));
    }
    if set.feature_dim != net.feature_dim {
        return Err(Error::Shape(format!(
            "set has {} features, net {}",
            set.feature_dim, net.feature_dim
        )));
    }
    let holdout = ((set.len() as Scalar) * cfg.holdout_fraction).round() as usize;
    let n_train = set.len() - holdout;
    if n_train == 0 {
        return Err(Error::Invalid(
            "no training samples left after hold-out split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut sgd = Sgd::new(cfg.sgd.clone())?;
    if cfg.nonnegative_output {
        project_output(net, store, cfg.min_output_bias);
    }
    let mut iteration = 0;
    let mut epoch_train_mse = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (x, y) = set.batch(chunk);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let out = net.forward(&mut tape, store, xv)?;
            let loss = tape.mse(out, y)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pre-training loss at iteration {iteration}"
                )));
            }
            sum += lv * chunk.len() as Scalar;
            tape.backward(loss)?;
            tape.write_grads(store);
            sgd.step(store, iteration)?;
            if cfg.nonnegative_output {
                project_output(net, store, cfg.min_output_bias);
            }
            iteration += 1;
        }
        epoch_train_mse.push(sum / n_train as Scalar);
    }
    let held: Vec<usize> = (n_train..set.len()).collect();
    let holdout_mse = if held.is_empty() {
        Scalar::NAN
    } else {
        pairwise_mse(net, store, set, &held)?
    };
    Ok(PretrainReport {
        epoch_train_mse,
        holdout_mse,
        holdout_size: held.len(),
    })
}
