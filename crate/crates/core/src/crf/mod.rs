//! Back-propagatable CRF with freeform pairwise potentials.
//!
//! Mean-field inference runs on the tensor tape so gradients reach the
//! unary scores, the compatibility matrix and the Pairwise-Net. Each
//! iteration performs message passing over a local patch, the compatibility
//! transform, adds the unary term and renormalises. Scribbled pixels can be
//! pinned to one-hot distributions after every iteration.

mod oracle;
mod pairwise;

pub use oracle::{brute_force_meanfield_oracle, MAX_ORACLE_PIXELS};
pub use pairwise::{
    contrast_sensitive_target, generate_pretrain_set, pairwise_mse, pairwise_potential,
    pretrain_pairwise_net, PairwiseNet, PretrainConfig, PretrainReport, PretrainSet,
    PretrainSetConfig, HIDDEN,
};

use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::geodesic::ImageGrid;
use crate::tensor::{ParamId, ParamStore, PatchOffsets, Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrfConfig {
    pub labels: usize,
    /// Patch extents `[rows, cols]`; both odd.
    pub patch: [usize; 2],
    pub iterations: usize,
    /// Pixel spacing `[row, col]` used for pair distances.
    pub spacing: [Scalar; 2],
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            labels: 2,
            patch: [7, 7],
            iterations: 5,
            spacing: [1.0, 1.0],
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config(
                "mean-field needs at least one iteration".into(),
            ));
        }
        if self.patch.iter().any(|p| p % 2 == 0) {
            return Err(Error::Config(format!(
                "patch extents must be odd, got {:?}",
                self.patch
            )));
        }
        if self.labels < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        Ok(())
    }

    /// Patch neighbours `(dy, dx, distance)`, excluding the centre.
    pub fn neighbours(&self) -> Vec<(isize, isize, Scalar)> {
        let (ry, rx) = ((self.patch[0] / 2) as isize, (self.patch[1] / 2) as isize);
        let mut out = Vec::new();
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                if (dy, dx) == (0, 0) {
                    continue;
                }
                let d = ((dy as Scalar * self.spacing[0]).powi(2)
                    + (dx as Scalar * self.spacing[1]).powi(2))
                .sqrt();
                out.push((dy, dx, d));
            }
        }
        out
    }
}

/// Learnable `L x L` label compatibility, initialised to `[a != b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompatibilityMatrix {
    pub labels: usize,
    pub id: ParamId,
}

impl CompatibilityMatrix {
    pub fn new(store: &mut ParamStore, name: &str, labels: usize) -> Self {
        let data = (0..labels * labels)
            .map(|k| if k / labels != k % labels { 1.0 } else { 0.0 })
            .collect();
        let id = store.add(name, Tensor::from_vec(&[labels, labels], data).unwrap());
        CompatibilityMatrix { labels, id }
    }

    pub fn get(&self, store: &ParamStore, a: usize, b: usize) -> Scalar {
        store.get(self.id).value.data()[a * self.labels + b]
    }
}

/// CRF parameters: Pairwise-Net plus compatibility matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfHead {
    pub config: CrfConfig,
    pub pairwise: PairwiseNet,
    pub compat: CompatibilityMatrix,
}

impl CrfHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        config: CrfConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let pairwise = PairwiseNet::new(store, &format!("{prefix}.pairwise"), feature_dim, rng)?;
        let compat = CompatibilityMatrix::new(store, &format!("{prefix}.mu"), config.labels);
        Ok(CrfHead {
            config,
            pairwise,
            compat,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.pairwise.param_ids().to_vec();
        v.push(self.compat.id);
        v
    }

    /// Copies this head's parameter values from another store/head of identical shape.
    pub fn copy_from(&self, store: &mut ParamStore, src: &CrfHead, src_store: &ParamStore) {
        for (dst, s) in self.param_ids().into_iter().zip(src.param_ids()) {
            store.get_mut(dst).value = src_store.get(s).value.clone();
        }
    }
}

/// Feature-major Pairwise-Net input `[F+1, K*H*W]` for every (neighbour, pixel)
/// pair; pairs whose neighbour falls outside the image get zero features.
pub fn pair_inputs(features: &ImageGrid, cfg: &CrfConfig) -> Result<(Tensor, Arc<PatchOffsets>)> {
    let (d, h, w) = features.dims3();
    if d != 1 {
        return Err(Error::Shape("CRF features must be 2-D".into()));
    }
    let f = features.channels;
    let n = h * w;
    let nbrs = cfg.neighbours();
    let k = nbrs.len();
    let mut x = vec![0.0; (f + 1) * k * n];
    for (ki, &(dy, dx, dist)) in nbrs.iter().enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let i = y * w + xx;
                let col = ki * n + i;
                x[f * k * n + col] = dist;
                let (ny, nx) = (y as isize + dy, xx as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                for c in 0..f {
                    let fc = features.channel(c);
                    x[c * k * n + col] = fc[i] - fc[j];
                }
            }
        }
    }
    let patch = PatchOffsets {
        height: h,
        width: w,
        offsets: nbrs.iter().map(|&(dy, dx, _)| (dy, dx)).collect(),
    };
    Ok((Tensor::from_vec(&[f + 1, k * n], x)?, Arc::new(patch)))
}

/// Records `iterations` mean-field updates on `tape`.
///
/// `unary_logits` are the classifier scores `z` (`psi_u = -z`), shape
/// `[L, H, W]`. `constraints`, when given, holds one optional label per pixel;
/// those pixels are pinned to one-hot after initialisation and after every
/// iteration. Returns the final `Q`.
pub fn mean_field(
    tape: &mut Tape,
    store: &ParamStore,
    head: &CrfHead,
    unary_logits: Var,
    features: &ImageGrid,
    constraints: Option<&[Option<u8>]>,
) -> Result<Var> {
    head.config.validate()?;
    let (l, h, w) = tape.value(unary_logits).chw()?;
    if l != head.config.labels {
        return Err(Error::Shape(format!(
            "{l} unary channels for a {}-label CRF",
            head.config.labels
        )));
    }
    if features.extents != [h, w] {
        return Err(Error::Shape(format!(
            "features {:?} vs unary {h}x{w}",
            features.extents
        )));
    }
    if features.channels != head.pairwise.feature_dim {
        return Err(Error::Shape(format!(
            "{} feature channels for a {}-feature Pairwise-Net",
            features.channels, head.pairwise.feature_dim
        )));
    }
    let constraints = match constraints {
        Some(c) => {
            if c.len() != h * w {
                return Err(Error::Shape(format!(
                    "{} constraint slots for {h}x{w}",
                    c.len()
                )));
            }
            if let Some(bad) = c.iter().flatten().find(|&&s| s as usize >= l) {
                return Err(Error::Invalid(format!(
                    "scribble label {bad} outside 0..{l}"
                )));
            }
            c.iter().any(Option::is_some).then(|| Arc::new(c.to_vec()))
        }
        None => None,
    };

    let (x, patch) = pair_inputs(features, &head.config)?;
    let xv = tape.constant(x);
    let weights = head.pairwise.forward(tape, store, xv)?;
    let mu = tape.param(store, head.compat.id);

    let mut q = tape.softmax_channels(unary_logits)?;
    if let Some(c) = &constraints {
        q = tape.constrain(q, c.clone())?;
    }
    for _ in 0..head.config.iterations {
        let msg = tape.patch_aggregate(q, weights, patch.clone())?;
        let phi = tape.linear(msg, mu, None)?;
        let energy = tape.sub(unary_logits, phi)?;
        q = tape.softmax_channels(energy)?;
        if let Some(c) = &constraints {
            q = tape.constrain(q, c.clone())?;
        }
    }
    Ok(q)
}

/// Convenience wrapper: runs [`mean_field`] on a fresh tape and returns `Q`.
pub fn mean_field_iterate(
    unary_logits: &Tensor,
    features: &ImageGrid,
    store: &ParamStore,
    head: &CrfHead,
    constraints: Option<&[Option<u8>]>,
) -> Result<ProbabilityField> {
    let mut tape = Tape::new();
    let z = tape.constant(unary_logits.clone());
    let q = mean_field(&mut tape, store, head, z, features, constraints)?;
    ProbabilityField::from_tensor(tape.value(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(h: usize, w: usize, seed: u64) -> (ParamStore, CrfHead, Tensor, ImageGrid) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = CrfHead::new(&mut store, "crf", 1, CrfConfig::default(), &mut rng).unwrap();
        let z = Tensor::from_vec(
            &[2, h, w],
            (0..2 * h * w)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .unwrap();
        let f = ImageGrid::new(
            1,
            &[h, w],
            (0..h * w).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        (store, head, z, f)
    }

    #[test]
    fn iverson_initialisation() {
        let mut store = ParamStore::new();
        let mu = CompatibilityMatrix::new(&mut store, "mu", 3);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(mu.get(&store, a, b), if a == b { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn patch_has_48_neighbours() {
        let n = CrfConfig::default().neighbours();
        assert_eq!(n.len(), 48);
        assert!(n.iter().all(|&(_, _, d)| d >= 1.0));
    }

    #[test]
    fn zero_pairwise_gives_softmax() {
        let (mut store, head, z, f) = setup(6, 5, 1);
        head.pairwise.zero(&mut store);
        let q = mean_field_iterate(&z, &f, &store, &head, None).unwrap();
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let s = tape.softmax_channels(zv).unwrap();
        let diff = q.to_tensor().max_abs_diff(tape.value(s));
        assert!(diff < 1e-9);
    }

    #[test]
    fn constraints_are_exact_and_rows_normalised() {
        let (store, head, z, f) = setup(8, 8, 2);
        let mut c = vec![None; 64];
        c[9] = Some(1);
        c[40] = Some(0);
        let q = mean_field_iterate(&z, &f, &store, &head, Some(&c)).unwrap();
        assert_eq!((q.data[9], q.data[64 + 9]), (0.0, 1.0));
        assert_eq!((q.data[40], q.data[64 + 40]), (1.0, 0.0));
        assert!(q.max_normalization_error() < 1e-9);
    }

    #[test]
    fn config_errors() {
        let (store, mut head, z, f) = setup(4, 4, 3);
        head.config.iterations = 0;
        assert!(matches!(
            mean_field_iterate(&z, &f, &store, &head, None),
            Err(Error::Config(_))
        ));
        head.config.iterations = 2;
        let c = vec![Some(2); 16];
        assert!(matches!(
            mean_field_iterate(&z, &f, &store, &head, Some(&c)),
            Err(Error::Invalid(_))
        ));
    }
}
