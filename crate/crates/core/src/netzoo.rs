//! Resolution-preserving P-Net and R-Net.
//!
//! Five blocks of dilated 3x3 convolutions (2, 2, 3, 3, 3 layers, dilation
//! doubling per block), a channel concat of the five block outputs, and a
//! two-layer 1x1 classifier. A CRF head refines the classifier scores.

use crate::crf::{mean_field, CrfConfig, CrfHead};
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::geodesic::ImageGrid;
use crate::tensor::{ConvKernel, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Convolutions per block.
pub const BLOCK_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

/// Extra input channels of the refinement network: initial foreground
/// probability plus the two scribble distance maps.
pub const INTERACTION_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Pnet,
    Rnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfVariant {
    None,
    /// Free-form pairwise potentials.
    F,
    /// Free-form pairwise potentials plus scribble constraints.
    Fu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub kind: NetworkKind,
    pub image_channels: usize,
    /// Block width `C`.
    pub width: usize,
    /// Base dilation `d`.
    pub base_dilation: usize,
    pub labels: usize,
    pub crf: CrfVariant,
    pub crf_config: CrfConfig,
    /// Multiplies the image channels before they reach the CRF; training
    /// sets it to the intensity std so feature differences are in raw units.
    pub crf_feature_scale: Scalar,
    /// When false only block 5 feeds the classifier.
    pub multiscale: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::pnet(1)
    }
}

impl NetworkConfig {
    pub fn pnet(image_channels: usize) -> Self {
        NetworkConfig {
            kind: NetworkKind::Pnet,
            image_channels,
            width: 8,
            base_dilation: 1,
            labels: 2,
            crf: CrfVariant::F,
            crf_config: CrfConfig::default(),
            crf_feature_scale: 1.0,
            multiscale: true,
        }
    }

    pub fn rnet(image_channels: usize) -> Self {
        NetworkConfig {
            kind: NetworkKind::Rnet,
            crf: CrfVariant::Fu,
            ..NetworkConfig::pnet(image_channels)
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.kind {
            NetworkKind::Pnet => self.image_channels,
            NetworkKind::Rnet => self.image_channels + INTERACTION_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels < 1 || self.width < 1 || self.base_dilation < 1 {
            return Err(Error::Config(format!(
                "image channels, width and base dilation must be >= 1 (got {}, {}, {})",
                self.image_channels, self.width, self.base_dilation
            )));
        }
        if self.labels < 2 {
            return Err(Error::Config("need at least two labels".into()));
        }
        if !(self.crf_feature_scale > 0.0 && self.crf_feature_scale.is_finite()) {
            return Err(Error::Config(format!(
                "CRF feature scale {} must be positive",
                self.crf_feature_scale
            )));
        }
        if self.crf != CrfVariant::None {
            self.crf_config.validate()?;
            if self.crf_config.labels != self.labels {
                return Err(Error::Config(format!(
                    "CRF has {} labels, network {}",
                    self.crf_config.labels, self.labels
                )));
            }
        }
        Ok(())
    }
}

/// Dilation of block `i` (1-based): `d * 2^(i-1)`.
pub fn dilation_schedule(block: usize, base: usize) -> Result<usize> {
    if !(1..=5).contains(&block) {
        return Err(Error::Invalid(format!("block index {block} outside 1..=5")));
    }
    Ok(base << (block - 1))
}

/// Receptive field side length of block `i`: `2 * sum_{j<=i} tau_j * r * q_j + 1`.
pub fn receptive_field(block: usize, base: usize, radius: usize) -> Result<usize> {
    dilation_schedule(block, base)?;
    let mut reach = 0;
    for j in 1..=block {
        reach += BLOCK_CONVS[j - 1] * radius * dilation_schedule(j, base)?;
    }
    Ok(2 * reach + 1)
}

/// Built network with its own parameter store.
#[derive(Clone, Debug)]
pub struct SegmentationModel {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub blocks: Vec<Vec<ConvKernel>>,
    pub classifier: [ConvKernel; 2],
    pub crf: Option<CrfHead>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Block-6 scores `[L, H, W]`.
    pub logits: Var,
    /// Softmax of the logits, or the CRF output when it ran.
    pub probs: Var,
}

/// Plain-value result of [`forward_segment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub probs: ProbabilityField,
}

pub fn build_model(config: &NetworkConfig, rng: &mut impl Rng) -> Result<SegmentationModel> {
    config.validate()?;
    let mut store = ParamStore::new();
    let c = config.width;
    let mut blocks = Vec::with_capacity(5);
    let mut cin = config.input_channels();
    for (bi, &n) in BLOCK_CONVS.iter().enumerate() {
        let q = dilation_schedule(bi + 1, config.base_dilation)?;
        let mut layers = Vec::with_capacity(n);
        for li in 0..n {
            layers.push(ConvKernel::new(
                &mut store,
                &format!("block{}.conv{}", bi + 1, li + 1),
                c,
                cin,
                1,
                q,
                rng,
            )?);
            cin = c;
        }
        blocks.push(layers);
    }
    let concat = if config.multiscale { 5 * c } else { c };
    let classifier = [
        ConvKernel::new(&mut store, "block6.conv1", c, concat, 0, 1, rng)?,
        ConvKernel::new(&mut store, "block6.conv2", config.labels, c, 0, 1, rng)?,
    ];
    let crf = match config.crf {
        CrfVariant::None => None,
        _ => Some(CrfHead::new(
            &mut store,
            "crf",
            config.image_channels,
            config.crf_config.clone(),
            rng,
        )?),
    };
    Ok(SegmentationModel {
        config: config.clone(),
        store,
        blocks,
        classifier,
        crf,
    })
}

pub fn build_pnet(config: &NetworkConfig, rng: &mut impl Rng) -> Result<SegmentationModel> {
    if config.kind != NetworkKind::Pnet {
        return Err(Error::Config(
            "build_pnet needs a P-Net configuration".into(),
        ));
    }
    build_model(config, rng)
}

pub fn build_rnet(config: &NetworkConfig, rng: &mut impl Rng) -> Result<SegmentationModel> {
    if config.kind != NetworkKind::Rnet {
        return Err(Error::Config(
            "build_rnet needs an R-Net configuration".into(),
        ));
    }
    build_model(config, rng)
}

impl SegmentationModel {
    /// All convolutions in blocks 1-6, in execution order.
    pub fn conv_layers(&self) -> Vec<&ConvKernel> {
        self.blocks
            .iter()
            .flatten()
            .chain(self.classifier.iter())
            .collect()
    }

    /// Parameters of the convolutional part (everything except the CRF head).
    pub fn conv_param_ids(&self) -> Vec<ParamId> {
        self.conv_layers()
            .into_iter()
            .flat_map(|k| [k.weight, k.bias])
            .collect()
    }

    /// Records the network on `tape`.
    ///
    /// `use_crf` selects between the CRF output and a plain softmax. Scribble
    /// `constraints` are only accepted by constraint-aware models and are
    /// applied whether or not the CRF runs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: Var,
        use_crf: bool,
        constraints: Option<&[Option<u8>]>,
    ) -> Result<ForwardOutput> {
        let (ci, h, w) = tape.value(input).chw()?;
        if ci != self.config.input_channels() {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {ci}",
                self.config.input_channels()
            )));
        }
        if constraints.is_some() && self.config.crf == CrfVariant::F {
            return Err(Error::Invalid(
                "scribble constraints need a constraint-aware CRF".into(),
            ));
        }
        let mut x = input;
        let mut outs = Vec::with_capacity(5);
        for block in &self.blocks {
            for k in block {
                x = self.conv(tape, x, k)?;
                x = tape.relu(x);
            }
            outs.push(x);
        }
        let cat = if self.config.multiscale {
            tape.concat_channels(&outs)?
        } else {
            x
        };
        let hid = self.conv(tape, cat, &self.classifier[0])?;
        let hid = tape.relu(hid);
        let logits = self.conv(tape, hid, &self.classifier[1])?;
        debug_assert_eq!(tape.value(logits).shape(), &[self.config.labels, h, w]);

        let probs = match (&self.crf, use_crf) {
            (Some(head), true) => {
                let feats = self.crf_features(tape.value(input))?;
                mean_field(tape, &self.store, head, logits, &feats, constraints)?
            }
            _ => {
                let p = tape.softmax_channels(logits)?;
                match constraints {
                    Some(c) if c.iter().any(Option::is_some) => {
                        if c.len() != h * w {
                            return Err(Error::Shape(format!(
                                "{} constraint slots for {h}x{w}",
                                c.len()
                            )));
                        }
                        tape.constrain(p, std::sync::Arc::new(c.to_vec()))?
                    }
                    _ => p,
                }
            }
        };
        Ok(ForwardOutput { logits, probs })
    }

    fn conv(&self, tape: &mut Tape, x: Var, k: &ConvKernel) -> Result<Var> {
        let wv = tape.param(&self.store, k.weight);
        let bv = tape.param(&self.store, k.bias);
        tape.conv2d(x, wv, bv, k.radius, k.dilation)
    }

    /// CRF features: the scaled image channels of the network input.
    pub fn crf_features(&self, input: &Tensor) -> Result<ImageGrid> {
        let (_, h, w) = input.chw()?;
        let n = self.config.image_channels * h * w;
        let k = self.config.crf_feature_scale;
        ImageGrid::new(
            self.config.image_channels,
            &[h, w],
            input.data()[..n].iter().map(|v| v * k).collect(),
        )
    }
}

/// Runs `model` on a plain input; the CRF runs when the model has one.
pub fn forward_segment(
    model: &SegmentationModel,
    input: &Tensor,
    constraints: Option<&[Option<u8>]>,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = model.forward(&mut tape, x, true, constraints)?;
    Ok(Prediction {
        logits: tape.value(out.logits).clone(),
        probs: ProbabilityField::from_tensor(tape.value(out.probs))?,
    })
}
