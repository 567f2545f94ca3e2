use super::checkpoint::ModelCheckpoint;
use super::data::{NormStats, MIN_EXTENT};
use crate::error::{Error, Result};
use crate::field::ProbabilityField;
use crate::geodesic::{
    encode_interactions, EncodeOptions, ImageGrid, InitialSegmentation, ScribbleSet,
};
use crate::netzoo::{forward_segment, NetworkKind};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// R-Net input for a normalised image: image channels, initial foreground
/// probability, and the two scribble distance maps divided by the image
/// diagonal.
pub fn rnet_input(
    image: &ImageGrid,
    initial: &ProbabilityField,
    scribbles: &ScribbleSet,
    encoding: &EncodeOptions,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let t = encode_interactions(
        image,
        InitialSegmentation::Probability(initial),
        scribbles,
        encoding,
        rng,
    )?;
    let (c, h, w) = t.chw()?;
    let diag = image.diagonal();
    let mut data = t.into_data();
    for v in &mut data[(c - 2) * h * w..] {
        *v /= diag;
    }
    Tensor::from_vec(&[c, h, w], data)
}

/// Canonical two-label form: the foreground rounded to f32, background
/// `1 - fg`. Stored and transmitted maps carry the foreground only, so this
/// is exactly what a reader reconstructs.
pub fn quantize(field: &mut ProbabilityField) {
    if field.labels != 2 {
        for v in &mut field.data {
            *v = *v as f32 as Scalar;
        }
        return;
    }
    let fg: Vec<Scalar> = field
        .foreground()
        .iter()
        .map(|&v| v as f32 as Scalar)
        .collect();
    let n = fg.len();
    let (bg, rest) = field.data.split_at_mut(n);
    for ((b, f), &v) in bg.iter_mut().zip(rest.iter_mut()).zip(&fg) {
        *b = 1.0 - v;
        *f = v;
    }
}

/// Inference shared by the command line and the session service.
#[derive(Clone, Debug)]
pub struct Segmenter {
    pub pnet: ModelCheckpoint,
    pub rnet: Option<ModelCheckpoint>,
}

impl Segmenter {
    pub fn new(pnet: ModelCheckpoint, rnet: Option<ModelCheckpoint>) -> Result<Self> {
        if pnet.model.config.kind != NetworkKind::Pnet {
            return Err(Error::Checkpoint(
                "proposal checkpoint is not a P-Net".into(),
            ));
        }
        if let Some(r) = &rnet {
            if r.model.config.kind != NetworkKind::Rnet {
                return Err(Error::Checkpoint(
                    "refinement checkpoint is not an R-Net".into(),
                ));
            }
            if r.norm != pnet.norm {
                return Err(Error::Checkpoint(
                    "P-Net and R-Net were trained with different normalisation".into(),
                ));
            }
        }
        Ok(Segmenter { pnet, rnet })
    }

    pub fn norm(&self) -> &NormStats {
        &self.pnet.norm
    }

    /// Checks a raw image is usable and returns it normalised.
    pub fn prepare(&self, image: &ImageGrid) -> Result<ImageGrid> {
        let (d, h, w) = image.dims3();
        if d != 1 {
            return Err(Error::Shape("only 2-D images are segmented".into()));
        }
        if h < MIN_EXTENT || w < MIN_EXTENT {
            return Err(Error::Invalid(format!(
                "image {h}x{w} is below the minimum extent {MIN_EXTENT}"
            )));
        }
        if image.channels != self.pnet.model.config.image_channels {
            return Err(Error::Shape(format!(
                "image has {} channels, model expects {}",
                image.channels, self.pnet.model.config.image_channels
            )));
        }
        self.norm().apply(image)
    }

    /// Automatic proposal: P-Net with its CRF head.
    pub fn propose(&self, image: &ImageGrid) -> Result<ProbabilityField> {
        let img = self.prepare(image)?;
        let (_, h, w) = img.dims3();
        let x = Tensor::from_vec(&[img.channels, h, w], img.data)?;
        let mut p = forward_segment(&self.pnet.model, &x, None)?.probs;
        quantize(&mut p);
        Ok(p)
    }

    /// One refinement round. `round` seeds the fill of an empty scribble class.
    pub fn refine(
        &self,
        image: &ImageGrid,
        current: &ProbabilityField,
        scribbles: &ScribbleSet,
        round: u64,
    ) -> Result<ProbabilityField> {
        let rnet = self
            .rnet
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no refinement model loaded".into()))?;
        let img = self.prepare(image)?;
        let (_, h, w) = img.dims3();
        if (current.height, current.width) != (h, w) {
            return Err(Error::Shape(format!(
                "segmentation {}x{} vs image {h}x{w}",
                current.height, current.width
            )));
        }
        let constraints = scribbles.constraint_map(h, w)?;
        let encoding = rnet.encoding.unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(round);
        let x = rnet_input(&img, current, scribbles, &encoding, &mut rng)?;
        let mut p = forward_segment(&rnet.model, &x, Some(&constraints))?.probs;
        quantize(&mut p);
        Ok(p)
    }
}
