//! JSON bodies of the HTTP API. Masks travel as base64 PGM, probability maps
//! as base64 little-endian f32 foreground probabilities with their extents.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use geoseg_core::field::{Mask, ProbabilityField};
use geoseg_core::geodesic::{ImageGrid, ScribbleSet};
use geoseg_core::imageio::{decode_f32_le, encode_f32_le, Pgm};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error(transparent)]
    Core(#[from] geoseg_core::Error),
}

pub fn encode_mask(mask: &Mask) -> String {
    STANDARD.encode(Pgm::from_mask(mask).encode())
}

pub fn decode_mask(s: &str) -> Result<Mask, WireError> {
    Ok(Pgm::decode(&STANDARD.decode(s)?)?.to_mask())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityWire {
    /// `[height, width]`.
    pub extents: [usize; 2],
    pub data: String,
}

impl ProbabilityWire {
    pub fn encode(p: &ProbabilityField) -> Self {
        ProbabilityWire {
            extents: [p.height, p.width],
            data: STANDARD.encode(encode_f32_le(p.foreground())),
        }
    }

    pub fn decode(&self) -> Result<ProbabilityField, WireError> {
        let fg = decode_f32_le(&STANDARD.decode(&self.data)?)?;
        Ok(ProbabilityField::from_foreground(
            self.extents[0],
            self.extents[1],
            &fg,
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum ImageWire {
    /// Base64 binary PGM.
    Pgm { data: String },
    /// Base64 little-endian f32, channel-major.
    F32 {
        extents: [usize; 2],
        #[serde(default = "one")]
        channels: usize,
        data: String,
    },
}

fn one() -> usize {
    1
}

impl ImageWire {
    pub fn from_pgm_bytes(bytes: &[u8]) -> Self {
        ImageWire::Pgm {
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<ImageGrid, WireError> {
        match self {
            ImageWire::Pgm { data } => Ok(Pgm::decode(&STANDARD.decode(data)?)?.to_image()),
            ImageWire::F32 {
                extents,
                channels,
                data,
            } => {
                let values = decode_f32_le(&STANDARD.decode(data)?)?;
                Ok(ImageGrid::new(*channels, extents, values)?)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScribbleWire {
    /// `[row, col]`.
    pub pixel: [usize; 2],
    /// 1 foreground, 0 background.
    pub label: u8,
}

pub fn scribbles_to_wire(set: &ScribbleSet) -> Vec<ScribbleWire> {
    set.iter()
        .map(|((r, c), label)| ScribbleWire {
            pixel: [r, c],
            label,
        })
        .collect()
}

pub fn scribbles_from_wire(list: &[ScribbleWire]) -> ScribbleSet {
    let mut set = ScribbleSet::new();
    for s in list {
        set.insert((s.pixel[0], s.pixel[1]), s.label);
    }
    set
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub image: ImageWire,
    #[serde(default)]
    pub pnet: Option<String>,
    #[serde(default)]
    pub rnet: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitScribbles {
    pub scribbles: Vec<ScribbleWire>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScribbleReceipt {
    /// Pixels whose label was new or changed.
    pub accepted: usize,
    /// Distinct scribbled pixels in the session.
    pub total: usize,
    /// Scribbles received since the last refinement.
    pub pending: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub mask: String,
    pub probability: ProbabilityWire,
}

impl Segmentation {
    pub fn encode(p: &ProbabilityField) -> Self {
        Segmentation {
            mask: encode_mask(&p.mask()),
            probability: ProbabilityWire::encode(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pnet: String,
    pub rnet: String,
    pub round: u64,
    pub scribbles: Vec<ScribbleWire>,
    pub pending: usize,
    pub created: u64,
    pub updated: u64,
    #[serde(flatten)]
    pub segmentation: Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    /// True when nothing changed because no scribbles arrived since the last round.
    pub noop: bool,
    pub round: u64,
    #[serde(flatten)]
    pub segmentation: Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskExport {
    pub extents: [usize; 2],
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<Vec<usize>>>,
}
