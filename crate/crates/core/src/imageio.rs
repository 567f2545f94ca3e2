//! Binary PGM and raw float volumes with a JSON sidecar.

use crate::error::{Error, Result};
use crate::field::Mask;
use crate::geodesic::ImageGrid;
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Grey image as stored in a P5 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

impl Pgm {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        if header_token(bytes, &mut pos)? != "P5" {
            return Err(Error::Format("not a binary PGM (P5)".into()));
        }
        let mut num = |what: &str| -> Result<usize> {
            header_token(bytes, &mut pos)?
                .parse()
                .map_err(|_| Error::Format(format!("bad PGM {what}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Format("PGM has zero extent".into()));
        }
        if !(1..=65535).contains(&maxval) {
            return Err(Error::Format(format!(
                "PGM maxval {maxval} outside 1..=65535"
            )));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let n = width * height;
        let bpp = if maxval < 256 { 1 } else { 2 };
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() < n * bpp {
            return Err(Error::Format(format!(
                "PGM raster holds {} bytes, expected {}",
                raster.len(),
                n * bpp
            )));
        }
        let pixels: Vec<u16> = if bpp == 1 {
            raster[..n].iter().map(|&b| b as u16).collect()
        } else {
            raster[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        if pixels.iter().any(|&p| p as usize > maxval) {
            return Err(Error::Format("PGM sample exceeds maxval".into()));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            pixels,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        } else {
            out.extend(self.pixels.iter().flat_map(|p| p.to_be_bytes()));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_image(&self) -> ImageGrid {
        let m = self.maxval as Scalar;
        let data = self.pixels.iter().map(|&p| p as Scalar / m).collect();
        ImageGrid::new(1, &[self.height, self.width], data).expect("extents match pixel count")
    }

    /// 8-bit encoding of a single-channel image in `[0, 1]` (clamped).
    pub fn from_image(img: &ImageGrid) -> Result<Self> {
        let (d, h, w) = img.dims3();
        if d != 1 || img.channels != 1 {
            return Err(Error::Shape("PGM holds one 2-D channel".into()));
        }
        let pixels = img
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u16)
            .collect();
        Ok(Pgm {
            width: w,
            height: h,
            maxval: 255,
            pixels,
        })
    }

    /// Nonzero pixels are foreground.
    pub fn to_mask(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.pixels.iter().map(|&p| (p > 0) as u8).collect(),
        }
    }

    /// Mask as 0/255.
    pub fn from_mask(mask: &Mask) -> Self {
        Pgm {
            width: mask.width,
            height: mask.height,
            maxval: 255,
            pixels: mask
                .data
                .iter()
                .map(|&v| if v == 1 { 255 } else { 0 })
                .collect(),
        }
    }
}

/// Sidecar for a raw little-endian f32 volume, channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub extents: Vec<usize>,
    pub spacing: Vec<Scalar>,
    pub channels: usize,
}

pub fn encode_f32_le(values: &[Scalar]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn decode_f32_le(bytes: &[u8]) -> Result<Vec<Scalar>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Scalar)
        .collect())
}

/// Writes `<path>` (raw f32) and `<path>.json` (header).
pub fn write_volume(path: &Path, img: &ImageGrid) -> Result<()> {
    let header = VolumeHeader {
        extents: img.extents.clone(),
        spacing: img.spacing.clone(),
        channels: img.channels,
    };
    std::fs::write(path, encode_f32_le(&img.data))?;
    std::fs::write(sidecar(path), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<ImageGrid> {
    let header: VolumeHeader = serde_json::from_slice(&std::fs::read(sidecar(path))?)?;
    let data = decode_f32_le(&std::fs::read(path)?)?;
    let expected = header.channels * header.extents.iter().product::<usize>();
    if data.len() != expected {
        return Err(Error::Format(format!(
            "volume holds {} values, header declares {expected}",
            data.len()
        )));
    }
    ImageGrid::with_spacing(header.channels, &header.extents, &header.spacing, data)
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reads a `.pgm` or raw `.f32` image by extension.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(Pgm::read(path)?.to_image()),
        Some("f32") => read_volume(path),
        _ => Err(Error::Format(format!(
            "unsupported image file {}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trips() {
        for maxval in [255u16, 1000] {
            let p = Pgm {
                width: 3,
                height: 2,
                maxval,
                pixels: vec![0, 1, 2, 3, maxval, 7],
            };
            assert_eq!(Pgm::decode(&p.encode()).unwrap(), p);
        }
    }

    #[test]
    fn header_comments_and_errors() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend([4, 200]);
        assert_eq!(Pgm::decode(&b).unwrap().pixels, vec![4, 200]);
        assert!(Pgm::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Pgm::decode(b"P5\n2 2\n255\n\x01").is_err());
        assert!(Pgm::decode(b"P5\n0 2\n255\n").is_err());
    }

    #[test]
    fn mask_round_trip() {
        let m = Mask::from_vec(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(
            Pgm::decode(&Pgm::from_mask(&m).encode()).unwrap().to_mask(),
            m
        );
    }

    #[test]
    fn volume_round_trip() {
        let dir = std::env::temp_dir().join(format!("geoseg-vol-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = ImageGrid::with_spacing(
            2,
            &[2, 3],
            &[1.0, 0.5],
            (0..12).map(|v| v as f64 * 0.25).collect(),
        )
        .unwrap();
        let p = dir.join("v.f32");
        write_volume(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
        std::fs::write(&p, [0u8; 8]).unwrap();
        assert!(read_volume(&p).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
