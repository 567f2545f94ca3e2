//! On-disk segmentation outputs shared by the command line and the session store.

use geoseg_core::field::ProbabilityField;
use geoseg_core::geodesic::ImageGrid;
use geoseg_core::imageio::{read_volume, write_volume, Pgm};
use geoseg_core::Result;
use std::path::{Path, PathBuf};

pub const MASK_FILE: &str = "mask.pgm";
pub const PROBABILITY_FILE: &str = "probability.f32";

/// Writes `mask.pgm` (0/255) and `probability.f32` (foreground, with sidecar).
pub fn write_segmentation(dir: &Path, p: &ProbabilityField) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let mask = dir.join(MASK_FILE);
    let prob = dir.join(PROBABILITY_FILE);
    Pgm::from_mask(&p.mask()).write(&mask)?;
    write_volume(
        &prob,
        &ImageGrid::new(1, &[p.height, p.width], p.foreground().to_vec())?,
    )?;
    Ok((mask, prob))
}

/// Reads a foreground probability volume written by [`write_segmentation`].
pub fn read_probability(path: &Path) -> Result<ProbabilityField> {
    let v = read_volume(path)?;
    let (d, h, w) = v.dims3();
    if d != 1 || v.channels != 1 {
        return Err(geoseg_core::Error::Shape(
            "probability map must be one 2-D channel".into(),
        ));
    }
    ProbabilityField::from_foreground(h, w, &v.data)
}
