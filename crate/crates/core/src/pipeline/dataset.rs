//! Dataset directories: `images/<id>.pgm`, `masks/<id>.pgm`, `manifest.json`.

use super::data::{Sample, SynthParams};
use crate::error::{Error, Result};
use crate::imageio::{read_image, write_volume, Pgm};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    /// Relative to the dataset directory.
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub samples: Vec<DatasetEntry>,
}

fn is_8bit_plane(s: &Sample) -> bool {
    s.image.channels == 1
        && s.image
            .data
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v) && ((v * 255.0).round() / 255.0) == v)
}

/// Writes samples; images that are not exact 8-bit planes go to `.f32` volumes.
pub fn write_dataset(
    dir: &Path,
    samples: &[(Sample, Option<SynthParams>)],
    seed: Option<u64>,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (s, params) in samples {
        let image = if is_8bit_plane(s) {
            let rel = format!("images/{}.pgm", s.id);
            Pgm::from_image(&s.image)?.write(&dir.join(&rel))?;
            rel
        } else {
            let rel = format!("images/{}.f32", s.id);
            write_volume(&dir.join(&rel), &s.image)?;
            rel
        };
        let mask = format!("masks/{}.pgm", s.id);
        Pgm::from_mask(&s.truth).write(&dir.join(&mask))?;
        entries.push(DatasetEntry {
            id: s.id.clone(),
            image,
            mask,
            synth: params.clone(),
        });
    }
    let manifest = DatasetManifest {
        seed,
        samples: entries,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Reads every sample listed in `manifest.json`.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(&path)?)?;
    if manifest.samples.is_empty() {
        return Err(Error::Invalid(format!(
            "{} lists no samples",
            path.display()
        )));
    }
    manifest
        .samples
        .iter()
        .map(|e| {
            let image = read_image(&dir.join(&e.image))?;
            let truth = Pgm::read(&dir.join(&e.mask))?.to_mask();
            Sample::new(e.id.clone(), image, truth)
        })
        .collect()
}
