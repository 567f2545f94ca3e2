//! wasm-bindgen bindings for the static demo page in `www/`.

use geoseg_core::geodesic::{euclidean_distance_map, geodesic_distance_map, ImageGrid, SweepMode};
use geoseg_core::netzoo::{dilation_schedule, receptive_field};
use geoseg_core::pipeline::{synth_sample, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthetic blob image, row-major intensities in `[0, 1]`.
#[wasm_bindgen]
pub fn synth_image(seed: u64, height: usize, width: usize) -> Result<Vec<f32>, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, _) =
        synth_sample("demo", height, width, &SynthConfig::default(), &mut rng).map_err(js_err)?;
    Ok(s.image.data.iter().map(|&v| v as f32).collect())
}

/// Geodesic map followed by the Euclidean map, each `height * width`, from
/// the seed pixels given as flat `[row, col, row, col, ...]`.
#[wasm_bindgen]
pub fn distance_maps(
    image: &[f32],
    height: usize,
    width: usize,
    seeds: &[u32],
    lambda: f64,
) -> Result<Vec<f32>, JsError> {
    let img = ImageGrid::new(
        1,
        &[height, width],
        image.iter().map(|&v| v as f64).collect(),
    )
    .map_err(js_err)?;
    let seeds: Vec<Vec<usize>> = seeds
        .chunks_exact(2)
        .map(|p| vec![p[0] as usize, p[1] as usize])
        .collect();
    let geo = geodesic_distance_map(&img, &seeds, lambda, SweepMode::Converged).map_err(js_err)?;
    let euc = euclidean_distance_map(&seeds, &[height, width], &[1.0, 1.0]).map_err(js_err)?;
    Ok(geo
        .values
        .iter()
        .chain(&euc.values)
        .map(|&v| v as f32)
        .collect())
}

/// `[dilation, receptive field]` for blocks 1 to 5.
#[wasm_bindgen]
pub fn receptive_fields(base_dilation: usize) -> Result<Vec<u32>, JsError> {
    let mut out = Vec::with_capacity(10);
    for block in 1..=5 {
        out.push(dilation_schedule(block, base_dilation).map_err(js_err)? as u32);
        out.push(receptive_field(block, base_dilation, 1).map_err(js_err)? as u32);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_agree_with_core() {
        assert_eq!(
            receptive_fields(1).unwrap(),
            vec![1, 5, 2, 13, 4, 37, 8, 85, 16, 181]
        );
        let img = synth_image(3, 32, 32).unwrap();
        assert_eq!(img.len(), 1024);
        let maps = distance_maps(&img, 32, 32, &[5, 5], 0.0).unwrap();
        assert_eq!(maps.len(), 2048);
        assert_eq!((maps[5 * 32 + 5], maps[1024 + 5 * 32 + 5]), (0.0, 0.0));
        assert!((maps[1024] - (50f32).sqrt()).abs() < 1e-6);
    }
}
