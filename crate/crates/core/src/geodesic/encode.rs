use super::{
    euclidean_distance_map, geodesic_distance_map, DistanceMap, ImageGrid, ScribbleSet, SweepMode,
};
use crate::error::{Error, Result};
use crate::field::{Mask, ProbabilityField};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Geodesic,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeOptions {
    pub metric: Metric,
    pub mode: SweepMode,
    pub lambda_spatial: Scalar,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            metric: Metric::Geodesic,
            mode: SweepMode::Converged,
            lambda_spatial: 0.0,
        }
    }
}

/// The initial segmentation channel: either a probability field or a hard mask.
pub enum InitialSegmentation<'a> {
    Probability(&'a ProbabilityField),
    Mask(&'a Mask),
}

impl InitialSegmentation<'_> {
    fn foreground(&self, n: usize) -> Result<Vec<Scalar>> {
        let fg: Vec<Scalar> = match self {
            InitialSegmentation::Probability(p) => p.foreground().to_vec(),
            InitialSegmentation::Mask(m) => m.data.iter().map(|&v| v as Scalar).collect(),
        };
        if fg.len() != n {
            return Err(Error::Shape(format!(
                "initial segmentation has {} pixels, image {n}",
                fg.len()
            )));
        }
        Ok(fg)
    }
}

/// Builds the `[C_I + 3, H, W]` refinement input: image channels, the
/// foreground probability of the initial segmentation, then the foreground
/// and background scribble distance maps.
///
/// A scribble class with no pixels gets a channel of i.i.d. uniform values
/// in `[0, image diagonal]` drawn from `rng`.
pub fn encode_interactions(
    image: &ImageGrid,
    initial: InitialSegmentation<'_>,
    scribbles: &ScribbleSet,
    options: &EncodeOptions,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (d, h, w) = image.dims3();
    if d != 1 {
        return Err(Error::Shape("interaction encoding is 2-D only".into()));
    }
    scribbles.check_bounds(h, w)?;
    let n = h * w;
    let fg_prob = initial.foreground(n)?;
    let mut data = Vec::with_capacity((image.channels + 3) * n);
    data.extend_from_slice(&image.data);
    data.extend_from_slice(&fg_prob);
    let diag = image.diagonal();
    for label in [1u8, 0u8] {
        let seeds: Vec<Vec<usize>> = scribbles
            .with_label(label)
            .into_iter()
            .map(|(r, c)| vec![r, c])
            .collect();
        if seeds.is_empty() {
            data.extend((0..n).map(|_| rng.random_range(0.0..=diag)));
            continue;
        }
        let map: DistanceMap = match options.metric {
            Metric::Geodesic => {
                geodesic_distance_map(image, &seeds, options.lambda_spatial, options.mode)?
            }
            Metric::Euclidean => euclidean_distance_map(&seeds, &image.extents, &image.spacing)?,
        };
        data.extend_from_slice(&map.values);
    }
    Tensor::from_vec(&[image.channels + 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::dijkstra_geodesic_oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(rng: &mut ChaCha8Rng) -> ImageGrid {
        ImageGrid::new(
            1,
            &[12, 10],
            (0..120).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn channel_layout_and_oracle_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = image(&mut rng);
        let mask = Mask::new(12, 10);
        let mut s = ScribbleSet::new();
        s.add_foreground((3, 3));
        s.add_foreground((4, 3));
        s.add_background((10, 8));
        let t = encode_interactions(
            &img,
            InitialSegmentation::Mask(&mask),
            &s,
            &EncodeOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(t.shape(), &[4, 12, 10]);
        assert_eq!(t.channel(0), img.channel(0));
        let fg = dijkstra_geodesic_oracle(&img, &[vec![3, 3], vec![4, 3]], 0.0).unwrap();
        let bg = dijkstra_geodesic_oracle(&img, &[vec![10, 8]], 0.0).unwrap();
        let d2 = t
            .channel(2)
            .iter()
            .zip(&fg.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d3 = t
            .channel(3)
            .iter()
            .zip(&bg.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(d2 < 1e-9 && d3 < 1e-9);
    }

    #[test]
    fn empty_class_is_seeded_random_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = image(&mut rng);
        let mask = Mask::new(12, 10);
        let mut s = ScribbleSet::new();
        s.add_foreground((0, 0));
        let enc = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            encode_interactions(
                &img,
                InitialSegmentation::Mask(&mask),
                &s,
                &EncodeOptions::default(),
                &mut r,
            )
            .unwrap()
        };
        let a = enc(1);
        let diag = img.diagonal();
        assert!(a.channel(3).iter().all(|&v| (0.0..=diag).contains(&v)));
        assert_eq!(a, enc(1));
        assert_ne!(a.channel(3), enc(2).channel(3));
    }

    #[test]
    fn out_of_bounds_scribble_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = image(&mut rng);
        let mask = Mask::new(12, 10);
        let mut s = ScribbleSet::new();
        s.add_background((12, 0));
        let err = encode_interactions(
            &img,
            InitialSegmentation::Mask(&mask),
            &s,
            &EncodeOptions::default(),
            &mut rng,
        )
        .unwrap_err();
        match err {
            Error::OutOfBounds(px) => assert_eq!(px, vec![vec![12, 0]]),
            e => panic!("unexpected {e}"),
        }
    }
}
