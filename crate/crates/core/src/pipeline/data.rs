use crate::error::{Error, Result};
use crate::field::Mask;
use crate::geodesic::ImageGrid;
use crate::tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Smallest accepted image side; below this the receptive field sees mostly padding.
pub const MIN_EXTENT: usize = 32;

/// Image plus ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    pub truth: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: ImageGrid, truth: Mask) -> Result<Self> {
        let (d, h, w) = image.dims3();
        if d != 1 || (truth.height, truth.width) != (h, w) {
            return Err(Error::Shape(format!(
                "image {:?} vs mask {}x{}",
                image.extents, truth.height, truth.width
            )));
        }
        Ok(Sample {
            id: id.into(),
            image,
            truth,
        })
    }

    pub fn height(&self) -> usize {
        self.truth.height
    }

    pub fn width(&self) -> usize {
        self.truth.width
    }
}

/// Generator ranges for [`synth_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub contrast: [Scalar; 2],
    pub noise_sigma: [Scalar; 2],
    pub foreground_fraction: [Scalar; 2],
    pub background_level: [Scalar; 2],
    /// Peak relative amplitude of the multiplicative bias field.
    pub bias_amplitude: Scalar,
    /// Peak relative amplitude of each boundary harmonic.
    pub boundary_wobble: Scalar,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            contrast: [0.15, 0.4],
            noise_sigma: [0.02, 0.1],
            foreground_fraction: [0.05, 0.5],
            background_level: [0.2, 0.45],
            bias_amplitude: 0.15,
            boundary_wobble: 0.12,
        }
    }
}

/// Per-sample generator draws, kept for inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub blobs: usize,
    pub background: Scalar,
    pub contrast: Scalar,
    pub noise_sigma: Scalar,
    pub foreground_fraction: Scalar,
}

struct Blob {
    cy: Scalar,
    cx: Scalar,
    ry: Scalar,
    rx: Scalar,
    angle: Scalar,
    harmonics: [(Scalar, Scalar); 3],
}

impl Blob {
    fn random(h: usize, w: usize, wobble: Scalar, rng: &mut impl Rng) -> Self {
        let side = h.min(w) as Scalar;
        let ry = rng.random_range(0.1..0.3) * side;
        let rx = ry * rng.random_range(0.6..1.6);
        let margin = 0.25;
        Blob {
            cy: rng.random_range(margin..1.0 - margin) * h as Scalar,
            cx: rng.random_range(margin..1.0 - margin) * w as Scalar,
            ry,
            rx,
            angle: rng.random_range(0.0..PI),
            harmonics: std::array::from_fn(|_| {
                (
                    rng.random_range(0.0..wobble),
                    rng.random_range(0.0..2.0 * PI),
                )
            }),
        }
    }

    fn contains(&self, y: Scalar, x: Scalar) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let theta = v.atan2(u);
        let radius = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, (a, p))| a * ((k as Scalar + 2.0) * theta + p).cos())
                .sum::<Scalar>();
        (u * u + v * v).sqrt() <= radius
    }
}

fn draw_range(r: [Scalar; 2], rng: &mut impl Rng) -> Scalar {
    if r[0] >= r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// One synthetic image: 1-2 smooth blobs brighter than the background,
/// a low-frequency multiplicative bias field and additive Gaussian noise.
pub fn synth_sample(
    id: &str,
    h: usize,
    w: usize,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<(Sample, SynthParams)> {
    if h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(Error::Invalid(format!(
            "synthetic extents {h}x{w} below the minimum {MIN_EXTENT}"
        )));
    }
    let n = h * w;
    let (truth, blobs) = loop {
        let k = rng.random_range(1..=2);
        let blobs: Vec<Blob> = (0..k)
            .map(|_| Blob::random(h, w, cfg.boundary_wobble, rng))
            .collect();
        let mut m = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                if blobs
                    .iter()
                    .any(|b| b.contains(y as Scalar + 0.5, x as Scalar + 0.5))
                {
                    m.set(y, x, 1);
                }
            }
        }
        let frac = m.count() as Scalar / n as Scalar;
        if (cfg.foreground_fraction[0]..=cfg.foreground_fraction[1]).contains(&frac) {
            break (m, k);
        }
    };
    let background = draw_range(cfg.background_level, rng);
    let contrast = draw_range(cfg.contrast, rng);
    let noise_sigma = draw_range(cfg.noise_sigma, rng);
    let amp = rng.random_range(0.0..=cfg.bias_amplitude);
    let (fy, fx) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    let (py, px) = (
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    );
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut data = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let base = background + contrast * truth.get(y, x) as Scalar;
            let ty = PI * fy * y as Scalar / h as Scalar + py;
            let tx = PI * fx * x as Scalar / w as Scalar + px;
            let bias = 1.0 + amp * 0.5 * (ty.sin() + tx.cos());
            // 8-bit levels, so a dataset written as PGM reads back unchanged
            data.push(((base * bias + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    let image = ImageGrid::new(1, &[h, w], data)?;
    let params = SynthParams {
        blobs,
        background,
        contrast,
        noise_sigma,
        foreground_fraction: truth.count() as Scalar / n as Scalar,
    };
    Ok((Sample::new(id, image, truth)?, params))
}

/// `count` samples, deterministic under `seed`.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    extents: [usize; 2],
    cfg: &SynthConfig,
) -> Result<Vec<(Sample, SynthParams)>> {
    if count < 1 {
        return Err(Error::Invalid("dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            synth_sample(
                &format!("synth_{i:05}"),
                extents[0],
                extents[1],
                cfg,
                &mut rng,
            )
        })
        .collect()
}

/// Per-channel intensity statistics of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<Scalar>,
    pub std: Vec<Scalar>,
}

impl NormStats {
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a ImageGrid>) -> Result<Self> {
        let mut sum: Vec<Scalar> = Vec::new();
        let mut sq: Vec<Scalar> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sum.is_empty() {
                sum = vec![0.0; img.channels];
                sq = vec![0.0; img.channels];
            } else if sum.len() != img.channels {
                return Err(Error::Shape("images with different channel counts".into()));
            }
            for c in 0..img.channels {
                for &v in img.channel(c) {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += img.pixels();
        }
        if count == 0 {
            return Err(Error::Invalid("no images to fit normalisation".into()));
        }
        let n = count as Scalar;
        let mean: Vec<Scalar> = sum.iter().map(|s| s / n).collect();
        let std: Vec<Scalar> = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
            .collect();
        if std.iter().any(|&s| s < 1e-12) {
            return Err(Error::Invalid("zero intensity standard deviation".into()));
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid> {
        if img.channels != self.mean.len() {
            return Err(Error::Shape(format!(
                "{} channels, stats for {}",
                img.channels,
                self.mean.len()
            )));
        }
        let n = img.pixels();
        let data = img
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i / n]) / self.std[i / n])
            .collect();
        ImageGrid::with_spacing(img.channels, &img.extents, &img.spacing, data)
    }
}

/// One random geometric transform: optional flips, then rotation and zoom
/// about the image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip_rows: bool,
    pub flip_cols: bool,
    pub angle: Scalar,
    pub zoom: Scalar,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip_rows: false,
        flip_cols: false,
        angle: 0.0,
        zoom: 1.0,
    };

    pub fn sample(rng: &mut impl Rng) -> Self {
        Augmentation {
            flip_rows: rng.random(),
            flip_cols: rng.random(),
            angle: rng.random_range(-PI / 8.0..=PI / 8.0),
            zoom: rng.random_range(0.8..=1.25),
        }
    }

    /// Source coordinate of output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (Scalar, Scalar) {
        let (cy, cx) = ((h as Scalar - 1.0) / 2.0, (w as Scalar - 1.0) / 2.0);
        let (dy, dx) = (y as Scalar - cy, x as Scalar - cx);
        let (s, c) = self.angle.sin_cos();
        let mut sy = (c * dy - s * dx) / self.zoom + cy;
        let mut sx = (s * dy + c * dx) / self.zoom + cx;
        if self.flip_rows {
            sy = h as Scalar - 1.0 - sy;
        }
        if self.flip_cols {
            sx = w as Scalar - 1.0 - sx;
        }
        (sy, sx)
    }

    /// Bilinear resampling of every channel plane; edges are clamped.
    pub fn apply_planes(
        &self,
        data: &[Scalar],
        channels: usize,
        h: usize,
        w: usize,
    ) -> Vec<Scalar> {
        let n = h * w;
        let mut out = vec![0.0; channels * n];
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h, w);
                let sy = sy.clamp(0.0, (h - 1) as Scalar);
                let sx = sx.clamp(0.0, (w - 1) as Scalar);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as Scalar, sx - x0 as Scalar);
                for c in 0..channels {
                    let p = &data[c * n..(c + 1) * n];
                    let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                    out[c * n + y * w + x] = if fy == 0.0 {
                        top
                    } else {
                        top * (1.0 - fy) + bot * fy
                    };
                }
            }
        }
        out
    }

    pub fn apply_image(&self, img: &ImageGrid) -> Result<ImageGrid> {
        let (d, h, w) = img.dims3();
        if d != 1 {
            return Err(Error::Shape("augmentation is 2-D only".into()));
        }
        let data = self.apply_planes(&img.data, img.channels, h, w);
        ImageGrid::with_spacing(img.channels, &img.extents, &img.spacing, data)
    }

    /// Nearest-neighbour resampling; pixels mapped outside stay background.
    pub fn apply_mask(&self, m: &Mask) -> Mask {
        let (h, w) = (m.height, m.width);
        let mut out = Mask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h, w);
                let (ry, rx) = (sy.round(), sx.round());
                if ry >= 0.0 && rx >= 0.0 && ry < h as Scalar && rx < w as Scalar {
                    out.set(y, x, m.get(ry as usize, rx as usize));
                }
            }
        }
        out
    }

    pub fn apply_sample(&self, s: &Sample) -> Result<Sample> {
        Sample::new(
            s.id.clone(),
            self.apply_image(&s.image)?,
            self.apply_mask(&s.truth),
        )
    }
}

/// Random flip, rotation in `[-pi/8, pi/8]` and zoom in `[0.8, 1.25]`.
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Result<Sample> {
    Augmentation::sample(rng).apply_sample(sample)
}
