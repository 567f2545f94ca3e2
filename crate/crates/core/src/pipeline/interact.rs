use crate::error::{Error, Result};
use crate::field::Mask;
use crate::geodesic::ScribbleSet;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Regions smaller than this get no clicks.
pub const MIN_REGION: usize = 30;

/// Clicks for a mis-segmented region of `n` pixels: 0 below
/// [`MIN_REGION`], otherwise `ceil(n / 100)`.
pub fn clicks_for_region(n: usize) -> usize {
    if n < MIN_REGION {
        0
    } else {
        n.div_ceil(100)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    /// Chebyshev radius painted around each click, clipped to its region.
    pub brush_radius: usize,
}

/// 4-connected components of the pixels where `select` holds, row-major order.
pub fn components(h: usize, w: usize, select: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || !select(start) {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut i = 0;
        while i < comp.len() {
            let p = comp[i];
            i += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && select(q) {
                    seen[q] = true;
                    comp.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Simulated user clicks that correct `pred` towards `truth`.
///
/// Under-segmented regions (truth 1, pred 0) receive foreground clicks and
/// over-segmented regions background clicks, sampled uniformly without
/// replacement inside each 4-connected region.
pub fn simulate_interactions(
    pred: &Mask,
    truth: &Mask,
    cfg: &InteractionConfig,
    rng: &mut impl Rng,
) -> Result<ScribbleSet> {
    if !pred.same_extents(truth) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let (h, w) = (truth.height, truth.width);
    let mut out = ScribbleSet::new();
    for label in [1u8, 0u8] {
        let wrong = |p: usize| truth.data[p] == label && pred.data[p] != label;
        for comp in components(h, w, wrong) {
            let n = clicks_for_region(comp.len());
            if n == 0 {
                continue;
            }
            let r = cfg.brush_radius as isize;
            for k in index::sample(rng, comp.len(), n) {
                let p = comp[k];
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if comp.binary_search(&q).is_ok() {
                            out.insert((ny as usize, nx as usize), label);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn click_rule() {
        assert_eq!(clicks_for_region(29), 0);
        assert_eq!(clicks_for_region(30), 1);
        assert_eq!(clicks_for_region(100), 1);
        assert_eq!(clicks_for_region(101), 2);
        assert_eq!(clicks_for_region(250), 3);
    }

    #[test]
    fn perfect_prediction_gives_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mask::from_vec(8, 8, (0..64).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        assert!(
            simulate_interactions(&m, &m, &InteractionConfig::default(), &mut rng)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn region_sizes_drive_click_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, w) = (40, 40);
        let pred = Mask::new(h, w);
        let mut truth = Mask::new(h, w);
        // 29-pixel and 250-pixel under-segmented regions, far apart
        for i in 0..29 {
            truth.set(0, i, 1);
        }
        for i in 0..250 {
            truth.set(10 + i / 25, 5 + i % 25, 1);
        }
        let s =
            simulate_interactions(&pred, &truth, &InteractionConfig::default(), &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|((y, _), l)| l == 1 && y >= 10));
    }
}
