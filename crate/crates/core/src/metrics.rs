//! Segmentation quality measures and paired significance testing.

use crate::error::{Error, Result};
use crate::field::Mask;
use crate::geodesic::euclidean_distance_map;
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::fmt::Write as _;

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<Scalar> {
    if !a.same_extents(b) {
        return Err(Error::Shape(format!(
            "dice of {}x{} and {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as Scalar / total as Scalar)
}

/// Surface points of a mask on its pixel grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surface {
    pub height: usize,
    pub width: usize,
    pub points: Vec<(usize, usize)>,
}

impl Surface {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Foreground pixels with at least one background 4-neighbour; pixels
/// outside the image count as background.
pub fn extract_surface(mask: &Mask) -> Surface {
    let (h, w) = (mask.height, mask.width);
    let fg = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && y < h as isize
            && x < w as isize
            && mask.get(y as usize, x as usize) == 1
    };
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !(fg(yi - 1, xi) && fg(yi + 1, xi) && fg(yi, xi - 1) && fg(yi, xi + 1)) {
                points.push((y, x));
            }
        }
    }
    Surface {
        height: h,
        width: w,
        points,
    }
}

/// Average symmetric surface distance with `spacing = [row, col]`.
pub fn assd(a: &Surface, b: &Surface, spacing: [Scalar; 2]) -> Result<Scalar> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySeeds);
    }
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::Shape(
            "surfaces come from grids of different extents".into(),
        ));
    }
    let ext = [a.height, a.width];
    let seeds = |s: &Surface| {
        s.points
            .iter()
            .map(|&(y, x)| vec![y, x])
            .collect::<Vec<_>>()
    };
    let to_b = euclidean_distance_map(&seeds(b), &ext, &spacing)?;
    let to_a = euclidean_distance_map(&seeds(a), &ext, &spacing)?;
    let sum_a: Scalar = a
        .points
        .iter()
        .map(|&(y, x)| to_b.values[y * a.width + x])
        .sum();
    let sum_b: Scalar = b
        .points
        .iter()
        .map(|&(y, x)| to_a.values[y * a.width + x])
        .sum();
    Ok((sum_a + sum_b) / (a.len() + b.len()) as Scalar)
}

/// ASSD between two masks; `None` when either surface is empty.
pub fn mask_assd(a: &Mask, b: &Mask, spacing: [Scalar; 2]) -> Result<Option<Scalar>> {
    if !a.same_extents(b) {
        return Err(Error::Shape("assd of masks with different extents".into()));
    }
    let (sa, sb) = (extract_surface(a), extract_surface(b));
    if sa.is_empty() || sb.is_empty() {
        return Ok(None);
    }
    assd(&sa, &sb, spacing).map(Some)
}

/// Two-sided paired Student t-test p-value.
///
/// All-zero differences give 1; a nonzero constant difference gives 0.
pub fn paired_t_test(a: &[Scalar], b: &[Scalar]) -> Result<Scalar> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Invalid(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let n = a.len() as Scalar;
    let d: Vec<Scalar> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<Scalar>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<Scalar>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

pub fn mean_std(v: &[Scalar]) -> (Scalar, Scalar) {
    if v.is_empty() {
        return (Scalar::NAN, Scalar::NAN);
    }
    let n = v.len() as Scalar;
    let m = v.iter().sum::<Scalar>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<Scalar>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub name: String,
    pub dice: Vec<Scalar>,
    /// `None` where a surface was empty.
    pub assd: Vec<Option<Scalar>>,
    pub dice_mean: Scalar,
    pub dice_std: Scalar,
    /// `None` when no sample has a defined ASSD.
    pub assd_mean: Option<Scalar>,
    pub assd_std: Option<Scalar>,
    pub assd_undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub dice_p: Scalar,
    /// Over samples where both ASSD values are defined; `None` with fewer than two.
    pub assd_p: Option<Scalar>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub methods: Vec<MethodResult>,
    pub comparisons: Vec<Comparison>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_method(
        &mut self,
        name: &str,
        preds: &[Mask],
        truths: &[Mask],
        spacing: [Scalar; 2],
    ) -> Result<&MethodResult> {
        if preds.len() != truths.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} ground truths",
                preds.len(),
                truths.len()
            )));
        }
        let mut d = Vec::with_capacity(preds.len());
        let mut a = Vec::with_capacity(preds.len());
        for (p, t) in preds.iter().zip(truths) {
            d.push(dice(p, t)?);
            a.push(mask_assd(p, t, spacing)?);
        }
        let defined: Vec<Scalar> = a.iter().flatten().copied().collect();
        let (dice_mean, dice_std) = mean_std(&d);
        let (assd_mean, assd_std) = if defined.is_empty() {
            (None, None)
        } else {
            let (m, sd) = mean_std(&defined);
            (Some(m), Some(sd))
        };
        self.methods.push(MethodResult {
            name: name.to_string(),
            assd_undefined: a.len() - defined.len(),
            dice: d,
            assd: a,
            dice_mean,
            dice_std,
            assd_mean,
            assd_std,
        });
        Ok(self.methods.last().unwrap())
    }

    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn compare(&mut self, a: &str, b: &str) -> Result<&Comparison> {
        let (ma, mb) = match (self.method(a), self.method(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown method in comparison {a} vs {b}"
                )))
            }
        };
        let dice_p = paired_t_test(&ma.dice, &mb.dice)?;
        let (xa, xb): (Vec<Scalar>, Vec<Scalar>) = ma
            .assd
            .iter()
            .zip(&mb.assd)
            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
            .unzip();
        let assd_p = if xa.len() >= 2 {
            Some(paired_t_test(&xa, &xb)?)
        } else {
            None
        };
        self.comparisons.push(Comparison {
            a: a.into(),
            b: b.into(),
            dice_p,
            assd_p,
        });
        Ok(self.comparisons.last().unwrap())
    }

    /// Aligned text table: one row per method, then the p-values.
    pub fn to_table(&self) -> String {
        let width = self
            .methods
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>15}  {:>15}",
            "Method", "Dice(%)", "ASSD(pixels)"
        );
        for m in &self.methods {
            let dice = format!("{:.2}±{:.2}", 100.0 * m.dice_mean, 100.0 * m.dice_std);
            let assd = match (m.assd_mean, m.assd_std) {
                (Some(a), Some(b)) => format!("{a:.2}±{b:.2}"),
                _ => "n/a".to_string(),
            };
            let _ = write!(s, "{:<width$}  {:>15}  {:>15}", m.name, dice, assd);
            if m.assd_undefined > 0 {
                let _ = write!(s, "  ({} undefined ASSD)", m.assd_undefined);
            }
            s.push('\n');
        }
        for c in &self.comparisons {
            let ap = c.assd_p.map_or("n/a".to_string(), |p| format!("{p:.3e}"));
            let _ = writeln!(
                s,
                "p({} vs {}): Dice {:.3e}, ASSD {}",
                c.a, c.b, c.dice_p, ap
            );
        }
        s
    }
}
