use super::data::NormStats;
use super::data::Sample;
use super::interact::{simulate_interactions, InteractionConfig};
use super::segment::Segmenter;
use crate::error::Result;
use crate::field::Mask;
use crate::field::ProbabilityField;
use crate::netzoo::SegmentationModel;
use crate::tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Argmax masks of a P-Net on raw images, with or without its CRF head.
pub fn predict_masks(
    model: &SegmentationModel,
    norm: &NormStats,
    samples: &[Sample],
    use_crf: bool,
) -> Result<Vec<Mask>> {
    samples
        .iter()
        .map(|s| {
            let img = norm.apply(&s.image)?;
            let x = Tensor::from_vec(&[img.channels, s.height(), s.width()], img.data)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let out = model.forward(&mut tape, xv, use_crf, None)?;
            Ok(ProbabilityField::from_tensor(tape.value(out.probs))?.mask())
        })
        .collect()
}

/// One simulated refinement round per sample.
#[derive(Clone, Debug)]
pub struct RefinementRound {
    pub initial: Vec<Mask>,
    pub refined: Vec<Mask>,
    /// Scribbled pixels per sample.
    pub clicks: Vec<usize>,
}

/// Proposal, simulated clicks against the ground truth, then one refinement.
/// Clicks for sample `i` are drawn from a generator seeded with `seed + i`,
/// so two segmenters sharing a P-Net see identical clicks.
pub fn simulate_round(
    seg: &Segmenter,
    samples: &[Sample],
    interaction: &InteractionConfig,
    seed: u64,
) -> Result<RefinementRound> {
    let mut out = RefinementRound {
        initial: Vec::new(),
        refined: Vec::new(),
        clicks: Vec::new(),
    };
    for (i, s) in samples.iter().enumerate() {
        let initial = seg.propose(&s.image)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let clicks = simulate_interactions(&initial.mask(), &s.truth, interaction, &mut rng)?;
        let refined = if clicks.is_empty() {
            initial.clone()
        } else {
            seg.refine(&s.image, &initial, &clicks, 1)?
        };
        out.initial.push(initial.mask());
        out.refined.push(refined.mask());
        out.clicks.push(clicks.len());
    }
    Ok(out)
}
