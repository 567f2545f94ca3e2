use super::checkpoint::{HistoryEntry, ModelCheckpoint};
use super::data::{Augmentation, NormStats, Sample};
use super::interact::{simulate_interactions, InteractionConfig};
use super::segment::rnet_input;
use crate::crf::{
    generate_pretrain_set, pretrain_pairwise_net, PretrainConfig, PretrainReport, PretrainSetConfig,
};
use crate::error::{Error, Result};
use crate::field::{Mask, ProbabilityField};
use crate::geodesic::{EncodeOptions, ImageGrid};
use crate::metrics::dice;
use crate::netzoo::{
    build_model, forward_segment, CrfVariant, NetworkConfig, NetworkKind, SegmentationModel,
};
use crate::tensor::{ParamStore, Scalar, Sgd, SgdConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub iterations: usize,
    pub sgd: SgdConfig,
}

impl StageConfig {
    fn with(iterations: usize, learning_rate: Scalar) -> Self {
        StageConfig {
            iterations,
            sgd: SgdConfig {
                learning_rate,
                ..SgdConfig::default()
            },
        }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::with(1000, 1e-3)
    }
}

/// Desk-scale training schedule for both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub network: NetworkConfig,
    /// P-Net alone, softmax cross-entropy.
    pub stage1: StageConfig,
    /// Pairwise-Net pre-training.
    pub stage2: PretrainConfig,
    pub pretrain_set: PretrainSetConfig,
    /// P-Net with CRF head, end to end.
    pub stage3: StageConfig,
    /// R-Net alone.
    pub rnet_stage1: StageConfig,
    /// R-Net with constrained CRF head.
    pub rnet_stage3: StageConfig,
    pub augment: bool,
    pub encoding: EncodeOptions,
    pub interaction: InteractionConfig,
    /// Validation Dice is recorded every this many iterations (0 disables).
    pub validate_every: usize,
    /// Cap on validation samples per check.
    pub validation_samples: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            network: NetworkConfig::pnet(1),
            stage1: StageConfig::with(8000, 1e-3),
            stage2: PretrainConfig::default(),
            pretrain_set: PretrainSetConfig::default(),
            stage3: StageConfig::with(3000, 1e-6),
            rnet_stage1: StageConfig::with(4000, 1e-3),
            rnet_stage3: StageConfig::with(500, 1e-6),
            augment: true,
            encoding: EncodeOptions::default(),
            interaction: InteractionConfig::default(),
            validate_every: 1000,
            validation_samples: 20,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        for s in [
            &self.stage1,
            &self.stage3,
            &self.rnet_stage1,
            &self.rnet_stage3,
        ] {
            s.sgd.validate()?;
            if s.sgd.learning_rate <= 0.0 {
                return Err(Error::Config("learning rates must be positive".into()));
            }
        }
        self.stage2.sgd.validate()?;
        Ok(())
    }
}

/// Result of a training run. `aborted` is set when a non-finite loss or
/// gradient stopped training; the model then holds the last good parameters.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub pairwise: Option<PretrainReport>,
    pub aborted: Option<String>,
}

/// One training example: network input, labels, optional constraints.
struct Example {
    input: Tensor,
    labels: Vec<u8>,
    constraints: Option<Vec<Option<u8>>>,
}

fn image_tensor(img: &ImageGrid) -> Result<Tensor> {
    let (_, h, w) = img.dims3();
    Tensor::from_vec(&[img.channels, h, w], img.data.clone())
}

/// Fraction-of-samples Dice of the model's argmax on `val`.
fn validation_dice(model: &SegmentationModel, val: &[ValItem], use_crf: bool) -> Result<Scalar> {
    if val.is_empty() {
        return Ok(Scalar::NAN);
    }
    let mut total = 0.0;
    for (x, truth, constraints) in val {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = model.forward(&mut tape, xv, use_crf, constraints.as_deref())?;
        let pred = ProbabilityField::from_tensor(tape.value(out.probs))?.mask();
        total += dice(&pred, truth)?;
    }
    Ok(total / val.len() as Scalar)
}

type ValItem = (Tensor, Mask, Option<Vec<Option<u8>>>);

struct StageRun<'a> {
    name: &'a str,
    cfg: &'a StageConfig,
    use_crf: bool,
}

/// Runs one SGD stage; returns the completed iterations and the abort
/// reason if it stopped early.
fn run_stage<R: Rng>(
    model: &mut SegmentationModel,
    run: StageRun<'_>,
    plan: &TrainPlan,
    val: &[ValItem],
    history: &mut Vec<HistoryEntry>,
    rng: &mut R,
    mut next: impl FnMut(&SegmentationModel, &mut R) -> Result<Example>,
) -> Result<(usize, Option<String>)> {
    let mut sgd = Sgd::new(run.cfg.sgd.clone())?;
    let batch = run.cfg.sgd.minibatch.max(1);
    let mut last_good: ParamStore = model.store.clone();
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    for it in 0..run.cfg.iterations {
        model.store.zero_grads();
        for _ in 0..batch {
            let ex = next(model, rng)?;
            let mut tape = Tape::new();
            let x = tape.constant(ex.input);
            let out = model.forward(&mut tape, x, run.use_crf, ex.constraints.as_deref())?;
            let loss = tape.cross_entropy(out.probs, &ex.labels)?;
            let lv = tape.value(loss).data()[0];
            if !lv.is_finite() {
                model.store = last_good;
                return Ok((
                    it,
                    Some(format!("{}: non-finite loss at iteration {it}", run.name)),
                ));
            }
            let loss = if batch > 1 {
                tape.scale(loss, 1.0 / batch as Scalar)
            } else {
                loss
            };
            tape.backward(loss)?;
            tape.write_grads(&mut model.store);
            loss_sum += lv;
            loss_n += 1;
        }
        if let Err(e) = sgd.step(&mut model.store, it) {
            model.store = last_good;
            return Ok((it, Some(format!("{}: {e}", run.name))));
        }
        if model
            .store
            .ids()
            .any(|id| !model.store.get(id).value.all_finite())
        {
            model.store = last_good;
            return Ok((
                it,
                Some(format!(
                    "{}: non-finite parameters at iteration {it}",
                    run.name
                )),
            ));
        }
        let done = it + 1;
        let checkpoint_now = plan.validate_every > 0
            && (done % plan.validate_every == 0 || done == run.cfg.iterations);
        if checkpoint_now {
            let val_dice = if val.is_empty() {
                None
            } else {
                Some(validation_dice(model, val, run.use_crf)?)
            };
            history.push(HistoryEntry {
                stage: run.name.to_string(),
                iteration: done,
                train_loss: loss_sum / loss_n.max(1) as Scalar,
                val_dice,
            });
            loss_sum = 0.0;
            loss_n = 0;
            last_good = model.store.clone();
        }
    }
    Ok((run.cfg.iterations, None))
}

fn prepared(samples: &[Sample], norm: &NormStats) -> Result<Vec<(ImageGrid, Mask)>> {
    samples
        .iter()
        .map(|s| Ok((norm.apply(&s.image)?, s.truth.clone())))
        .collect()
}

fn cycle_index(order: &mut [usize], cursor: &mut usize, rng: &mut impl Rng) -> usize {
    if *cursor >= order.len() {
        order.shuffle(rng);
        *cursor = 0;
    }
    *cursor += 1;
    order[*cursor - 1]
}

/// Three-stage P-Net training: P-Net alone, Pairwise-Net pre-training,
/// then P-Net with its CRF head end to end.
pub fn train_pnet(
    train: &[Sample],
    val: &[Sample],
    plan: &TrainPlan,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let norm = NormStats::fit(train.iter().map(|s| &s.image))?;
    let mut cfg = NetworkConfig {
        kind: NetworkKind::Pnet,
        ..plan.network.clone()
    };
    cfg.image_channels = norm.mean.len();
    cfg.crf_feature_scale = norm.std[0];
    let mut model = build_model(&cfg, rng)?;
    let data = prepared(train, &norm)?;
    let val: Vec<ValItem> = prepared(&val[..val.len().min(plan.validation_samples)], &norm)?
        .into_iter()
        .map(|(i, m)| Ok((image_tensor(&i)?, m, None)))
        .collect::<Result<_>>()?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let augment = plan.augment;
    let mut pnet_example = |_: &SegmentationModel, rng: &mut _| -> Result<Example> {
        let (img, truth) = &data[cycle_index(&mut order, &mut cursor, rng)];
        let aug = if augment {
            Augmentation::sample(rng)
        } else {
            Augmentation::IDENTITY
        };
        let img = aug.apply_image(img)?;
        let truth = aug.apply_mask(truth);
        Ok(Example {
            input: image_tensor(&img)?,
            labels: truth.data,
            constraints: None,
        })
    };

    let run = StageRun {
        name: "stage1",
        cfg: &plan.stage1,
        use_crf: false,
    };
    let (mut iteration, mut aborted) = run_stage(
        &mut model,
        run,
        plan,
        &val,
        &mut history,
        rng,
        &mut pnet_example,
    )?;
    let mut pairwise = None;
    if aborted.is_none() {
        if let Some(head) = model.crf.clone() {
            let set = generate_pretrain_set(cfg.image_channels, &plan.pretrain_set, rng)?;
            let report =
                pretrain_pairwise_net(&head.pairwise, &mut model.store, &set, &plan.stage2, rng)?;
            history.push(HistoryEntry {
                stage: "stage2".into(),
                iteration: report.epoch_train_mse.len(),
                train_loss: report.holdout_mse,
                val_dice: None,
            });
            pairwise = Some(report);
            let run = StageRun {
                name: "stage3",
                cfg: &plan.stage3,
                use_crf: true,
            };
            let (n, a) = run_stage(
                &mut model,
                run,
                plan,
                &val,
                &mut history,
                rng,
                &mut pnet_example,
            )?;
            iteration += n;
            aborted = a;
        }
    }
    let mut checkpoint = ModelCheckpoint {
        model,
        norm,
        encoding: None,
        iteration,
        seed,
        history,
    };
    checkpoint.round_params();
    Ok(TrainOutcome {
        checkpoint,
        pairwise,
        aborted,
    })
}

/// Initial segmentation the refinement network sees for a normalised image.
pub fn proposal(pnet: &SegmentationModel, img: &ImageGrid) -> Result<ProbabilityField> {
    Ok(forward_segment(pnet, &image_tensor(img)?, None)?.probs)
}

/// R-Net training from simulated interactions on P-Net proposals.
///
/// The R-Net starts from the P-Net weights (the extra input channels of the
/// first convolution keep their fresh initialisation) and CRF head.
pub fn train_rnet(
    train: &[Sample],
    val: &[Sample],
    pnet: &ModelCheckpoint,
    plan: &TrainPlan,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let norm = pnet.norm.clone();
    let pcfg = &pnet.model.config;
    let cfg = NetworkConfig {
        kind: NetworkKind::Rnet,
        crf: if pcfg.crf == CrfVariant::None {
            CrfVariant::None
        } else {
            CrfVariant::Fu
        },
        ..pcfg.clone()
    };
    let mut model = build_model(&cfg, rng)?;
    warm_start(&mut model, &pnet.model)?;

    let data: Vec<(ImageGrid, Mask, ProbabilityField)> = prepared(train, &norm)?
        .into_iter()
        .map(|(img, truth)| {
            let p = proposal(&pnet.model, &img)?;
            Ok((img, truth, p))
        })
        .collect::<Result<_>>()?;
    let val_data: Vec<(ImageGrid, Mask, ProbabilityField)> =
        prepared(&val[..val.len().min(plan.validation_samples)], &norm)?
            .into_iter()
            .map(|(img, truth)| {
                let p = proposal(&pnet.model, &img)?;
                Ok((img, truth, p))
            })
            .collect::<Result<_>>()?;
    let encoding = plan.encoding;
    let interaction = plan.interaction;
    // validation inputs are fixed once so successive checks are comparable
    let mut vrng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11);
    let val: Vec<ValItem> = val_data
        .iter()
        .map(|(img, truth, p)| {
            let clicks = simulate_interactions(&p.mask(), truth, &interaction, &mut vrng)?;
            let constraints = clicks.constraint_map(truth.height, truth.width)?;
            Ok((
                rnet_input(img, p, &clicks, &encoding, &mut vrng)?,
                truth.clone(),
                Some(constraints),
            ))
        })
        .collect::<Result<_>>()?;

    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let augment = plan.augment;
    let mut rnet_example = |_: &SegmentationModel, rng: &mut _| -> Result<Example> {
        let (img, truth, p) = &data[cycle_index(&mut order, &mut cursor, rng)];
        let aug = if augment {
            Augmentation::sample(rng)
        } else {
            Augmentation::IDENTITY
        };
        let img = aug.apply_image(img)?;
        let truth = aug.apply_mask(truth);
        let fg = aug.apply_planes(p.foreground(), 1, p.height, p.width);
        let p = ProbabilityField::from_foreground(p.height, p.width, &fg)?;
        let clicks = simulate_interactions(&p.mask(), &truth, &interaction, rng)?;
        let input = rnet_input(&img, &p, &clicks, &encoding, rng)?;
        let constraints = clicks.constraint_map(truth.height, truth.width)?;
        Ok(Example {
            input,
            labels: truth.data,
            constraints: Some(constraints),
        })
    };
    let run = StageRun {
        name: "rnet_stage1",
        cfg: &plan.rnet_stage1,
        use_crf: false,
    };
    let (mut iteration, mut aborted) = run_stage(
        &mut model,
        run,
        plan,
        &val,
        &mut history,
        rng,
        &mut rnet_example,
    )?;
    if aborted.is_none() && model.crf.is_some() {
        let run = StageRun {
            name: "rnet_stage3",
            cfg: &plan.rnet_stage3,
            use_crf: true,
        };
        let (n, a) = run_stage(
            &mut model,
            run,
            plan,
            &val,
            &mut history,
            rng,
            &mut rnet_example,
        )?;
        iteration += n;
        aborted = a;
    }
    let mut checkpoint = ModelCheckpoint {
        model,
        norm,
        encoding: Some(encoding),
        iteration,
        seed,
        history,
    };
    checkpoint.round_params();
    Ok(TrainOutcome {
        checkpoint,
        pairwise: None,
        aborted,
    })
}

/// Copies P-Net parameters into a freshly built R-Net of the same width.
pub fn warm_start(rnet: &mut SegmentationModel, pnet: &SegmentationModel) -> Result<()> {
    let (rc, pc) = (&rnet.config, &pnet.config);
    if (
        rc.width,
        rc.base_dilation,
        rc.labels,
        rc.multiscale,
        rc.image_channels,
    ) != (
        pc.width,
        pc.base_dilation,
        pc.labels,
        pc.multiscale,
        pc.image_channels,
    ) {
        return Err(Error::Config("R-Net and P-Net geometry differ".into()));
    }
    let pairs: Vec<_> = rnet
        .conv_layers()
        .into_iter()
        .cloned()
        .zip(pnet.conv_layers().into_iter().cloned())
        .collect();
    for (i, (r, p)) in pairs.iter().enumerate() {
        let src_w = pnet.store.get(p.weight).value.clone();
        let src_b = pnet.store.get(p.bias).value.clone();
        if i == 0 {
            // [out, in, k, k]: copy the image-channel slices only
            let k2 = r.extent() * r.extent();
            let dst = rnet.store.get_mut(r.weight).value.data_mut();
            for o in 0..r.out_channels {
                for c in 0..p.in_channels {
                    let d = (o * r.in_channels + c) * k2;
                    let s = (o * p.in_channels + c) * k2;
                    dst[d..d + k2].copy_from_slice(&src_w.data()[s..s + k2]);
                }
            }
        } else {
            rnet.store.get_mut(r.weight).value = src_w;
        }
        rnet.store.get_mut(r.bias).value = src_b;
    }
    if let (Some(rh), Some(ph)) = (rnet.crf.clone(), pnet.crf.as_ref()) {
        rh.copy_from(&mut rnet.store, ph, &pnet.store);
    }
    Ok(())
}
