//! Subcommands of the `geoseg` binary.

use crate::engine::Engine;
use crate::files::{read_probability, write_segmentation};
use crate::wire::{scribbles_from_wire, SubmitScribbles};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use geoseg_core::crf::{
    generate_pretrain_set, pretrain_pairwise_net, PairwiseNet, PretrainConfig, PretrainSetConfig,
};
use geoseg_core::imageio::{encode_f32_le, read_image};
use geoseg_core::metrics::EvalReport;
use geoseg_core::pipeline::*;
use geoseg_core::tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Bad input from the caller; the binary exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Validation(pub String);

#[derive(Debug, Parser)]
#[command(name = "geoseg", version, about = "Interactive geodesic segmentation")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON file overriding the subcommand's configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Pre-train a Pairwise-Net on the contrast-sensitive potential.
    PretrainPairwise {
        #[arg(long, default_value_t = 1)]
        features: usize,
    },
    /// Three-stage P-Net training.
    TrainPnet {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value = "pnet")]
        name: String,
    },
    /// R-Net training from simulated interactions.
    TrainRnet {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        pnet: PathBuf,
        #[arg(long, default_value = "rnet")]
        name: String,
    },
    /// Automatic segmentation of one image.
    Segment {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// One refinement round with user scribbles.
    Refine {
        #[arg(long)]
        image: PathBuf,
        /// P-Net checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rnet: PathBuf,
        /// Current segmentation (`probability.f32`); the P-Net proposal when omitted.
        #[arg(long)]
        initial: Option<PathBuf>,
        /// JSON `{"scribbles": [{"pixel": [row, col], "label": 0|1}, ...]}`.
        #[arg(long)]
        scribbles: PathBuf,
        #[arg(long, default_value_t = 1)]
        round: u64,
    },
    /// Dice/ASSD report with one simulated refinement round per R-Net.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pnet: PathBuf,
        #[arg(long)]
        rnet: Vec<PathBuf>,
    },
    /// HTTP session service.
    Serve {
        #[arg(long, env = "GEOSEG_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "GEOSEG_MODEL_DIR", default_value = "models")]
        model_dir: PathBuf,
        #[arg(long, env = "GEOSEG_STORE_DIR", default_value = "sessions")]
        store_dir: PathBuf,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseJob {
    pub set: PretrainSetConfig,
    pub train: PretrainConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalJob {
    pub interaction: InteractionConfig,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes =
        std::fs::read(path).map_err(|e| Validation(format!("config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Validation(format!("config {}: {e}", path.display())).into())
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(v)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn read_split(dir: Option<&Path>) -> Result<Vec<Sample>> {
    dir.map(|d| read_dataset(d).with_context(|| format!("reading dataset {}", d.display())))
        .transpose()
        .map(Option::unwrap_or_default)
}

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Synth {
            count,
            height,
            width,
        } => {
            let synth: SynthConfig = load_config(cfg)?;
            let set = synth_dataset(cli.seed, count, [height, width], &synth)?;
            let entries: Vec<_> = set.into_iter().map(|(s, p)| (s, Some(p))).collect();
            write_dataset(out, &entries, Some(cli.seed))?;
            println!("wrote {count} samples to {}", out.display());
        }
        Command::PretrainPairwise { features } => {
            let job: PairwiseJob = load_config(cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let set = generate_pretrain_set(features, &job.set, &mut rng)?;
            let mut store = ParamStore::new();
            let net = PairwiseNet::new(&mut store, "pairwise", features, &mut rng)?;
            let report = pretrain_pairwise_net(&net, &mut store, &set, &job.train, &mut rng)?;
            std::fs::create_dir_all(out)?;
            let blob: Vec<u8> = store
                .ids()
                .flat_map(|id| encode_f32_le(store.get(id).value.data()))
                .collect();
            std::fs::write(out.join("pairwise.bin"), blob)?;
            let tensors: Vec<_> = store
                .ids()
                .map(|id| {
                    (
                        store.name(id).to_string(),
                        store.get(id).value.shape().to_vec(),
                    )
                })
                .collect();
            write_json(
                &out.join("pairwise.json"),
                &serde_json::json!({ "features": features, "seed": cli.seed, "tensors": tensors, "report": report }),
            )?;
            println!(
                "holdout MSE {:.3e} on {} samples",
                report.holdout_mse, report.holdout_size
            );
        }
        Command::TrainPnet { data, val, name } => {
            let plan: TrainPlan = load_config(cfg)?;
            let train = read_split(Some(&data))?;
            let val = read_split(val.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let outcome = train_pnet(&train, &val, &plan, cli.seed, &mut rng)?;
            finish_training(out, &name, &outcome)?;
        }
        Command::TrainRnet {
            data,
            val,
            pnet,
            name,
        } => {
            let plan: TrainPlan = load_config(cfg)?;
            let pnet = load_checkpoint(&pnet)?;
            let train = read_split(Some(&data))?;
            let val = read_split(val.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let outcome = train_rnet(&train, &val, &pnet, &plan, cli.seed, &mut rng)?;
            finish_training(out, &name, &outcome)?;
        }
        Command::Segment { image, ckpt } => {
            let seg = Segmenter::new(load_checkpoint(&ckpt)?, None)?;
            let img = read_image(&image)?;
            let p = seg.propose(&img)?;
            let (mask, prob) = write_segmentation(out, &p)?;
            println!("{}\n{}", mask.display(), prob.display());
        }
        Command::Refine {
            image,
            ckpt,
            rnet,
            initial,
            scribbles,
            round,
        } => {
            let seg = Segmenter::new(load_checkpoint(&ckpt)?, Some(load_checkpoint(&rnet)?))?;
            let img = read_image(&image)?;
            let current = match initial {
                Some(p) => read_probability(&p)?,
                None => seg.propose(&img)?,
            };
            let body = std::fs::read(&scribbles)
                .with_context(|| format!("reading {}", scribbles.display()))?;
            let req: SubmitScribbles = serde_json::from_slice(&body)
                .map_err(|e| Validation(format!("scribbles {}: {e}", scribbles.display())))?;
            let set = scribbles_from_wire(&req.scribbles);
            let p = seg.refine(&img, &current, &set, round)?;
            let (mask, prob) = write_segmentation(out, &p)?;
            println!("{}\n{}", mask.display(), prob.display());
        }
        Command::Eval { data, pnet, rnet } => {
            let job: EvalJob = load_config(cfg)?;
            let samples = read_split(Some(&data))?;
            let pnet = load_checkpoint(&pnet)?;
            let report = evaluate(&samples, &pnet, &rnet, &job, cli.seed)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("eval.json"), &report)?;
            print!("{}", report.to_table());
        }
        Command::Serve {
            port,
            model_dir,
            store_dir,
        } => {
            let engine = Arc::new(Engine::new(&store_dir, &model_dir)?);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!(
                "serving on port {port}; models {}, sessions {}",
                model_dir.display(),
                store_dir.display()
            );
            rt.block_on(crate::http::serve(engine, port))?;
        }
    }
    Ok(())
}

fn finish_training(out: &Path, name: &str, outcome: &TrainOutcome) -> Result<()> {
    outcome.checkpoint.save(out, name)?;
    let (json, _) = checkpoint_paths(out, name);
    for h in &outcome.checkpoint.history {
        match h.val_dice {
            Some(d) => println!(
                "{} {:>6} loss {:.4} val Dice {:.4}",
                h.stage, h.iteration, h.train_loss, d
            ),
            None => println!("{} {:>6} loss {:.4}", h.stage, h.iteration, h.train_loss),
        }
    }
    println!("{}", json.display());
    if let Some(reason) = &outcome.aborted {
        anyhow::bail!("training aborted ({reason}); last good parameters saved");
    }
    Ok(())
}

pub const PNET_PLAIN: &str = "P-Net";
pub const PNET_CRF: &str = "P-Net + CRF-Net(f)";

/// Method names: plain P-Net, P-Net with CRF, then one entry per R-Net
/// named after its encoding.
pub fn evaluate(
    samples: &[Sample],
    pnet: &ModelCheckpoint,
    rnets: &[PathBuf],
    job: &EvalJob,
    seed: u64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Validation("evaluation set is empty".into()).into());
    }
    let truths: Vec<_> = samples.iter().map(|s| s.truth.clone()).collect();
    let mut report = EvalReport::new();
    let spacing = [1.0, 1.0];
    report.add_method(
        PNET_PLAIN,
        &predict_masks(&pnet.model, &pnet.norm, samples, false)?,
        &truths,
        spacing,
    )?;
    report.add_method(
        PNET_CRF,
        &predict_masks(&pnet.model, &pnet.norm, samples, true)?,
        &truths,
        spacing,
    )?;
    report.compare(PNET_PLAIN, PNET_CRF)?;
    let mut refined_names = Vec::new();
    for path in rnets {
        let rnet = load_checkpoint(path)?;
        let metric = rnet
            .encoding
            .map(|e| format!("{:?}", e.metric).to_lowercase())
            .unwrap_or_else(|| "unknown".into());
        let seg = Segmenter::new(pnet.clone(), Some(rnet))?;
        let round = simulate_round(&seg, samples, &job.interaction, seed)?;
        let name = format!("R-Net + CRF-Net(fu), {metric}");
        report.add_method(&name, &round.refined, &truths, spacing)?;
        report.compare(PNET_CRF, &name)?;
        refined_names.push(name);
    }
    for i in 0..refined_names.len() {
        for j in i + 1..refined_names.len() {
            report.compare(&refined_names[i], &refined_names[j])?;
        }
    }
    Ok(report)
}
