//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The desk-scale criterion trains both networks from scratch and dominates
//! the runtime (roughly half an hour on one core). A FAIL only changes the
//! exit status when `GEOSEG_ACCEPTANCE_STRICT=1`.

mod common;

use anyhow::{ensure, Result};
use geoseg::cli::{evaluate, EvalJob, PNET_CRF, PNET_PLAIN};
use geoseg::wire::{decode_mask, CreateSession, ImageWire, ScribbleWire, SubmitScribbles};
use geoseg::Engine;
use geoseg_core::crf::{
    brute_force_meanfield_oracle, generate_pretrain_set, mean_field_iterate, pretrain_pairwise_net,
    CrfConfig, CrfHead, PairwiseNet, PretrainConfig, PretrainSetConfig,
};
use geoseg_core::field::Mask;
use geoseg_core::geodesic::{
    dijkstra_geodesic_oracle, geodesic_distance_map, EncodeOptions, ImageGrid, Metric, SweepMode,
};
use geoseg_core::gradcheck::standard_suite;
use geoseg_core::imageio::Pgm;
use geoseg_core::metrics::{dice, extract_surface, mask_assd};
use geoseg_core::netzoo::{
    build_model, dilation_schedule, forward_segment, receptive_field, CrfVariant, NetworkConfig,
};
use geoseg_core::pipeline::{
    clicks_for_region, simulate_interactions, synth_dataset, train_pnet, train_rnet,
    InteractionConfig, ModelCheckpoint, Sample, SynthConfig, TrainPlan,
};
use geoseg_core::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const GEODESIC_TOL: f64 = 1e-9;
const GEODESIC_BUDGET: Duration = Duration::from_secs(30);
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const MEANFIELD_TOL: f64 = 1e-9;
const PAIRWISE_MSE: f64 = 1e-3;
const PAIRWISE_BUDGET: Duration = Duration::from_secs(300);
const DESK_DICE: f64 = 0.80;
const DESK_GAIN: f64 = 0.02;
const DESK_BUDGET: Duration = Duration::from_secs(45 * 60);
const METRIC_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Result<Outcome>) -> bool {
    let t = Instant::now();
    let (pass, detail) = match f() {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    println!(
        "{} [{id}] {name}: {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    pass
}

fn geodesic_oracle() -> Result<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let (mut n2, mut n3) = (0, 0);
    for i in 0..240 {
        let extents = if i % 4 == 0 {
            n3 += 1;
            vec![4, 8, 8]
        } else {
            n2 += 1;
            vec![rng.random_range(1..=32), rng.random_range(1..=32)]
        };
        let channels = rng.random_range(1..=3);
        let n: usize = extents.iter().product();
        let data = (0..n * channels).map(|_| rng.random::<f64>()).collect();
        let spacing: Vec<f64> = extents.iter().map(|_| rng.random_range(0.5..2.0)).collect();
        let img = ImageGrid::with_spacing(channels, &extents, &spacing, data)?;
        let seeds: Vec<Vec<usize>> = (0..rng.random_range(1..=4))
            .map(|_| extents.iter().map(|&e| rng.random_range(0..e)).collect())
            .collect();
        let lambda = [0.0, 1.0, rng.random_range(0.0..1.0)][i % 3];
        let scan = geodesic_distance_map(&img, &seeds, lambda, SweepMode::Converged)?;
        let exact = dijkstra_geodesic_oracle(&img, &seeds, lambda)?;
        worst = worst.max(scan.max_abs_diff(&exact));
    }
    let elapsed = t.elapsed();
    outcome(
        worst < GEODESIC_TOL && elapsed < GEODESIC_BUDGET,
        format!("{n2} 2-D (to 32x32) + {n3} 3-D (8x8x4) images, max |diff| {worst:.1e} < {GEODESIC_TOL:e}, {:.2} s < 30 s", elapsed.as_secs_f64()),
    )
}

/// Input gradient of one central output logit; nonzero only inside its receptive field.
fn gradient_extent(base: usize, width: usize, seed: u64) -> Result<(usize, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        width,
        base_dilation: base,
        crf: CrfVariant::None,
        ..NetworkConfig::pnet(1)
    };
    let mut m = build_model(&cfg, &mut rng)?;
    for id in m.store.ids().collect::<Vec<_>>() {
        if m.store.name(id).ends_with("bias") {
            for v in m.store.get_mut(id).value.data_mut() {
                *v = rng.random_range(0.1..0.5);
            }
        }
    }
    let r5 = receptive_field(5, base, 1)?;
    let side = r5 + 8;
    let x = Tensor::from_vec(
        &[1, side, side],
        (0..side * side)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
    )?;
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let out = m.forward(&mut tape, xv, false, None)?;
    let fg = tape.slice_channels(out.logits, 1, 1)?;
    let c = side / 2;
    let mut pick = Tensor::zeros(&[1, side, side]);
    pick.data_mut()[c * side + c] = 1.0;
    let pv = tape.constant(pick);
    let sel = tape.mul(fg, pv)?;
    let loss = tape.sum(sel);
    tape.backward(loss)?;
    let g = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&[1, side, side]));
    let mut reach = 0;
    for y in 0..side {
        for x in 0..side {
            if g.data()[y * side + x] != 0.0 {
                reach = reach.max(y.abs_diff(c)).max(x.abs_diff(c));
            }
        }
    }
    Ok((2 * reach + 1, reach == r5 / 2))
}

fn schedules() -> Result<Outcome> {
    let mut wrong = Vec::new();
    for d in 1..=3 {
        for (i, r) in [4, 12, 36, 84, 180].into_iter().enumerate() {
            let block = i + 1;
            if dilation_schedule(block, d)? != d * (1 << i) {
                wrong.push(format!("dilation({block}, {d})"));
            }
            if receptive_field(block, d, 1)? != r * d + 1 {
                wrong.push(format!("R{block}(d={d})"));
            }
        }
    }
    let (e1, full1) = gradient_extent(1, 8, 11)?;
    let (e2, full2) = gradient_extent(2, 2, 12)?;
    let confined = e1 <= 181 && e2 <= 361;
    outcome(
        wrong.is_empty() && confined && full1 && full2,
        format!(
            "15 dilation + 15 receptive-field values exact{}; measured gradient extent {e1}x{e1} (R5 181, d=1), {e2}x{e2} (R5 361, d=2)",
            if wrong.is_empty() { String::new() } else { format!(" except {wrong:?}") }
        ),
    )
}

fn gradients() -> Result<Outcome> {
    let t = Instant::now();
    let reports = standard_suite()?;
    let elapsed = t.elapsed();
    let worst = reports
        .iter()
        .max_by(|a, b| a.worst.total_cmp(&b.worst))
        .expect("suite is not empty");
    let failing: Vec<_> = reports
        .iter()
        .filter(|r| r.worst.is_nan() || r.worst >= GRAD_TOL || r.kinks_crossed > 0 || r.active == 0)
        .map(|r| r.name.as_str())
        .collect();
    let kinks: usize = reports.iter().map(|r| r.kinks_crossed).sum();
    let (checked, active) = reports
        .iter()
        .fold((0, 0), |(c, a), r| (c + r.checked, a + r.active));
    outcome(
        failing.is_empty() && elapsed < GRAD_BUDGET,
        format!(
            "{} checks over {checked} elements ({active} nonzero, {kinks} ReLU kinks crossed), eps 1e-5, worst rel err {:.1e} ({}) < {GRAD_TOL:e}{}, {:.1} s < 120 s",
            reports.len(),
            worst.worst,
            worst.name,
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") },
            elapsed.as_secs_f64()
        ),
    )
}

fn mean_field_checks() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut oracle_worst: f64 = 0.0;
    let instances = 200;
    for i in 0..instances {
        let labels = 2 + i % 2;
        let features = 1 + (i / 2) % 2;
        let cfg = CrfConfig {
            labels,
            iterations: rng.random_range(1..=5),
            ..CrfConfig::default()
        };
        let mut store = ParamStore::new();
        let head = CrfHead::new(&mut store, "crf", features, cfg, &mut rng)?;
        for id in head.param_ids() {
            for v in store.get_mut(id).value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let z = Tensor::from_vec(
            &[labels, 3, 3],
            (0..labels * 9)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect(),
        )?;
        let f = ImageGrid::new(
            features,
            &[3, 3],
            (0..features * 9)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )?;
        let cons: Option<Vec<Option<u8>>> = (i % 3 == 0).then(|| {
            (0..9)
                .map(|_| {
                    rng.random_bool(0.3)
                        .then(|| rng.random_range(0..labels) as u8)
                })
                .collect()
        });
        let fast = mean_field_iterate(&z, &f, &store, &head, cons.as_deref())?;
        let brute = brute_force_meanfield_oracle(&z, &f, &store, &head, cons.as_deref())?;
        oracle_worst = oracle_worst.max(fast.to_tensor().max_abs_diff(&brute.to_tensor()));
    }

    // every iteration count up to 10 on a larger instance
    let mut norm_worst: f64 = 0.0;
    let mut api_exact = true;
    let (h, w) = (16, 16);
    let mut store = ParamStore::new();
    let mut head = CrfHead::new(&mut store, "crf", 1, CrfConfig::default(), &mut rng)?;
    let z = Tensor::from_vec(
        &[2, h, w],
        (0..2 * h * w)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect(),
    )?;
    let f = ImageGrid::new(
        1,
        &[h, w],
        (0..h * w).map(|_| rng.random::<f64>()).collect(),
    )?;
    let cons: Vec<Option<u8>> = (0..h * w)
        .map(|_| rng.random_bool(0.1).then(|| rng.random_range(0..2u8)))
        .collect();
    for iterations in 1..=10 {
        head.config.iterations = iterations;
        for c in [None, Some(cons.as_slice())] {
            let q = mean_field_iterate(&z, &f, &store, &head, c)?;
            norm_worst = norm_worst.max(q.max_normalization_error());
            if c.is_some() {
                api_exact &= pinned(&q.data, &cons);
            }
        }
    }

    let mut net_exact = true;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let m = build_model(
            &NetworkConfig {
                width: 2,
                ..NetworkConfig::rnet(1)
            },
            &mut rng,
        )?;
        let x = Tensor::from_vec(
            &[4, h, w],
            (0..4 * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )?;
        let cons: Vec<Option<u8>> = (0..h * w)
            .map(|_| rng.random_bool(0.15).then(|| rng.random_range(0..2u8)))
            .collect();
        let p = forward_segment(&m, &x, Some(&cons))?;
        net_exact &= pinned(&p.probs.data, &cons);
        norm_worst = norm_worst.max(p.probs.max_normalization_error());
    }
    outcome(
        oracle_worst < MEANFIELD_TOL && norm_worst < MEANFIELD_TOL && api_exact && net_exact,
        format!(
            "{instances} 3x3 instances vs brute force max |diff| {oracle_worst:.1e} < {MEANFIELD_TOL:e}; \
             |sum Q - 1| {norm_worst:.1e} over 1..=10 iterations; constraints exact 0/1: API {api_exact}, network {net_exact}"
        ),
    )
}

/// Constrained pixels are exactly one-hot.
fn pinned(q: &[f64], cons: &[Option<u8>]) -> bool {
    let n = cons.len();
    let labels = q.len() / n;
    cons.iter().enumerate().all(|(i, c)| match c {
        Some(s) => (0..labels).all(|l| q[l * n + i] == if l == *s as usize { 1.0 } else { 0.0 }),
        None => true,
    })
}

fn pairwise_pretraining() -> Result<Outcome> {
    let t = Instant::now();
    let set_cfg = PretrainSetConfig::default();
    ensure!(
        set_cfg.sigma == 0.08 && set_cfg.omega == 0.5 && set_cfg.samples == 100_000,
        "unexpected pre-training set defaults"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = generate_pretrain_set(1, &set_cfg, &mut rng)?;
    let mut store = ParamStore::new();
    let net = PairwiseNet::new(&mut store, "pairwise", 1, &mut rng)?;
    let r = pretrain_pairwise_net(&net, &mut store, &set, &PretrainConfig::default(), &mut rng)?;
    let elapsed = t.elapsed();
    outcome(
        r.holdout_mse <= PAIRWISE_MSE && elapsed < PAIRWISE_BUDGET,
        format!(
            "sigma 0.08, omega 0.5, {} samples, held-out MSE {:.2e} <= {PAIRWISE_MSE:e} on {}, {:.1} s < 300 s",
            set.len(),
            r.holdout_mse,
            r.holdout_size,
            elapsed.as_secs_f64()
        ),
    )
}

fn brute_dice(a: &Mask, b: &Mask) -> f64 {
    let (mut inter, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (p, q) in a.data.iter().zip(&b.data) {
        inter += (*p == 1 && *q == 1) as u8 as f64;
        na += (*p == 1) as u8 as f64;
        nb += (*q == 1) as u8 as f64;
    }
    if na + nb == 0.0 {
        1.0
    } else {
        2.0 * inter / (na + nb)
    }
}

fn brute_surface(m: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (m.height as isize, m.width as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if m.get(y as usize, x as usize) == 0 {
                continue;
            }
            let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny < 0 || nx < 0 || ny >= h || nx >= w || m.get(ny as usize, nx as usize) == 0
            });
            if edge {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn brute_assd(a: &[(usize, usize)], b: &[(usize, usize)], sp: [f64; 2]) -> f64 {
    let d = |p: &(usize, usize), s: &[(usize, usize)]| {
        s.iter()
            .map(|q| {
                (((p.0 as f64 - q.0 as f64) * sp[0]).powi(2)
                    + ((p.1 as f64 - q.1 as f64) * sp[1]).powi(2))
                .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 =
        a.iter().map(|p| d(p, b)).sum::<f64>() + b.iter().map(|p| d(p, a)).sum::<f64>();
    total / (a.len() + b.len()) as f64
}

fn metrics_checks() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut surfaces_equal = true;
    let mut undefined_agree = true;
    let masks = 500;
    for i in 0..masks {
        let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let mut random = |density: f64| {
            Mask::from_vec(
                h,
                w,
                (0..h * w).map(|_| rng.random_bool(density) as u8).collect(),
            )
        };
        let a = random([0.05, 0.5, 0.9][i % 3])?;
        let b = random([0.3, 0.7, 0.02][i % 3])?;
        worst = worst.max((dice(&a, &b)? - brute_dice(&a, &b)).abs());
        let (sa, sb) = (brute_surface(&a), brute_surface(&b));
        surfaces_equal &= extract_surface(&a).points == sa;
        let sp = if i % 2 == 0 { [1.0, 1.0] } else { [0.8, 1.7] };
        match mask_assd(&a, &b, sp)? {
            Some(v) => worst = worst.max((v - brute_assd(&sa, &sb, sp)).abs()),
            None => undefined_agree &= sa.is_empty() || sb.is_empty(),
        }
    }
    let rule = [(29, 0), (30, 1), (250, 3)];
    let rule_ok = rule.iter().all(|&(n, k)| clicks_for_region(n) == k);
    // the same thresholds through the simulator: one missed region of n pixels
    let mut sim_ok = true;
    for &(n, k) in &rule {
        let truth = Mask::from_vec(1, n, vec![1; n])?;
        let pred = Mask::new(1, n);
        let s = simulate_interactions(&pred, &truth, &InteractionConfig::default(), &mut rng)?;
        sim_ok &= s.len() == k && s.background().is_empty();
    }
    outcome(
        worst < METRIC_TOL && surfaces_equal && undefined_agree && rule_ok && sim_ok,
        format!(
            "{masks} mask pairs to 32x32, Dice/ASSD max |diff| {worst:.1e} < {METRIC_TOL:e}; clicks 29->{}, 30->{}, 250->{} (simulator agrees: {sim_ok})",
            clicks_for_region(29),
            clicks_for_region(30),
            clicks_for_region(250)
        ),
    )
}

fn samples(seed: u64, n: usize) -> Result<Vec<Sample>> {
    Ok(synth_dataset(seed, n, [64, 64], &SynthConfig::default())?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

fn mean_dice(report: &geoseg_core::metrics::EvalReport, name: &str) -> f64 {
    report.method(name).map(|m| m.dice_mean).unwrap_or(f64::NAN)
}

/// Trains at desk scale and saves `pnet`, `rnet` (geodesic) and `rnet-euclidean` into `models`.
fn desk_scale(models: &Path) -> Result<Outcome> {
    let t = Instant::now();
    let train = samples(1, 200)?;
    let test = samples(2, 50)?;
    let val = samples(3, 20)?;
    let plan = TrainPlan {
        validate_every: 500,
        ..TrainPlan::default()
    };
    ensure!(plan.network.width == 8, "desk scale uses C = 8");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let p = train_pnet(&train, &val, &plan, 42, &mut rng)?;
    ensure!(
        p.aborted.is_none(),
        "P-Net training aborted: {:?}",
        p.aborted
    );
    p.checkpoint.save(models, "pnet")?;
    let mut rnets: Vec<PathBuf> = Vec::new();
    for (metric, name) in [
        (Metric::Geodesic, "rnet"),
        (Metric::Euclidean, "rnet-euclidean"),
    ] {
        let mut pl = plan.clone();
        pl.encoding = EncodeOptions {
            metric,
            ..EncodeOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let r = train_rnet(&train, &val, &p.checkpoint, &pl, 43, &mut rng)?;
        ensure!(
            r.aborted.is_none(),
            "R-Net training aborted: {:?}",
            r.aborted
        );
        r.checkpoint.save(models, name)?;
        rnets.push(models.join(format!("{name}.json")));
    }
    let pnet = ModelCheckpoint::load(&models.join("pnet.json"))?;
    let report = evaluate(&test, &pnet, &rnets, &EvalJob::default(), 99)?;
    let elapsed = t.elapsed();
    let plain = mean_dice(&report, PNET_PLAIN);
    let crf = mean_dice(&report, PNET_CRF);
    let geo = mean_dice(&report, "R-Net + CRF-Net(fu), geodesic");
    let euc = mean_dice(&report, "R-Net + CRF-Net(fu), euclidean");
    println!(
        "{}",
        report
            .to_table()
            .lines()
            .map(|l| format!("    {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    outcome(
        crf >= DESK_DICE && geo - crf >= DESK_GAIN && geo >= euc && crf >= plain && elapsed <= DESK_BUDGET,
        format!(
            "P-Net+CRF Dice {crf:.4} >= {DESK_DICE}; refined {geo:.4} gain {:+.2} pts >= 2; geodesic {geo:.4} >= euclidean {euc:.4}; \
             CRF {crf:.4} >= plain {plain:.4}; {:.1} min <= 45 min",
            100.0 * (geo - crf),
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn service(models: &Path) -> Result<Outcome> {
    let tmp = tempfile::TempDir::new()?;
    let store = tmp.path().join("sessions");

    // random scribble sequences: every scribbled pixel keeps its latest label
    let engine = Engine::new(&store, models)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let sequences = 10;
    let mut refinements = 0;
    for k in 0..sequences {
        let s = common::sample(100 + k, 64);
        let id = engine
            .create(&CreateSession {
                image: ImageWire::from_pgm_bytes(&common::pgm_bytes(&s)),
                pnet: None,
                rnet: None,
            })?
            .id;
        let mut expected = BTreeMap::new();
        for _ in 0..rng.random_range(1..=4) {
            let batch: Vec<ScribbleWire> = (0..rng.random_range(1..=12))
                .map(|_| ScribbleWire {
                    pixel: [rng.random_range(0..64), rng.random_range(0..64)],
                    label: rng.random_range(0..2),
                })
                .collect();
            for sc in &batch {
                expected.insert((sc.pixel[0], sc.pixel[1]), sc.label);
            }
            engine.add_scribbles(&id, &SubmitScribbles { scribbles: batch })?;
            let res = engine.refine(&id)?;
            refinements += 1;
            let m = decode_mask(&res.segmentation.mask)?;
            violations += expected
                .iter()
                .filter(|(&(r, c), &l)| m.get(r, c) != l)
                .count();
        }
    }

    // restart: a fresh engine on the same store sees the same sessions
    let s = common::sample(200, 64);
    let id = engine
        .create(&CreateSession {
            image: ImageWire::from_pgm_bytes(&common::pgm_bytes(&s)),
            pnet: None,
            rnet: None,
        })?
        .id;
    engine.add_scribbles(
        &id,
        &SubmitScribbles {
            scribbles: vec![ScribbleWire {
                pixel: [30, 30],
                label: 1,
            }],
        },
    )?;
    engine.refine(&id)?;
    engine.add_scribbles(
        &id,
        &SubmitScribbles {
            scribbles: vec![ScribbleWire {
                pixel: [2, 2],
                label: 0,
            }],
        },
    )?;
    let before = engine.get(&id)?;
    let snapshot = tempfile::TempDir::new()?;
    let copy = snapshot.path().join("sessions");
    copy_dir(&store, &copy)?;
    let live = engine.refine(&id)?;
    drop(engine);
    let restarted = Engine::new(&copy, models)?;
    let after = restarted.get(&id)?;
    let replay = restarted.refine(&id)?;
    let survives = before == after && replay == live;

    // CLI and service produce the same files
    let dir = tmp.path();
    let bytes = common::pgm_bytes(&common::sample(201, 64));
    std::fs::write(dir.join("x.pgm"), &bytes)?;
    let pnet = models.join("pnet.json");
    let rnet = models.join("rnet.json");
    let cli = |args: &[&str]| -> Result<()> {
        let o = Command::new(env!("CARGO_BIN_EXE_geoseg"))
            .args(args)
            .current_dir(dir)
            .output()?;
        ensure!(
            o.status.success(),
            "geoseg {args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        Ok(())
    };
    let (p, r) = (pnet.to_str().unwrap(), rnet.to_str().unwrap());
    cli(&["segment", "--image", "x.pgm", "--ckpt", p, "--out", "seg"])?;
    let scribbles = SubmitScribbles {
        scribbles: vec![
            ScribbleWire {
                pixel: [20, 31],
                label: 1,
            },
            ScribbleWire {
                pixel: [5, 60],
                label: 0,
            },
            ScribbleWire {
                pixel: [40, 33],
                label: 1,
            },
        ],
    };
    std::fs::write(dir.join("s.json"), serde_json::to_vec(&scribbles)?)?;
    cli(&[
        "refine",
        "--image",
        "x.pgm",
        "--ckpt",
        p,
        "--rnet",
        r,
        "--initial",
        "seg/probability.f32",
        "--scribbles",
        "s.json",
        "--out",
        "ref",
    ])?;
    let engine = Engine::new(dir.join("cli-sessions"), models)?;
    let id = engine
        .create(&CreateSession {
            image: ImageWire::from_pgm_bytes(&bytes),
            pnet: None,
            rnet: None,
        })?
        .id;
    let sdir = engine.session_path(&id).expect("session exists");
    let same = |a: &str, b: &str| -> Result<bool> {
        Ok(std::fs::read(dir.join(a))? == std::fs::read(sdir.join(b))?)
    };
    let mut identical =
        same("seg/mask.pgm", "mask.pgm")? && same("seg/probability.f32", "probability.f32")?;
    engine.add_scribbles(&id, &scribbles)?;
    let refined = engine.refine(&id)?;
    identical &=
        same("ref/mask.pgm", "mask.pgm")? && same("ref/probability.f32", "probability.f32")?;
    identical &=
        decode_mask(&refined.segmentation.mask)? == Pgm::read(&dir.join("ref/mask.pgm"))?.to_mask();

    outcome(
        violations == 0 && survives && identical,
        format!(
            "{violations} constraint violations over {sequences} random sequences ({refinements} refinements); \
             restart state and next refinement equal: {survives}; CLI/service files byte-identical: {identical}"
        ),
    )
}

fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

fn main() {
    let t = Instant::now();
    let models = tempfile::TempDir::new().expect("temp dir");
    let results = [
        report(1, "geodesic oracle equivalence", geodesic_oracle),
        report(2, "closed-form schedules", schedules),
        report(3, "gradient suite", gradients),
        report(4, "mean-field correctness", mean_field_checks),
        report(5, "Pairwise-Net pre-training", pairwise_pretraining),
        report(7, "metrics and click rule", metrics_checks),
        report(6, "desk-scale end to end", || desk_scale(models.path())),
        report(8, "service", || service(models.path())),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} min",
        results.len() - failed,
        t.elapsed().as_secs_f64() / 60.0
    );
    if failed > 0 && std::env::var("GEOSEG_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
