//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p tempo-core --test acceptance`.

use std::time::{Duration, Instant};

use tempo_core::av_align::{av_align_from_media, av_align_score, AlignConfig};
use tempo_core::diffusion_toy::{
    loss_and_grad, total_loss_with, train, Adapter, Checkpoint, ModelConfig, NoiseDraw, Objective, ToyClip, ToyModel,
    TrainConfig,
};
use tempo_core::media_io::{
    read_condition, read_embeddings, read_video, write_condition_file, write_embeddings, write_rvid, AudioEmbeddings,
    ConditionFile, Fps, Video,
};
use tempo_core::motion_analysis::{optical_flow, FlowParams, GrayImage};
use tempo_core::numerics::{ParamSet, Rng, Tensor};
use tempo_core::peaks::PeakSet;
use tempo_core::synthgen::{generate, SynthConfig};
use tempo_core::tempo_tokens::{attentive_pool, build_condition, resolutions, ConditionMode, PoolingParams, TempoTokens};
use tempo_core::Exec;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_secs, || {
        format!("took {:.1} s, limit {limit_secs} s", elapsed.as_secs_f64())
    })
}

fn random_set(rng: &mut Rng, max_len: usize, below: usize) -> PeakSet {
    let n = rng.range(0, max_len + 1);
    PeakSet::from_unsorted((0..n).map(|_| rng.range(0, below)).collect())
}

/// Literal double loop; the union is counted with a membership table.
fn brute_score(a: &[usize], v: &[usize], tol: usize) -> f64 {
    let near = |x: usize, y: usize| x.abs_diff(y) <= tol;
    let ma = a.iter().filter(|&&x| v.iter().any(|&y| near(x, y))).count();
    let mv = v.iter().filter(|&&y| a.iter().any(|&x| near(x, y))).count();
    let mut seen = [false; 128];
    for &i in a.iter().chain(v) {
        seen[i] = true;
    }
    let union = seen.iter().filter(|&&s| s).count();
    if union == 0 {
        1.0
    } else {
        (ma + mv) as f64 / (2 * union) as f64
    }
}

fn av_align_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    for i in 0..1000 {
        let (a, v) = (random_set(&mut rng, 20, 100), random_set(&mut rng, 20, 100));
        let tol = [0, 1, 3][i % 3];
        let got = av_align_score(&a, &v, tol).score;
        let want = brute_score(a.indices(), v.indices(), tol);
        check(got == want, || format!("pair {i}: {got} vs oracle {want} ({a:?}, {v:?}, tol {tol})"))?;
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("1000 pairs exact in {:.2} s", start.elapsed().as_secs_f64()))
}

fn av_align_sensitivity() -> Outcome {
    let start = Instant::now();
    let config = AlignConfig::default();
    let mut worst = (f64::INFINITY, 0.0f64);
    for seed in 0..10 {
        let score = |shift| -> Result<f64, String> {
            let clip = generate(&SynthConfig {
                seed,
                shift_frames: shift,
                ..Default::default()
            })
            .map_err(|e| e.to_string())?;
            Ok(av_align_from_media(&clip.video, &clip.audio, &config)
                .map_err(|e| e.to_string())?
                .score)
        };
        let (s0, s12) = (score(0)?, score(12)?);
        check(s0 >= 0.8 && s12 <= 0.5 * s0, || {
            format!("seed {seed}: score(0) = {s0:.3}, score(12) = {s12:.3}")
        })?;
        worst = (worst.0.min(s0), worst.1.max(s12 / s0));
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "min score(0) {:.3}, max score(12)/score(0) {:.3}, {:.1} s",
        worst.0,
        worst.1,
        start.elapsed().as_secs_f64()
    ))
}

fn av_align_properties() -> Outcome {
    let mut rng = Rng::new(77);
    for i in 0..2000 {
        let a = random_set(&mut rng, 20, 100);
        let v = random_set(&mut rng, 20, 100);
        let tol = rng.range(0, 6);
        let s = av_align_score(&a, &v, tol).score;
        check((0.0..=1.0).contains(&s), || format!("case {i}: score {s} outside [0, 1]"))?;
        let swapped = av_align_score(&v, &a, tol).score;
        check(s == swapped, || format!("case {i}: {s} != swapped {swapped}"))?;
        let same = av_align_score(&a, &a, tol).score;
        check(same == 1.0, || format!("case {i}: identical sets score {same}"))?;
        let wider = av_align_score(&a, &v, tol + 1).score;
        check(wider >= s, || format!("case {i}: tolerance {} gives {wider} < {s}", tol + 1))?;
    }
    Ok("symmetry, range, identity and monotonicity on 2000 cases".into())
}

fn window_resolutions() -> Outcome {
    check(resolutions(24) == 5, || format!("resolutions(24) = {}", resolutions(24)))?;
    let mut rng = Rng::new(5);
    let tokens = TempoTokens::new(Tensor::randn(vec![24, 2, 4], 1.0, &mut rng)).map_err(|e| e.to_string())?;
    let params = PoolingParams::init(8, 6, 6, &mut rng);
    let cond = build_condition(&tokens, &params).map_err(|e| e.to_string())?;
    check(cond.frame_count() == 24, || format!("{} frames", cond.frame_count()))?;
    for (i, f) in cond.frames.iter().enumerate() {
        check(f.len() == 6, || format!("frame {i} has {} tokens", f.len()))?;
    }
    Ok("5 resolutions, 6 tokens on each of 24 frames".into())
}

/// Fourth-order central differences,
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
fn central_differences(f: &(dyn Fn(&[f64]) -> f64 + Sync), params: &[f64], h: f64) -> Vec<f64> {
    Exec::default().map_range(params.len(), |i| {
        let mut p = params.to_vec();
        let mut at = |d: f64| {
            p[i] = params[i] + d;
            f(&p)
        };
        let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
        (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
    })
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        latent_dim: 4,
        mapper_hidden: 64,
        frames: 2,
        width: 16,
        height: 16,
        ..ModelConfig::default()
    };
    let model = ToyModel::new(config).map_err(|e| e.to_string())?;
    let adapter = Adapter::init(&config, 11);
    let mut rng = Rng::new(12);
    let batch: Vec<ToyClip> = (0..2)
        .map(|_| {
            let latents = (0..2).map(|_| rng.normal_vec(4)).collect();
            let n = 2 * config.layers * config.enc_dim;
            let emb = Tensor::new(vec![2, config.layers, config.enc_dim], (0..n).map(|_| rng.uniform()).collect())
                .and_then(AudioEmbeddings::new)
                .and_then(|e| ToyClip::new(latents, e));
            emb.map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let draws = NoiseDraw::sample_batch(&batch, &model.schedule, &mut rng);
    let obj = Objective::new(&model, 0.01);
    let (_, grad) = loss_and_grad(&batch, &draws, &adapter, &obj, Exec::default()).map_err(|e| e.to_string())?;
    let f = |flat: &[f64]| {
        let mut a = adapter.clone();
        a.assign_flat(flat);
        total_loss_with(&batch, &draws, &a, &obj).map(|p| p.total).unwrap_or(f64::NAN)
    };
    let numeric = central_differences(&f, &adapter.flatten(), 3e-4);

    // relative to the larger magnitude; coordinates whose gradient is below
    // the finite-difference noise floor are compared absolutely
    let floor = 1e-8;
    let mut worst = (0.0f64, 0usize);
    for (i, (a, n)) in grad.iter().zip(&numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let err = if scale > floor { (a - n).abs() / scale } else { (a - n).abs() / floor };
        if err > worst.0 {
            worst = (err, i);
        }
    }
    check(worst.0 <= 1e-4, || {
        format!(
            "coordinate {}: analytic {} vs numeric {} (rel {:.2e})",
            worst.1, grad[worst.1], numeric[worst.1], worst.0
        )
    })?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "{} parameters, max relative error {:.2e} (analytic {:e}, numeric {:e}), {:.1} s",
        grad.len(),
        worst.0,
        grad[worst.1],
        numeric[worst.1],
        start.elapsed().as_secs_f64()
    ))
}

struct TrainingRun {
    first: Result<tempo_core::diffusion_toy::TrainOutcome, String>,
    second: Result<tempo_core::diffusion_toy::TrainOutcome, String>,
    model: Result<ToyModel, String>,
    initial: Adapter,
    config: ModelConfig,
    elapsed: Duration,
}

fn training_run() -> TrainingRun {
    let start = Instant::now();
    let config = ModelConfig::default();
    let clips: Vec<_> = (0..32)
        .map(|i| {
            let c = generate(&SynthConfig {
                seed: 1000 + i,
                ..Default::default()
            })
            .expect("valid synth config");
            (c.video, c.audio)
        })
        .collect();
    let model = ToyModel::new(config).map_err(|e| e.to_string());
    let initial = Adapter::init(&config, 0);
    let run = |model: &ToyModel| -> Result<_, String> {
        let data = model.encode_dataset(&clips, Exec::default()).map_err(|e| e.to_string())?;
        train(model, initial.clone(), &data, &TrainConfig::default()).map_err(|e| e.to_string())
    };
    let (first, second) = match &model {
        Ok(m) => (run(m), run(m)),
        Err(e) => (Err(e.clone()), Err(e.clone())),
    };
    TrainingRun {
        first,
        second,
        model,
        initial,
        config,
        elapsed: start.elapsed(),
    }
}

fn frozen_backbone(run: &TrainingRun) -> Outcome {
    let out = run.first.as_ref().map_err(Clone::clone)?;
    let model = run.model.as_ref().map_err(Clone::clone)?;
    check(out.history.len() == 200, || format!("{} steps", out.history.len()))?;
    check(out.frozen_before == out.frozen_after, || "backbone hashes changed during training".into())?;
    let fresh = ToyModel::new(run.config).map_err(|e| e.to_string())?.frozen_hashes();
    check(model.frozen_hashes() == fresh, || "backbone differs from a regenerated copy".into())?;
    check(out.adapter.mapper_hash() != run.initial.mapper_hash(), || "mapper unchanged".into())?;
    check(out.adapter.pooling_hash() != run.initial.pooling_hash(), || "pooling unchanged".into())?;
    Ok(format!(
        "denoiser {}.., codec {}.. unchanged; mapper and pooling updated",
        &out.frozen_after.denoiser[..12],
        &out.frozen_after.codec[..12]
    ))
}

fn training_progress(run: &TrainingRun) -> Outcome {
    let a = run.first.as_ref().map_err(Clone::clone)?;
    let b = run.second.as_ref().map_err(Clone::clone)?;
    let (head, tail) = a.window_means(20).ok_or("fewer than 20 steps")?;
    let ratio = tail / head;
    check(ratio <= 0.7, || format!("trailing/leading mean {ratio:.3} ({tail:.4} / {head:.4})"))?;
    let same = a.history.len() == b.history.len()
        && a.history.iter().zip(&b.history).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.adapter == b.adapter;
    check(same, || "second run with the same seed differs".into())?;
    within(run.elapsed / 2, 600.0)?;
    Ok(format!(
        "ratio {ratio:.3} ({head:.3} -> {tail:.3}), rerun bit-identical, {:.0} s per run",
        run.elapsed.as_secs_f64() / 2.0
    ))
}

fn attentive_pooling() -> Outcome {
    let mut rng = Rng::new(31);
    for case in 0..50 {
        let l = 1 + case % 30;
        let (layers, dim) = (2, 3);
        let params = PoolingParams::init(layers * dim, 5, 4, &mut rng);
        let tokens =
            TempoTokens::new(Tensor::randn(vec![l, layers, dim], 2.0, &mut rng)).map_err(|e| e.to_string())?;
        let (pooled, dist) = attentive_pool(&tokens, &params).map_err(|e| e.to_string())?;
        let sum: f64 = dist.iter().sum();
        check((sum - 1.0).abs() <= 1e-12, || format!("L = {l}: distribution sums to {sum}"))?;
        if l == 1 {
            check(pooled == tokens.token(0), || "L = 1 does not return the input token".into())?;
        }

        let one = rng.normal_vec(layers * dim);
        let constant = Tensor::new(vec![l, layers, dim], one.repeat(l)).map_err(|e| e.to_string())?;
        let (_, dist) = attentive_pool(&TempoTokens::new(constant).map_err(|e| e.to_string())?, &params)
            .map_err(|e| e.to_string())?;
        let u = 1.0 / l as f64;
        check(dist.iter().all(|p| (p - u).abs() <= 1e-12), || {
            format!("L = {l}: constant tokens give {dist:?}")
        })?;
    }
    Ok("50 random cases".into())
}

fn flow_properties() -> Outcome {
    let (w, h) = (32, 32);
    let ramp = |offset: f64| {
        let data = (0..h)
            .flat_map(|_| (0..w).map(move |x| (x as f64 - offset + 4.0) / (w as f64 + 8.0)))
            .collect();
        GrayImage::new(w, h, data).expect("sizes match")
    };
    let params = FlowParams::default();
    let mut rng = Rng::new(8);
    let noise = GrayImage::new(w, h, (0..w * h).map(|_| rng.uniform()).collect()).map_err(|e| e.to_string())?;
    for img in [&ramp(0.0), &noise] {
        let f = optical_flow(img, img, &params).map_err(|e| e.to_string())?;
        check(f.u.iter().chain(&f.v).all(|&x| x == 0.0), || "non-zero flow on identical frames".into())?;
    }
    let f = optical_flow(&ramp(0.0), &ramp(1.0), &params).map_err(|e| e.to_string())?;
    let interior: Vec<f64> = (4..h - 4)
        .flat_map(|y| (4..w - 4).map(move |x| y * w + x))
        .map(|i| f.u[i])
        .collect();
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    check((0.7..=1.3).contains(&mean), || format!("interior mean u {mean:.3}"))?;
    Ok(format!("exact zero on identical frames, ramp mean u {mean:.3}"))
}

fn f32_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 3.0, rng).map(|v| v as f32 as f64)
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("x");
    let mut rng = Rng::new(99);
    let err = |e: tempo_core::Error| e.to_string();
    for i in 0..100 {
        let (w, h) = (rng.range(1, 12) as u32, rng.range(1, 12) as u32);
        let n = rng.range(1, 6);
        let frames = (0..n)
            .map(|_| (0..w * h * 3).map(|_| rng.range(0, 256) as u8).collect())
            .collect();
        let fps = Fps::new(rng.range(1, 60_000) as u32, rng.range(1, 1002) as u32).map_err(err)?;
        let video = Video::new(w, h, fps, frames).map_err(err)?;
        write_rvid(&video, &path).map_err(err)?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let back = read_video(&path).map_err(err)?;
        write_rvid(&back, &path).map_err(err)?;
        check(back == video && std::fs::read(&path).map_err(|e| e.to_string())? == bytes, || {
            format!("RVID instance {i} differs")
        })?;

        let dims = vec![rng.range(1, 30), rng.range(1, 4), rng.range(1, 9)];
        let emb = AudioEmbeddings::new(f32_tensor(dims, &mut rng)).map_err(err)?;
        write_embeddings(&emb, &path).map_err(err)?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let back = read_embeddings(&path).map_err(err)?;
        write_embeddings(&back, &path).map_err(err)?;
        check(back == emb && std::fs::read(&path).map_err(|e| e.to_string())? == bytes, || {
            format!("TTE1 instance {i} differs")
        })?;

        let dims = vec![rng.range(1, 30), rng.range(1, 7), rng.range(1, 17)];
        let cond = ConditionFile {
            tokens: f32_tensor(dims, &mut rng),
        };
        write_condition_file(&cond, &path).map_err(err)?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let back = read_condition(&path).map_err(err)?;
        write_condition_file(&back, &path).map_err(err)?;
        check(back == cond && std::fs::read(&path).map_err(|e| e.to_string())? == bytes, || {
            format!("TTC1 instance {i} differs")
        })?;

        let config = ModelConfig {
            layers: rng.range(1, 4),
            enc_dim: rng.range(1, 6),
            token_dim: rng.range(1, 5),
            mapper_hidden: rng.range(1, 9),
            pool_local: rng.range(1, 5),
            pool_cross: rng.range(1, 5),
            frames: rng.range(1, 48),
            mode: match i % 3 {
                0 => ConditionMode::Vector,
                1 => ConditionMode::default(),
                _ => ConditionMode::Windows {
                    max_resolutions: Some(rng.range(1, 5)),
                },
            },
            backbone_seed: rng.next_u64(),
            ..ModelConfig::default()
        };
        let mut adapter = Adapter::init(&config, rng.next_u64());
        let flat: Vec<f64> = adapter.flatten().iter().map(|v| *v as f32 as f64).collect();
        adapter.assign_flat(&flat);
        let ckpt = Checkpoint { config, adapter };
        let bytes = ckpt.to_bytes().map_err(err)?;
        let back = Checkpoint::from_bytes(&bytes).map_err(err)?;
        check(back == ckpt && back.to_bytes().map_err(err)? == bytes, || {
            format!("TTCKPT1 instance {i} differs")
        })?;
    }
    Ok("100 instances each of RVID, TTE1, TTC1, TTCKPT1".into())
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; filters are
    // matched against criterion names
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    let needs_training = wanted("frozen_backbone_protocol") || wanted("training_progress");
    let run = needs_training.then(training_run);
    let mut criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("av_align_oracle_equivalence", Box::new(av_align_oracle)),
        ("av_align_sensitivity", Box::new(av_align_sensitivity)),
        ("av_align_formula_properties", Box::new(av_align_properties)),
        ("window_resolution_count", Box::new(window_resolutions)),
        ("gradient_correctness", Box::new(gradient_check)),
    ];
    if let Some(run) = &run {
        criteria.push(("frozen_backbone_protocol", Box::new(|| frozen_backbone(run))));
        criteria.push(("training_progress", Box::new(|| training_progress(run))));
    }
    criteria.push(("attentive_pooling", Box::new(attentive_pooling)));
    criteria.push(("optical_flow", Box::new(flow_properties)));
    criteria.push(("format_round_trips", Box::new(round_trips)));

    let mut failed = 0;
    for (name, f) in &criteria {
        if !wanted(name) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
