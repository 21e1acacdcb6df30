use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tempo_core::av_align::{av_align_from_media, AlignConfig, AlignReport};
use tempo_core::diffusion_toy::{
    condition_for, embed_audio, generate_from_audio, read_checkpoint, train, write_checkpoint, write_loss_history,
    Adapter, Checkpoint, ModelConfig, Optimizer, ToyModel, TrainConfig, DEFAULT_ADAMW_RATE, DEFAULT_SGD_RATE,
};
use tempo_core::media_io::{read_embeddings, read_video, read_wav, write_condition, write_rvid, Fps};
use tempo_core::synthgen::{corpus, load_corpus, EventKind, SynthConfig};
use tempo_core::tempo_tokens::ConditionMode;
use tempo_core::{Error, Exec, Result};

use crate::args::{AvAlignArgs, GenSynthArgs, GenerateArgs, Kind, OptimizerKind, TokenMode, TokensArgs, TrainToyArgs};

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DurationMismatch(_) => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn condition_mode(mode: TokenMode) -> ConditionMode {
    match mode {
        TokenMode::Windows => ConditionMode::default(),
        TokenMode::Vec => ConditionMode::Vector,
    }
}

fn align_pair(video: &Path, audio: &Path, fps: Option<Fps>, config: &AlignConfig) -> Result<AlignReport> {
    let mut v = read_video(video)?;
    if let Some(fps) = fps {
        v.fps = fps;
    }
    let a = read_wav(audio)?;
    av_align_from_media(&v, &a, config)
}

fn read_pairs(input: impl BufRead) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Format(format!(
                "stdin line {}: expected `VIDEO AUDIO`, found {} fields",
                n + 1,
                fields.len()
            )));
        }
        pairs.push((fields[0].into(), fields[1].into()));
    }
    Ok(pairs)
}

fn error_json(e: &Error) -> Value {
    json!({ "code": exit_code(e), "message": e.to_string() })
}

pub fn av_align(args: &AvAlignArgs, exec: Exec, out: &mut impl Write) -> Result<i32> {
    let fps = args.fps_override.as_deref().map(str::parse::<Fps>).transpose()?;
    let config = AlignConfig {
        tolerance: args.tolerance,
        ..AlignConfig::default()
    };

    if !args.batch {
        let (video, audio) = (args.video.as_ref().unwrap(), args.audio.as_ref().unwrap());
        let report = align_pair(video, audio, fps, &config)?;
        if args.json {
            writeln!(out, "{}", report.to_json())?;
        } else {
            write!(out, "{}", report.to_key_value())?;
        }
        return Ok(0);
    }

    let pairs = read_pairs(std::io::stdin().lock())?;
    let results = exec.map(&pairs, |(v, a)| align_pair(v, a, fps, &config));
    let scores: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.score).collect();
    let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let code = results.iter().find_map(|r| r.as_ref().err()).map_or(0, exit_code);

    if args.json {
        let items: Vec<Value> = pairs
            .iter()
            .zip(&results)
            .map(|((v, a), r)| {
                let mut item = json!({ "video": v.display().to_string(), "audio": a.display().to_string() });
                match r {
                    Ok(rep) => item["report"] = serde_json::to_value(rep).expect("report serializes"),
                    Err(e) => item["error"] = error_json(e),
                }
                item
            })
            .collect();
        let doc = json!({
            "results": items,
            "pairs": pairs.len(),
            "failed": pairs.len() - scores.len(),
            "mean_score": mean,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("json serializes"))?;
    } else {
        for ((v, a), r) in pairs.iter().zip(&results) {
            let tail = match r {
                Ok(rep) => rep.to_key_value().split_whitespace().collect::<Vec<_>>().join(" "),
                Err(e) => format!("error={:?}", e.to_string()),
            };
            writeln!(out, "video={} audio={} {tail}", v.display(), a.display())?;
        }
        let mean = mean.map_or("nan".to_string(), |m| format!("{m:.6}"));
        writeln!(
            out,
            "pairs={} failed={} mean_score={mean}",
            pairs.len(),
            pairs.len() - scores.len()
        )?;
    }
    Ok(code)
}

pub fn tokens(args: &TokensArgs, out: &mut impl Write) -> Result<i32> {
    let from_file = args.embeddings.as_ref().map(read_embeddings).transpose()?;
    let (config, adapter) = match &args.ckpt {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            (ckpt.config, ckpt.adapter)
        }
        None => {
            let (layers, enc_dim) = from_file.as_ref().map_or((args.layers, args.dim), |e| (e.layers(), e.dim()));
            let config = ModelConfig {
                layers,
                enc_dim,
                token_dim: args.token_dim,
                mapper_hidden: args.mapper_hidden,
                ..ModelConfig::default()
            };
            config.validate()?;
            let adapter = Adapter::init(&config, args.seed);
            (config, adapter)
        }
    };

    // the toy encoder always follows the adapter's shape
    let embeddings = match (from_file, &args.audio) {
        (Some(e), _) => e,
        (None, Some(path)) => embed_audio(&read_wav(path)?, args.segments, &config)?,
        (None, None) => return Err(Error::Validation("one of --embeddings or --audio is required".into())),
    };
    if (embeddings.layers(), embeddings.dim()) != (config.layers, config.enc_dim) {
        return Err(Error::Shape(format!(
            "embeddings are {}x{} per segment but the adapter expects {}x{}",
            embeddings.layers(),
            embeddings.dim(),
            config.layers,
            config.enc_dim
        )));
    }

    let cond = condition_for(&embeddings, &adapter, condition_mode(args.mode))?;
    write_condition(&cond, &args.out)?;
    writeln!(out, "frames={}", cond.frame_count())?;
    writeln!(out, "tokens_per_frame={}", cond.tokens_per_frame()?)?;
    writeln!(out, "token_dim={}", cond.token_dim())?;
    Ok(0)
}

pub fn gen_synth(args: &GenSynthArgs, exec: Exec, out: &mut impl Write) -> Result<i32> {
    let config = SynthConfig {
        width: args.width,
        height: args.height,
        fps: args.fps,
        duration_secs: args.duration,
        sample_rate: args.sample_rate,
        n_events: args.events,
        event_kind: match args.kind {
            Kind::Bounce => EventKind::Bounce,
            Kind::Flash => EventKind::Flash,
        },
        shift_frames: args.shift,
        seed: args.seed,
    };
    let entries = corpus(&config, args.clips, &args.out, exec)?;
    writeln!(out, "clips={}", entries.len())?;
    writeln!(out, "dir={}", args.out.display())?;
    Ok(0)
}

pub fn train_toy(args: &TrainToyArgs, exec: Exec, out: &mut impl Write) -> Result<i32> {
    let pairs = load_corpus(&args.corpus, exec)?;
    let first = &pairs[0].0;
    let config = ModelConfig {
        width: first.width,
        height: first.height,
        fps: first.fps,
        frames: args.frames,
        mapper_hidden: args.mapper_hidden,
        mode: condition_mode(args.mode),
        ..ModelConfig::default()
    };
    let model = ToyModel::new(config)?;
    let dataset = model.encode_dataset(&pairs, exec)?;
    let (optimizer, default_lr) = match args.optimizer {
        OptimizerKind::Sgd => (Optimizer::Sgd, DEFAULT_SGD_RATE),
        OptimizerKind::Adamw => (Optimizer::adamw(), DEFAULT_ADAMW_RATE),
    };
    let train_config = TrainConfig {
        batch_videos: args.batch,
        frames_per_video: args.frames,
        steps: args.steps,
        learning_rate: args.lr.unwrap_or(default_lr),
        lambda_l1: args.lambda_l1,
        seed: args.seed,
        optimizer,
        exec,
    };
    let adapter = Adapter::init(&config, args.seed);
    let outcome = train(&model, adapter, &dataset, &train_config)?;

    write_checkpoint(
        &Checkpoint {
            config,
            adapter: outcome.adapter.clone(),
        },
        &args.ckpt,
    )?;
    let log_path = args.loss_log.clone().unwrap_or_else(|| {
        let mut p = args.ckpt.clone().into_os_string();
        p.push(".loss.txt");
        p.into()
    });
    write_loss_history(&outcome.history, &log_path)?;

    writeln!(out, "steps={}", outcome.history.len())?;
    let window = args.window.min(outcome.history.len());
    if let Some((head, tail)) = outcome.window_means(window) {
        writeln!(out, "first_window_mean={head:.6}")?;
        writeln!(out, "last_window_mean={tail:.6}")?;
        writeln!(out, "ratio={:.6}", tail / head)?;
    }
    writeln!(
        out,
        "backbone_unchanged={}",
        outcome.frozen_before == outcome.frozen_after
    )?;
    writeln!(out, "mapper_hash={}", outcome.adapter.mapper_hash())?;
    writeln!(out, "pooling_hash={}", outcome.adapter.pooling_hash())?;
    writeln!(out, "ckpt={}", args.ckpt.display())?;
    writeln!(out, "loss_log={}", log_path.display())?;
    Ok(0)
}

pub fn generate(args: &GenerateArgs, out: &mut impl Write) -> Result<i32> {
    let ckpt = read_checkpoint(&args.ckpt)?;
    let model = ToyModel::new(ckpt.config)?;
    let audio = read_wav(&args.audio)?;
    let mut rng = tempo_core::numerics::Rng::new(args.seed);
    let video = generate_from_audio(&audio, args.start, &ckpt.adapter, &model, &mut rng)?;
    write_rvid(&video, &args.out)?;
    writeln!(out, "frames={}", video.frame_count())?;
    writeln!(out, "size={}x{}", video.width, video.height)?;
    writeln!(out, "fps={}", video.fps)?;
    Ok(0)
}
