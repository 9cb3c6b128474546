use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use vgen_core::datapipe::{
    read_jsonl, run_pipeline, stats_report, synth_corpus, write_jsonl, write_outputs, Clip,
    ClipRecord, EntropyAesthetic, FilterConfig, SynthConfig,
};
use vgen_core::dcae::{token_count, CompressionSpec};
use vgen_core::flow_match::ShiftConfig;
use vgen_core::guidance::{cfg_single, GuidanceConfig, GuidanceMode};
use vgen_core::inf_scale::{scaled_search, Continuation, ScalingConfig};
use vgen_core::mmdit::{toy_text_embed, Mmdit, MmditInit, TextEmbedding};
use vgen_core::sched_cost::{
    bucket_plan, format_kusd, paper_buckets_high_res, paper_buckets_low_res, paper_stages,
    search_batch_sizes, stage_cost, Bucket, LinearCostModel, StageSpec,
};
use vgen_core::tensor::ParamStore;
use vgen_core::tensor::{grad_check, Precision, PRIMITIVES};
use vgen_core::toy::{
    sample_gaussian_toy, sample_moving_square, train_gaussian_toy, train_moving_square,
    GaussianToyConfig, GaussianVelocity, MovingSquareConfig,
};
use vgen_core::weights::{load_weights, save_weights, Dtype};
use vgen_core::{rng, Tensor};

use crate::args::*;
use crate::config::{section, table_list, RunConfig};
use crate::error::{CliError, CliResult};

pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Ctx {
    fn out_dir(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::config(format!("output dir {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

const CLIP_FPS: f32 = 8.0;

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(format!(
            "{} does not exist",
            path.display()
        )))
    }
}

fn check_finite(t: &Tensor, what: &str) -> CliResult<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "{what} produced non-finite values"
        )))
    }
}

pub fn filter(ctx: &Ctx, a: &FilterArgs) -> CliResult<()> {
    let out = ctx.out_dir()?;
    let cfg: FilterConfig = section(ctx.config.filter.as_ref(), "filter")?;
    let corpus = a.corpus.clone().unwrap_or_else(|| out.join("corpus"));
    if a.synth {
        let synth = SynthConfig {
            seed: ctx.seed,
            clean: a.clean,
            ..SynthConfig::default()
        };
        let truth = synth_corpus(&corpus, &synth)?;
        write_jsonl(&out.join("truth.jsonl"), &truth)?;
    }
    let metadata = a
        .metadata
        .clone()
        .unwrap_or_else(|| corpus.join("metadata.jsonl"));
    require(&metadata)?;
    let result = run_pipeline(&metadata, &cfg, &EntropyAesthetic::default())?;
    write_outputs(out, &result)?;
    let names: Vec<&str> = result.tiers.iter().map(|t| t.name.as_str()).collect();
    println!(
        "records {} rejected {}",
        result.records.len(),
        result.rejected.len()
    );
    for t in &result.tiers {
        println!(
            "{} kept {} removed {}",
            t.name,
            t.kept.len(),
            t.removed.len()
        );
    }
    if let Some(sel) = &a.tier {
        let k = match sel.parse::<usize>() {
            Ok(k) if k < names.len() => k,
            Ok(k) => {
                return Err(CliError::config(format!(
                    "tier {k} out of range 0..{}",
                    names.len()
                )))
            }
            Err(_) => names
                .iter()
                .position(|n| n == sel)
                .ok_or_else(|| CliError::config(format!("unknown tier `{sel}`; have {names:?}")))?,
        };
        println!("{}", out.join(format!("{}.txt", names[k])).display());
    }
    Ok(())
}

pub fn stats(ctx: &Ctx, a: &StatsArgs) -> CliResult<()> {
    require(&a.records)?;
    let records: Vec<ClipRecord> = read_jsonl(&a.records)?;
    let report = stats_report(&records)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(ctx.out_dir()?.join("stats.json"), &text)?;
    print!("{text}");
    Ok(())
}

fn read_list<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    require(path)?;
    Ok(read_jsonl(path)?)
}

pub fn bucket_plan_cmd(ctx: &Ctx, a: &BucketPlanArgs) -> CliResult<()> {
    let buckets: Vec<Bucket> = match (a.buckets.as_deref(), &ctx.config.buckets) {
        (Some("low"), _) | (None, None) => paper_buckets_low_res(),
        (Some("high"), _) => paper_buckets_high_res(),
        (Some(file), _) => read_list(Path::new(file))?,
        (None, Some(list)) => table_list(list, "buckets")?,
    };
    let spec = CompressionSpec::preset(&a.spec)?;
    let rows = bucket_plan(&buckets, &spec)?;
    write_jsonl(&ctx.out_dir()?.join("bucket_plan.jsonl"), &rows)?;
    let mut stdout = std::io::stdout().lock();
    for r in &rows {
        writeln!(stdout, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn batch_search(ctx: &Ctx, a: &BatchSearchArgs) -> CliResult<()> {
    let model: LinearCostModel = match &a.model {
        Some(p) => {
            require(p)?;
            serde_json::from_slice(&fs::read(p)?)?
        }
        None => section(ctx.config.cost_model.as_ref(), "cost_model")?,
    };
    if a.max_batch == 0 {
        return Err(CliError::config("--max-batch must be positive"));
    }
    let sizes = search_batch_sizes(&a.tokens, &model, a.max_batch)?;
    let rows: Vec<_> = a
        .tokens
        .iter()
        .zip(&sizes)
        .map(|(t, b)| json!({"tokens": t, "batch_size": b}))
        .collect();
    write_jsonl(&ctx.out_dir()?.join("batch_sizes.jsonl"), &rows)?;
    for (t, b) in a.tokens.iter().zip(&sizes) {
        println!("{t}\t{b}");
    }
    Ok(())
}

pub fn cost(ctx: &Ctx, a: &CostArgs) -> CliResult<()> {
    let stages: Vec<StageSpec> = match (a.stages.as_deref(), &ctx.config.stages) {
        (Some("paper"), _) | (None, None) => paper_stages(),
        (Some(file), _) => read_list(Path::new(file))?,
        (None, Some(list)) => table_list(list, "stages")?,
    };
    if stages.is_empty() {
        return Err(CliError::config("no stages given"));
    }
    let mut rows = Vec::new();
    let mut total = 0.0;
    for s in &stages {
        let c = stage_cost(s)?;
        total += c;
        println!("{}\t{}\t{c}", s.name, format_kusd(c));
        rows.push(json!({"stage": s.name, "usd": c}));
    }
    println!("total\t{}\t{total}", format_kusd(total));
    rows.push(json!({"stage": "total", "usd": total}));
    write_jsonl(&ctx.out_dir()?.join("cost.jsonl"), &rows)?;
    Ok(())
}

fn write_losses(dir: &Path, losses: &[f64]) -> CliResult<()> {
    let rows: Vec<_> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| json!({"step": i + 1, "loss": l}))
        .collect();
    write_jsonl(&dir.join("losses.jsonl"), &rows)?;
    if let Some(l) = losses.iter().find(|l| !l.is_finite()) {
        return Err(CliError::numeric(format!("training loss became {l}")));
    }
    Ok(())
}

pub fn train_toy(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let dir = ctx.out_dir()?.join("weights");
    let losses = match a.task {
        Task::Gaussian => {
            let mut cfg: GaussianToyConfig = section(ctx.config.gaussian.as_ref(), "gaussian")?;
            cfg.seed = ctx.seed;
            cfg.steps = a.steps.unwrap_or(cfg.steps);
            cfg.lr = a.lr.unwrap_or(cfg.lr);
            let (model, losses) = train_gaussian_toy(&cfg)?;
            let meta = json!({"task": "gaussian", "config": cfg});
            save_weights(&dir, &model.params, Dtype::F64, Some(meta))?;
            losses
        }
        Task::Square | Task::SquareI2v => {
            let mut cfg: MovingSquareConfig = section(ctx.config.toy.as_ref(), "toy")?;
            cfg.seed = ctx.seed;
            cfg.steps = a.steps.unwrap_or(cfg.steps);
            cfg.lr = a.lr.unwrap_or(cfg.lr);
            cfg.i2v = a.task == Task::SquareI2v;
            let (model, losses) = train_moving_square(&cfg)?;
            let meta = json!({"task": "square", "config": cfg});
            save_weights(&dir, &model.params, Dtype::F64, Some(meta))?;
            losses
        }
    };
    write_losses(ctx.out_dir()?, &losses)?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("steps {} loss {first:.6} -> {last:.6}", losses.len());
    }
    println!("{}", dir.display());
    Ok(())
}

#[allow(clippy::large_enum_variant)]
enum Loaded {
    Gaussian(GaussianVelocity),
    Square(Mmdit, MovingSquareConfig),
}

fn check_names(loaded: &ParamStore, fresh: &ParamStore) -> CliResult<()> {
    let a: BTreeSet<&String> = loaded.names().iter().collect();
    let b: BTreeSet<&String> = fresh.names().iter().collect();
    if a != b {
        return Err(CliError::config(
            "weight manifest does not match the model in its metadata",
        ));
    }
    for (name, t) in fresh.iter() {
        if loaded.get(name)?.shape() != t.shape() {
            return Err(CliError::config(format!(
                "weight `{name}` has the wrong shape"
            )));
        }
    }
    Ok(())
}

fn load_model(dir: &Path) -> CliResult<Loaded> {
    require(dir)?;
    let (params, meta) = load_weights(dir)?;
    let meta = meta.ok_or_else(|| CliError::config("weight manifest has no metadata"))?;
    let task = meta
        .get("task")
        .and_then(|t| t.as_str())
        .unwrap_or_default();
    let config = meta.get("config").cloned().unwrap_or_default();
    match task {
        "gaussian" => {
            let cfg: GaussianToyConfig = serde_json::from_value(config)?;
            let fresh = GaussianVelocity::new(cfg.hidden, &mut rng::from_seed(0));
            check_names(&params, &fresh.params)?;
            Ok(Loaded::Gaussian(GaussianVelocity { params }))
        }
        "square" => {
            let cfg: MovingSquareConfig = serde_json::from_value(config)?;
            let fresh = Mmdit::new(
                cfg.model_config(),
                MmditInit::Standard,
                &mut rng::from_seed(0),
            )?;
            check_names(&params, &fresh.params)?;
            Ok(Loaded::Square(fresh.with_params(params), cfg))
        }
        other => Err(CliError::config(format!(
            "unknown task `{other}` in weight manifest"
        ))),
    }
}

/// `[1, T, H, W]` in `[-1, 1]` as a gray clip.
fn to_clip(video: &Tensor) -> CliResult<Clip> {
    let s = video.shape();
    let data = video
        .data()
        .iter()
        .map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
        .collect();
    Ok(Clip::new(s[1], s[2], s[3], 1, CLIP_FPS, data)?)
}

fn guidance(
    ctx: &Ctx,
    cfg: &MovingSquareConfig,
    steps: Option<usize>,
) -> CliResult<GuidanceConfig> {
    let mut g: GuidanceConfig = section(ctx.config.guidance.as_ref(), "guidance")?;
    g.steps = steps.unwrap_or(g.steps);
    g.frames = cfg.frames;
    if let Some(w) = g.oscillation_warmup {
        g.oscillation_warmup = Some(w.min(g.steps));
    }
    Ok(g)
}

fn noise(cfg: &MovingSquareConfig, seed: u64, k: usize) -> Tensor {
    let shape = [1, cfg.frames, cfg.size, cfg.size];
    Tensor::randn(&shape, 1.0, &mut rng::stream(seed, &format!("sample/{k}")))
}

pub fn sample(ctx: &Ctx, a: &SampleArgs) -> CliResult<()> {
    let out = ctx.out_dir()?;
    match load_model(&a.weights)? {
        Loaded::Gaussian(model) => {
            let steps = a.steps.unwrap_or(100);
            let xs =
                sample_gaussian_toy(&model, a.count, steps, &mut rng::stream(ctx.seed, "sample"))?;
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(CliError::numeric("sampler produced non-finite values"));
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            write_json(
                &out.join("samples.json"),
                &json!({"mean": mean, "std": std, "samples": xs}),
            )?;
            println!("mean {mean:.6} std {std:.6}");
        }
        Loaded::Square(model, cfg) => {
            if cfg.i2v {
                return Err(CliError::config(
                    "model was trained for i2v; use i2v-sample",
                ));
            }
            let mut g = guidance(ctx, &cfg, a.steps)?;
            g.mode = GuidanceMode::Single;
            g.g_txt = a.g_txt.unwrap_or(g.g_txt);
            for k in 0..a.count {
                let video = sample_moving_square(
                    &model,
                    &cfg,
                    &a.caption,
                    None,
                    &g,
                    &noise(&cfg, ctx.seed, k),
                )?;
                check_finite(&video, "sampler")?;
                let path = out.join(format!("sample_{k}.vclp"));
                to_clip(&video)?.write(&path)?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn first_frame(path: &Path, cfg: &MovingSquareConfig) -> CliResult<Tensor> {
    require(path)?;
    let clip = Clip::read(path)?;
    if clip.height != cfg.size || clip.width != cfg.size {
        return Err(CliError::config(format!(
            "image is {}x{}, model expects {}x{}",
            clip.height, clip.width, cfg.size, cfg.size
        )));
    }
    let data = clip.luma(0).iter().map(|v| v / 127.5 - 1.0).collect();
    Ok(Tensor::new(&[1, 1, cfg.size, cfg.size], data)?)
}

pub fn i2v_sample(ctx: &Ctx, a: &I2vArgs) -> CliResult<()> {
    let Loaded::Square(model, cfg) = load_model(&a.weights)? else {
        return Err(CliError::config("i2v-sample needs a square-i2v model"));
    };
    if !cfg.i2v {
        return Err(CliError::config(
            "model was not trained with --task square-i2v",
        ));
    }
    let mut g = guidance(ctx, &cfg, a.steps)?;
    g.g_img = a.g_img.unwrap_or(g.g_img);
    g.g_txt = a.g_txt.unwrap_or(g.g_txt);
    if let Some(m) = a.mode {
        g.mode = match m {
            Mode::Single => GuidanceMode::Single,
            Mode::Decoupled => GuidanceMode::Decoupled,
        };
    }
    let frame = a
        .image
        .as_deref()
        .map(|p| first_frame(p, &cfg))
        .transpose()?;
    let video = sample_moving_square(
        &model,
        &cfg,
        &a.caption,
        frame.as_ref(),
        &g,
        &noise(&cfg, ctx.seed, 0),
    )?;
    check_finite(&video, "sampler")?;
    let path = ctx.out_dir()?.join("i2v_sample.vclp");
    to_clip(&video)?.write(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn scale_search(ctx: &Ctx, a: &ScaleArgs) -> CliResult<()> {
    let Loaded::Square(model, cfg) = load_model(&a.weights)? else {
        return Err(CliError::config("scale-search needs a square model"));
    };
    if cfg.i2v {
        return Err(CliError::config(
            "scale-search needs a text-to-video square model",
        ));
    }
    let g = guidance(ctx, &cfg, a.steps)?;
    let g_txt = a.g_txt.unwrap_or(g.g_txt);
    let mut sc: ScalingConfig = section(ctx.config.scaling.as_ref(), "scaling")?;
    if let Some(v) = &a.inject {
        sc.injection_steps = v.iter().copied().collect();
    }
    sc.variations = a.variations.unwrap_or(sc.variations);
    sc.lookahead = a.lookahead.unwrap_or(sc.lookahead);
    sc.seeds = a.seeds.unwrap_or(sc.seeds);
    sc.noise_scale = a.noise_scale.unwrap_or(sc.noise_scale);
    sc.evals_per_step = 2;
    if let Some(w) = &a.verifier_weights {
        sc.weights = w.as_slice().try_into().map_err(|_| {
            CliError::config(format!(
                "--verifier-weights needs 6 values, got {}",
                w.len()
            ))
        })?;
    }
    if let Some(c) = a.continuation {
        sc.continuation = match c {
            ContinuationArg::BranchPoint => Continuation::BranchPoint,
            ContinuationArg::LookaheadEnd => Continuation::LookaheadEnd,
        };
    }
    let text = toy_text_embed(&a.caption, cfg.dim)?;
    let null = TextEmbedding::null(cfg.dim)?;
    let velocity = |x: &Tensor, t: f64, _: usize| {
        cfg_single(
            &model.forward(x, &null, t)?,
            &model.forward(x, &text, t)?,
            g_txt,
        )
    };
    let shape = [1, cfg.frames, cfg.size, cfg.size];
    let alpha = ShiftConfig::default().alpha(cfg.tokens());
    let r = scaled_search(
        velocity,
        |x| Ok(x.clone()),
        &shape,
        g.steps,
        alpha,
        &sc,
        ctx.seed,
    )?;
    check_finite(&r.output, "scaled sampler")?;
    let out = ctx.out_dir()?;
    write_jsonl(&out.join("trace.jsonl"), &r.trace)?;
    to_clip(&r.output)?.write(&out.join("output.vclp"))?;
    let best = r.final_scores[r.best_seed];
    write_json(
        &out.join("summary.json"),
        &json!({
            "best_seed": r.best_seed,
            "evaluations": r.evaluations,
            "final_scores": r.final_scores,
            "config": sc,
        }),
    )?;
    println!(
        "best seed {} total {:.6} evaluations {}",
        r.best_seed, best.total, r.evaluations
    );
    Ok(())
}

fn parse_shape(s: &str) -> CliResult<Vec<usize>> {
    s.split(['x', ','])
        .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::usage(format!("bad shape `{s}`; expected e.g. 3x4")))
}

pub fn grad_check_cmd(ctx: &Ctx, a: &GradCheckArgs) -> CliResult<()> {
    let shapes = if a.shapes.is_empty() {
        vec![vec![3, 4]]
    } else {
        a.shapes
            .iter()
            .map(|s| parse_shape(s))
            .collect::<CliResult<_>>()?
    };
    let ops: Vec<&str> = if a.op == "all" {
        PRIMITIVES.to_vec()
    } else {
        vec![a.op.as_str()]
    };
    let precision = match a.precision {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    };
    let mut reports = Vec::new();
    for op in ops {
        let r = grad_check(op, &shapes, a.tol, precision, ctx.seed)?;
        println!("{}", serde_json::to_string(&r)?);
        reports.push(r);
    }
    write_jsonl(&ctx.out_dir()?.join("grad_check.jsonl"), &reports)?;
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.op.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed for {failed:?}"
        )))
    }
}

pub fn token_count_cmd(a: &TokenCountArgs) -> CliResult<()> {
    let (h, w) = match (a.size, a.height, a.width) {
        (Some(s), _, _) => (s, s),
        (None, Some(h), Some(w)) => (h, w),
        _ => return Err(CliError::usage("give --size or both --height and --width")),
    };
    let spec = CompressionSpec::preset(&a.spec)?;
    println!("{}", token_count(a.frames, h, w, &spec)?);
    Ok(())
}
