use std::time::Instant;

use anyhow::{Context, Result};
use emo_core::analysis::mpl::probe_plan;
use emo_core::analysis::{
    compare_similarity, count_costs, diag_similarity, gradcheck_suite, influence_mask, max_path_length, InfluenceMode,
};
use emo_core::container::read_tensor;
use emo_core::mmb::BlockPlan;
use emo_core::{
    build_emo, equivalence_check, EmoVariantConfig, Init, IrmbConfig, Model, Precision, Rng, Scalar, Shape, Tensor,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{InputSpec, RunConfig};
use crate::error::{ConfigError, InternalError};
use crate::output::{document, render};
use crate::{BlockArgs, Cli, Command, Format, InitArg, ModeArg};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const MIN_BENCH_RUNS: usize = 30;

struct Ctx {
    cfg: RunConfig,
    preset: Option<emo_core::Variant>,
    seed: u64,
    precision: Precision,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(r) = cli.common.resolution {
            cfg.resolution = Some(r);
        }
        Ok(Ctx {
            seed: cli.common.seed.or(cfg.seed).unwrap_or(0),
            precision: cli.common.precision.or(cfg.precision).unwrap_or(Precision::F64),
            preset: cli.common.preset,
            cfg,
        })
    }

    fn variant(&self) -> Result<EmoVariantConfig> {
        let v = self.cfg.variant(self.preset)?;
        v.validate()?;
        Ok(v)
    }

    fn input(&self, flag: &Option<String>) -> Result<InputSpec> {
        Ok(InputSpec::parse(flag.as_deref().or(self.cfg.input.as_deref()).unwrap_or("noise"))?)
    }
}

/// Runs one subcommand and returns the text to emit.
pub fn run(cli: &Cli) -> Result<String> {
    let ctx = Ctx::new(cli)?;
    let doc = match &cli.command {
        Command::Describe => document("describe", describe(&ctx)?)?,
        Command::Count { format } => {
            let cfg = ctx.variant()?;
            let report = count_costs(&cfg, cfg.resolution, cfg.resolution)?;
            if *format == Format::Table {
                return Ok(report.to_table());
            }
            document("count", report)?
        }
        Command::Forward { input, init, weights, save_weights } => {
            let spec = ctx.input(input)?;
            let args = ForwardArgs { spec, init: *init, weights: weights.clone(), save: save_weights.clone() };
            match ctx.precision {
                Precision::F32 => document("forward", forward::<f32>(&ctx, &args)?)?,
                Precision::F64 => document("forward", forward::<f64>(&ctx, &args)?)?,
            }
        }
        Command::Gradcheck { channels, map, samples } => {
            if ctx.precision != Precision::F64 {
                return Err(ConfigError("gradient checks run in f64 only".into()).into());
            }
            let checks = gradcheck_suite(*channels, *map, ctx.seed, *samples)?;
            let worst = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
            document(
                "gradcheck",
                json!({
                    "seed": ctx.seed,
                    "channels": channels,
                    "map": map,
                    "samples": samples,
                    "tolerance": GRAD_TOLERANCE,
                    "max_rel_err": worst,
                    "pass": worst < GRAD_TOLERANCE,
                    "checks": checks,
                }),
            )?
        }
        Command::Equiv { channels, heads, groups, lambda, window } => {
            let mut b = ctx.cfg.block.unwrap_or(IrmbConfig { heads: Some(2), window: Some(3), ..IrmbConfig::new(8, 8, 2.0) });
            if let Some(c) = channels {
                b.in_channels = *c;
                b.out_channels = *c;
            }
            b.heads = heads.or(b.heads);
            b.expand_groups = groups.or(b.expand_groups);
            b.expansion_ratio = lambda.unwrap_or(b.expansion_ratio);
            b.window = window.or(b.window);
            b.enable_attn = true;
            b.attn_pre_expand = true;
            let report = match ctx.precision {
                Precision::F32 => equivalence_check::<f32>(&b, ctx.seed)?,
                Precision::F64 => equivalence_check::<f64>(&b, ctx.seed)?,
            };
            let mut v = serde_json::to_value(report)?;
            v["seed"] = json!(ctx.seed);
            v["channels"] = json!(b.in_channels);
            v["lambda"] = json!(b.expansion_ratio);
            v["window"] = json!(b.window);
            document("equiv", v)?
        }
        Command::Influence { block, map, depth, source, mode } => {
            if *depth == 0 {
                return Err(ConfigError("depth must be >= 1".into()).into());
            }
            if source.len() != 2 {
                return Err(ConfigError("--source takes `row,col`".into()).into());
            }
            let plan = block_plan(&ctx, block)?;
            let src = (source[0], source[1]);
            let mode = match mode {
                ModeArg::Structural => InfluenceMode::Structural,
                ModeArg::Vjp => InfluenceMode::Vjp { seed: ctx.seed },
            };
            let m = influence_mask(&vec![plan; *depth], *map, *map, src, mode)?;
            let rows: Vec<String> = (0..m.height)
                .map(|y| (0..m.width).map(|x| if m.contains(y, x) { '#' } else { '.' }).collect())
                .collect();
            document(
                "influence",
                json!({
                    "map": map,
                    "depth": depth,
                    "source": [src.0, src.1],
                    "mode": mode,
                    "count": m.count(),
                    "chebyshev_radius": m.chebyshev_radius(),
                    "rows": rows,
                }),
            )?
        }
        Command::Mpl { block, map } => document("mpl", max_path_length(&block_plan(&ctx, block)?, *map)?)?,
        Command::Similarity { stage, seeds, input } => similarity(&ctx, *stage, *seeds, input)?,
        Command::Bench { runs, warmup } => {
            if *runs < MIN_BENCH_RUNS {
                return Err(ConfigError(format!("bench needs at least {MIN_BENCH_RUNS} runs")).into());
            }
            match ctx.precision {
                Precision::F32 => document("bench", bench::<f32>(&ctx, *runs, *warmup)?)?,
                Precision::F64 => document("bench", bench::<f64>(&ctx, *runs, *warmup)?)?,
            }
        }
    };
    Ok(render(&doc))
}

fn block_plan(ctx: &Ctx, b: &BlockArgs) -> Result<BlockPlan> {
    if let Some(cfg) = ctx.cfg.block {
        return Ok(cfg.plan()?);
    }
    Ok(probe_plan(b.kernel.unwrap_or(3), b.window, !b.no_attn, !b.no_conv)?)
}

#[derive(Serialize)]
struct BlockRow {
    name: String,
    stage: usize,
    input_hw: (usize, usize),
    output_hw: (usize, usize),
    plan: BlockPlan,
}

#[derive(Serialize)]
struct Description {
    model: EmoVariantConfig,
    params: u64,
    buffers: u64,
    blocks: Vec<BlockRow>,
}

fn describe(ctx: &Ctx) -> Result<Description> {
    let cfg = ctx.variant()?;
    let r = cfg.resolution;
    let costs = count_costs(&cfg, r, r)?;
    let blocks = cfg
        .layout(r, r)?
        .into_iter()
        .map(|s| BlockRow { name: s.name, stage: s.stage, input_hw: s.input_hw, output_hw: s.output_hw, plan: s.plan })
        .collect();
    Ok(Description { params: costs.totals.params, buffers: costs.buffers, blocks, model: cfg })
}

fn make_input<T: Scalar>(spec: &InputSpec, seed: u64, side: usize) -> Result<Tensor<T>> {
    let shape = Shape::new(1, 3, side, side);
    Ok(match spec {
        InputSpec::Noise => {
            let mut rng = Rng::new(seed).fork(0x1a);
            Tensor::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0))
        }
        InputSpec::Constant(v) => Tensor::full(shape, *v),
        InputSpec::File(p) => read_tensor(p).with_context(|| format!("reading {}", p.display()))?,
    })
}

fn init_of(a: InitArg) -> Init {
    match a {
        InitArg::Default => Init::Default,
        InitArg::Generic => Init::Generic,
    }
}

struct ForwardArgs {
    spec: InputSpec,
    init: InitArg,
    weights: Option<std::path::PathBuf>,
    save: Option<std::path::PathBuf>,
}

fn model<T: Scalar>(ctx: &Ctx, cfg: &EmoVariantConfig, init: InitArg, weights: &Option<std::path::PathBuf>) -> Result<Model<T>> {
    let mut m = build_emo::<T>(cfg, ctx.seed, init_of(init))?;
    if let Some(p) = weights {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        m.load_weights(&bytes)?;
    }
    Ok(m)
}

fn forward<T: Scalar>(ctx: &Ctx, a: &ForwardArgs) -> Result<Value> {
    let cfg = ctx.variant()?;
    let m = model::<T>(ctx, &cfg, a.init, &a.weights)?;
    if let Some(p) = &a.save {
        std::fs::write(p, m.save_weights()?).with_context(|| format!("writing {}", p.display()))?;
    }
    let x = make_input::<T>(&a.spec, ctx.seed, cfg.resolution)?;
    let s = x.shape();
    let (logits, trace) = m.forward_traced(&x)?;
    let expected = count_costs(&cfg, s.h, s.w)?.totals;
    if trace.macs != s.n as u64 * expected.macs || trace.softmax_flops != s.n as u64 * expected.softmax_flops {
        return Err(InternalError(format!(
            "traced work ({} MACs) disagrees with the static count ({} MACs)",
            trace.macs,
            s.n as u64 * expected.macs
        ))
        .into());
    }
    let classes = logits.shape().c;
    let rows: Vec<Vec<f64>> = logits.to_f64_vec().chunks(classes).map(|c| c.to_vec()).collect();
    let argmax: Vec<usize> = rows
        .iter()
        .map(|r| r.iter().enumerate().fold(0, |best, (i, v)| if *v > r[best] { i } else { best }))
        .collect();
    let constant = rows.iter().all(|r| r.iter().all(|v| *v == r[0]));
    Ok(json!({
        "model": cfg.name,
        "precision": ctx.precision,
        "seed": ctx.seed,
        "init": if a.weights.is_some() { "loaded" } else if a.init == InitArg::Default { "default" } else { "generic" },
        "input": a.spec.describe(),
        "input_shape": [s.n, s.c, s.h, s.w],
        "macs": trace.macs,
        "softmax_flops": trace.softmax_flops,
        "constant_logits": constant,
        "argmax": argmax,
        "logits": rows,
    }))
}

fn similarity(ctx: &Ctx, stage: usize, seeds: u64, input: &Option<String>) -> Result<Value> {
    if ctx.cfg.has_model(ctx.preset) {
        let cfg = ctx.variant()?;
        let spec = ctx.input(input)?;
        let sims = match ctx.precision {
            Precision::F32 => {
                let m = model::<f32>(ctx, &cfg, InitArg::Generic, &None)?;
                diag_similarity(&m, stage, &make_input(&spec, ctx.seed, cfg.resolution)?)?
            }
            Precision::F64 => {
                let m = model::<f64>(ctx, &cfg, InitArg::Generic, &None)?;
                diag_similarity(&m, stage, &make_input(&spec, ctx.seed, cfg.resolution)?)?
            }
        };
        return document(
            "similarity",
            json!({ "mode": "model", "model": cfg.name, "seed": ctx.seed, "stage": stage, "input": spec.describe(), "similarities": sims }),
        );
    }
    if seeds == 0 {
        return Err(ConfigError("seeds must be >= 1".into()).into());
    }
    let probe = ctx.cfg.probe.unwrap_or_default();
    let comparisons = (ctx.seed..ctx.seed + seeds).map(|s| compare_similarity(&probe, s)).collect::<Result<Vec<_>, _>>()?;
    let higher = comparisons.iter().filter(|c| c.attention_higher()).count();
    document(
        "similarity",
        json!({
            "mode": "probe",
            "probe": probe,
            "radius": probe.conv_radius(),
            "attention_higher": higher,
            "seeds": seeds,
            "comparisons": comparisons,
        }),
    )
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn bench<T: Scalar>(ctx: &Ctx, runs: usize, warmup: usize) -> Result<Value> {
    let cfg = ctx.variant()?;
    let m = model::<T>(ctx, &cfg, InitArg::Default, &None)?;
    let x = make_input::<T>(&InputSpec::Noise, ctx.seed, cfg.resolution)?;
    for _ in 0..warmup {
        m.forward(&x)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        std::hint::black_box(m.forward(&x)?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(json!({
        "note": "local wall-clock measurement on this machine; not comparable to any published throughput figure",
        "model": cfg.name,
        "precision": ctx.precision,
        "resolution": cfg.resolution,
        "runs": runs,
        "warmup": warmup,
        "median_ms": percentile(&times, 0.5),
        "p10_ms": percentile(&times, 0.1),
        "p90_ms": percentile(&times, 0.9),
        "min_ms": times[0],
        "max_ms": times[runs - 1],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use emo_core::analysis::StageProbe;

    #[test]
    fn percentiles_pick_ranks() {
        let v: Vec<f64> = (0..31).map(f64::from).collect();
        assert_eq!((percentile(&v, 0.1), percentile(&v, 0.5), percentile(&v, 0.9)), (3.0, 15.0, 27.0));
    }

    #[test]
    fn default_probe_matches_core_default() {
        assert_eq!(StageProbe::default().conv_radius(), 2);
    }
}
