//! Command line front end.
//!
//! Exit status: 0 on success, 1 for usage errors (bad flags or values),
//! 2 for runtime failures (I/O, malformed files, invalid configurations).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::config::{parse_config, RunConfig};
use super::ppm::{read_ppm, write_ppm};
use super::recon::reconstruct;
use super::report::{emit, json_artifact, num, Csv};
use super::image_pool;
use super::synth::SynthKind;
use crate::cost::{cost_report, Convention};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::geometry::{generate_mask, oracle_suite, sample_stats, throw_with, GridShape, Strategy};
use crate::model::{Aggregation, Mode, ModelConfig, ParameterSet};
use crate::rng;
use crate::training::{gradient_deviation, moving_average, train_toy};

use super::{STREAM_MASK, STREAM_PARAMS};

#[derive(Parser, Debug)]
#[command(name = "prmim", version, about = "Partial-reconstruction masked image modeling experiments")]
struct Cli {
    /// Evaluate independent work items on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic FLOPs and activation-memory report.
    Cost(CostArgs),
    /// Dispersion and isolation statistics of throwing strategies.
    SampleStats(SampleStatsArgs),
    /// Gradient deviation of partial and progressive reconstruction.
    GradDev(GradDevArgs),
    /// Pre-train a toy model on synthetic images.
    TrainToy(TrainArgs),
    /// Reconstruct one image with a (trained or fresh) model.
    Reconstruct(ReconstructArgs),
    /// Greedy furthest sampling against exhaustive search.
    OracleSample(OracleArgs),
}

#[derive(Args, Debug, Clone)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rho_e: Option<f64>,
    #[arg(long)]
    rho_d: Option<f64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Synthetic image generator: gradient, checker, gaussian_blobs or noise.
    #[arg(long)]
    data: Option<SynthKind>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Preset {
    Toy,
    VitBase,
    VitLarge,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum AggregationArg {
    DepthwiseConv,
    TransformerBlock,
    ConvnextBlock,
    AveragePool,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::DepthwiseConv => Aggregation::DepthwiseConv,
            AggregationArg::TransformerBlock => Aggregation::TransformerBlock,
            AggregationArg::ConvnextBlock => Aggregation::ConvnextBlock,
            AggregationArg::AveragePool => Aggregation::AveragePool,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ConventionArg {
    /// One multiply-accumulate counts as one FLOP.
    Mac,
    /// One multiply-accumulate counts as two FLOPs.
    TwoFlops,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    run: Overrides,
    /// Model preset used when no --config is given.
    #[arg(long, value_enum, default_value = "vit-base")]
    preset: Preset,
    #[arg(long, value_enum, default_value = "mac")]
    convention: ConventionArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleStatsArgs {
    /// Side of a square token grid.
    #[arg(long, default_value_t = 14)]
    grid: usize,
    #[arg(long, default_value_t = 0.75)]
    rho_e: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_d: f64,
    #[arg(long, value_enum, default_value = "both")]
    strategy: StrategyChoice,
    /// Number of seeds (masks) per strategy.
    #[arg(long, default_value_t = 200)]
    seeds: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum StrategyChoice {
    Random,
    Furthest,
    Both,
}

#[derive(Args, Debug)]
struct GradDevArgs {
    #[command(flatten)]
    run: Overrides,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.65")]
    ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "full,partial,progressive")]
    modes: Vec<Mode>,
    /// Throw resamples per (mode, ratio).
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Images in the fixed batch.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Evaluate at these parameters instead of a fresh initialisation.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: Overrides,
    #[arg(long)]
    steps: Option<usize>,
    /// Loss curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Final parameters.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    run: Overrides,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Input PPM; a synthetic image is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the masked input.
    #[arg(long)]
    masked_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 12)]
    max_masked: usize,
    /// Random selections per instance for the median baseline.
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 1;
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match dispatch(cli.command, exec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => {
                    eprintln!("\n{}", Cli::command().render_usage());
                    1
                }
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command, exec: Exec) -> Result<()> {
    match command {
        Command::Cost(a) => cost(a),
        Command::SampleStats(a) => sample_stats_cmd(a, exec),
        Command::GradDev(a) => grad_dev(a, exec),
        Command::TrainToy(a) => train(a, exec),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::OracleSample(a) => oracle(a, exec),
    }
}

fn resolve(o: &Overrides, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => parse_config(path)?,
        None => base,
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.rho_e {
        cfg.rho_e = v;
    }
    if let Some(v) = o.rho_d {
        cfg.rho_d = v;
    }
    if let Some(v) = o.mode {
        cfg.mode = v;
    }
    if let Some(v) = o.aggregation {
        cfg.aggregation = v.into();
    }
    if let Some(v) = o.strategy {
        cfg.sampling = v;
    }
    if let Some(v) = o.data {
        cfg.data = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_params(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ParameterSet> {
    match checkpoint {
        Some(p) => read_checkpoint(p, &cfg.model()),
        None => ParameterSet::init(&cfg.model(), rng::derive(cfg.seed, &[STREAM_PARAMS])),
    }
}

fn cost(a: CostArgs) -> Result<()> {
    let preset = match a.preset {
        Preset::Toy => ModelConfig::toy(),
        Preset::VitBase => ModelConfig::mae_vit_base(),
        Preset::VitLarge => ModelConfig::mae_vit_large(),
    };
    let cfg = resolve(&a.run, RunConfig::from_model(&preset))?;
    let convention = match a.convention {
        ConventionArg::Mac => Convention::MacIsOneFlop,
        ConventionArg::TwoFlops => Convention::MacIsTwoFlops,
    };
    let report = cost_report(&cfg.model(), cfg.rho_e, cfg.rho_d, convention)?;
    emit(&json_artifact("cost", cfg.seed, &cfg, &report)?, a.out.as_deref())
}

fn sample_stats_cmd(a: SampleStatsArgs, exec: Exec) -> Result<()> {
    let grid = GridShape::square(a.grid).map_err(|e| Error::Usage(e.to_string()))?;
    let strategies = match a.strategy {
        StrategyChoice::Random => vec![Strategy::Random],
        StrategyChoice::Furthest => vec![Strategy::Furthest],
        StrategyChoice::Both => vec![Strategy::Random, Strategy::Furthest],
    };
    let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| rng::derive(a.seed, &[k])).collect();
    let config = json!({
        "grid": a.grid, "rho_e": a.rho_e, "rho_d": a.rho_d, "strategy": a.strategy,
        "seeds": a.seeds, "window": a.window,
    });
    let mut csv = Csv::new("sample-stats", a.seed, &config, &["strategy", "seed", "objective", "min_dist", "isolation_rate"])?;
    for s in strategies {
        let stats = sample_stats(grid, a.rho_e, a.rho_d, s, &seeds, a.window, exec)?;
        for st in &stats {
            csv.row(&[
                s.name().into(),
                st.seed.to_string(),
                num(st.objective),
                st.min_dist.map(num).unwrap_or_default(),
                num(st.isolation_rate),
            ]);
        }
        let n = stats.len().max(1) as f64;
        let obj: Vec<f64> = stats.iter().map(|s| s.objective).collect();
        let iso: Vec<f64> = stats.iter().map(|s| s.isolation_rate).collect();
        eprintln!(
            "{}: mean objective {:.4}, mean isolation rate {:.6}",
            s.name(),
            pairwise_sum(&obj) / n,
            pairwise_sum(&iso) / n
        );
    }
    emit(&csv.finish(), a.out.as_deref())
}

fn grad_dev(a: GradDevArgs, exec: Exec) -> Result<()> {
    if a.samples == 0 || a.batch == 0 {
        return Err(Error::Usage("--samples and --batch must be at least 1".into()));
    }
    let cfg = resolve(&a.run, RunConfig::default())?;
    let params = load_params(&cfg, a.checkpoint.as_deref())?;
    let images = image_pool(&cfg, a.batch);
    let opts = cfg.deviation_options(a.ratios.clone(), a.modes.clone(), a.samples);
    let report = gradient_deviation(&cfg.model(), &params, &images, &opts, rng::derive(cfg.seed, &[STREAM_MASK]), exec)?;
    let config = json!({
        "run": cfg, "ratios": a.ratios, "modes": a.modes, "samples": a.samples, "batch": a.batch,
        "checkpoint": a.checkpoint, "excluded_params": report.excluded, "reference_norm": report.reference_norm,
    });
    let mut csv = Csv::new(
        "grad-dev",
        cfg.seed,
        &config,
        &["mode", "rho_d", "n_samples", "mean_dev", "std_dev", "mean_rel_dev", "seed"],
    )?;
    for r in &report.rows {
        csv.row(&[
            r.mode.name().into(),
            num(r.rho_d),
            r.samples.to_string(),
            num(r.mean),
            num(r.std),
            num(r.mean_relative),
            cfg.seed.to_string(),
        ]);
    }
    emit(&csv.finish(), a.out.as_deref())
}

fn train(a: TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = resolve(&a.run, RunConfig::default())?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let images = image_pool(&cfg, cfg.n_images);
    let outcome = train_toy(&cfg.model(), &images, &cfg.train_options(), cfg.seed, exec)?;
    let ma = moving_average(&outcome.losses, 20);
    let mut csv = Csv::new("train-toy", cfg.seed, &cfg, &["step", "loss", "lr", "loss_ma20"])?;
    for (i, (l, lr)) in outcome.losses.iter().zip(&outcome.learning_rates).enumerate() {
        csv.row(&[i.to_string(), num(*l), num(*lr), num(ma[i])]);
    }
    let (first, last) = (ma[(19).min(ma.len() - 1)], ma[ma.len() - 1]);
    eprintln!("moving-average loss {first:.6} -> {last:.6} (ratio {:.4})", last / first);
    if let Some(p) = &a.checkpoint {
        write_checkpoint(&outcome.params, p)?;
    }
    emit(&csv.finish(), a.out.as_deref())
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let cfg = resolve(&a.run, RunConfig::default())?;
    let model = cfg.model();
    let params = load_params(&cfg, a.checkpoint.as_deref())?;
    let image = match &a.input {
        Some(p) => {
            if model.in_channels != 3 {
                return Err(Error::Config(format!("PPM input needs in_channels = 3, config has {}", model.in_channels)));
            }
            read_ppm(p)?
        }
        None => image_pool(&cfg, 1).remove(0),
    };
    let expect = [model.in_channels, model.image_height(), model.image_width()];
    if image.shape() != expect {
        return Err(Error::shape("reconstruct", image.shape(), &expect));
    }
    let mask = generate_mask(model.grid, cfg.rho_e, rng::derive(cfg.seed, &[STREAM_MASK, 0]))?;
    let rho_d = if cfg.mode == Mode::Full { 0.0 } else { cfg.rho_d };
    let plan = throw_with(cfg.sampling, &mask, rho_d, rng::derive(cfg.seed, &[STREAM_MASK, 1]))?;
    let r = reconstruct(&model, &params, &image, &plan, cfg.mode)?;
    let provenance = vec![
        "command: reconstruct".to_string(),
        format!("seed: {}", cfg.seed),
        format!("config: {}", serde_json::to_string(&cfg).map_err(|e| Error::Format(e.to_string()))?),
        format!("checkpoint: {}", a.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
        format!("loss: {}", num(r.loss)),
    ];
    write_ppm(&r.composite, &a.out, &provenance)?;
    if let Some(p) = &a.masked_out {
        write_ppm(&r.masked, p, &provenance)?;
    }
    eprintln!("masked loss {:.6}", r.loss);
    Ok(())
}

fn oracle(a: OracleArgs, exec: Exec) -> Result<()> {
    if a.max_masked < 3 || a.draws == 0 {
        return Err(Error::Usage("--max-masked must be at least 3 and --draws at least 1".into()));
    }
    let rows = oracle_suite(a.instances, a.max_masked, a.draws, a.seed, exec)?;
    let config = json!({"instances": a.instances, "max_masked": a.max_masked, "draws": a.draws});
    let mut csv = Csv::new(
        "oracle-sample",
        a.seed,
        &config,
        &[
            "instance", "rows", "cols", "n_masked", "retain", "feasible", "greedy_objective",
            "optimal_objective", "random_median", "greedy_min_dist", "optimal_min_dist",
        ],
    )?;
    for r in &rows {
        csv.row(&[
            r.instance.to_string(),
            r.rows.to_string(),
            r.cols.to_string(),
            r.n_masked.to_string(),
            r.retain.to_string(),
            r.feasible.to_string(),
            num(r.greedy_objective),
            num(r.optimal_objective),
            num(r.random_median),
            num(r.greedy_min_dist),
            num(r.optimal_min_dist),
        ]);
    }
    let beats = rows.iter().filter(|r| r.beats_random_median()).count();
    let floor = rows.iter().map(|r| r.min_dist_ratio()).fold(f64::INFINITY, f64::min);
    eprintln!("greedy beats the random median on {beats}/{} instances; min-distance ratio floor {floor:.4}", rows.len());
    emit(&csv.finish(), a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["prmim", "frobnicate"]), 1);
        assert_eq!(run(["prmim", "cost", "--bogus"]), 1);
        assert_eq!(run(["prmim"]), 1);
        assert_eq!(run(["prmim", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        assert_eq!(run(["prmim", "cost", "--config", "/nonexistent.json"]), 2);
        assert_eq!(run(["prmim", "cost", "--rho-e", "0.5", "--rho-d", "0.6"]), 2);
    }
}
