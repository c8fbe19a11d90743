use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use editlab_core::diffusion::{sample, DiffusionModel, Guidance};
use editlab_core::finetune::{FinetuneConfig, FinetuneMode};
use editlab_core::harness::{compare, run_pipeline, run_single_stage, Evaluation, PipelineConfig, Stage, TIE_BAND};
use editlab_core::instructions::{invert, tag, Lexicon};
use editlab_core::numerics::{derive_seed, Checkpoint, Rng};
use editlab_core::oracle::verify_sweep;
use editlab_core::worlds::EditInstruction;
use serde::Serialize;

/// Instruction-editing laboratory: data generation, diffusion training,
/// reward learning, reward fine-tuning and evaluation on synthetic worlds.
#[derive(Parser)]
#[command(name = "editlab", version)]
struct Cli {
    /// Master seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory holding artifacts and the manifest.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the small smoke configuration when no config file is given.
    #[arg(long, global = true)]
    smoke: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corrupted triplet dataset.
    GenData,
    /// Append cycle-consistency reversals.
    Augment,
    /// Train the conditional diffusion model.
    TrainSft,
    /// Sample K variants per condition and flag non-rankable groups.
    GenVariants,
    /// Rank variants with the preference oracle.
    Rank,
    /// Train the reward model on ranked groups.
    TrainRm,
    /// Score the training set and fit the five-bucket table.
    Quantize,
    /// Reward fine-tuning; flags replace the configured runs with a single run.
    Finetune(FinetuneArgs),
    /// Guidance sweep and per-condition scores for every model.
    Evaluate,
    /// Paired comparison of two evaluated models.
    Compare(CompareArgs),
    /// Exact checks of the tilt, its optimality and the conditioning identity.
    Verify(VerifyArgs),
    /// Write metrics.csv, tradeoff.svg and report.json.
    Report,
    /// Run every stage, skipping stages whose artifacts are intact.
    RunAll,
    /// Draw edits from a diffusion checkpoint.
    Sample(SampleArgs),
    /// Tag an instruction and show its inversion.
    Invert {
        /// Instruction text.
        text: String,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<FinetuneMode>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    /// Bucket file used instead of the quantize stage output.
    #[arg(long)]
    bucket_table: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Score-independent bucket labels (control run, cr mode only).
    #[arg(long)]
    permute_buckets: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value = "sft_baseline")]
    baseline: String,
    #[arg(long)]
    treatment: String,
    #[arg(long, default_value_t = TIE_BAND)]
    tie_band: f64,
    #[arg(long, default_value_t = 2000)]
    bootstrap: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 50)]
    max_n: usize,
    #[arg(long, default_value_t = 1000)]
    perturbations: usize,
}

#[derive(Args)]
struct SampleArgs {
    /// Diffusion checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Input point as `x,y`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    input: [f64; 2],
    #[arg(long)]
    instruction: String,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long)]
    guidance_image: Option<f64>,
    #[arg(long)]
    guidance_instruction: Option<f64>,
    /// Reward bucket to condition on (defaults to the checkpoint's).
    #[arg(long)]
    bucket: Option<usize>,
}

fn parse_mode(s: &str) -> Result<FinetuneMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok([p(x)?, p(y)?])
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if cli.smoke => PipelineConfig::smoke(),
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn stage(cfg: &PipelineConfig, out: &Path, s: Stage) -> Result<()> {
    let manifest = run_single_stage(cfg, out, s)?;
    let rec = manifest.stage(s).context("stage record missing")?;
    print_json(&rec.details)
}

fn finetune_runs(cfg: &mut PipelineConfig, a: &FinetuneArgs) {
    let flagged = a.mode.is_some() || a.eta.is_some() || a.clip.is_some() || a.steps.is_some() || a.lr.is_some() || a.permute_buckets;
    if flagged {
        let base = FinetuneConfig::default();
        cfg.finetune = vec![FinetuneConfig {
            mode: a.mode.unwrap_or(base.mode),
            eta: a.eta.unwrap_or(base.eta),
            weight_clip: a.clip.unwrap_or(base.weight_clip),
            steps: a.steps.unwrap_or(base.steps),
            lr: a.lr.unwrap_or(base.lr),
            permute_buckets: a.permute_buckets,
            ..base
        }];
    }
    if let Some(path) = &a.bucket_table {
        cfg.bucket_table = Some(path.clone());
    }
}

fn sample_cmd(a: &SampleArgs, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = DiffusionModel::from_checkpoint(&Checkpoint::from_json(&text)?)?;
    let instruction = EditInstruction::parse(&a.instruction)?;
    let d = Guidance::default();
    let guidance = Guidance::new(a.guidance_image.unwrap_or(d.image), a.guidance_instruction.unwrap_or(d.instruction))?;
    let mut cond = model.inference_condition(a.input, &instruction);
    if let Some(b) = a.bucket {
        cond = cond.with_bucket(Some(b));
    }
    let points: Vec<[f64; 2]> = (0..a.n as u64)
        .map(|i| sample(&model, &model.schedule, &cond, guidance, a.steps, &mut Rng::new(derive_seed(seed, i))))
        .collect();
    print_json(&points)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData => stage(&cfg, out, Stage::GenData),
        Command::Augment => stage(&cfg, out, Stage::Augment),
        Command::TrainSft => stage(&cfg, out, Stage::TrainSft),
        Command::GenVariants => stage(&cfg, out, Stage::GenVariants),
        Command::Rank => stage(&cfg, out, Stage::Rank),
        Command::TrainRm => stage(&cfg, out, Stage::TrainRm),
        Command::Quantize => stage(&cfg, out, Stage::Quantize),
        Command::Finetune(a) => {
            finetune_runs(&mut cfg, a);
            cfg.validate()?;
            stage(&cfg, out, Stage::Finetune)
        }
        Command::Evaluate => stage(&cfg, out, Stage::Evaluate),
        Command::Report => stage(&cfg, out, Stage::Report),
        Command::Compare(a) => {
            let ev = Evaluation::load(out)?;
            let c = compare(
                ev.scores(&a.baseline)?,
                ev.scores(&a.treatment)?,
                a.tie_band,
                a.bootstrap,
                &mut Rng::new(cfg.seed).fork("compare"),
            )?;
            print_json(&c)
        }
        Command::Verify(a) => {
            let r = verify_sweep(a.instances, a.max_n, a.perturbations, &mut Rng::new(cfg.seed).fork("verify"))?;
            print_json(&serde_json::json!({
                "instances": r.instances,
                "max_tv_closed_vs_numeric": r.max_tv_closed_vs_numeric,
                "max_tv_bayes_identity": r.max_tv_bayes_identity,
                "certificates_passed": r.certificates_passed,
                "min_certificate_margin": r.min_certificate_margin,
            }))
        }
        Command::RunAll => {
            let manifest = run_pipeline(&cfg, out)?;
            let done: Vec<&str> = manifest.completed().iter().map(|s| s.name()).collect();
            log::info!("completed stages: {}", done.join(", "));
            let report = std::fs::read_to_string(out.join("report.json"))?;
            let report: serde_json::Value = serde_json::from_str(&report)?;
            print_json(&report["comparisons"])
        }
        Command::Sample(a) => sample_cmd(a, cfg.seed),
        Command::Invert { text } => {
            let lex = Lexicon::bundled();
            print_json(&serde_json::json!({
                "tags": tag(text, &lex).tag_line(),
                "inverse": invert(text, &lex).text(),
            }))
        }
        Command::Config => print_json(&cfg),
    }
}
