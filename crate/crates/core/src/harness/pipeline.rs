use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::{
    compare, condition_scores, eval_conditions, evaluate, Comparison, ConditionScores, MetricsRow, TIE_BAND,
};
use super::report::emit_report;
use super::HarnessError;
use crate::diffusion::{train_sft, DiffusionModel, Guidance, TrainConfig};
use crate::finetune::{finetune, FinetuneConfig, FinetuneMode, FinetuneReport};
use crate::instructions::{augment, AugmentStats, Lexicon};
use crate::jsonl::{from_jsonl, to_jsonl};
use crate::numerics::{AdamConfig, Checkpoint, Rng};
use crate::preference::{generate_groups, rank_groups, FilterStats, FilterThresholds, RankedGroup, SamplerConfig};
use crate::reward::{quantize, score_dataset, score_records, scores_from_records, train_rm, BucketTable, RewardModel, RmConfig, ScoreRecord, Standardizer};
use crate::worlds::{PreferenceOracle, Triplet, World};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Augment,
    TrainSft,
    GenVariants,
    Rank,
    TrainRm,
    Quantize,
    Finetune,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenData,
        Stage::Augment,
        Stage::TrainSft,
        Stage::GenVariants,
        Stage::Rank,
        Stage::TrainRm,
        Stage::Quantize,
        Stage::Finetune,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Augment => "augment",
            Stage::TrainSft => "train-sft",
            Stage::GenVariants => "gen-variants",
            Stage::Rank => "rank",
            Stage::TrainRm => "train-rm",
            Stage::Quantize => "quantize",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub conditions: usize,
    pub samples_per_condition: usize,
    /// Image guidance scales of the trade-off sweep.
    pub image_sweep: Vec<f64>,
    /// Instruction guidance held fixed during the sweep.
    pub instruction_scale: f64,
    /// Guidance of the paired per-condition comparisons.
    pub compare_guidance: Guidance,
    pub compare_samples: usize,
    pub sampler_steps: usize,
    pub bootstrap: usize,
    pub tie_band: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            conditions: 200,
            samples_per_condition: 8,
            image_sweep: vec![1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2],
            instruction_scale: Guidance::default().instruction,
            compare_guidance: Guidance::NONE,
            compare_samples: 16,
            sampler_steps: 100,
            bootstrap: 2000,
            tie_band: TIE_BAND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub world: World,
    pub dataset_size: usize,
    pub corruption_rate: f64,
    pub augment: bool,
    pub oracle: PreferenceOracle,
    pub sft: TrainConfig,
    pub groups: usize,
    pub k: usize,
    pub variant_sampler: SamplerConfig,
    pub thresholds: FilterThresholds,
    pub rm: RmConfig,
    pub finetune: Vec<FinetuneConfig>,
    /// Bucket file to use instead of the quantize stage's `buckets.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bucket_table: Option<std::path::PathBuf>,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ft = FinetuneConfig::default();
        Self {
            seed: 0,
            world: World::continuous(),
            dataset_size: 8000,
            corruption_rate: 0.3,
            augment: true,
            oracle: PreferenceOracle::default(),
            sft: TrainConfig::default(),
            groups: 600,
            k: 5,
            variant_sampler: SamplerConfig::default(),
            thresholds: FilterThresholds::default(),
            rm: RmConfig::default(),
            finetune: vec![
                FinetuneConfig {
                    mode: FinetuneMode::SftBaseline,
                    ..ft.clone()
                },
                ft.clone(),
                FinetuneConfig {
                    mode: FinetuneMode::Cr,
                    ..ft.clone()
                },
                FinetuneConfig {
                    mode: FinetuneMode::Cr,
                    permute_buckets: true,
                    ..ft
                },
            ],
            bucket_table: None,
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Tiny sizes for end-to-end checks.
    pub fn smoke() -> Self {
        let d = Self::default();
        Self {
            dataset_size: 1500,
            sft: TrainConfig {
                hidden: vec![32, 32],
                steps: 300,
                batch_size: 64,
                ..TrainConfig::default()
            },
            groups: 60,
            variant_sampler: SamplerConfig {
                steps: 25,
                ..SamplerConfig::default()
            },
            rm: RmConfig {
                hidden: vec![32],
                steps: 150,
                groups_per_step: 8,
                ..RmConfig::default()
            },
            finetune: d
                .finetune
                .iter()
                .map(|f| FinetuneConfig {
                    steps: 150,
                    batch_size: 64,
                    ..f.clone()
                })
                .collect(),
            eval: EvalConfig {
                conditions: 125,
                samples_per_condition: 8,
                image_sweep: vec![1.0, 1.6, 2.2],
                compare_samples: 4,
                sampler_steps: 25,
                bootstrap: 500,
                ..EvalConfig::default()
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut labels: Vec<String> = self.finetune.iter().map(model_label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::InvalidArgument("duplicate finetune runs".into()));
        }
        for f in &self.finetune {
            f.validate()?;
        }
        if self.k < 2 || self.groups == 0 || self.dataset_size == 0 {
            return Err(HarnessError::InvalidArgument(format!(
                "k {}, groups {}, dataset_size {}",
                self.k, self.groups, self.dataset_size
            )));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(HarnessError::InvalidArgument(format!("corruption_rate {}", self.corruption_rate)));
        }
        if self.eval.image_sweep.is_empty() || self.eval.conditions == 0 {
            return Err(HarnessError::InvalidArgument("empty evaluation".into()));
        }
        Ok(())
    }
}

/// Model id of a fine-tuning run: the mode, plus `_permuted` for the label control.
pub fn model_label(f: &FinetuneConfig) -> String {
    if f.permute_buckets {
        format!("{}_permuted", f.mode.name())
    } else {
        f.mode.name().to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl StageRecord {
    fn intact(&self, dir: &Path) -> bool {
        self.artifacts.iter().all(|a| {
            std::fs::read(dir.join(&a.path))
                .map(|b| sha256_hex(&b) == a.sha256)
                .unwrap_or(false)
        })
    }
}

/// Record of a run: configuration snapshot and every stage's artifacts with content hashes.
/// Wall-clock times are deliberately absent so identical runs give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            config,
            stages: Vec::new(),
        }
    }

    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    pub fn completed(&self) -> Vec<Stage> {
        self.stages.iter().map(|r| r.stage).collect()
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, HarnessError> {
        match std::fs::read_to_string(dir.join(MANIFEST_FILE)) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Keeps the records of earlier stages and appends `rec`.
    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage < rec.stage);
        self.stages.push(rec);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Contents of `buckets.json`: the score standardizer and the table fit on standardized scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketFile {
    pub standardizer: Standardizer,
    pub table: BucketTable,
}

pub const EVALUATION_FILE: &str = "evaluation.json";

/// Output of the evaluate stage: sweep rows and per-condition scores of every model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub condition_scores: Vec<ConditionScores>,
}

impl Evaluation {
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(dir.join(EVALUATION_FILE))
            .map_err(|e| HarnessError::MissingInput(format!("{EVALUATION_FILE}: {e}")))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn scores(&self, model_id: &str) -> Result<&ConditionScores, HarnessError> {
        self.condition_scores
            .iter()
            .find(|s| s.model_id == model_id)
            .ok_or_else(|| HarnessError::MissingInput(format!("no scores for model {model_id}")))
    }
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    dir: &'a Path,
    root: Rng,
    written: Vec<Artifact>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<(), HarnessError> {
        std::fs::write(self.dir.join(name), text)?;
        self.written.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(text.as_bytes()),
            bytes: text.len() as u64,
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn read(&self, name: &str) -> Result<String, HarnessError> {
        std::fs::read_to_string(self.dir.join(name)).map_err(|e| HarnessError::MissingInput(format!("{name}: {e}")))
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, HarnessError> {
        Ok(serde_json::from_str(&self.read(name)?)?)
    }

    fn read_jsonl<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, HarnessError> {
        from_jsonl(&self.read(name)?).map_err(|e| HarnessError::Parse(format!("{name}: {e}")))
    }

    fn diffusion(&self, name: &str) -> Result<DiffusionModel, HarnessError> {
        Ok(DiffusionModel::from_checkpoint(&Checkpoint::from_json(&self.read(name)?)?)?)
    }
}

fn ft_file(label: &str) -> String {
    format!("ft_{label}.json")
}

fn run_stage(stage: Stage, ctx: &mut Ctx) -> Result<serde_json::Value, HarnessError> {
    let cfg = ctx.cfg;
    let seed = ctx.root.seed();
    Ok(match stage {
        Stage::GenData => {
            let data = cfg
                .world
                .generate_dataset(cfg.dataset_size, cfg.corruption_rate, &mut ctx.root.fork("data"))?;
            ctx.write("dataset.jsonl", &to_jsonl(&data))?;
            serde_json::json!({ "records": data.len() })
        }
        Stage::Augment => {
            let data: Vec<Triplet> = ctx.read_jsonl("dataset.jsonl")?;
            let (out, stats) = if cfg.augment {
                augment(&data, &Lexicon::bundled())
            } else {
                (data, AugmentStats::default())
            };
            ctx.write("augmented.jsonl", &to_jsonl(&out))?;
            serde_json::to_value(stats)?
        }
        Stage::TrainSft => {
            let data: Vec<Triplet> = ctx.read_jsonl("augmented.jsonl")?;
            let (model, report) = train_sft(&data, &cfg.sft, &mut ctx.root.fork("sft"))?;
            ctx.write("sft.json", &model.to_checkpoint(seed).to_json())?;
            ctx.write_json("sft_report.json", &report)?;
            serde_json::json!({ "heldout_reduction": report.heldout_reduction() })
        }
        Stage::GenVariants => {
            let model = ctx.diffusion("sft.json")?;
            let groups = generate_groups(
                &model,
                &cfg.world,
                &cfg.oracle,
                cfg.groups,
                cfg.k,
                cfg.variant_sampler,
                &cfg.thresholds,
                &mut ctx.root.fork("variants"),
            )?;
            ctx.write("variants.jsonl", &to_jsonl(&groups))?;
            serde_json::to_value(FilterStats::of(&groups))?
        }
        Stage::Rank => {
            let mut groups: Vec<RankedGroup> = ctx.read_jsonl("variants.jsonl")?;
            for g in &groups {
                g.validate()?;
            }
            rank_groups(&cfg.oracle, &mut groups, &mut ctx.root.fork("rank"));
            let stats = FilterStats::of(&groups);
            ctx.write("groups.jsonl", &to_jsonl(&groups))?;
            serde_json::json!({ "filter": stats, "flagged_fraction": stats.flagged_fraction() })
        }
        Stage::TrainRm => {
            let groups: Vec<RankedGroup> = ctx.read_jsonl("groups.jsonl")?;
            for g in &groups {
                g.validate()?;
            }
            let (rm, report) = train_rm(&groups, &cfg.rm, &mut ctx.root.fork("rm"))?;
            ctx.write("rm.json", &rm.to_checkpoint(seed).to_json())?;
            ctx.write_json("rm_report.json", &report)?;
            serde_json::to_value(&report.heldout)?
        }
        Stage::Quantize => {
            let data: Vec<Triplet> = ctx.read_jsonl("augmented.jsonl")?;
            let rm = RewardModel::from_checkpoint(&Checkpoint::from_json(&ctx.read("rm.json")?)?)?;
            let raw = score_dataset(&rm, &data);
            let standardizer = Standardizer::fit(&raw)?;
            let table = quantize(&standardizer.apply_all(&raw))?;
            ctx.write("scores.jsonl", &to_jsonl(&score_records(&raw)))?;
            let file = BucketFile { standardizer, table };
            ctx.write_json("buckets.json", &file)?;
            serde_json::to_value(&file)?
        }
        Stage::Finetune => {
            let data: Vec<Triplet> = ctx.read_jsonl("augmented.jsonl")?;
            let sft = ctx.diffusion("sft.json")?;
            let records: Vec<ScoreRecord> = ctx.read_jsonl("scores.jsonl")?;
            let raw = scores_from_records(&records)?;
            if raw.len() != data.len() {
                return Err(HarnessError::Mismatch("score sidecar does not match the dataset".into()));
            }
            let buckets: BucketFile = match &cfg.bucket_table {
                Some(path) => serde_json::from_str(
                    &std::fs::read_to_string(path)
                        .map_err(|e| HarnessError::MissingInput(format!("{}: {e}", path.display())))?,
                )?,
                None => ctx.read_json("buckets.json")?,
            };
            let scores = buckets.standardizer.apply_all(&raw);
            let rm_sha = sha256_hex(ctx.read("rm.json")?.as_bytes());
            let mut reports: Vec<(String, FinetuneReport)> = Vec::new();
            // Every run shares one training stream so arms differ only by their loss.
            for f in &cfg.finetune {
                let label = model_label(f);
                let table = (f.mode == FinetuneMode::Cr).then_some(&buckets.table);
                let (model, report) =
                    finetune(&sft, &data, &scores, table, f, &mut ctx.root.fork("finetune"))?;
                ctx.write(&ft_file(&label), &model.to_checkpoint(seed).to_json())?;
                ctx.write_json(&format!("ft_{label}_report.json"), &report)?;
                reports.push((label, report));
            }
            serde_json::json!({
                "rm_sha256": rm_sha,
                "adam": AdamConfig::default(),
                "score_standardizer": buckets.standardizer,
                "runs": reports.iter().map(|(l, r)| serde_json::json!({
                    "model_id": l,
                    "mode": r.mode,
                    "eta": r.eta,
                    "weight_clip": r.weight_clip,
                    "clipped_fraction": r.clipped_fraction,
                })).collect::<Vec<_>>(),
            })
        }
        Stage::Evaluate => {
            let mut models = vec![("sft".to_string(), ctx.diffusion("sft.json")?)];
            for f in &cfg.finetune {
                let label = model_label(f);
                let m = ctx.diffusion(&ft_file(&label))?;
                models.push((label, m));
            }
            let e = &cfg.eval;
            let conditions = eval_conditions(&cfg.world, e.conditions, ctx.root.fork("eval-conditions").seed());
            let sweep: Vec<Guidance> = e
                .image_sweep
                .iter()
                .map(|&s| Guidance::new(s, e.instruction_scale))
                .collect::<Result<_, _>>()?;
            let sample_seed = ctx.root.fork("eval-samples").seed();
            let mut rows = Vec::new();
            let mut cond = Vec::new();
            for (id, m) in &models {
                rows.extend(evaluate(
                    m,
                    id,
                    &cfg.world,
                    &cfg.oracle,
                    &conditions,
                    &sweep,
                    e.samples_per_condition,
                    e.sampler_steps,
                    sample_seed,
                    &cfg.thresholds,
                )?);
                cond.push(condition_scores(
                    m,
                    id,
                    &cfg.world,
                    &cfg.oracle,
                    &conditions,
                    e.compare_guidance,
                    e.compare_samples,
                    e.sampler_steps,
                    sample_seed,
                )?);
            }
            ctx.write_json(
                EVALUATION_FILE,
                &Evaluation {
                    rows,
                    condition_scores: cond,
                },
            )?;
            serde_json::json!({ "models": models.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>() })
        }
        Stage::Report => {
            let ev: Evaluation = ctx.read_json(EVALUATION_FILE)?;
            let comparisons = default_comparisons(&ev.condition_scores, &cfg.eval, &ctx.root)?;
            let mut prior = RunManifest::load(ctx.dir)?.unwrap_or_else(|| RunManifest::new(cfg.clone()));
            prior.stages.retain(|r| r.stage < Stage::Report);
            let paths = emit_report(&ev.rows, &comparisons, serde_json::to_value(&prior)?, ctx.dir)?;
            for p in paths {
                let bytes = std::fs::read(&p)?;
                ctx.written.push(Artifact {
                    path: p.file_name().expect("file").to_string_lossy().into_owned(),
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                });
            }
            serde_json::json!({ "comparisons": comparisons.len() })
        }
    })
}

/// Every fine-tuned model against the same-budget supervised control
/// (`sft_baseline` when present, otherwise the SFT checkpoint).
pub fn default_comparisons(
    scores: &[ConditionScores],
    e: &EvalConfig,
    root: &Rng,
) -> Result<Vec<Comparison>, HarnessError> {
    let find = |id: &str| scores.iter().find(|s| s.model_id == id);
    let base = find(FinetuneMode::SftBaseline.name())
        .or_else(|| find("sft"))
        .ok_or_else(|| HarnessError::MissingInput("baseline scores".into()))?;
    scores
        .iter()
        .filter(|s| s.model_id != base.model_id && s.model_id != "sft")
        .map(|t| {
            compare(base, t, e.tie_band, e.bootstrap, &mut root.fork(&format!("bootstrap/{}", t.model_id)))
        })
        .collect()
}

fn open(cfg: &PipelineConfig, dir: &Path) -> Result<(RunManifest, bool), HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    Ok(match RunManifest::load(dir)? {
        Some(m) if m.config == *cfg && m.schema_version == MANIFEST_SCHEMA_VERSION => (m, true),
        Some(mut m) if m.schema_version == MANIFEST_SCHEMA_VERSION => {
            m.config = cfg.clone();
            (m, false)
        }
        _ => (RunManifest::new(cfg.clone()), false),
    })
}

fn execute(stage: Stage, cfg: &PipelineConfig, dir: &Path, manifest: &mut RunManifest) -> Result<(), HarnessError> {
    log::info!("stage {}", stage.name());
    manifest.stages.retain(|r| r.stage < stage);
    manifest.save(dir)?;
    let mut ctx = Ctx {
        cfg,
        dir,
        root: Rng::new(cfg.seed),
        written: Vec::new(),
    };
    let details = run_stage(stage, &mut ctx)?;
    manifest.record(StageRecord {
        stage,
        artifacts: ctx.written,
        details,
    });
    manifest.save(dir)
}

/// Runs a single stage against the artifacts already in `dir`. Earlier stage
/// records are kept and the manifest takes `cfg` as its configuration; later
/// records are dropped because they are now stale.
pub fn run_single_stage(cfg: &PipelineConfig, dir: &Path, stage: Stage) -> Result<RunManifest, HarnessError> {
    let (mut manifest, _) = open(cfg, dir)?;
    execute(stage, cfg, dir, &mut manifest)?;
    Ok(manifest)
}

/// Runs every stage in order. Stages whose recorded artifacts are intact are
/// skipped, up to the first stage that must be redone; everything after it
/// is recomputed. On failure the manifest lists the completed stages.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path) -> Result<RunManifest, HarnessError> {
    let (mut manifest, resumable) = open(cfg, dir)?;
    let previous = manifest.clone();
    manifest.stages.clear();
    let mut fresh = !resumable;
    for stage in Stage::ALL {
        if !fresh {
            if let Some(rec) = previous.stage(stage).filter(|r| r.intact(dir)) {
                log::info!("stage {} up to date", stage.name());
                manifest.stages.push(rec.clone());
                continue;
            }
            fresh = true;
        }
        if let Err(e) = execute(stage, cfg, dir, &mut manifest) {
            manifest.save(dir)?;
            return Err(HarnessError::Stage {
                stage: stage.name(),
                source: Box::new(e),
            });
        }
    }
    Ok(manifest)
}
