use std::path::Path;
use std::time::SystemTime;

use editlab_core::diffusion::{DiffusionModel, Guidance, NoiseSchedule, ScheduleConfig};
use editlab_core::harness::{
    compare, emit_report, eval_conditions, evaluate, metrics_csv, parse_metrics_csv, run_pipeline, run_single_stage,
    spearman, tradeoff_svg, ConditionScores, MetricsRow, PipelineConfig, Report, RunManifest, Stage,
    METRICS_SCHEMA_VERSION,
};
use editlab_core::numerics::{Checkpoint, Rng};
use editlab_core::preference::FilterThresholds;
use editlab_core::worlds::{PreferenceOracle, World};
use proptest::prelude::*;

fn scores(id: &str, rewards: Vec<f64>) -> ConditionScores {
    ConditionScores {
        model_id: id.into(),
        guidance: Guidance::NONE,
        keys: (0..rewards.len() as u64).collect(),
        rewards,
    }
}

fn row(model: &str, s: f64, alignment: f64, fidelity: f64) -> MetricsRow {
    MetricsRow {
        schema_version: METRICS_SCHEMA_VERSION,
        model_id: model.into(),
        guidance_image: s,
        guidance_instruction: 7.5,
        conditions: 10,
        samples: 80,
        alignment,
        fidelity,
        reward: alignment + fidelity,
        success_rate: 0.5,
        success_translate: Some(0.25),
        success_reflect: None,
        success_scale: Some(1.0),
        success_recolor: Some(0.0),
        success_keep: Some(0.75),
    }
}

fn mtime(p: &Path) -> SystemTime {
    std::fs::metadata(p).unwrap().modified().unwrap()
}

#[test]
fn model_compared_to_itself_ties_everywhere() {
    let s = scores("m", vec![0.1, -2.0, 3.0, 0.0]);
    let c = compare(&s, &s, 0.02, 200, &mut Rng::new(1)).unwrap();
    assert_eq!((c.win_rate, c.tie_rate, c.loss_rate), (0.0, 1.0, 0.0));
    assert_eq!(c.net_win_ci, [0.0, 0.0]);
}

#[test]
fn comparing_different_condition_sets_fails() {
    let a = scores("a", vec![0.0; 3]);
    let mut b = scores("b", vec![0.0; 3]);
    b.keys[2] = 99;
    assert!(compare(&a, &b, 0.02, 10, &mut Rng::new(2)).is_err());
}

#[test]
fn empty_comparisons_still_produce_valid_files() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![row("sft", 1.0, -1.0, -0.5)];
    let files = emit_report(&rows, &[], serde_json::json!({}), dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    let report: Report = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report.comparisons.is_empty());
    assert_eq!(parse_metrics_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap(), rows);
}

#[test]
fn svg_has_one_polyline_per_model() {
    let rows: Vec<MetricsRow> = ["a", "b", "c"]
        .iter()
        .flat_map(|m| (0..4).map(move |k| row(m, 1.0 + 0.2 * k as f64, -(k as f64), 0.1 * k as f64)))
        .collect();
    let svg = tradeoff_svg(&rows);
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches("data-model=\"b\"").count(), 1);
}

#[test]
fn evaluation_ignores_condition_order() {
    let world = World::continuous();
    let model = DiffusionModel::new(&[8], NoiseSchedule::new(ScheduleConfig::default()).unwrap(), &mut Rng::new(3)).unwrap();
    let conds = eval_conditions(&world, 30, 4);
    let mut reversed = conds.clone();
    reversed.reverse();
    let sweep = [Guidance::NONE, Guidance::default()];
    let th = FilterThresholds::default();
    let oracle = PreferenceOracle::default();
    let a = evaluate(&model, "m", &world, &oracle, &conds, &sweep, 3, 10, 5, &th).unwrap();
    let b = evaluate(&model, "m", &world, &oracle, &reversed, &sweep, 3, 10, 5, &th).unwrap();
    let c = evaluate(&model, "m", &world, &oracle, &conds, &sweep, 3, 10, 5, &th).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn image_guidance_raises_fidelity_of_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::smoke();
    for s in [Stage::GenData, Stage::Augment, Stage::TrainSft] {
        run_single_stage(&cfg, dir.path(), s).unwrap();
    }
    let ckpt = Checkpoint::from_json(&std::fs::read_to_string(dir.path().join("sft.json")).unwrap()).unwrap();
    let model = DiffusionModel::from_checkpoint(&ckpt).unwrap();
    let world = World::continuous();
    let sweep: Vec<Guidance> = (0..7).map(|k| Guidance::new(1.0 + 0.2 * k as f64, 7.5).unwrap()).collect();
    let rows = evaluate(
        &model,
        "sft",
        &world,
        &PreferenceOracle::default(),
        &eval_conditions(&world, 150, 6),
        &sweep,
        8,
        50,
        7,
        &FilterThresholds::default(),
    )
    .unwrap();
    let s: Vec<f64> = rows.iter().map(|r| r.guidance_image).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.fidelity).collect();
    let rho = spearman(&s, &f);
    assert!(rho > 0.8, "spearman {rho}, fidelity {f:?}");
}

#[test]
fn resume_skips_intact_stages_and_reruns_from_the_first_damaged_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = PipelineConfig::smoke();
    let first = run_pipeline(&cfg, d).unwrap();
    assert_eq!(first.completed(), Stage::ALL.to_vec());
    let sft_time = mtime(&d.join("sft.json"));
    let rm_bytes = std::fs::read(d.join("rm.json")).unwrap();
    let report_time = mtime(&d.join("report.json"));

    std::thread::sleep(std::time::Duration::from_millis(20));
    let second = run_pipeline(&cfg, d).unwrap();
    assert_eq!(second, first);
    assert_eq!(mtime(&d.join("report.json")), report_time);

    std::fs::write(d.join("rm.json"), b"{}").unwrap();
    let third = run_pipeline(&cfg, d).unwrap();
    assert_eq!(third, first);
    assert_eq!(std::fs::read(d.join("rm.json")).unwrap(), rm_bytes);
    assert_eq!(mtime(&d.join("sft.json")), sft_time);
    assert_ne!(mtime(&d.join("report.json")), report_time);
    assert_eq!(RunManifest::load(d).unwrap().unwrap(), first);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = PipelineConfig::smoke();
    cfg.k = 1;
    assert!(cfg.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    assert!(run_pipeline(&cfg, dir.path()).is_err());
}

proptest! {
    #[test]
    fn comparison_is_antisymmetric(rewards in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..60)) {
        let a = scores("a", rewards.iter().map(|r| r.0).collect());
        let b = scores("b", rewards.iter().map(|r| r.1).collect());
        let ab = compare(&a, &b, 0.02, 50, &mut Rng::new(1)).unwrap();
        let ba = compare(&b, &a, 0.02, 50, &mut Rng::new(1)).unwrap();
        prop_assert_eq!(ab.wins, ba.losses);
        prop_assert_eq!(ab.ties, ba.ties);
        prop_assert!((ab.mean_delta + ba.mean_delta).abs() < 1e-12);
        prop_assert!((ab.net_win_ci[0] + ba.net_win_ci[1]).abs() < 1e-12);
        prop_assert!(ab.net_win_ci[0] <= ab.net_win_rate + 1e-12 || ab.net_win_ci[1] >= ab.net_win_rate - 1e-12);
    }

    #[test]
    fn metrics_csv_round_trip(vals in prop::collection::vec((0.0..3.0f64, -50.0..0.0f64, -50.0..0.0f64), 1..20)) {
        let rows: Vec<MetricsRow> = vals.iter().enumerate().map(|(i, v)| row(&format!("m{}", i % 3), v.0, v.1, v.2)).collect();
        prop_assert_eq!(parse_metrics_csv(&metrics_csv(&rows).unwrap()).unwrap(), rows);
    }

    #[test]
    fn spearman_of_a_monotone_map_is_one(xs in prop::collection::hash_set(-1000i32..1000, 2..30)) {
        let x: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
        prop_assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &z) + 1.0).abs() < 1e-12);
    }
}
