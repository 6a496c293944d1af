use std::fs;
use std::path::Path;
use std::process::Command;

use cmplan_cli::bench::parse_records_csv;
use cmplan_cli::commands::{self, VerifyTarget, DEFAULT_MAX_GAP};
use cmplan_cli::pathfile::parse_path_csv;
use cmplan_cli::{Cell, ExperimentConfig, SceneSource};
use cmplan_core::environments::{Scenario1Params, SceneSpec};
use cmplan_core::neural::{generator_loss, Checkpoint};

const FREE_CONFIG: &str = r#"
seed = 11
problems = 6
time_budget_secs = 20.0
max_iters = 10000

[[cells]]
planner = "rrtconnect"
adherence = "atlas"
sampler = "classical"

[[cells]]
planner = "rrtconnect"
adherence = "projection"
sampler = "classical"

[scenes]
source = "free"
pairs = 6
seed = 3
"#;

fn cmplan(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cmplan"))
        .args(args)
        .env_remove("CMPLAN_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bench_records_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FREE_CONFIG);
    let mut records = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(run);
        let o = cmplan(&["--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "bench"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        records.push(fs::read(out.join("records.csv")).unwrap());
    }
    assert_eq!(records[0], records[1]);
    let rows = parse_records_csv(std::str::from_utf8(&records[0]).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.success));
}

#[test]
fn plan_writes_a_path_the_verifier_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), FREE_CONFIG);
    let out = dir.path().join("plan");
    let out_s = out.to_str().unwrap();
    let o = cmplan(&["--config", &cfg, "--out", out_s, "plan", "--problem", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("success=true"));

    let path_file = out.join("path.csv");
    let waypoints = parse_path_csv(&fs::read_to_string(&path_file).unwrap()).unwrap();
    assert!(waypoints.len() >= 2);
    for q in &waypoints {
        assert!((q.norm() - 1.0).abs() < 1e-3);
    }
    let o = cmplan(&["--config", &cfg, "verify", "--path", path_file.to_str().unwrap(), "--problem", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    // the same path is not a solution of another query
    let o = cmplan(&["--config", &cfg, "verify", "--path", path_file.to_str().unwrap(), "--problem", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn plan_failure_exits_nonzero_and_keeps_the_record() {
    let dir = tempfile::tempdir().unwrap();
    // a handful of samples with a tiny connection radius cannot link the endpoints
    let text = FREE_CONFIG.replace("max_iters = 10000", "max_iters = 1") + "[fmt]\nn_init = 2\nradius = 0.01\n";
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("plan");
    let cell = "planner=fmtstar,adherence=atlas,sampler=classical";
    let o = cmplan(&["--config", &cfg, "--out", out.to_str().unwrap(), "plan", "--problem", "0", "--cell", cell]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.join("path.csv").exists());
    let rows = parse_records_csv(&fs::read_to_string(out.join("plan_record.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(!rows[0].success);
    assert!(rows[0].path_length.is_none());
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[cells]]\nplanner = \"prm\"\n");
    let o = cmplan(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "bench"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let o = cmplan(&["bench", "--cell", "planner=rrtconnect,adherence=nope,sampler=classical"]);
    assert!(!o.status.success());
}

#[test]
fn empty_problem_set_gives_zero_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(FREE_CONFIG).unwrap();
    cfg.problems = 0;
    let summary = commands::bench(&cfg, dir.path(), &cfg.cells.clone(), false).unwrap();
    assert_eq!(summary.cells.len(), 2);
    for c in &summary.cells {
        assert_eq!(c.problems, 0);
        assert_eq!(c.successes, 0);
        assert!(c.path_length.is_none());
    }
    let records = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1);
}

#[test]
fn summary_mean_is_the_mean_of_successful_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(FREE_CONFIG).unwrap();
    let summary = commands::bench(&cfg, dir.path(), &cfg.cells.clone(), true).unwrap();
    let rows = parse_records_csv(&fs::read_to_string(dir.path().join("records.csv")).unwrap()).unwrap();
    for c in &summary.cells {
        let lens: Vec<f64> = rows
            .iter()
            .filter(|r| r.cell == c.cell)
            .filter_map(|r| r.path_length)
            .collect();
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        assert!((c.path_length.as_ref().unwrap().mean - mean).abs() <= 1e-12);
    }
    // every emitted path passes the verifier against its own problem
    let mut checked = 0;
    for entry in fs::read_dir(dir.path().join("paths")).unwrap() {
        let p = entry.unwrap().path();
        let stem = p.file_stem().unwrap().to_str().unwrap().to_string();
        let id: usize = stem.rsplit('_').next().unwrap().parse().unwrap();
        let v = commands::verify(&p, VerifyTarget::Problem(&cfg, id), DEFAULT_MAX_GAP).unwrap();
        assert!(v.is_empty(), "{stem}: {v:?}");
        checked += 1;
    }
    assert_eq!(checked, rows.iter().filter(|r| r.success).count());
}

#[test]
fn scenes_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = SceneSource::Generate {
        spec: SceneSpec::Scenario1(Scenario1Params {
            n_pairs: 3,
            ..Default::default()
        }),
        seed: 5,
        count: 2,
        skip: 0,
    };
    let files = commands::gen_scenes(&cfg, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let from_files = ExperimentConfig {
        scenes: SceneSource::Files { paths: files },
        ..cfg.clone()
    };
    let a = cmplan_cli::ProblemSet::load(&cfg).unwrap();
    let b = cmplan_cli::ProblemSet::load(&from_files).unwrap();
    assert_eq!(a.problems, b.problems);
}

fn small_training_config(dir: &Path, epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes = SceneSource::Generate {
        spec: SceneSpec::Scenario1(Scenario1Params {
            n_pairs: 6,
            ..Default::default()
        }),
        seed: 21,
        count: 2,
        skip: 0,
    };
    cfg.train.dataset = Some(dir.join("data").join("dataset.jsonl"));
    cfg.train.generator.epochs = epochs;
    cfg.train.generator.batch_size = 16;
    cfg.train.generator.seed = 4;
    cfg.train.discriminator_epochs = 1;
    cfg.train.discriminator_scenes = 2;
    cfg.train.samples_per_scene = 20;
    cfg
}

#[test]
fn training_logs_one_row_per_epoch_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_training_config(dir.path(), 20);
    let data = commands::gen_data(&cfg, &dir.path().join("data")).unwrap();
    assert!(data.records > 0);

    let first = commands::train(&cfg, &dir.path().join("run1"), None).unwrap();
    let log = fs::read_to_string(dir.path().join("run1/loss.csv")).unwrap();
    assert_eq!(log.lines().count() - 1, 20);
    assert_eq!(first.generator.train.len(), 20);

    // the saved generator reproduces the last recorded validation loss
    let ck = Checkpoint::load(&first.checkpoint).unwrap();
    let full = commands::load_training_set(cfg.train.dataset.as_ref().unwrap()).unwrap();
    let (_, val) = full.split(cfg.train.validation_fraction, cfg.train.generator.seed);
    let recomputed = generator_loss(&ck.generator().unwrap(), &val).unwrap();
    assert_eq!(recomputed.to_bits(), first.generator.validation.last().unwrap().to_bits());

    let mut more = cfg.clone();
    more.train.generator.epochs = 2;
    let resumed = commands::train(&more, &dir.path().join("run2"), Some(&first.checkpoint)).unwrap();
    assert_eq!(resumed.first_epoch, 20);
    let log = fs::read_to_string(dir.path().join("run2/loss.csv")).unwrap();
    assert_eq!(log.lines().count() - 1, 2);
    assert!(log.lines().nth(1).unwrap().starts_with("21,"));
    let before = *first.generator.train.last().unwrap();
    let after = resumed.generator.train[0];
    assert!((after - before).abs() <= 0.1 * before, "{before} -> {after}");

    // the uninterrupted run lands on the same weights
    let mut whole = cfg.clone();
    whole.train.generator.epochs = 22;
    whole.train.discriminator = false;
    let mut split = more.clone();
    split.train.discriminator = false;
    let straight = commands::train(&whole, &dir.path().join("run3"), None).unwrap();
    let mut head = cfg.clone();
    head.train.discriminator = false;
    let h = commands::train(&head, &dir.path().join("run4"), None).unwrap();
    let t = commands::train(&split, &dir.path().join("run5"), Some(&h.checkpoint)).unwrap();
    assert_eq!(
        fs::read(&straight.checkpoint).unwrap().len(),
        fs::read(&t.checkpoint).unwrap().len()
    );
    assert_eq!(straight.generator.train[20..], t.generator.train[..]);
}

#[test]
fn cell_flag_parses() {
    let c: Cell = "planner=fmtstar,adherence=tangent-bundle,sampler=compnetx".parse().unwrap();
    assert_eq!(c.to_string(), "fmtstar/tangent-bundle/compnetx");
}
