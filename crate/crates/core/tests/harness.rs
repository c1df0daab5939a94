use std::path::Path;

use proptest::prelude::*;

use curlab::curriculum::{difficulty_filter, Preset, StageName};
use curlab::env::{make_prompt_set, DifficultyLaw, EnvConfig, PolicyPrior};
use curlab::harness::checkpoint;
use curlab::harness::config::ExperimentConfig;
use curlab::harness::curves::emit_curves;
use curlab::harness::experiment::{run_comparison, run_dir, run_experiment, split_prompts, Arm};
use curlab::harness::metrics::{read_metrics, METRICS_HEADER};
use curlab::seeds::SeedStreams;
use curlab::Error;

fn desk(preset: Preset, seed: u64, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        preset,
        seed,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn series_points(path: &Path) -> Vec<(usize, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (s, v) = l.split_once('\t').unwrap();
            (s.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn desk_run_writes_complete_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let outcome = run_experiment(&desk(Preset::Pcurl, 0, &out)).unwrap();

    let text = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    let rows = read_metrics(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 100);
    let per_stage = |s| rows.iter().filter(|r| r.stage == s).count();
    assert_eq!(
        [
            per_stage(StageName::Easy),
            per_stage(StageName::Medium),
            per_stage(StageName::Hard)
        ],
        [25, 25, 50]
    );
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));
    assert!(rows.iter().all(|r| r.wall_time_ms.is_none()));

    for (i, stage) in ["easy", "medium", "hard"].iter().enumerate() {
        let ck = checkpoint::read(&out.join(format!("checkpoint_{i}_{stage}.txt"))).unwrap();
        assert_eq!(ck.stage.to_string(), *stage);
        assert_eq!(ck.step, outcome.stages[i].best_step);
        assert_eq!(ck.seed, 0);
    }

    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    let line = summary.lines().find(|l| l.starts_with("final_val_accuracy")).unwrap();
    let value: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert_eq!(value, outcome.final_val_accuracy);
    assert_eq!(outcome.final_val_accuracy, outcome.stages[2].best_accuracy);

    let cfg_text = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(
        ExperimentConfig::parse(&cfg_text).unwrap(),
        desk(Preset::Pcurl, 0, &out)
    );

    let again = tmp.path().join("again");
    run_experiment(&desk(Preset::Pcurl, 0, &again)).unwrap();
    for f in [
        "metrics.csv",
        "buckets.csv",
        "group_acc_histogram.csv",
        "checkpoint_2_hard.txt",
    ] {
        assert_eq!(
            std::fs::read(out.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }

    let curves = tmp.path().join("curves");
    emit_curves(&out.join("metrics.csv"), &curves, None).unwrap();
    assert_eq!(series_points(&curves.join("reward.tsv")).len(), 100);
    assert_eq!(
        series_points(&curves.join("val_accuracy.tsv")).len(),
        100usize.div_ceil(5)
    );
    assert!(curves.join("bucket3_length.tsv").exists());

    let hard = tmp.path().join("hard");
    emit_curves(&out.join("metrics.csv"), &hard, Some(StageName::Hard)).unwrap();
    let lengths = series_points(&hard.join("response_length.tsv"));
    assert_eq!(lengths.len(), 50);
    assert_eq!(lengths[0].0, 51);
}

#[test]
fn comparison_writes_one_row_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default();
    let arms: Vec<Arm> = [Preset::Vanilla, Preset::Pcurl]
        .into_iter()
        .map(|p| Arm {
            label: p.to_string(),
            config: ExperimentConfig {
                preset: p,
                ..base.clone()
            },
        })
        .collect();
    let seeds = [0, 1, 2, 3, 4];
    let rows = run_comparison(&arms, &seeds, tmp.path()).unwrap();
    assert_eq!(rows.len(), 10);
    let table = std::fs::read_to_string(tmp.path().join("comparison.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "seed\tvanilla\tpcurl");
    assert_eq!(lines.len(), 6);
    for (line, seed) in lines[1..].iter().zip(seeds) {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells[0], seed.to_string());
        for (arm, cell) in arms.iter().zip(&cells[1..]) {
            let acc: f64 = cell.parse().unwrap();
            assert!((0.0..=1.0).contains(&acc));
            assert!(run_dir(tmp.path(), &arm.label, seed).join("summary.txt").exists());
        }
    }
}

#[test]
fn filter_thresholds_at_the_extremes() {
    let env = EnvConfig {
        buckets: 4,
        answers: 4,
        k_max: 8,
        t_cap: 12,
        max_len: 12,
    };
    let prompts = make_prompt_set(200, 3, &DifficultyLaw::Uniform, &env).unwrap();
    let prior = PolicyPrior {
        think_len: 2.0,
        sharpness: 1.0,
        answer_logit: 0.5,
        stop_logit: 0.0,
    };
    let params = prior.params(&env).unwrap();
    let streams = SeedStreams::new(9);
    let (all, _) = difficulty_filter(&prompts, &params, 8, 1.0, 1.0, env.max_len, &streams).unwrap();
    assert_eq!(all, prompts);
    let (none_solved, report) = difficulty_filter(&prompts, &params, 8, 0.0, 1.0, env.max_len, &streams).unwrap();
    let (half, _) = difficulty_filter(&prompts, &params, 8, 0.5, 1.0, env.max_len, &streams).unwrap();
    assert!(none_solved.len() < prompts.len(), "{report}");
    // Same streams, so the zero-threshold survivors are the prompts never solved.
    assert!(none_solved.iter().all(|p| half.contains(p)));
    assert!(half.iter().all(|p| all.contains(p)));
}

#[test]
fn filtered_run_reports_and_trains_on_survivors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = desk(Preset::Vanilla, 2, tmp.path());
    cfg.data.filter = true;
    cfg.set("curriculum.validation_every", "50").unwrap();
    let outcome = run_experiment(&cfg).unwrap();
    let report = outcome.filter_report.unwrap();
    assert_eq!(report.total().original, cfg.data.train_size);
    assert_eq!(report.total().kept, outcome.train_prompts);
    let text = std::fs::read_to_string(tmp.path().join("filter_report.txt")).unwrap();
    assert!(text.starts_with("# difficulty filter: 8 trials"));
}

#[test]
fn train_and_validation_prompts_are_disjoint() {
    let cfg = ExperimentConfig::default();
    let (train, val) = split_prompts(&cfg).unwrap();
    assert_eq!(train.len(), cfg.data.train_size);
    assert_eq!(val.len(), cfg.data.validation_size);
    assert!(val.iter().all(|v| train.iter().all(|t| t.id != v.id)));
}

#[test]
fn config_errors_name_the_line() {
    let err = ExperimentConfig::parse("run.seed = 3\n# comment\nrollout.group_size = lots\n").unwrap_err();
    match err {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("rollout.group_size"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(ExperimentConfig::parse("no equals sign here\n").is_err());
    assert!(ExperimentConfig::parse("optim.momentum = 0.9\n").is_err());
    let mut cfg = ExperimentConfig::default();
    cfg.set("rollout.group_size", "1").unwrap();
    assert!(cfg.validate().is_err());
}

#[test]
fn failed_run_keeps_partial_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = desk(Preset::Pcurl, 0, tmp.path());
    // Divergent steps overflow the logits within a few updates.
    cfg.optim.adaptive_moments = false;
    cfg.optim.learning_rate = 1e306;
    let err = run_experiment(&cfg).unwrap_err();
    let written = std::fs::read_to_string(tmp.path().join("error.txt")).unwrap();
    assert_eq!(written.trim(), err.to_string());
    assert!(read_metrics(&tmp.path().join("metrics.csv")).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        lr in 1e-6f64..1.0,
        kl in 0.0f64..0.1,
        g in 2usize..64,
        l_max in 1usize..500,
        preset in prop::sample::select(vec![Preset::Pcurl, Preset::Vanilla, Preset::OdswOnly, Preset::DylrOnly]),
        every in prop::option::of(1usize..50),
        beta_a in 0.1f64..5.0,
    ) {
        let mut cfg = ExperimentConfig { seed, preset, validation_every: every, group_size: g, ..ExperimentConfig::default() };
        cfg.optim.learning_rate = lr;
        cfg.optim.kl_coef = kl;
        cfg.length.l_max = l_max;
        cfg.data.law = DifficultyLaw::Beta { a: beta_a, b: 1.0 };
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_text(), cfg.to_text());
    }
}

#[test]
fn shipped_config_is_the_desk_default() {
    let text = include_str!("../../../configs/pcurl_desk.cfg");
    let cfg = ExperimentConfig::parse(text).unwrap();
    let want = ExperimentConfig {
        out: "runs/pcurl-seed0".into(),
        ..ExperimentConfig::default()
    };
    assert_eq!(cfg, want);
}
