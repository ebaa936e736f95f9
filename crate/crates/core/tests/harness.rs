use std::fs;

use macs_core::harness::{
    build_env, mean_std, metrics_file, parse_config, read_ctr_column, run_experiment, run_seed, sweep_hidden_sizes,
    ExperimentConfig, MacsMode, DEFAULT_HIDDEN_SIZES, METRICS_HEADER,
};
use macs_core::Error;

fn small(out: &std::path::Path) -> ExperimentConfig {
    let src = format!(
        "seeds = 1, 2\nout = {}\n[env]\nkind = synthrec\n[agent]\nvariant = ddpg\nhidden = 16\nbatch_size = 16\n\
         [schedule]\nepisodes = 7\neval_every = 3\neval_episodes = 2\nmax_steps = 10\n",
        out.display()
    );
    parse_config(&src).unwrap()
}

#[test]
fn row_count_and_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 2);
    let first: Vec<String> = cfg
        .seeds
        .iter()
        .map(|&s| fs::read_to_string(metrics_file(dir.path(), s)).unwrap())
        .collect();
    for text in &first {
        assert!(text.starts_with(METRICS_HEADER));
        // floor(7 / 3) evaluation points.
        assert_eq!(text.lines().count(), 1 + 2);
    }
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(again.finals, report.finals);
    for (&s, text) in cfg.seeds.iter().zip(&first) {
        assert_eq!(&fs::read_to_string(metrics_file(dir.path(), s)).unwrap(), text);
    }
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    let (mean, std) = mean_std(&report.finals);
    let min = report.finals.iter().copied().fold(f64::INFINITY, f64::min);
    let max = report.finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(
        agg.lines().nth(1).unwrap(),
        format!("ddpg,off,2,{mean},{std},{min},{max}")
    );
    let echoed = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(parse_config(&echoed).unwrap(), cfg);
}

#[test]
fn ctr_column_matches_logged_evaluation_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.schedule.log_eval = true;
    cfg.seeds = vec![5];
    run_experiment(&cfg).unwrap();
    let ctrs = read_ctr_column(&fs::read_to_string(metrics_file(dir.path(), 5)).unwrap()).unwrap();
    let log = fs::read_to_string(dir.path().join("eval_seed5.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<u64, (f64, usize)>::new();
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry(f[0].parse().unwrap()).or_default();
        e.0 += f[3].parse::<f64>().unwrap();
        e.1 += 1;
    }
    let recomputed: Vec<f64> = sums.values().map(|(s, n)| s / *n as f64).collect();
    assert_eq!(recomputed, ctrs);
    for c in ctrs {
        assert!((0.0..=1.0).contains(&c));
    }
}

#[test]
fn off_equals_joint_with_unreachable_gate() {
    let dir = tempfile::tempdir().unwrap();
    let mut off = small(dir.path());
    off.seeds = vec![3];
    let mut joint = off.clone();
    joint.macs.mode = MacsMode::Joint;
    joint.macs.config.eps1 = Some(f64::INFINITY);
    let env = build_env(&off.env).unwrap();
    let a = run_seed(&off, &env, 3, None).unwrap();
    let b = run_seed(&joint, &env, 3, None).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(
            (x.episode, x.steps, x.avg_return, x.ctr, x.ctr_ma10, x.aug_count),
            (y.episode, y.steps, y.avg_return, y.ctr, y.ctr_ma10, y.aug_count)
        );
        assert_eq!(y.eps1, Some(f64::INFINITY));
    }
}

#[test]
fn failed_run_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = small(&out);
    cfg.macs.mode = MacsMode::Expert;
    cfg.macs.expert_checkpoint = Some(dir.path().join("missing.ckpt"));
    assert!(matches!(run_experiment(&cfg), Err(Error::Io(_))));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn sweep_counts_and_population_std() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(dir.path());
    base.schedule.episodes = 3;
    let seeds = [0, 1, 2];
    let report = sweep_hidden_sizes(&base, &DEFAULT_HIDDEN_SIZES, &seeds).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.csv.lines().count(), 4);
    assert_eq!(report.rows.iter().filter(|r| r.argmax).count(), 1);
    let best = report.rows.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.rows.iter().find(|r| r.argmax).unwrap().mean, best);
    let mut runs = 0;
    for row in &report.rows {
        // Recompute from the per-seed files alone.
        let finals: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let text =
                    fs::read_to_string(metrics_file(&dir.path().join(format!("hidden{}", row.hidden)), s)).unwrap();
                *read_ctr_column(&text).unwrap().last().unwrap()
            })
            .collect();
        runs += finals.len();
        let mean = finals.iter().sum::<f64>() / 3.0;
        let std = (finals.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / 3.0).sqrt();
        assert!((row.mean - mean).abs() < 1e-12);
        assert!((row.std - std).abs() < 1e-12);
    }
    assert_eq!(runs, 9);
    assert!(fs::read_to_string(&report.path).unwrap() == report.csv);
}

#[test]
fn offline_runs_report_ranking_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let src = format!(
        "seeds = 0\nout = {}\n[env]\nkind = offline\nmf_epochs = 3\n[agent]\nvariant = sac\nhidden = 16\n\
         batch_size = 16\n[schedule]\nepisodes = 4\neval_every = 2\neval_episodes = 5\nmax_steps = 5\n",
        dir.path().display()
    );
    let cfg = parse_config(&src).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let m = report.runs[0].offline.unwrap();
    for v in [m.precision, m.recall, m.accuracy] {
        assert!((0.0..=1.0).contains(&v), "{m:?}");
    }
    let text = fs::read_to_string(dir.path().join("offline_metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}
