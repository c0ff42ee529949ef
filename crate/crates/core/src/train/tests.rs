use super::*;
use crate::model::ModelDims;
use crate::synth::{generate, SynthConfig};

fn stops(patience: usize, trace: &[f64]) -> (Option<usize>, Option<usize>) {
    let mut s = EarlyStopping::new(patience);
    for (k, &v) in trace.iter().enumerate() {
        if s.observe(v) {
            return (Some(k + 1), s.best_epoch());
        }
    }
    (None, s.best_epoch())
}

#[test]
fn stopping_rule_traces() {
    assert_eq!(stops(3, &[5.0, 4.0, 4.0, 4.0, 4.0]), (Some(5), Some(2)));
    assert_eq!(stops(3, &[1.0, 2.0, 3.0, 4.0]), (Some(4), Some(1)));
    assert_eq!(stops(3, &[5.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0]), (Some(7), Some(4)));
    assert_eq!(stops(3, &[3.0, 2.0, 1.0, 0.5]), (None, Some(4)));
    assert_eq!(stops(3, &[2.0, 3.0, 1.0, 1.5, 0.9, 1.0, 1.1, 1.2]), (Some(8), Some(5)));
    assert_eq!(stops(1, &[2.0, 3.0]), (Some(2), Some(1)));
    assert_eq!(stops(2, &[2.0, 2.0, 1.0, 1.0, 1.0]), (Some(5), Some(3)));
}

fn tiny_config(task: Task, variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::new(task, variant);
    c.model.dims = ModelDims {
        item: 6,
        location: 8,
        session: 4,
        time_unit: 4,
        location_unit: 4,
        time_pattern: 3,
        spatial_pattern: 3,
        item_channels: Some([2, 2, 2]),
    };
    c.lr = 0.01;
    c.max_epochs = 4;
    c.batch_size = 8;
    c.seeds = 2;
    c.seed = 5;
    c.split_seed = 1;
    c
}

fn tiny_dataset() -> Dataset {
    let config = SynthConfig {
        users: 30,
        sessions: (4, 6),
        events: (1, 2),
        concentration: 1.0,
        items: 10,
        titles: true,
        seed: 2,
        ..SynthConfig::default()
    };
    generate(&config).unwrap().0
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let dataset = tiny_dataset();
    let config = tiny_config(Task::Gender, Variant::Full);
    let a = train(&config, &dataset, 5).unwrap();
    let b = train(&config, &dataset, 5).unwrap();
    assert_eq!(a.history.to_jsonl().unwrap(), b.history.to_jsonl().unwrap());
    assert!(!a.history.epochs.is_empty() && a.history.epochs.len() <= 4);

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    save_checkpoint(dirs[0].path(), &config, &a.model, Some(&a.history)).unwrap();
    save_checkpoint(dirs[1].path(), &config, &b.model, Some(&b.history)).unwrap();
    for f in ["params.txt", "config.txt", "history.jsonl", "report.txt", "report.csv", "vocab_items.tsv"] {
        assert_eq!(
            std::fs::read(dirs[0].path().join(f)).unwrap(),
            std::fs::read(dirs[1].path().join(f)).unwrap(),
            "{f}"
        );
    }

    let loaded = load_checkpoint(dirs[0].path(), Some(&config)).unwrap();
    for ((n1, t1), (n2, t2)) in loaded.model.params.iter().zip(a.model.params.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(t1, t2);
    }
    assert_eq!(loaded.history.as_ref(), Some(&a.history));

    // The restored parameters are the best epoch's: re-scoring validation
    // reproduces its snapshot.
    let val = evaluate_checkpoint(dirs[0].path(), &dataset, SplitName::Validation, None).unwrap();
    let best = a.history.best();
    for ((name, x), (_, y)) in val.entries().into_iter().zip(best.val_metrics.entries()) {
        match (x, y) {
            (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9, "{name}"),
            (x, y) => assert_eq!(x, y, "{name}"),
        }
    }
    let test = evaluate_checkpoint(dirs[0].path(), &dataset, SplitName::Test, None).unwrap();
    assert_eq!(test, a.history.test);
}

#[test]
fn best_epoch_is_the_validation_minimum() {
    let dataset = tiny_dataset();
    let mut config = tiny_config(Task::Age, Variant::MinusWeek);
    config.max_epochs = 6;
    let h = train(&config, &dataset, 1).unwrap().history;
    let best = h.best().val_loss;
    assert!(h.epochs.iter().all(|e| best <= e.val_loss));
    assert!(h.epochs[..h.best_epoch - 1].iter().all(|e| best < e.val_loss));
    assert_eq!(h.test.kind(), "regression");
}

#[test]
fn checkpoint_refuses_mismatched_configs() {
    let dataset = tiny_dataset();
    let config = tiny_config(Task::Income, Variant::Attn);
    let mut c1 = config;
    c1.max_epochs = 1;
    let out = train(&c1, &dataset, 0).unwrap();
    assert_eq!(out.history.test.kind(), "multiclass");
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &c1, &out.model, None).unwrap();
    let mut other = c1;
    other.model.dims.session = 5;
    assert!(matches!(load_checkpoint(dir.path(), Some(&other)), Err(Error::Checkpoint { .. })));
    // Protocol-only differences are accepted.
    load_checkpoint(dir.path(), Some(&TrainConfig { lr: 0.5, ..c1 })).unwrap();

    let path = dir.path().join("params.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "0000";
    std::fs::write(&path, lines.join("\n")).unwrap();
    assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::Checkpoint { .. })));
    std::fs::write(&path, text.replacen("CALGNN1", "CALGNN0", 1)).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());
}

#[test]
fn seed_runs_average_their_reports() {
    let dataset = tiny_dataset();
    let mut config = tiny_config(Task::Gender, Variant::SessionsOnly);
    config.max_epochs = 2;
    let runs = run_seeds(&config, &dataset).unwrap();
    assert_eq!(runs.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6]);
    let single = train(&config, &dataset, 5).unwrap().history;
    assert_eq!(runs.runs[0], single);
    let acc: Vec<f64> = runs.runs.iter().map(|r| r.test.accuracy().unwrap()).collect();
    assert_eq!(runs.mean.accuracy().unwrap(), (acc[0] + acc[1]) / 2.0);

    let one = run_seeds(&TrainConfig { seeds: 1, ..config }, &dataset).unwrap();
    assert_eq!(one.mean, single.test);
}

#[test]
fn divergence_reports_the_epoch() {
    let dataset = tiny_dataset();
    let mut config = tiny_config(Task::Age, Variant::Full);
    config.lr = 1e300;
    config.model.activation = crate::model::Activation::Tanh;
    match train(&config, &dataset, 0) {
        Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history.epochs.len())),
    }
}

#[test]
fn history_lines_round_trip() {
    let dataset = tiny_dataset();
    let mut config = tiny_config(Task::Gender, Variant::MinusSpatial);
    config.max_epochs = 2;
    let h = train(&config, &dataset, 3).unwrap().history;
    let text = h.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), h.epochs.len() + 1);
    assert!(text.lines().next().unwrap().starts_with("{\"kind\":\"epoch\""));
    assert_eq!(RunHistory::from_jsonl(&text).unwrap(), h);
    assert!(RunHistory::from_jsonl("").is_err());
}

#[test]
fn splits_and_tables() {
    let dataset = tiny_dataset();
    let data = PreparedData::new(&dataset, Task::Gender, 0).unwrap();
    assert_eq!((data.train.len(), data.validation.len(), data.test.len()), (24, 3, 3));
    assert_eq!("val".parse::<SplitName>().unwrap(), SplitName::Validation);
    assert!("dev".parse::<SplitName>().is_err());
    assert_eq!(ablation_table(&[]), "");
}
