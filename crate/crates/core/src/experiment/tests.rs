use super::*;
use crate::training::LossKind;

fn blobs_config(out: &Path, methods: Vec<MethodSpec>) -> ExperimentConfig {
    let mut train = TrainConfig::single(LossKind::Ce, 5);
    train.batch_size = 16;
    train.adam.lr = 1e-2;
    ExperimentConfig {
        dataset: DatasetSpec::Blobs { n_train: 64, n_test: 20, noise: 0.1, seed: 3 },
        hidden: vec![6, 6],
        train,
        methods,
        radii: vec![0.0, 0.05],
        budget: Budget::branches(64),
        k: 3,
        out_dir: out.to_path_buf(),
        pgd: PgdSettings { steps: 10, ..Default::default() },
        bab: BabConfig::default(),
        jobs: 1,
    }
}

fn two_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::trained("ce", vec![Phase { loss: LossKind::Ce, epochs: 5, beta: None }], None),
        MethodSpec::trained("nbc", vec![Phase { loss: LossKind::Nbc, epochs: 5, beta: None }], Some(1.0)),
    ]
}

#[test]
fn blobs_run_writes_every_artifact_and_is_repeatable() {
    crate::par::set_serial(true);
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), two_methods());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.n_props, 6);
    assert_eq!(report.records.len(), 2 * 2 * 6);
    for r in &report.rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert!((r.unsat_pct + r.sat_pct + r.unknown_pct - 100.0).abs() < 1e-9);
        assert_eq!(r.n_props, 6);
    }
    // Both methods verify the same inputs.
    let inputs = |m: &str| report.records.iter().filter(|p| p.method == m).map(|p| p.test_index).collect::<Vec<_>>();
    assert_eq!(inputs("ce"), inputs("nbc"));

    for f in ["metrics.csv", "metrics.json", "report.txt", "models/ce.json", "history_nbc.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("verdicts")).unwrap().count(), 24);
    assert_eq!(read_metrics_csv(dir.path().join("metrics.csv")).unwrap(), report.rows);

    // Stable% matches an independent recomputation on the saved model.
    let net = AffineNet::from_network(&load_model(dir.path().join("models/nbc.json")).unwrap()).unwrap();
    let (_, test) = cfg.dataset.load().unwrap();
    let props: Vec<RobustnessProperty> =
        make_properties(&test, 3, 0.05, [0.0, 1.0]).unwrap().into_iter().map(|(_, p)| p).collect();
    let row = report.rows.iter().find(|r| r.method == "nbc" && r.radius == 0.05).unwrap();
    assert_eq!(row.stable_pct, stable_percent(&net, &props).unwrap());

    let again = run_experiment(&blobs_config(tempfile::tempdir().unwrap().path(), two_methods())).unwrap();
    for (a, b) in report.rows.iter().zip(&again.rows) {
        assert_eq!((a.unsat_pct, a.stable_pct, a.branches_mean), (b.unsat_pct, b.stable_pct, b.branches_mean));
    }
}

#[test]
fn missing_model_fails_its_rows_but_not_the_run() {
    crate::par::set_serial(true);
    let dir = tempfile::tempdir().unwrap();
    let mut methods = two_methods();
    methods[0].model = Some(dir.path().join("absent.json"));
    let mut cfg = blobs_config(dir.path(), methods);
    cfg.radii = vec![0.0];
    let report = run_experiment(&cfg).unwrap();
    assert!(report.rows[0].error.is_some());
    assert!(report.rows[1].error.is_none());
    assert!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("error"));
}

#[test]
fn config_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = blobs_config(dir.path(), vec![]);
    cfg.radii.clear();
    assert!(cfg.validate().is_err());
    cfg.radii = vec![-0.1];
    assert!(cfg.validate().is_err());
    cfg.radii = vec![0.1];
    cfg.k = 0;
    assert!(cfg.validate().is_err());
    cfg.k = 1;
    assert!(cfg.validate().is_ok());
    assert_eq!(cfg.methods()[0].name, "ce");

    let text = r#"{"dataset":{"kind":"blobs","n_train":10,"n_test":4,"noise":0.0,"seed":1},"radii":[0.1],"budget":{"max_branches":5}}"#;
    let parsed = ExperimentConfig::from_json(text).unwrap();
    assert_eq!(parsed.hidden, vec![64, 32]);
    assert_eq!(parsed.budget.max_branches, Some(5));
    let err = ExperimentConfig::from_json(r#"{"dataset":{"kind":"blobs","n_train":10,"n_test":4,"noise":0.0,"seed":1},"radii":[]}"#);
    assert!(err.is_err());
    let err = ExperimentConfig::from_json(r#"{"radii":[0.1]}"#).unwrap_err();
    assert!(err.to_string().contains("dataset"), "{err}");
}

fn row(method: &str) -> MetricsRow {
    let v = |s| Verdict { status: s, counterexample: None, stats: Default::default() };
    aggregate(method, 0.1, 97.5, 80.0, 60.0, &[(v(VerdictStatus::Unsat), 0.5), (v(VerdictStatus::Sat), 0.1), (v(VerdictStatus::Unknown), 1.5)])
}

#[test]
fn aggregation_by_status() {
    let r = row("ce");
    assert!((r.unsat_pct - 100.0 / 3.0).abs() < 1e-12);
    assert!((r.time_mean_s - 0.7).abs() < 1e-12);
    // Time over UNSAT and UNKNOWN only.
    assert!((r.time_ut_mean_s.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
    assert_eq!(median(&[]), None);
}

#[test]
fn csv_round_trip_and_single_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![row("ce")];
    let path = dir.path().join("m.csv");
    write_metrics_csv(&rows, &path).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with(
        "method,radius,test_acc,unsat_pct,stable_pct,time_mean_s,time_ut_mean_s,pgd100_acc,branches_mean,n_props"
    ));
    let table = report_render(&rows);
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().starts_with("ce"));
}
