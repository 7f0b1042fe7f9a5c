use complab::bench::{run_suite, write_outputs, Report, SuiteConfig, BASE_PIPELINE};
use complab::bench::{ModelSpec, StudentSpec};

/// The built-in matrix with shortened training so it runs in seconds.
fn quick_matrix(seed: u64) -> SuiteConfig {
    let mut cfg = SuiteConfig::technique_matrix(seed);
    if let ModelSpec::Seeded(m) = &mut cfg.model {
        m.train.steps = 15;
    }
    for s in cfg.students.values_mut() {
        if let StudentSpec::Trained(t) = s {
            t.distill.steps = 15;
        }
    }
    cfg.repetitions = 2;
    cfg.eval_tokens = Some(256);
    cfg
}

#[test]
fn matrix_report_is_complete_and_reproducible() {
    let cfg = quick_matrix(4);
    let a = run_suite(&cfg).unwrap();
    let b = run_suite(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    assert_eq!(a.rows.len(), 1 + 6 + 12);
    assert_eq!(a.rows[0].pipeline, BASE_PIPELINE);
    for row in &a.rows {
        assert!(row.error.is_none(), "{}: {:?}", row.pipeline, row.error);
        assert!(row.perplexity.unwrap().is_finite());
        assert_eq!(row.runs, 2);
        assert_eq!(row.opt.len(), 3);
    }
    let parsed = Report::from_json(&a.to_json()).unwrap();
    assert_eq!(parsed.to_json(), a.to_json());
    assert_eq!(a.config_digest, cfg.digest());
}

#[test]
fn different_seed_changes_the_report() {
    let a = run_suite(&quick_matrix(1)).unwrap();
    let b = run_suite(&quick_matrix(2)).unwrap();
    assert_ne!(a.rows[0].perplexity, b.rows[0].perplexity);
}

#[test]
fn outputs_land_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_matrix(5);
    cfg.pipelines.truncate(3);
    cfg.output_dir = Some(dir.path().to_path_buf());
    let report = run_suite(&cfg).unwrap();
    let on_disk = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(on_disk, report.to_json());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("group,"));
    let plot = std::fs::read_to_string(dir.path().join("plot_data.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 3 * 3);

    let again = tempfile::tempdir().unwrap();
    write_outputs(&report, &cfg.weight_profiles().unwrap(), again.path()).unwrap();
    for f in ["report.json", "metrics.csv", "plot_data.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn json_config_resolves_paths_against_its_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("text.txt"), "the cat sat on the mat. ".repeat(40)).unwrap();
    let cfg_path = dir.path().join("suite.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "model": {"seed": 1, "config": {"n_layers": 1, "n_heads": 2, "d_model": 8, "d_ff": 16, "vocab_size": 256, "context_len": 16}, "train": {"steps": 10, "seq_len": 12}},
            "corpus": "text.txt",
            "pipelines": [{"name": "q4", "passes": [{"quantize": 4}]}],
            "repetitions": 1,
            "output_dir": "out"
        }"#,
    )
    .unwrap();
    let cfg = SuiteConfig::load(&cfg_path).unwrap();
    let report = run_suite(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows[1].error.is_none(), "{:?}", report.rows[1].error);
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn unknown_config_fields_are_rejected() {
    assert!(SuiteConfig::from_json(r#"{"model": {"seed": 1}, "pipelines": [], "reps": 3}"#).is_err());
}
