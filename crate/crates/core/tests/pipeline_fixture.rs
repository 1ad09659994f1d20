use std::path::{Path, PathBuf};

use curator_core::pipeline::{
    parse_config, run_pipeline, PipelineConfig, RunReport, RunStatus, RESOLVED_CONFIG_FILE,
};

const PAGES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/pages.jsonl");

fn config(dir: &Path, out: &str, workers: usize) -> PipelineConfig {
    let path = dir.join(format!("{out}.toml"));
    std::fs::write(
        &path,
        format!(
            "seed = 3\nworkers = {workers}\ninput = {PAGES:?}\noutput_dir = {out:?}\n\
             stages = [\"extract\", \"quality\", \"dedup\"]\n[dedup]\nmax_occurrences = 3\n"
        ),
    )
    .unwrap();
    parse_config(path).unwrap()
}

/// Every output file except the resolved config, which records the output
/// directory itself.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != RESOLVED_CONFIG_FILE)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn fixture_run_conserves_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_pipeline(&config(tmp.path(), "a", 0)).unwrap();
    assert_eq!(report.status, RunStatus::Complete);
    assert_eq!(report.input_documents, 100);
    assert_eq!(report.stages.len(), 3);
    let mut expected_input = 100;
    for s in &report.stages {
        assert_eq!(s.input, expected_input);
        assert_eq!(s.kept + s.dropped, s.input, "{:?}", s.stage);
        assert_eq!(s.drop_reasons.values().sum::<u64>(), s.dropped);
        expected_input = s.kept;
    }
    // each stage has something to remove in this fixture
    assert!(report.stages.iter().all(|s| s.dropped > 0));
    let on_disk: RunReport =
        serde_json::from_slice(&std::fs::read(tmp.path().join("a/run_report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);
}

#[test]
fn repeated_and_sequential_runs_match() {
    let tmp = tempfile::tempdir().unwrap();
    run_pipeline(&config(tmp.path(), "a", 0)).unwrap();
    run_pipeline(&config(tmp.path(), "b", 0)).unwrap();
    run_pipeline(&config(tmp.path(), "c", 1)).unwrap();
    let a = outputs(&tmp.path().join("a"));
    assert_eq!(a.len(), 7);
    assert_eq!(a, outputs(&tmp.path().join("b")));
    assert_eq!(a, outputs(&tmp.path().join("c")));
}

#[test]
fn resolved_config_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let first = config(tmp.path(), "a", 0);
    run_pipeline(&first).unwrap();
    let dump: PathBuf = tmp.path().join("a").join(RESOLVED_CONFIG_FILE);
    let mut replay = parse_config(&dump).unwrap();
    assert_eq!(replay, first);
    replay.output_dir = tmp.path().join("replay");
    run_pipeline(&replay).unwrap();
    assert_eq!(outputs(&tmp.path().join("a")), outputs(&tmp.path().join("replay")));
}
