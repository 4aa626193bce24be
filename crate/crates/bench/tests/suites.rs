use std::path::PathBuf;
use std::time::Instant;

use sage_bench::{
    run_suite_dir, AnnotateError, AnnotationStore, Category, FailureAnnotation, FailureColumn, FailureTable,
    FailureType, LlmSource, Method, Runner, RunnerOptions, Suite, SuiteReport, Tier,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(suite: &str, method: Method) -> SuiteReport {
    let report = run_suite_dir(
        fixtures().join("home"),
        fixtures().join("bench").join(suite),
        LlmSource::Scripted(None),
        RunnerOptions {
            method,
            ..RunnerOptions::default()
        },
    )
    .unwrap();
    eprintln!("{}", report.render_table());
    report
}

#[test]
fn main_suite_passes_every_case() {
    let started = Instant::now();
    let r = run("main", Method::Sage);
    assert_eq!(r.cases.len(), 20);
    assert_eq!(r.runs, 3);
    assert!(r.errored_runs().is_empty());
    assert_eq!(r.overall.rate, 1.0);
    assert_eq!((r.overall.min, r.overall.max), (1.0, 1.0));
    assert_eq!(r.per_category.len(), Category::ALL.len());
    assert!(r.per_category.values().all(|c| c.cases >= 1 && c.rate == 1.0));
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn negative_control_fails_exactly_the_misrouted_case() {
    let r = run("negative", Method::Sage);
    assert_eq!(r.overall.rate, 0.95);
    let failing: Vec<&str> = r.failing_cases().iter().map(|c| c.case_id.as_str()).collect();
    assert_eq!(failing, ["bookshelf-lamp"]);
    assert!(r.case("bookshelf-lamp").unwrap().consistently_failing());
    assert!(r.render_table().contains("bookshelf-lamp (0/3 passed)"));
}

#[test]
fn heldout_suite_passes() {
    let r = run("heldout", Method::Sage);
    assert_eq!(r.cases.len(), 5);
    assert_eq!(r.overall.rate, 1.0);
}

fn baseline_checks(method: Method) -> SuiteReport {
    let r = run("main", method);
    let suite = Suite::load(fixtures().join("bench/main")).unwrap();
    let mut direct = 0;
    let mut persistence = 0;
    for c in &r.cases {
        let case = &suite.cases.iter().find(|l| l.case.id == c.case_id).unwrap().case;
        if case.categories.contains(&Category::DirectCommand) {
            direct += 1;
            assert_eq!(c.passes, 3, "{method} should pass {}", c.case_id);
        }
        if case.categories.contains(&Category::Persistence) {
            persistence += 1;
            assert_eq!(c.passes, 0, "{method} should fail {}", c.case_id);
            assert!(c.consistently_failing());
            assert!(c.results[0].failure.as_deref().unwrap().contains("trigger fire"));
        }
    }
    assert_eq!((direct, persistence), (6, 3));
    assert!(r.errored_runs().is_empty());
    r
}

#[test]
fn one_prompt_baseline_passes_direct_and_fails_persistence() {
    let r = baseline_checks(Method::OnePrompt);
    assert!(r.skipped.contains(&"team-game".to_string()));
}

#[test]
fn sasha_baseline_passes_direct_and_fails_persistence_and_photos() {
    let r = baseline_checks(Method::Sasha);
    let dresser = r.case("dresser-tv-off").unwrap();
    assert_eq!(dresser.passes, 0);
    assert!(dresser.results[0].failure.as_deref().unwrap().contains("tv-1"));
}

#[test]
fn repeated_runs_give_identical_reports() {
    assert_eq!(run("main", Method::Sage), run("main", Method::Sage));
}

#[test]
fn each_run_starts_from_the_base_state() {
    let suite = Suite::load(fixtures().join("bench/main")).unwrap();
    let runner = Runner::new(fixtures().join("home"), LlmSource::Scripted(None), RunnerOptions::default()).unwrap();
    let base = runner.sage().hub().snapshot();
    for c in &suite.cases {
        runner.run_case(&suite, &c.case).unwrap();
        runner.sage().reset().unwrap();
        assert_eq!(runner.sage().hub().snapshot(), base, "after {}", c.case.id);
        assert!(runner.sage().monitor().triggers().is_empty());
        assert!(runner.sage().memory().is_empty());
    }
}

#[test]
fn parallel_mode_matches_sequential() {
    let opts = |parallel| RunnerOptions {
        parallel,
        ..RunnerOptions::default()
    };
    let home = fixtures().join("home");
    let dir = fixtures().join("bench/heldout");
    let a = run_suite_dir(&home, &dir, LlmSource::Scripted(None), opts(false)).unwrap();
    let b = run_suite_dir(&home, &dir, LlmSource::Scripted(None), opts(true)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn traces_are_written_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_suite_dir(
        fixtures().join("home"),
        fixtures().join("bench/heldout"),
        LlmSource::Scripted(None),
        RunnerOptions {
            runs: 1,
            trace_dir: Some(dir.path().to_path_buf()),
            ..RunnerOptions::default()
        },
    )
    .unwrap();
    for c in &r.cases {
        let path = c.results[0].trace_ref.as_ref().unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert!(!v.as_array().unwrap().is_empty());
    }
}

#[test]
fn missing_replay_is_an_errored_run_not_a_failure() {
    let empty = tempfile::tempdir().unwrap();
    let r = run_suite_dir(
        fixtures().join("home"),
        fixtures().join("bench/heldout"),
        LlmSource::Scripted(Some(empty.path().to_path_buf())),
        RunnerOptions {
            runs: 1,
            ..RunnerOptions::default()
        },
    )
    .unwrap();
    assert_eq!(r.errored_runs().len(), 5);
    assert!(r.cases.iter().all(|c| !c.consistently_failing()));
}

#[test]
fn annotations_only_for_consistent_failures() {
    let r = run("negative", Method::Sage);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.json");
    let mut store = AnnotationStore::open(&path).unwrap();

    let err = store
        .annotate(&r, FailureAnnotation::new("kitchen-light-on", FailureType::Formatting, ""))
        .unwrap_err();
    assert!(matches!(err, AnnotateError::NotConsistentlyFailing { .. }));

    let mut wrong_tier = FailureAnnotation::new("bookshelf-lamp", FailureType::ToolSelection, "");
    wrong_tier.tier = Tier::One;
    assert!(matches!(store.annotate(&r, wrong_tier), Err(AnnotateError::TierMismatch { .. })));

    store
        .annotate(
            &r,
            FailureAnnotation::new("bookshelf-lamp", FailureType::ToolSelection, "asked the weather tool"),
        )
        .unwrap();
    let reopened = AnnotationStore::open(&path).unwrap();
    assert_eq!(reopened.annotations().len(), 1);

    let column = FailureColumn::new("scripted", &r, reopened.annotations());
    assert_eq!(column.total_failures, 3);
    assert_eq!(column.percentages[&FailureType::ToolSelection], 100);
    assert_eq!(column.percentages.values().sum::<u32>(), 100);
    let table = FailureTable::new(vec![column]).render();
    assert_eq!(table.lines().filter(|l| !l.trim().is_empty()).count(), 3 + 12);
    assert!(table.contains("Tool selection"));
}

#[test]
fn partial_failures_are_rejected() {
    let r = run("negative", Method::Sage);
    let mut r = r;
    // One of three runs passes: no longer consistent.
    let c = r.cases.iter_mut().find(|c| c.case_id == "bookshelf-lamp").unwrap();
    c.results[1].passed = true;
    c.passes = 1;
    let mut store = AnnotationStore::in_memory();
    assert!(matches!(
        store.annotate(&r, FailureAnnotation::new("bookshelf-lamp", FailureType::Planning, "")),
        Err(AnnotateError::NotConsistentlyFailing { passes: 1, .. })
    ));
}
