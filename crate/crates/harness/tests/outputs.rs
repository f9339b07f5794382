use pbrl_harness::output::{plot_csv, read_summary, records_from_csv, records_to_csv, write_csv, write_summary, CSV_HEADER};
use pbrl_harness::plot::render_svg;
use pbrl_harness::{summarize, ExperimentRecord, SweepOutcome};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = ExperimentRecord> {
    (
        "[a-z0-9_]{1,12}",
        "[a-z_]{1,10}",
        prop_oneof![Just("btl"), Just("linear"), Just("deterministic")],
        proptest::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())),
        any::<u64>(),
        any::<u64>(),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        (any::<u64>(), any::<u64>(), any::<u64>()),
    )
        .prop_map(|(env, algo, model, c, budget, seed, subopt, (steps, comparisons, wall_ms))| ExperimentRecord {
            env,
            algo,
            model: model.into(),
            c,
            budget,
            seed,
            subopt,
            steps,
            comparisons,
            wall_ms,
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(records in proptest::collection::vec(record(), 0..40)) {
        let text = records_to_csv(&records).unwrap();
        prop_assert_eq!(records_from_csv(&text).unwrap(), records);
    }
}

fn fake(algo: &str, budget: u64, seed: u64, subopt: f64) -> ExperimentRecord {
    ExperimentRecord {
        env: "gridworld4x4".into(),
        algo: algo.into(),
        model: "btl".into(),
        c: Some(0.001),
        budget,
        seed,
        subopt,
        steps: seed * 7,
        comparisons: seed * 3,
        wall_ms: 0,
    }
}

fn sample_records() -> Vec<ExperimentRecord> {
    let mut out = Vec::new();
    for budget in [30, 60, 90, 120] {
        for seed in 0..32 {
            let subopt = ((seed * 37 + budget) % 11) as f64 / (budget as f64);
            out.push(fake("peps_fixed", budget, seed, subopt));
        }
    }
    out
}

#[test]
fn empty_csv_has_only_the_header() {
    let text = records_to_csv(&[]).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    assert!(records_from_csv(&text).unwrap().is_empty());
}

#[test]
fn one_line_per_record_plus_header() {
    let text = records_to_csv(&sample_records()).unwrap();
    assert_eq!(text.lines().count(), 129);
    assert!(text.starts_with("env,algo,model,c,budget,seed,subopt,steps,comparisons,wall_ms\n"));
}

#[test]
fn deterministic_model_leaves_the_parameter_blank() {
    let mut r = fake("random", 30, 1, 0.5);
    r.model = "deterministic".into();
    r.c = None;
    let text = records_to_csv(&[r.clone()]).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("gridworld4x4,random,deterministic,,30,"));
    assert_eq!(records_from_csv(&text).unwrap(), vec![r]);
}

#[test]
fn summary_matches_an_independent_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let records = sample_records();
    let outcome = SweepOutcome { summary: summarize(&records), records: records.clone(), failures: vec![] };
    let csv_path = dir.path().join("out/records.csv");
    let summary_path = dir.path().join("out/summary.json");
    write_csv(&csv_path, &records).unwrap();
    write_summary(&summary_path, "test", &outcome).unwrap();

    let parsed = pbrl_harness::output::read_csv(&csv_path).unwrap();
    let file = read_summary(&summary_path).unwrap();
    assert_eq!(file.rows.len(), 4);
    for row in &file.rows {
        let xs: Vec<f64> = parsed.iter().filter(|r| r.budget == row.budget).map(|r| r.subopt).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert_eq!(row.runs, 32);
        assert!((row.mean_subopt - mean).abs() < 1e-12);
        assert!((row.std_subopt - std).abs() < 1e-12);
    }
}

#[test]
fn plots_are_reproducible_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = sample_records();
    records.extend((0..32).map(|s| fake("random", 30, s, 0.4 + s as f64 / 100.0)));
    let csv_path = dir.path().join("r.csv");
    write_csv(&csv_path, &records).unwrap();
    let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
    plot_csv(&csv_path, &a).unwrap();
    plot_csv(&csv_path, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let svg = String::from_utf8(bytes).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert_eq!(svg.matches("<polygon").count(), 2);
    assert_eq!(svg, render_svg(&summarize(&records)));
}

#[test]
fn empty_plot_is_still_valid() {
    let svg = render_svg(&[]);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn unwritable_paths_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = write_csv(&blocker.join("sub/out.csv"), &[]).unwrap_err();
    assert_eq!(err.kind(), "io");
}
