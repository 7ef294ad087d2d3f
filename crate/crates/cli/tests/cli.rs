use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use nalgebra::DMatrix;
use proptest::prelude::*;

use dynfx::design::{GroupFactor, PanelDataset, Treatment};
use dynfx::effects::{EffectPoint, EffectSeries, Period};
use dynfx_cli::{
    emit_plotdata, parse_panel, run, write_panel, CliError, Command, IngestOptions, MethodName, OutcomeTransform,
    Overrides, RunConfig,
};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn parse(text: &str) -> Result<PanelDataset, CliError> {
    parse_panel(text.as_bytes(), &IngestOptions::default())
}

fn validation_message(r: Result<PanelDataset, CliError>) -> String {
    match r {
        Err(CliError::Validation(m)) => m,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

fn config(command: Command, out: &Path) -> RunConfig {
    RunConfig { command, output: Some(out.to_path_buf()), ..RunConfig::default() }
}

fn dynfx() -> Process {
    Process::new(env!("CARGO_BIN_EXE_dynfx"))
}

#[test]
fn two_by_two_panel() {
    let ds = parse("unit,t,y,T\na,1,1.5,0\na,2,2.5,0\nb,1,3,1\nb,2,,1\n").unwrap();
    assert_eq!((ds.d(), ds.n()), (2, 2));
    assert_eq!(ds.units, vec!["a", "b"]);
    assert_eq!(ds.times, vec![1, 2]);
    assert!(ds.outcome[(1, 1)].is_nan());
    assert_eq!(ds.treatment, Treatment::PerUnit(vec![0.0, 1.0]));
}

#[test]
fn rows_may_come_in_any_order() {
    let ds = parse("unit,t,y,T\nb,2,4,1\na,2,2,0\na,1,1,0\nb,1,3,1\n").unwrap();
    assert_eq!(ds.units, vec!["b", "a"]);
    assert_eq!(ds.outcome, DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 4.0, 2.0]));
}

#[test]
fn malformed_rows_report_line_numbers() {
    let m = validation_message(parse("unit,t,y,T\na,1,1,0\na,2,abc,0\n"));
    assert!(m.contains("line 3"), "{m}");
    let m = validation_message(parse("unit,t,y,T\na,1,1,0\na,2,1\n"));
    assert!(m.contains("line 3"), "{m}");
    let m = validation_message(parse("unit,t,y,T\na,x,1,0\n"));
    assert!(m.contains("line 2"), "{m}");
    let m = validation_message(parse("unit,t,y,T\na,1,1,0\na,1,2,0\n"));
    assert!(m.contains("line 3") && m.contains("line 2"), "{m}");
    let m = validation_message(parse("unit,t,y,T,x_pre\na,1,1,0,0.5\na,2,1,0,0.7\n"));
    assert!(m.contains("line 3") && m.contains("x_pre"), "{m}");
}

#[test]
fn header_is_checked() {
    assert!(validation_message(parse("unit,t,y\na,1,1\n")).contains("\"T\""));
    assert!(validation_message(parse("unit,t,y,T,w\na,1,1,0,1\n")).contains("\"w\""));
    assert!(validation_message(parse("unit,t,y,T,z,z1\na,1,1,0,1,1\n")).contains("not both"));
    assert!(validation_message(parse("unit,t,y,T,z2\na,1,1,0,1\n")).contains("\"z2\""));
}

#[test]
fn non_rectangular_panel_is_rejected() {
    let m = validation_message(parse("unit,t,y,T\na,1,1,0\na,2,1,0\nb,1,1,1\n"));
    assert!(m.contains("unit b") && m.contains("t = 2"), "{m}");
    // an explicit empty y is a missing value, not a gap
    assert!(parse("unit,t,y,T\na,1,1,0\na,2,1,0\nb,1,1,1\nb,2,,1\n").is_ok());
}

#[test]
fn numbered_covariates_and_groups() {
    let ds = parse("unit,t,y,T,z1,z2,g\na,1,1,0,0.1,1,west\na,2,1,0,0.2,2,\nb,1,2,1,0.3,3,east\nb,2,2,1,0.4,4,east\n").unwrap();
    assert_eq!(ds.z.len(), 2);
    assert_eq!(ds.z[1][(1, 1)], 4.0);
    let g = ds.g.unwrap();
    assert_eq!(g.levels, vec!["east", "west"]);
    assert_eq!(g.codes, vec![1, 0]);
}

#[test]
fn x_pre_from_window_of_transformed_outcome() {
    let text = "unit,t,y,T\na,-1,4,0\na,0,16,0\na,1,9,0\nb,-1,1,0\nb,0,,0\nb,1,25,1\n";
    let opts = IngestOptions { transform: OutcomeTransform::Sqrt, x_pre_window: Some((-1, 0)) };
    let ds = parse_panel(text.as_bytes(), &opts).unwrap();
    assert_eq!(ds.x_pre, Some(vec![3.0, 1.0]));
    assert_eq!(ds.outcome[(2, 1)], 5.0);
    let bad = IngestOptions { transform: OutcomeTransform::Sqrt, x_pre_window: None };
    let m = validation_message(parse_panel("unit,t,y,T\na,1,-1,0\n".as_bytes(), &bad));
    assert!(m.contains("line 2"), "{m}");
}

fn small_panel() -> impl Strategy<Value = PanelDataset> {
    (1usize..4, 1usize..5, 0usize..3, any::<bool>(), any::<bool>()).prop_flat_map(|(d, n, nz, has_x, has_g)| {
        (
            prop::collection::vec(prop::option::weighted(0.8, -1e6f64..1e6), n * d),
            prop::collection::vec(0u8..2, d),
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-1e3f64..1e3, n * d * nz),
            prop::collection::vec(0u8..2, d),
            prop::collection::btree_set(-50i64..50, n),
        )
            .prop_map(move |(y, tr, x, z, g, times)| {
                let y: Vec<f64> = y.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
                let mut ds = PanelDataset::new(
                    (0..d).map(|i| format!("unit {i}")).collect(),
                    times.into_iter().collect(),
                    DMatrix::from_vec(n, d, y),
                    Treatment::PerUnit(tr.iter().map(|&v| v as f64).collect()),
                )
                .unwrap();
                for k in 0..nz {
                    ds = ds.with_z(DMatrix::from_column_slice(n, d, &z[k * n * d..(k + 1) * n * d])).unwrap();
                }
                if has_x {
                    ds = ds.with_x_pre(x).unwrap();
                }
                if has_g {
                    let labels: Vec<&str> = g.iter().map(|&v| if v == 0 { "a" } else { "b" }).collect();
                    ds = ds.with_g(GroupFactor::from_labels(&labels).unwrap()).unwrap();
                }
                ds
            })
    })
}

/// Equality with NaN outcomes treated as equal.
fn same_panel(a: &PanelDataset, b: &PanelDataset) -> bool {
    let y_eq = a.outcome.shape() == b.outcome.shape()
        && a.outcome.iter().zip(b.outcome.iter()).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()));
    y_eq && a.units == b.units
        && a.times == b.times
        && a.treatment == b.treatment
        && a.x_pre == b.x_pre
        && a.z == b.z
        && a.g == b.g
        && a.weights == b.weights
}

proptest! {
    #[test]
    fn ingest_inverts_write(ds in small_panel()) {
        let text = write_panel(&ds);
        let back = parse(&text).unwrap();
        prop_assert!(same_panel(&ds, &back), "{text}");
    }
}

#[test]
fn toy_table_through_bayesian_imputation() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Estimate, dir.path());
    c.input = Some(data("toy.csv"));
    c.method = MethodName::BayesianImputation;
    c.estimands = vec!["ATE".into(), "SATE".into()];
    run(&c).unwrap();
    let text = std::fs::read_to_string(dir.path().join("effects.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<(i64, String, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].to_string(), r[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 4);
    for (t, _, point) in rows {
        let want = if t == 1 { 1.0 } else { 3.0 };
        assert!((point - want).abs() < 1e-12, "t = {t}: {point}");
    }
}

#[test]
fn time_varying_treatment_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("panel.csv");
    std::fs::write(&input, "unit,t,y,T\nu1,1,1,0\nu1,2,1,0\nu1,3,1,0\nu2,1,2,1\nu2,2,1,0\nu2,3,2,1\n").unwrap();
    let mut c = config(Command::Estimate, &dir.path().join("out"));
    c.input = Some(input);
    match run(&c) {
        Err(CliError::Validation(m)) => assert!(m.contains("u2"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn geo_fixture_runs_with_transform_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Forecast, dir.path());
    c.input = Some(data("geo.csv"));
    c.formula = "x_pre + T + T:g".into();
    c.x_pre_window = Some((-6, 0));
    c.transform = OutcomeTransform::Sqrt;
    c.weights = dynfx_cli::WeightScheme::InvSqrtXpre;
    c.estimands = vec!["SATE".into(), "MCATE(g=south)".into(), "MCATE_diff".into()];
    c.horizon = 3;
    c.draws = 200;
    c.n_starts = 2;
    let out = run(&c).unwrap();
    assert!(out.manifest.scale.contains("square-root"));
    assert!(out.manifest.notes.iter().any(|n| n.contains("dropped 7 pre-period")));
    let fit = out.manifest.fit.as_ref().unwrap();
    assert_eq!(fit.names.len(), fit.psi.len());
    let text = std::fs::read_to_string(dir.path().join("effects.csv")).unwrap();
    // 21 treatment-period points per estimand plus 3 forecast points for SATE
    // and the two population estimands each
    assert_eq!(text.lines().count(), 1 + 3 * 21 + 3 * 3);
    assert!(text.contains("MCATE(g=south)"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",future")).count(), 9);
}

#[test]
fn causal_impact_uses_untreated_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Estimate, dir.path());
    c.input = Some(data("geo.csv"));
    c.method = MethodName::CausalImpact;
    c.transform = OutcomeTransform::Sqrt;
    c.estimands = vec!["ATE".into()];
    c.draws = 200;
    run(&c).unwrap();
    let text = std::fs::read_to_string(dir.path().join("effects.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",pre")).count(), 7);
    // geo04 is treated and misses y at t = 5, so the aggregate is missing there
    assert_eq!(text.lines().filter(|l| l.ends_with(",past")).count(), 20);
}

#[test]
fn forecast_needs_a_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = dynfx()
        .args(["forecast", "--horizon", "0", "-o"])
        .arg(&out)
        .arg("-i")
        .arg(data("toy.csv"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&status.stderr).unwrap();
    assert_eq!(report["error"], "validation");
    assert!(!out.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dynfx().args(["estimate", "-i", "/nonexistent/panel.csv", "-o"]).arg(dir.path()).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));
    let ok = dynfx()
        .args(["estimate", "--method", "bayesian-imputation", "-i"])
        .arg(data("toy.csv"))
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad_level = dynfx().args(["estimate", "--level", "1.5", "-i"]).arg(data("toy.csv")).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(bad_level.status.code(), Some(2));
}

#[test]
fn failed_run_leaves_existing_files_alone() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let mut c = config(Command::Estimate, dir.path());
    c.input = Some(data("toy.csv"));
    c.estimands = vec!["SATE".into(), "MCATE(g=1)".into()];
    c.method = MethodName::BayesianImputation;
    assert!(run(&c).is_err());
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec!["keep.txt"]);
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"formula": "x_pre + T", "draws": 10, "sim": {"model": 3}}"#).unwrap();
    let flags = Overrides { config: Some(path.clone()), draws: Some(20), seed: Some(9), ..Overrides::default() };
    let c = flags.resolve(Command::Estimate).unwrap();
    assert_eq!((c.formula.as_str(), c.draws, c.seed, c.sim.model), ("x_pre + T", 20, 9, 3));
    let c = flags.resolve(Command::Simulate).unwrap();
    assert_eq!((c.seed, c.sim.seed), (0, 9));
    std::fs::write(&path, r#"{"formulas": "T"}"#).unwrap();
    assert!(matches!(RunConfig::load(&path), Err(CliError::Validation(_))));
}

#[test]
fn simulate_reruns_byte_identical_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut c = config(Command::Simulate, &a);
    c.sim.d = 6;
    c.sim.n = 20;
    c.sim.horizon = 0;
    c.sim.seed = 4;
    let first = run(&c).unwrap();
    let names: Vec<String> = first.manifest.outputs.iter().map(|f| f.path.clone()).collect();
    assert_eq!(names, vec!["panel.csv", "truth.csv"]);
    let mut again = RunConfig::load(&a.join("manifest.json")).unwrap();
    again.output = Some(b.clone());
    run(&again).unwrap();
    for name in ["panel.csv", "truth.csv", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

fn series(n: usize) -> EffectSeries {
    let req = dynfx::effects::EffectRequest::new(dynfx::effects::Estimand::Sate, 0);
    let mut s = EffectSeries::new("SATE", "causal-transfer", &req);
    s.points = (0..n)
        .map(|k| EffectPoint { time: k as i64 + 1, point: 1.0, lower: 0.5, upper: 1.5, period: Period::Past })
        .collect();
    s
}

#[test]
fn plot_data_row_counts() {
    let rows = |text: &str| text.lines().count() - 1;
    assert_eq!(rows(&emit_plotdata(&[series(2)], None)), 6);
    let truth = BTreeMap::from([(1, 0.9), (2, 1.1), (3, 5.0)]);
    assert_eq!(rows(&emit_plotdata(&[series(2)], Some(&truth))), 8);
    assert_eq!(emit_plotdata(&[series(0)], None), "t,series,value\n");
    assert_eq!(emit_plotdata(&[], Some(&truth)), "t,series,value\n");
}

#[test]
fn benchmark_writes_one_plot_file_per_method_and_estimand() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(Command::Benchmark, dir.path());
    c.sim.d = 12;
    c.sim.n = 30;
    c.sim.horizon = 5;
    c.sim.replications = 1;
    c.methods = vec!["ct".into(), "bi".into()];
    c.estimands = vec!["SATE".into(), "ATE".into(), "MCATE_diff".into()];
    c.draws = 50;
    c.n_starts = 1;
    let out = run(&c).unwrap();
    let hash = &out.manifest.config_hash[..12];
    let plots: Vec<&String> = out.manifest.outputs.iter().map(|f| &f.path).filter(|p| p.starts_with("plot_")).collect();
    assert_eq!(plots.len(), 2 * 3);
    assert!(plots.iter().all(|p| p.contains(hash)));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("method,estimand,period,mse"));
}
