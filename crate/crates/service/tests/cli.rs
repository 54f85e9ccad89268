use std::path::Path;

use serde_json::Value;

use brachynav_core::case::load_case;
use brachynav_core::dose::{DoseEngine, SourceModel};
use brachynav_core::dv::{evaluate_plan, EvalContext, PointCount};
use brachynav_core::optimizer::PlanSet;
use brachynav_core::Parallelism;
use brachynav_service::cli::run;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["brachynav"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn make_case(dir: &Path) -> String {
    let case = path(dir, "case.json");
    let (code, _, err) = cli(&["phantom", "--seed", "2", "--needles", "3", "--samples", "2000", "--out", &case]);
    assert_eq!(code, 0, "{err}");
    case
}

#[test]
fn usage_and_validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let case = make_case(dir.path());
    assert_eq!(cli(&["plan"]).0, 2);
    assert_eq!(cli(&["phantom", "--needles", "99", "--out", &path(dir.path(), "x.json")]).0, 2);
    let (code, _, err) = cli(&["--format", "json", "evaluate", "--case", &case, "--plan", "bogus#1-x"]);
    assert_eq!(code, 2);
    let err: Value = serde_json::from_str(&err).unwrap();
    assert_eq!(err["schema_version"], 1);
    assert!(err["code"].is_string());
    let (code, _, _) = cli(&["plan", "--case", &case, "--budget", "10", "--population", "40", "--out", &path(dir.path(), "p.json")]);
    assert_eq!(code, 2);
    let (code, _, _) = cli(&["--workers", "0", "evaluate", "--case", &case, "--plan", "zero"]);
    assert_eq!(code, 2);
    let (code, _, _) = cli(&["evaluate", "--case", &path(dir.path(), "missing.json"), "--plan", "zero"]);
    assert_eq!(code, 1);
}

#[test]
fn zero_plan_misses_every_coverage_aim() {
    let dir = tempfile::tempdir().unwrap();
    let case = make_case(dir.path());
    let (code, out, err) = cli(&["--format", "json", "evaluate", "--case", &case, "--plan", "zero"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let coverage: Vec<&Value> = rows.iter().filter(|r| r["category"] == "coverage").collect();
    assert!(!coverage.is_empty());
    assert!(coverage.iter().all(|r| r["status"] == "not_met" && r["physical"] == 0.0));
    let (code, text, _) = cli(&["evaluate", "--case", &case, "--plan", "zero"]);
    assert_eq!(code, 0);
    assert!(text.contains("CTV_HR D90%"));
}

#[test]
fn plan_evaluate_export_import_agree_with_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let case_path = make_case(dir.path());
    let plans = path(dir.path(), "plans.json");
    let (code, _, err) = cli(&["plan", "--case", &case_path, "--budget", "160", "--population", "40", "--out", &plans]);
    assert_eq!(code, 0, "{err}");
    let set: PlanSet = serde_json::from_slice(&std::fs::read(&plans).unwrap()).unwrap();
    let case = load_case(&case_path).unwrap();
    let default_id = set.default_plan().unwrap();
    let plan = set.plan(default_id).unwrap();

    let (code, out, _) = cli(&["--format", "json", "evaluate", "--case", &case_path, "--plan", &plans, "--points", "final"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let engine = DoseEngine::new(SourceModel::default(), Parallelism::Sequential);
    let ctx = EvalContext::for_case(&case, PointCount::Final).unwrap();
    let want = evaluate_plan(&engine, &case, &plan.dwell_times, &ctx).unwrap();
    assert_eq!(v["rows"], serde_json::to_value(&want).unwrap());

    let exported = path(dir.path(), "export.json");
    let reference = format!("{plans}#{default_id}");
    assert_eq!(cli(&["export", "--case", &case_path, "--plan", &reference, "--out", &exported]).0, 0);
    let imported = path(dir.path(), "imported.json");
    assert_eq!(cli(&["import", "--case", &case_path, "--export", &exported, "--out", &imported]).0, 0);
    let back: PlanSet = serde_json::from_slice(&std::fs::read(&imported).unwrap()).unwrap();
    assert_eq!(back.plans.len(), 1);
    assert_eq!(back.plans[0].dwell_times, plan.dwell_times);
    assert_eq!(back.plans[0].dv_values, plan.dv_values);

    let (code, out, _) = cli(&["--format", "json", "diff", "--case", &case_path, "--left", &plans, "--right", &imported]);
    assert_eq!(code, 0);
    let diff: Value = serde_json::from_str(&out).unwrap();
    assert!(diff["dv_table"].as_array().unwrap().iter().all(|r| r["better"] == "tie"));

    let reopt = path(dir.path(), "reopt.json");
    let (code, _, err) = cli(&["reoptimize", "--case", &case_path, "--previous", &plans, "--max-time", "1:0=0", "--out", &reopt]);
    assert_eq!(code, 0, "{err}");
    let warm: PlanSet = serde_json::from_slice(&std::fs::read(&reopt).unwrap()).unwrap();
    let j = case.flat_index(1, 0).unwrap();
    assert_eq!(warm.parent_run, Some(set.run_id));
    assert!(warm.plans.iter().all(|p| p.dwell_times[j] == 0.0));
}
