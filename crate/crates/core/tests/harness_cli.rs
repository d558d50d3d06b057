use std::fs;
use std::path::Path;
use std::process::Command;

use qoi_check::calibration::UniformityReport;
use qoi_check::harness::{read_ranks_csv, RunSummary, WORKERS_ENV};

const BIN: &str = env!("CARGO_BIN_EXE_qoi-check");

fn run(args: &[&str], workers: Option<&str>) -> i32 {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    match workers {
        Some(w) => cmd.env(WORKERS_ENV, w),
        None => cmd.env_remove(WORKERS_ENV),
    };
    cmd.output().expect("binary runs").status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn summary(out: &Path) -> RunSummary {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn unknown_key_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "c.json", r#"{"case":"CS1","R":3,"prior_overide":{}}"#);
    assert_eq!(run(&["run", &cfg], None), 2);
    let cfg = write_config(d.path(), "d.json", r#"{"R":3}"#);
    assert_eq!(run(&["run", &cfg], None), 2);
    let cfg = write_config(d.path(), "e.json", r#"{"case":"CS1","R":0}"#);
    assert_eq!(run(&["run", &cfg], None), 2);
    assert_eq!(run(&["run", d.path().join("missing.json").to_str().unwrap()], None), 2);
}

#[test]
fn single_replication_writes_ranks_but_refuses_the_band() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(
        d.path(),
        "c.json",
        &format!(r#"{{"case":"CS1","R":1,"N":60,"G":4,"output_dir":"{}"}}"#, out.display()),
    );
    assert_eq!(run(&["run", &cfg], None), 0);
    assert_eq!(read_ranks_csv(&out.join("ranks.csv")).unwrap().len(), 36);
    let reports: Vec<UniformityReport> = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(reports.is_empty());
    assert!(summary(&out).band_refused.unwrap().contains("20"));
}

#[test]
fn cs1_matrix_emits_36_reports_and_plots() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(
        d.path(),
        "c.json",
        &format!(r#"{{"case":"CS1","R":20,"N":100,"G":5,"n_new_levels":50,"band_draws":500,"output_dir":"{}"}}"#, out.display()),
    );
    assert_eq!(run(&["run", &cfg], None), 0);
    let reports: Vec<UniformityReport> = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 36);
    assert_eq!(fs::read_dir(out.join("plots")).unwrap().count(), 36);
    assert!(out.join("plots").join("c_A_G__c_B_u.svg").exists());
    let s = summary(&out);
    assert_eq!(s.cells.len(), 36);
    assert_eq!(s.checks.jensen_violations, 0);
    assert_eq!(s.completed_replications, 20);
}

#[test]
fn worker_count_does_not_change_ranks() {
    let d = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for w in ["1", "3"] {
        let out = d.path().join(format!("w{w}"));
        let cfg = write_config(
            d.path(),
            &format!("c{w}.json"),
            &format!(r#"{{"case":"CS1","R":6,"N":80,"G":4,"workers":2,"output_dir":"{}"}}"#, out.display()),
        );
        assert_eq!(run(&["run", &cfg], Some(w)), 0);
        bytes.push(fs::read(out.join("ranks.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let header = String::from_utf8(bytes[0].clone()).unwrap();
    assert!(header.starts_with("replication,prior_label,posterior_label,k,S\n"));
}

#[test]
fn quality_failure_exits_3_and_keeps_partial_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(
        d.path(),
        "c.json",
        &format!(
            r#"{{"case":"SBC_ONLY","R":5,"N":200,"G":10,"workers":1,
                "mcmc":{{"warmup":800,"post_warmup":300,"max_attempts":1,"fault":"asymmetric_proposal"}},
                "output_dir":"{}"}}"#,
            out.display()
        ),
    );
    assert_eq!(run(&["run", &cfg], None), 3);
    assert!(out.join("ranks.csv").exists());
    let s = summary(&out);
    assert!(s.failure.unwrap().contains("replication"));
}

#[test]
fn sbc_subcommand_turns_a_case_study_into_parameter_sbc() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(
        d.path(),
        "c.json",
        &format!(r#"{{"case":"CS2","R":2,"N":300,"output_dir":"{}"}}"#, out.display()),
    );
    assert_eq!(run(&["sbc", &cfg], None), 0);
    let recs = read_ranks_csv(&out.join("ranks.csv")).unwrap();
    assert_eq!(recs.len(), 2 * 13);
    assert!(recs.iter().any(|r| r.prior_label == "b[4]"));
}

#[test]
fn toy_study_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let cfg = write_config(d.path(), "c.json", &format!(r#"{{"case":"TOY","R":300,"output_dir":"{}"}}"#, out.display()));
    assert_eq!(run(&["run", &cfg], None), 0);
    assert!(summary(&out).cells.iter().all(|c| c.pass));
}

#[test]
fn plot_matches_golden_file() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("p.svg");
    assert_eq!(run(&["plot", golden.join("report_fixture.json").to_str().unwrap(), out.to_str().unwrap()], None), 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(golden.join("report_fixture.svg")).unwrap());
}

#[test]
fn failing_report_is_annotated() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let mut rep: UniformityReport =
        serde_json::from_str(&fs::read_to_string(golden.join("report_fixture.json")).unwrap()).unwrap();
    rep.ecdf = vec![1.0; 4];
    rep.pass = false;
    let svg = qoi_check::harness::render_ecdf_svg(&rep);
    assert!(svg.contains(">FAIL<") && !svg.contains(">PASS<"));
}
