use std::path::{Path, PathBuf};

use recall_audit::audit::AuditReport;
use recall_audit::enroll::Fingerprint;
use recall_audit::oracle::network_request_count;
use recall_audit_cli::{exit, main_with_args};

fn demo_dir() -> tempfile::TempDir {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo");
    let dir = tempfile::tempdir().unwrap();
    for f in ["audit.toml", "world.toml"] {
        std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn run(dir: &Path, args: &[&str]) -> (i32, String) {
    let config = dir.join("audit.toml");
    let mut argv: Vec<String> = vec!["recall-audit".into(), "--config".into(), config.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let mut out = Vec::new();
    let code = main_with_args(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn enroll(dir: &Path, out: &str) -> Fingerprint {
    let (code, text) = run(
        dir,
        &["--cassette-mode", "record", "enroll", "--reference", "reference", "--contrast", "rival", "--out", &p(dir, out)],
    );
    assert_eq!(code, exit::OK, "{text}");
    Fingerprint::load(dir.join(out)).unwrap()
}

#[test]
fn end_to_end_demo_is_deterministic_and_offline() {
    let before = network_request_count();
    let dir = demo_dir();
    let d = dir.path();
    let a = enroll(d, "a.json");
    let b = enroll(d, "b.json");
    assert!(a.n() >= 50, "N = {}", a.n());
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());

    let (code, _) = run(d, &["audit", "--suspect", "self-replay", "--fingerprint", &p(d, "a.json"), "--out", &p(d, "self.json")]);
    assert_eq!(code, exit::OK);
    let report = AuditReport::from_json(&std::fs::read_to_string(d.join("self.json")).unwrap()).unwrap();
    assert_eq!(report.single_round.as_ref().unwrap().k, a.k_self);
    assert_eq!(report.fingerprint_hash, a.content_hash());
    assert!(d.join("self.md").exists());

    let (code, _) = run(d, &["audit", "--suspect", "substitute", "--fingerprint", &p(d, "a.json"), "--two-round", "--out", &p(d, "s1.json")]);
    assert_eq!(code, exit::DIFFERENT);
    let (code, _) = run(d, &["audit", "--suspect", "substitute", "--fingerprint", &p(d, "a.json"), "--two-round", "--out", &p(d, "s2.json")]);
    assert_eq!(code, exit::DIFFERENT);
    assert_eq!(std::fs::read(d.join("s1.json")).unwrap(), std::fs::read(d.join("s2.json")).unwrap());
    assert_eq!(std::fs::read(d.join("s1.md")).unwrap(), std::fs::read(d.join("s2.md")).unwrap());

    let (code, md) = run(d, &["report", &p(d, "s1.json")]);
    assert_eq!(code, exit::OK);
    assert!(md.contains("DIFFERENT") && md.contains("k_self"));
    assert_eq!(network_request_count(), before);
}

#[test]
fn replay_mode_reproduces_recorded_enrollment() {
    let dir = demo_dir();
    let d = dir.path();
    let a = enroll(d, "a.json");
    let (code, _) = run(
        d,
        &["--cassette-mode", "replay", "enroll", "--reference", "reference", "--contrast", "rival", "--out", &p(d, "r.json")],
    );
    assert_eq!(code, exit::OK);
    assert_eq!(Fingerprint::load(d.join("r.json")).unwrap().content_hash(), a.content_hash());
}

#[test]
fn routed_fraction_estimates() {
    let dir = demo_dir();
    let d = dir.path();
    enroll(d, "fp.json");
    let fp = p(d, "fp.json");
    let (code, _) = run(
        d,
        &["audit", "--suspect", "routed", "--fingerprint", &fp, "--estimate-pi", "--substitute", "substitute", "--out", &p(d, "k.json")],
    );
    assert!(code == exit::OK || code == exit::DIFFERENT);
    let r = AuditReport::from_json(&std::fs::read_to_string(d.join("k.json")).unwrap()).unwrap();
    assert!(r.two_round.is_some() && r.pi.is_some());
    let (code, _) = run(
        d,
        &["audit", "--suspect", "routed", "--fingerprint", &fp, "--estimate-pi", "--pool", "substitute,cheaper", "--out", &p(d, "pool.json")],
    );
    assert!(code == exit::OK || code == exit::DIFFERENT);
    let (code, _) = run(d, &["audit", "--suspect", "routed", "--fingerprint", &fp, "--estimate-pi", "--out", &p(d, "x.json")]);
    assert_eq!(code, exit::USAGE);
}

#[test]
fn clone_contrast_fails_enrollment() {
    let dir = demo_dir();
    let d = dir.path();
    let (code, _) = run(d, &["enroll", "--reference", "reference", "--contrast", "twin", "--out", &p(d, "fp.json")]);
    assert_eq!(code, exit::USAGE);
    assert!(!d.join("fp.json").exists());
}

#[test]
fn power_command_writes_csv_and_rejects_zero_trials() {
    let dir = demo_dir();
    let d = dir.path();
    let csv: PathBuf = d.join("p.csv");
    let args = ["power", "--from-table", "224", "33", "0.161", "0.013", "--trials", "300", "--grid", "0.1:0.3:0.1"];
    let (code, text) = run(d, &[&args[..], &["--out", &csv.display().to_string()]].concat());
    assert_eq!(code, exit::OK);
    assert!(text.contains("MDR_95"));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "pi,tpr,bias,se,coverage");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.10,"));
    let (_, again) = run(d, &args);
    let (_, third) = run(d, &args);
    assert_eq!(again, third);
    assert_eq!(again, body);

    let (code, _) = run(d, &["power", "--from-table", "224", "33", "0.161", "0.013", "--trials", "0"]);
    assert_eq!(code, exit::USAGE);
    let (code, _) = run(d, &["power", "--from-table", "224", "33", "0.161", "0.013", "--grid", "0.5:0.1:0.1"]);
    assert_eq!(code, exit::USAGE);
}

#[test]
fn usage_errors_exit_one() {
    let dir = demo_dir();
    let d = dir.path();
    assert_eq!(run(d, &["frobnicate"]).0, exit::USAGE);
    assert_eq!(run(d, &["audit", "--suspect", "nobody", "--fingerprint", &p(d, "missing.json")]).0, exit::USAGE);
    assert_eq!(main_with_args(["recall-audit", "--config", &p(d, "nope.toml"), "registry-lint"], &mut Vec::new()), exit::USAGE);
    assert_eq!(main_with_args(["recall-audit", "--help"], &mut Vec::new()), exit::OK);
}

#[test]
fn registry_lint_accepts_builtin_registry() {
    let mut out = Vec::new();
    assert_eq!(main_with_args(["recall-audit", "registry-lint"], &mut out), exit::OK);
    assert!(String::from_utf8(out).unwrap().contains("domains OK"));
}

#[test]
fn transport_failures_abort_the_audit() {
    let dir = demo_dir();
    let d = dir.path();
    enroll(d, "fp.json");
    let (code, _) = run(d, &["audit", "--suspect", "unreachable", "--fingerprint", &p(d, "fp.json"), "--out", &p(d, "u.json")]);
    assert_eq!(code, exit::ABORTED);
    assert!(!d.join("u.json").exists());
}
