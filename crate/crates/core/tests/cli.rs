use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_accesssim");

const SHARED: &str = "
subscribers.10.plan = shared
subscribers.10.token_rate = 10Mbps
subscribers.10.bucket_size = 1Mb
subscribers.11.plan = shared
subscribers.11.token_rate = 20Mbps
subscribers.11.bucket_size = 1Mb
group.svid = 100
group.members = 10,11
sources.0.subscriber = 10
sources.0.kind = cbr
sources.0.rate = 30Mbps
sources.1.subscriber = 11
sources.1.kind = cbr
sources.1.rate = 40Mbps
run.duration = 2s
";

fn accesssim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run(conf: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", conf, "--seed", "7", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    accesssim(&args)
}

#[test]
fn run_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(tmp.path(), "s.conf", SHARED);
    let out = tmp.path().join("out");
    let o = run(&conf, &out, &["--trace", "pcap"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.csv", "verdicts.csv", "fdb.csv", "summary.txt", "scenario.conf", "trace.pcap"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("subscriber,plan,offered_bytes,delivered_bytes,dropped_bytes,goodput_bps,"));
    assert_eq!(csv.lines().count(), 3);
    let pcap = fs::read(out.join("trace.pcap")).unwrap();
    assert_eq!(&pcap[..4], &[0xd4, 0xc3, 0xb2, 0xa1]);
    let normalized = fs::read_to_string(out.join("scenario.conf")).unwrap();
    assert!(normalized.contains("run.seed = 7"));
    assert!(normalized.contains("outputs.trace = pcap"));
}

#[test]
fn duplicate_cvid_exits_2_naming_key() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(tmp.path(), "s.conf", &format!("{SHARED}subscribers.10.plan = legacy\n"));
    let o = run(&conf, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("subscribers.10.plan"));
}

#[test]
fn unreadable_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path().join("missing.conf").to_str().unwrap(), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_exits_2() {
    assert_eq!(accesssim(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(accesssim(&["run", "--config", "x", "--out", "y", "--trace", "gif"]).status.code(), Some(2));
}

#[test]
fn check_passes_against_legacy_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(tmp.path(), "s.conf", SHARED);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&conf, &a, &[]).status.code(), Some(0));
    assert_eq!(run(&conf, &b, &["--legacy-reference"]).status.code(), Some(0));
    let o = accesssim(&["check", "--run", a.to_str().unwrap(), "--reference", b.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("no-disadvantage")).count(), 2);
}

#[test]
fn check_fails_when_group_rate_is_too_low() {
    let tmp = tempfile::tempdir().unwrap();
    let low = write(tmp.path(), "low.conf", &format!("{SHARED}group.tbf_rate = 15Mbps\n"));
    let conf = write(tmp.path(), "s.conf", SHARED);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&low, &a, &[]);
    run(&conf, &b, &["--legacy-reference"]);
    let o = accesssim(&["check", "--run", a.to_str().unwrap(), "--reference", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn check_without_reference_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(tmp.path(), "s.conf", SHARED);
    let a = tmp.path().join("a");
    run(&conf, &a, &[]);
    let o =
        accesssim(&["check", "--run", a.to_str().unwrap(), "--reference", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn legacy_only_check_trivially_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(
        tmp.path(),
        "l.conf",
        "subscribers.5.plan = legacy\nsubscribers.5.token_rate = 5Mbps\nsubscribers.5.bucket_size = 1Mb\n\
         sources.0.subscriber = 5\nsources.0.kind = poisson\nsources.0.rate = 8Mbps\nrun.duration = 1s\n",
    );
    let a = tmp.path().join("a");
    assert_eq!(run(&conf, &a, &[]).status.code(), Some(0));
    let o = accesssim(&["check", "--run", a.to_str().unwrap(), "--reference", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn duration_override_and_hex_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write(tmp.path(), "s.conf", SHARED);
    let out = tmp.path().join("out");
    assert_eq!(run(&conf, &out, &["--duration", "100ms", "--trace", "hex"]).status.code(), Some(0));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.starts_with("end_ns 100000000\n"));
    let trace = fs::read_to_string(out.join("trace.hex")).unwrap();
    let first = trace.lines().next().unwrap();
    let fields: Vec<&str> = first.split(' ').collect();
    assert_eq!(fields[1], "olt");
    assert_eq!(fields[3], "TX");
    // [S-TAG 100, C-TAG] right after the addresses
    assert_eq!(&fields[4][24..32], "88A80064");
}
