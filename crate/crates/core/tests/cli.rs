use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# quick settings for command-line tests
replicates = 1
frame_bits = 16384
n_eval_frames = 200
n_train_iterations = 3
evals_per_device = 3
";

fn rfpuf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfpuf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_dir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.cfg"), SMALL).unwrap();
    d
}

#[test]
fn unknown_flag_or_subcommand_prints_usage() {
    let d = tempfile::tempdir().unwrap();
    for args in [&["--bogus", "fleet"][..], &["frobnicate"], &["experiment", "fig9"], &[]] {
        let o = rfpuf(d.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("Usage") || stderr(&o).contains("--help"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn missing_config_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    let o = rfpuf(d.path(), &["--config", "no/such.cfg", "fleet"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("no/such.cfg"), "{e}");
    assert_eq!(e.lines().count(), 1);
    assert!(e.starts_with("error: kind=missing_file"));
}

#[test]
fn runtime_errors_are_one_line_with_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let o = rfpuf(d.path(), &["eval", "--model", "absent.txt", "--ntx", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert!(stderr(&o).starts_with("error: kind=missing_file"));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn experiment_writes_csvs_deterministically() {
    let d = small_dir();
    let base = ["--config", "small.cfg", "experiment", "fig6a", "--ntx", "10,50,200", "--seed", "1"];
    let a = rfpuf(d.path(), &[&base[..], &["--out", "r/", "--threads", "1"]].concat());
    assert!(a.status.success(), "{}", stderr(&a));
    let b = rfpuf(d.path(), &[&base[..], &["--out", "s/", "--threads", "3"]].concat());
    assert!(b.status.success(), "{}", stderr(&b));
    let (r, s) = (csv_files(&d.path().join("r")), csv_files(&d.path().join("s")));
    let names: Vec<&str> = r.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["fig6a_n_tx10.csv", "fig6a_n_tx200.csv", "fig6a_n_tx50.csv", "fig6a_summary.csv"]);
    assert_eq!(r, s);
    let summary = String::from_utf8(r[3].1.clone()).unwrap();
    assert!(summary.contains("# n_tx = 10,50,200\n"));
    assert!(summary.contains("# master_seed = 1\n"));
    assert!(summary.contains("# frame_bits = 16384\n"));
}

#[test]
fn flags_override_the_config_file() {
    let d = small_dir();
    fs::write(d.path().join("small.cfg"), format!("{SMALL}n_tx = 40\nmaster_seed = 3\n")).unwrap();
    let o = rfpuf(d.path(), &["--config", "small.cfg", "--ntx", "4", "--out", "o", "fleet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fleet = rfpuf::devicegen::read_fleet(&d.path().join("o/fleet.csv")).unwrap();
    assert_eq!(fleet.len(), 4);
    let expected = rfpuf::devicegen::sample_fleet(4, &rfpuf::devicegen::ParamSpec::table_one(), 3).unwrap();
    assert_eq!(fleet, expected);
}

#[test]
fn train_then_eval_round_trip() {
    let d = small_dir();
    let common = ["--config", "small.cfg", "--ntx", "5", "--out", "m"];
    let o = rfpuf(d.path(), &[&common[..], &["fleet"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rfpuf(d.path(), &[&common[..], &["train", "--fleet", "m/fleet.csv"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("m/model.txt").exists());
    let o = rfpuf(d.path(), &[&common[..], &["eval", "--model", "m/model.txt", "--fleet", "m/fleet.csv"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("false_detection = "), "{out}");
    // a model for five devices cannot score a different fleet size
    let o = rfpuf(d.path(), &["--config", "small.cfg", "--ntx", "6", "eval", "--model", "m/model.txt"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nist_on_a_bit_file() {
    let d = tempfile::tempdir().unwrap();
    let bits: String = rfpuf::randomness::prng_bits(32_000, 5).iter().map(|b| if *b == 1 { '1' } else { '0' }).collect();
    fs::write(d.path().join("bits.txt"), bits).unwrap();
    let o = rfpuf(d.path(), &["nist", "--input", "bits.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("\nFrequency,"), "{out}");
    fs::write(d.path().join("bad.txt"), "0101x").unwrap();
    let o = rfpuf(d.path(), &["nist", "--input", "bad.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: kind=parse"));
}

#[test]
fn report_prints_distance_summary() {
    let d = small_dir();
    let o = rfpuf(d.path(), &["--config", "small.cfg", "--ntx", "4", "--out", "p", "report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("identifiability = "));
    assert_eq!(fs::read_to_string(d.path().join("p/report.txt")).unwrap(), out);
}
