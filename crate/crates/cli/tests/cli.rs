use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn phonaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phonaudit")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn pipeline(root: &Path) {
    let synth = root.join("synth");
    let out = phonaudit(&["synth", "--scenario", "variance", "--speakers-per-group", "8", "--out", path(&synth)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let container = synth.join("embeddings.phem");
    let metadata = synth.join("speakers.csv");
    let config = root.join("audit.toml");
    std::fs::write(&config, "seed = 3\n[probe]\nreplications = 2\nspeakers_per_sg = 4\n").unwrap();
    for (cmd, dir) in [("probe-audit", "probe"), ("variance-audit", "variance")] {
        let out = phonaudit(&[
            "--jobs",
            "1",
            cmd,
            "--container",
            path(&container),
            "--metadata",
            path(&metadata),
            "--config",
            path(&config),
            "--variable",
            "dialect",
            "--out",
            path(&root.join(dir)),
        ]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = phonaudit(&[
        "correlate",
        "--probe",
        path(&root.join("probe")),
        "--variance",
        path(&root.join("variance")),
        "--out",
        path(&root.join("correlate")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = phonaudit(&[
        "compare",
        "--a",
        path(&root.join("variance")),
        "--b",
        path(&root.join("variance")),
        "--out",
        path(&root.join("compare")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a);
    pipeline(&b);
    for sub in ["synth", "probe", "variance", "correlate", "compare"] {
        let (sa, sb) = (snapshot(&a.join(sub)), snapshot(&b.join(sub)));
        assert!(!sa.is_empty(), "{sub} is empty");
        assert_eq!(sa, sb, "{sub} differs between runs");
    }
    let deltas = std::fs::read_to_string(a.join("compare/compare_deltas.csv")).unwrap();
    assert!(deltas.lines().skip(1).all(|l| l.ends_with(",false")), "self-comparison flagged a difference");
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = phonaudit(&["synth", "--scenario", "nope", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "seed = 1\nunknown_key = true\n").unwrap();
    let out = phonaudit(&[
        "probe-audit",
        "--container",
        path(&tmp.path().join("missing.phem")),
        "--config",
        path(&config),
        "--out",
        path(&tmp.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_container_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("bogus.phem");
    std::fs::write(&bogus, b"not a container at all").unwrap();
    let out = phonaudit(&["variance-audit", "--container", path(&bogus), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn non_finite_frames_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames.csv");
    let spans = tmp.path().join("spans.csv");
    let mut text = String::from("utterance_id,speaker_id,layer,frame,v0,v1\n");
    for f in 0..6 {
        let v = if f == 2 { "NaN".to_string() } else { format!("{}.5", f) };
        text.push_str(&format!("u1,S1,0,{f},{v},1.0\n"));
    }
    std::fs::write(&frames, text).unwrap();
    std::fs::write(&spans, "utterance_id,phoneme,start_frame,end_frame\nu1,AA,0,6\n").unwrap();
    let out = phonaudit(&[
        "ingest",
        "--frames",
        path(&frames),
        "--spans",
        path(&spans),
        "--out",
        path(&tmp.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
