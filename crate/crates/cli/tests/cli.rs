use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcl_core::analysis::bounds::feasible_disagreement;

fn rcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn summary(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary")
}

#[test]
fn corpus_outcomes() {
    let expect = [
        ("all-correct-n4.json", "agreement"),
        ("leader-crash-n4.json", "agreement"),
        ("corollary1.json", "disagreement"),
        ("disagreement-n4.json", "disagreement"),
        ("baiting-escape.json", "agreement"),
        ("lemma2-attack.json", "agreement"),
        ("d1.json", "agreement"),
        ("d2.json", "agreement"),
        ("d3.json", "agreement"),
        ("d4.json", "agreement"),
        ("d5.json", "agreement"),
        ("d6.json", "agreement"),
    ];
    for (file, outcome) in expect {
        let s = summary(&rcl(&["run", corpus(file).to_str().unwrap()]));
        assert_eq!(s["outcome"]["outcome"], outcome, "{file}");
        let scenario: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(corpus(file)).unwrap()).unwrap();
        let cfg: rcl_core::ScenarioConfig<f64> = serde_json::from_value(scenario["scenario"].clone()).unwrap();
        let bare = rcl_core::sim::run_trace(&cfg, rcl_core::RunOptions::default()).unwrap();
        assert_eq!(s["trace_digest"], bare.digest().to_hex(), "{file}");
    }
    let c1 = summary(&rcl(&["run", corpus("corollary1.json").to_str().unwrap()]));
    assert_eq!(c1["utilities"]["0"], 10.0);
    let bait = summary(&rcl(&["run", corpus("baiting-escape.json").to_str().unwrap()]));
    assert_eq!(bait["utilities"]["0"], -19.0);
    assert_eq!(bait["utilities"]["1"], 13.0);
    let l2 = summary(&rcl(&["run", corpus("lemma2-attack.json").to_str().unwrap()]));
    assert_eq!(l2["check"]["verdict"], "no-violation");
}

#[test]
fn every_corpus_trace_replays() {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(corpus("")).unwrap() {
        let path = entry.unwrap().path();
        let trace = dir.path().join(path.file_name().unwrap()).with_extension("jsonl");
        let out = rcl(&["run", path.to_str().unwrap(), "--out", trace.to_str().unwrap()]);
        assert!(out.status.success(), "{path:?}");
        let rep = rcl(&["replay", trace.to_str().unwrap()]);
        assert!(
            rep.status.success(),
            "{path:?}: {}",
            String::from_utf8_lossy(&rep.stderr)
        );
    }
}

#[test]
fn seed_and_valuation_overrides() {
    let f = corpus("all-correct-n4.json");
    let a = summary(&rcl(&["run", f.to_str().unwrap(), "--seed", "7"]));
    let b = summary(&rcl(&[
        "run",
        f.to_str().unwrap(),
        "--seed",
        "7",
        "--valuation",
        "alternate",
    ]));
    assert_eq!(a["outcome"], b["outcome"]);
    assert_eq!(a["steps"], b["steps"]);
    assert_ne!(a["utilities"], b["utilities"]);
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(rcl(&["run", bad.to_str().unwrap()]).status.code(), Some(2));

    let text = std::fs::read_to_string(corpus("all-correct-n4.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenario"]["colour"] = serde_json::json!("blue");
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(rcl(&["run", bad.to_str().unwrap()]).status.code(), Some(2));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenario"]["roles"][0]["strategy"]["extra"] = serde_json::json!(1);
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(rcl(&["run", bad.to_str().unwrap()]).status.code(), Some(2));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["menu"] = serde_json::json!("enormous");
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(rcl(&["run", bad.to_str().unwrap()]).status.code(), Some(2));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["scenario"]["quorum_r"] = serde_json::json!(9);
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(rcl(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_matches_feasibility_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = rcl(&[
            "sweep",
            "--n",
            "3..6",
            "--property",
            "crash-robustness",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["n", "k", "t", "r", "property", "verdict", "witness-id"]
    );
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let num = |i: usize| rec[i].parse::<usize>().unwrap();
        let (n, k, t) = (num(0), num(1), num(2));
        assert_eq!(num(3), n - t);
        assert_eq!(&rec[5] == "violation", feasible_disagreement(n, k, t), "{n} {k} {t}");
        assert_eq!(rec[6].is_empty(), &rec[5] == "no-violation");
        rows += 1;
    }
    assert_eq!(rows, 6 + 10 + 15 + 21);
}

#[test]
fn sweep_edges() {
    let empty = rcl(&["sweep", "--n", "5..4"]);
    assert!(empty.status.success());
    assert_eq!(
        String::from_utf8_lossy(&empty.stdout).trim(),
        "n,k,t,r,property,verdict,witness-id"
    );
    assert_eq!(rcl(&["sweep", "--n", "3..9"]).status.code(), Some(4));
    assert_eq!(
        rcl(&["sweep", "--n", "3..9", "--cap", "9", "--k", "0", "--t", "0"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(rcl(&["check-theorem", "lem2", "--cap", "12"]).status.code(), Some(4));
}

#[test]
fn theorem_checks() {
    let ok = rcl(&["check-theorem", "lem3"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("lem3: PASS"));
    let thm1 = rcl(&["check-theorem", "thm1", "--cap", "8"]);
    assert!(thm1.status.success(), "{}", String::from_utf8_lossy(&thm1.stderr));
    let bad = rcl(&["check-theorem", "thm1", "--cap", "6", "--quorum-offset", "-1"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("FAIL n="), "{err}");
    assert_eq!(rcl(&["check-theorem", "thm9"]).status.code(), Some(2));
}

fn edit_lines(path: &Path, f: impl Fn(usize, &mut serde_json::Value)) {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            f(i, &mut v);
            v.to_string()
        })
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn replay_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let f = corpus("corollary1.json");
    assert!(rcl(&["run", f.to_str().unwrap(), "--out", trace.to_str().unwrap()])
        .status
        .success());
    assert!(rcl(&["replay", trace.to_str().unwrap()]).status.success());

    let edited = dir.path().join("edited.jsonl");
    std::fs::copy(&trace, &edited).unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    let line = text
        .lines()
        .position(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["record"] == "move" && v["step"].as_u64() >= Some(5) && !v["emitted"].as_array().unwrap().is_empty()
        })
        .unwrap();
    let step: serde_json::Value = serde_json::from_str(text.lines().nth(line).unwrap()).unwrap();
    edit_lines(&edited, |i, v| {
        if i == line {
            v["emitted"][0] = serde_json::json!("00".repeat(32));
        }
    });
    let out = rcl(&["replay", edited.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("step {}", step["step"])), "{err}");

    let truncated = dir.path().join("truncated.jsonl");
    let text = std::fs::read_to_string(&trace).unwrap();
    let keep: Vec<&str> = text.lines().filter(|l| !l.contains(r#""record":"end""#)).collect();
    std::fs::write(&truncated, keep.join("\n")).unwrap();
    assert_eq!(rcl(&["replay", truncated.to_str().unwrap()]).status.code(), Some(3));

    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, text.replacen(r#""record":"move""#, r#""record":"mvoe""#, 1)).unwrap();
    assert_eq!(rcl(&["replay", garbled.to_str().unwrap()]).status.code(), Some(2));

    let reseeded = dir.path().join("reseeded.jsonl");
    assert!(rcl(&[
        "run",
        f.to_str().unwrap(),
        "--seed",
        "99",
        "--out",
        reseeded.to_str().unwrap()
    ])
    .status
    .success());
    edit_lines(&reseeded, |i, v| {
        if i == 0 {
            v["seed"] = serde_json::json!(1);
        }
    });
    let out = rcl(&["replay", reseeded.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 0"));
}
