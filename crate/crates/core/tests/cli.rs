use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[corpus]
synthetic_sentences = 700
synthetic_seed = 3

[experiment]
curators = 3
skew = 0.6
seeds = 0,1
methods = gmma,rmma,avg,finetune,reference
validation_cap = 60
test_cap = 60

[neural]
embed = 4
hidden = 8
epochs = 2
learning_rate = 0.1

[rescoring]
beta_ngram = 0.1
beta_neural = 0.05

[gmma]
max_generations = 3
patience = 2

[rmma]
t_max = 4
hidden = 8
episodes = 2
";

fn hetmerge(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hetmerge")).args(args).output().expect("spawn hetmerge");
    assert!(out.status.success(), "hetmerge {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn staged_pipeline_reproduces_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    let corpus = root.join("corpus.txt");
    hetmerge(&["generate-corpus", "--sentences", "700", "--seed", "3", "--out", s(&corpus)]);
    assert_eq!(fs::read_to_string(&corpus).unwrap().lines().count(), 700);

    let run = |tag: &str| -> String {
        let data = root.join(format!("data-{tag}"));
        let sources = root.join(format!("sources-{tag}"));
        let common = ["--config", s(&cfg), "--seed", "5"];
        hetmerge(&[&["partition"][..], &common, &["--corpus", s(&corpus), "--out", s(&data)]].concat());
        assert!(data.join("curator-3.tsv").is_file() && data.join("heldout-2.tsv").is_file());
        hetmerge(&[&["train-sources"][..], &common, &["--data", s(&data), "--out", s(&sources)]].concat());
        assert!(sources.join("source-3.ngram").is_file() && sources.join("source-3.nnlm").is_file());
        let mut transcript = String::new();
        for method in ["avg", "gmma", "rmma", "finetune"] {
            let merged = root.join(format!("{method}-{tag}"));
            let m = hetmerge(
                &[
                    &["merge"][..],
                    &common,
                    &["--method", method, "--data", s(&data), "--sources", s(&sources), "--out", s(&merged)],
                ]
                .concat(),
            );
            assert!(stdout(&m).starts_with("merge-validation CER"));
            let e = hetmerge(
                &[
                    &["evaluate"][..],
                    &common,
                    &[
                        "--data",
                        s(&data),
                        "--ngram",
                        s(&merged.join("merged.ngram")),
                        "--neural",
                        s(&merged.join("merged.nnlm")),
                    ],
                ]
                .concat(),
            );
            transcript += &stdout(&m);
            transcript += &stdout(&e);
        }
        assert!(root.join(format!("gmma-{tag}")).join("gmma_history.csv").is_file());
        assert!(root.join(format!("rmma-{tag}")).join("policy.bin").is_file());
        for f in ["curator-1.tsv", "heldout-1.tsv", "vocab.tsv"] {
            transcript += &fs::read_to_string(data.join(f)).unwrap();
        }
        transcript += &String::from_utf8_lossy(&fs::read(sources.join("source-1.nnlm")).unwrap());
        transcript +=
            &String::from_utf8_lossy(&fs::read(root.join(format!("rmma-{tag}")).join("merged.nnlm")).unwrap());
        transcript
    };
    let first = run("a");
    assert!(first.contains("heldout\t"));
    assert!(first == run("b"), "staged pipeline is not deterministic");
}

#[test]
fn report_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.ini");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let out = hetmerge(&["report", "--config", s(&cfg), "--output", s(&a)]);
    hetmerge(&["report", "--config", s(&cfg), "--output", s(&b)]);
    let text = stdout(&out);
    for name in ["gmma", "rmma", "avg", "finetune", "reference", "source1", "source3"] {
        assert!(text.contains(name), "{name} missing from report");
    }
    for f in ["report.json", "report.txt", "config.ini", "seed-0/gmma_history.csv", "seed-1/rmma_history.csv"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between runs");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn scaling_study_writes_one_row_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.ini");
    fs::write(&cfg, SMALL.replace("seeds = 0,1", "seeds = 0")).unwrap();
    let out = tmp.path().join("scaling");
    let text = stdout(&hetmerge(&["scaling-study", "--config", s(&cfg), "--max-sources", "3", "--output", s(&out)]));
    assert!(text.contains("sources"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("scaling.json")).unwrap()).unwrap();
    let sizes: Vec<u64> = json["mean"].as_array().unwrap().iter().map(|r| r["sources"].as_u64().unwrap()).collect();
    assert_eq!(sizes, vec![2, 3]);
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.ini");
    fs::write(&cfg, "[experiment]\ncurators = 3\nbogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hetmerge")).args(["report", "--config", s(&cfg)]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = Command::new(env!("CARGO_BIN_EXE_hetmerge"))
        .args(["train-sources", "--data", s(&tmp.path().join("nowhere")), "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn report_source_rows_match_standalone_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("small.ini");
    fs::write(&cfg, SMALL.replace("seeds = 0,1", "seeds = 1").replace("gmma,rmma,", "")).unwrap();
    hetmerge(&["report", "--config", s(&cfg), "--output", s(&root.join("report"))]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(root.join("report/report.json")).unwrap()).unwrap();
    let rows = json["seeds"][0]["rows"].as_array().unwrap();

    let (data, sources) = (root.join("data"), root.join("sources"));
    let common = ["--config", s(&cfg), "--seed", "1"];
    hetmerge(&[&["partition"][..], &common, &["--out", s(&data)]].concat());
    hetmerge(&[&["train-sources"][..], &common, &["--data", s(&data), "--out", s(&sources)]].concat());
    for i in 1..=3 {
        let row = rows.iter().find(|r| r["name"] == format!("source{i}")).unwrap();
        let pct = |v: &serde_json::Value| format!("{:.2}", 100.0 * v.as_f64().unwrap());
        let mut want = String::new();
        for (k, c) in row["test"].as_array().unwrap().iter().enumerate() {
            want += &format!("test{}\t{}\n", k + 1, pct(c));
        }
        want += &format!("average\t{}\n", pct(&row["average"]));
        for (k, c) in row["held_out"].as_array().unwrap().iter().enumerate() {
            want += &format!("heldout{}\t{}\n", k + 1, pct(c));
        }
        want += &format!("heldout\t{}\n", pct(&row["held_out_mean"]));
        let ngram = sources.join(format!("source-{i}.ngram"));
        let neural = sources.join(format!("source-{i}.nnlm"));
        let got = hetmerge(
            &[&["evaluate"][..], &common, &["--data", s(&data), "--ngram", s(&ngram), "--neural", s(&neural)]].concat(),
        );
        assert_eq!(stdout(&got), want, "source {i}");
    }
}
