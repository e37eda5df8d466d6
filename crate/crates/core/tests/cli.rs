use std::path::Path;
use std::process::{Command, Output};

fn txtrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txtrec")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = txtrec(args);
    assert!(out.status.success(), "txtrec {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONTEXT: [&str; 10] = [
    "--timestamp",
    "2021-01-05T10:00:00",
    "--temperature",
    "-3",
    "--weather",
    "weather3",
    "--store",
    "store1",
    "--region",
    "region0",
];

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    assert_eq!(txtrec(&["--help"]).status.code(), Some(0));
    assert_eq!(txtrec(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(txtrec(&[]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.txb");
    let mut args = vec!["predict", "--bundle", s(&missing), "--item", "x"];
    args.extend(CONTEXT);
    let out = txtrec(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--out", s(&p("o.csv")), "--set", "orders=300", "--seed", "2"]);
    ok(&["preprocess", "--data", s(&p("o.csv")), "--out", s(&p("prep"))]);
    for f in ["dataset.conf", "train.examples", "valid.examples", "vocab.tsv"] {
        assert!(p("prep").join(f).is_file(), "{f}");
    }
    ok(&[
        "train", "--data", s(&p("prep")), "--out", s(&p("run")), "--d-embed", "8", "--seq-heads", "2", "--ctx-heads",
        "2", "--epochs", "2", "--batch-size", "64",
    ]);
    for f in ["effective.conf", "eval.tsv", "loss.tsv", "model.txb"] {
        assert!(p("run").join(f).is_file(), "{f}");
    }
    let conf = std::fs::read_to_string(p("run/effective.conf")).unwrap();
    assert!(conf.lines().any(|l| l == "d_embed = 8"), "{conf}");
    let loss = std::fs::read_to_string(p("run/loss.tsv")).unwrap();
    assert!(loss.starts_with("step\tloss\n"));
    assert_eq!(loss.lines().count(), 1 + 2 * 4);

    let bundle = p("run/model.txb");
    let eval = ok(&["eval", "--bundle", s(&bundle), "--data", s(&p("prep")), "--k", "1,2,3"]);
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows[0], "model\tk\taccuracy\tn");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("txt\t1\t") && rows[1].ends_with("\t60"));

    let mut args = vec!["predict", "--bundle", s(&bundle), "--item", "item01", "--item", "item02", "--k", "4"];
    args.extend(CONTEXT);
    let reply = ok(&args);
    let response = txtrec::serve::parse_response(&reply).unwrap();
    assert!(!response.cold_start);
    assert_eq!(response.recommendations.len(), 4);
    assert!(response.recommendations.iter().all(|r| r.item != "item01" && r.item != "item02"));
    assert!(response.recommendations.windows(2).all(|w| w[0].probability >= w[1].probability));

    let mut args = vec!["predict", "--bundle", s(&bundle)];
    args.extend(CONTEXT);
    assert!(txtrec::serve::parse_response(&ok(&args)).unwrap().cold_start);

    let att = p("att.tsv");
    let mut args = vec!["dump-attention", "--bundle", s(&bundle), "--out", s(&att)];
    args.extend(CONTEXT);
    ok(&args);
    let dump = std::fs::read_to_string(p("att.tsv")).unwrap();
    let lines: Vec<&str> = dump.lines().collect();
    assert_eq!(lines[0], "layer\thead\tquery\thour\tweekday\ttemperature\tweather\tstore\tregion");
    assert_eq!(lines.len(), 1 + 2 * 6);
    for row in &lines[1..] {
        let total: f64 = row.split('\t').skip(3).map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-5, "{row}");
    }
}

#[test]
fn baselines_train_from_a_csv_and_configs_layer_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--out", s(&p("o.csv")), "--set", "orders=200", "--seed", "4"]);
    std::fs::write(p("run.conf"), "model = rnn\nepochs = 3\nd_embed = 4\n").unwrap();
    ok(&["train", "--data", s(&p("o.csv")), "--out", s(&p("rnn")), "--config", s(&p("run.conf")), "--epochs", "1"]);
    let conf = std::fs::read_to_string(p("rnn/effective.conf")).unwrap();
    let kv = txtrec::kv::KvMap::parse(&conf).unwrap();
    assert_eq!(kv.get("model"), Some("rnn"));
    assert_eq!(kv.get("epochs"), Some("1"));
    assert_eq!(kv.get("d_embed"), Some("4"));

    ok(&["train", "--data", s(&p("o.csv")), "--out", s(&p("cf")), "--model", "itemcf"]);
    // A raw CSV is all training data, so nothing is held out.
    assert!(!p("cf/eval.tsv").exists());
    let eval = ok(&["eval", "--bundle", s(&p("cf/model.txb")), "--data", s(&p("o.csv")), "--k", "1"]);
    assert!(eval.lines().nth(1).unwrap().starts_with("itemcf\t1\t"));

    std::fs::write(p("bad.conf"), "colour = red\n").unwrap();
    let out = txtrec(&["train", "--data", s(&p("o.csv")), "--out", s(&p("bad")), "--config", s(&p("bad.conf"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}
