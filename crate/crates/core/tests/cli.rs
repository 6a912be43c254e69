use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_DATA: &[&str] = &["data.n_train=24", "data.n_dev=6", "data.n_test=6", "data.n_classes=2"];
const SMALL_MODEL: &[&str] = &[
    "model.d_model=16",
    "model.n_heads=2",
    "model.d_ff=32",
    "model.n_enc_layers=1",
    "model.n_dec_layers=1",
    "model.cnn_channels=4",
    "train.batch_size=8",
    "train.log_every=5",
    "train.eval_every=10",
];

fn adast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adast")).args(args).output().unwrap()
}

fn with_sets(base: &[&str], sets: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    for s in sets {
        v.push("--set".into());
        v.push(s.to_string());
    }
    v
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    adast(&refs)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn gen_data(dir: &Path, extra: &[&str]) {
    let mut sets = SMALL_DATA.to_vec();
    sets.extend(extra);
    ok(&run(&with_sets(&["gen-data", "--mode", "st_like", "--out", &p(dir)], &sets)));
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn train(data: &Path, run_dir: &Path, variant: &str, steps: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train".to_string(),
        "--data".into(),
        p(data),
        "--variant".into(),
        variant.into(),
        "--steps".into(),
        steps.into(),
        "--run-dir".into(),
        p(run_dir),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    run(&with_sets(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>(), SMALL_MODEL))
}

#[test]
fn gen_data_writes_corpus_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen_data(&a, &[]);
    gen_data(&b, &[]);
    assert!(a.join("corpus.txt").exists());
    assert!(a.join("train").join("manifest.txt").exists());
    assert!(a.join("train").join("features.bin").exists());
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let c = tmp.path().join("c");
    ok(&run(&with_sets(&["gen-data", "--seed", "2", "--out", &p(&c)], SMALL_DATA)));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn invalid_mode_exits_2_naming_modes() {
    let tmp = TempDir::new().unwrap();
    let out = adast(&["gen-data", "--mode", "speech", "--out", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for m in ["asr_like", "mt_like", "st_like"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(adast(&["params", "--set", "model.n_heads=5"]).status.code(), Some(2));
    assert_eq!(adast(&["params", "--set", "model.bogus=1"]).status.code(), Some(2));
    assert_eq!(adast(&["params", "--set", "nokey"]).status.code(), Some(2));
    assert_eq!(adast(&["params", "--precision", "f16"]).status.code(), Some(2));
    assert_eq!(adast(&["params", "--no-such-flag"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.cfg");
    assert_eq!(adast(&["params", "--config", &p(&missing)]).status.code(), Some(2));
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "model.d_model = 32\ntrain.nope = 1\n").unwrap();
    let out = adast(&["params", "--config", &p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = TempDir::new().unwrap();
    let out = adast(&["train", "--data", &p(&tmp.path().join("nothing")), "--run-dir", &p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

fn total(stdout: &str) -> usize {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("total"))
        .unwrap()
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn params_table_shows_adast_smaller() {
    let a = ok(&adast(&["params", "--variant", "adast"]));
    let b = ok(&adast(&["params", "--variant", "baseline"]));
    for comp in ["subsampler", "encoder", "decoder", "embeddings", "output_head"] {
        assert!(a.lines().any(|l| l.starts_with(comp)), "{a}");
    }
    assert!(total(&a) < total(&b));
    // precedence: config file < --set < explicit flag
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "model.d_model = 32\nmodel.n_heads = 2\n").unwrap();
    let file_only = total(&ok(&adast(&["params", "--config", &p(&cfg)])));
    let set = total(&ok(&adast(&["params", "--config", &p(&cfg), "--set", "model.d_model=48"])));
    let flag = total(&ok(&adast(&[
        "params", "--config", &p(&cfg), "--set", "model.d_model=48", "--d-model", "32",
    ])));
    assert_ne!(file_only, set);
    assert_eq!(file_only, flag);
}

#[test]
fn gradcheck_small_model_passes() {
    let out = ok(&adast(&["gradcheck", "--d-model", "16", "--set", "model.n_heads=2"]));
    assert!(out.contains("gradcheck passed"), "{out}");
}

#[test]
fn train_decode_eval_probe_workflow() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, &[]);

    let adast_run = tmp.path().join("adast");
    let base_run = tmp.path().join("base");
    ok(&train(&data, &adast_run, "adast", "20", &[]));
    ok(&train(&data, &base_run, "baseline", "20", &[]));
    for r in [&adast_run, &base_run] {
        assert!(r.join("best").join("manifest.txt").exists());
        assert!(r.join("last").join("tensors.bin").exists());
        assert!(r.join("config.txt").exists());
    }
    let log_a = fs::read_to_string(adast_run.join("train_log.csv")).unwrap();
    let log_b = fs::read_to_string(base_run.join("train_log.csv")).unwrap();
    assert_eq!(log_a.lines().next(), log_b.lines().next());
    assert_eq!(log_a.lines().count(), log_b.lines().count());

    // resume continues the step numbering in the same log
    ok(&train(&data, &adast_run, "adast", "30", &["--resume", &p(&adast_run.join("last"))]));
    let log = fs::read_to_string(adast_run.join("train_log.csv")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .skip(1)
        .filter(|l| l.contains(",train,"))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, vec![5, 10, 15, 20, 25, 30]);
    assert_eq!(log.lines().filter(|l| l.starts_with("step")).count(), 1);

    // greedy incremental, greedy full and beam decoding
    let ckpt = p(&adast_run.join("best"));
    let hyp = |name: &str| tmp.path().join(name);
    for (file, extra) in [
        ("inc.txt", vec!["--incremental"]),
        ("full.txt", vec!["--full"]),
        ("beam.txt", vec!["--beam", "4"]),
    ] {
        let mut args = vec!["decode", "--checkpoint", &ckpt, "--data"];
        let d = p(&data);
        let o = p(&hyp(file));
        args.push(&d);
        args.extend(["--out", &o]);
        args.extend(extra);
        ok(&adast(&args));
        let text = fs::read_to_string(hyp(file)).unwrap();
        assert_eq!(text.lines().count(), 6);
        for line in text.lines() {
            let (id, toks) = line.split_once('\t').unwrap();
            assert!(id.starts_with("test-"));
            assert!(toks.split_whitespace().all(|t| t.parse::<usize>().is_ok()));
        }
    }
    assert_eq!(fs::read(hyp("inc.txt")).unwrap(), fs::read(hyp("full.txt")).unwrap());
    let out = ok(&adast(&["eval", "--hyp", &p(&hyp("beam.txt")), "--data", &p(&data)]));
    assert!(out.contains("bleu = ") && out.contains("token_acc = "));

    // gold hypotheses
    let manifest = fs::read_to_string(data.join("test").join("manifest.txt")).unwrap();
    let gold: String = manifest
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            format!("{}\t{}\n", f[0], f[3])
        })
        .collect();
    fs::write(hyp("gold.txt"), gold).unwrap();
    let out = ok(&adast(&["eval", "--hyp", &p(&hyp("gold.txt")), "--data", &p(&data)]));
    assert!(out.contains("bleu = 100.0000"), "{out}");
    assert!(out.contains("token_acc = 1.000000"), "{out}");

    // probe on the trained encoder
    let out = ok(&adast(&[
        "probe", "--data", &p(&data), "--checkpoint", &ckpt, "--set", "probe.steps=50",
    ]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("variant,train_acc,val_acc,test_acc,n_classes,steps"));
    assert!(lines.next().unwrap().starts_with("adast,"));
}

#[test]
fn probe_without_labels_fails() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, &["data.n_classes=0"]);
    let out = run(&with_sets(&["probe", "--data", &p(&data)], SMALL_MODEL));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class"));
}

#[test]
fn default_run_dir_is_named_by_seed() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, &[]);
    let root = tmp.path().join("runs");
    let args = with_sets(
        &["train", "--data", &p(&data), "--steps", "5", "--seed", "7", "--runs-root", &p(&root)],
        SMALL_MODEL,
    );
    ok(&run(&args));
    let names: Vec<String> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 1);
    assert!(names[0].ends_with("-seed7"), "{names:?}");
}
