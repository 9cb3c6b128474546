use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgen"))
        .current_dir(dir)
        .env_remove("OS2_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn token_count_matches_the_table() {
    let d = tempfile::tempdir().unwrap();
    let o = vgen(
        d.path(),
        &[
            "token-count",
            "--frames",
            "129",
            "--size",
            "768",
            "--spec",
            "hunyuan",
        ],
    );
    assert_eq!(stdout(&o).trim(), "76032");
    let o = vgen(
        d.path(),
        &[
            "token-count",
            "--frames",
            "129",
            "--height",
            "768",
            "--width",
            "768",
        ],
    );
    assert_eq!(stdout(&o).trim(), "76032");
}

#[test]
fn cost_prints_stages_and_total() {
    let d = tempfile::tempdir().unwrap();
    let text = stdout(&vgen(d.path(), &["cost", "--stages", "paper"]));
    let cells: Vec<&str> = text
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(cells, ["$107.5k", "$18.4k", "$73.7k", "$199.6k"]);
    assert!(d.path().join("out/cost.jsonl").exists());
}

#[test]
fn filter_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let a = stdout(&vgen(
        d.path(),
        &["--out", "a", "filter", "--synth", "--tier", "2"],
    ));
    let b = stdout(&vgen(
        d.path(),
        &["--out", "b", "filter", "--synth", "--tier", "strict"],
    ));
    assert!(a.trim_end().ends_with("strict.txt"));
    assert_eq!(a.replace("a/", ""), b.replace("b/", ""));
    let sa = snapshot(&d.path().join("a"));
    assert_eq!(sa, snapshot(&d.path().join("b")));
    assert!(!sa["strict.txt"].is_empty());
    stdout(&vgen(
        d.path(),
        &["--out", "a", "stats", "--records", "a/records.jsonl"],
    ));
    assert!(d.path().join("a/stats.json").exists());
}

#[test]
fn seed_precedence() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.toml"),
        "seed = 5\n[gaussian]\nhidden = 8\nbatch = 16\n",
    )
    .unwrap();
    let seed_of = |dir: &str| -> u64 {
        let idx: serde_json::Value = serde_json::from_slice(
            &fs::read(d.path().join(dir).join("weights/index.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(idx["meta"]["config"]["hidden"], 8);
        idx["meta"]["config"]["seed"].as_u64().unwrap()
    };
    let train = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_vgen"));
        c.current_dir(d.path()).env_remove("OS2_SEED");
        if let Some(s) = env {
            c.env("OS2_SEED", s);
        }
        let mut args = vec![
            "--out",
            out,
            "train-toy",
            "--task",
            "gaussian",
            "--steps",
            "3",
        ];
        args.extend_from_slice(extra);
        let o = c.args(&args).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    train(&["--config", "c.toml", "--seed", "9"], Some("7"), "flag");
    train(&["--config", "c.toml"], Some("7"), "file");
    fs::write(
        d.path().join("c2.toml"),
        "[gaussian]\nhidden = 8\nbatch = 16\n",
    )
    .unwrap();
    train(&["--config", "c2.toml"], Some("7"), "env");
    train(&["--config", "c2.toml"], None, "zero");
    assert_eq!(
        [
            seed_of("flag"),
            seed_of("file"),
            seed_of("env"),
            seed_of("zero")
        ],
        [9, 5, 7, 0]
    );
}

#[test]
fn toy_models_train_and_sample_reproducibly() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), "[toy]\nsteps = 5\nbatch = 2\n").unwrap();
    let run = |out: &str| {
        let base = ["--config", "c.toml", "--seed", "2", "--out", out];
        let w = format!("{out}/weights");
        stdout(&vgen(
            d.path(),
            &[&base[..], &["train-toy", "--task", "square"]].concat(),
        ));
        stdout(&vgen(
            d.path(),
            &[&base[..], &["sample", "--weights", &w, "--steps", "6"]].concat(),
        ));
        stdout(&vgen(
            d.path(),
            &[
                &base[..],
                &[
                    "scale-search",
                    "--weights",
                    &w,
                    "--steps",
                    "6",
                    "--seeds",
                    "2",
                ],
            ]
            .concat(),
        ));
        snapshot(&d.path().join(out))
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    for f in [
        "weights/index.json",
        "losses.jsonl",
        "sample_0.vclp",
        "trace.jsonl",
        "output.vclp",
    ] {
        assert!(a.contains_key(f), "{f}");
    }

    stdout(&vgen(
        d.path(),
        &[
            "--config",
            "c.toml",
            "--out",
            "i",
            "train-toy",
            "--task",
            "square-i2v",
        ],
    ));
    let o = vgen(
        d.path(),
        &[
            "--out",
            "i",
            "i2v-sample",
            "--weights",
            "i/weights",
            "--image",
            "a/sample_0.vclp",
            "--steps",
            "6",
        ],
    );
    stdout(&o);
    assert!(d.path().join("i/i2v_sample.vclp").exists());
}

#[test]
fn exit_codes_are_categorized() {
    let d = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| vgen(d.path(), args).status.code().unwrap();
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["filter", "--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["no-such-command"]), 64);
    assert_eq!(code(&["token-count", "--frames", "x", "--size", "8"]), 64);
    fs::write(d.path().join("bad.toml"), "[guidance]\ng_txt = \"high\"\n").unwrap();
    stdout(&vgen(d.path(), &["--config", "bad.toml", "cost"]));
    assert_eq!(
        code(&[
            "--config",
            "bad.toml",
            "--out",
            "s",
            "sample",
            "--weights",
            "s"
        ]),
        66
    );
    fs::write(d.path().join("typo.toml"), "sede = 1\n").unwrap();
    assert_eq!(code(&["--config", "typo.toml", "cost"]), 65);
    assert_eq!(code(&["--config", "missing.toml", "cost"]), 66);
    assert_eq!(code(&["stats", "--records", "missing.jsonl"]), 66);
    assert_eq!(
        code(&["token-count", "--frames", "129", "--size", "770"]),
        65
    );
    assert_eq!(code(&["grad-check", "--op", "silu", "--tol", "0"]), 70);
    let o = vgen(d.path(), &["grad-check", "--op", "silu"]);
    assert!(stdout(&o).contains("\"passed\":true"));
}
