use std::path::Path;
use std::process::{Command, Output};

fn coscvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coscvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = coscvae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const FAST: &str = "n_images = 40\niterations = 60\npseudo_iterations = 30\nembed_epochs = 3\nsamples_n = 3\n";

#[test]
fn full_toy_pipeline_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("fast.cfg");
    std::fs::write(&cfg, FAST).unwrap();
    let c = ["--config", p(&cfg), "--seed", "5"];
    let run = |tag: &str| {
        let j = |s: &str| d.join(tag).join(s);
        ok(&[&c[..], &["toyworld", "--out", p(&j("raw"))]].concat());
        ok(&[&c[..], &["prepare", "--input", p(&j("raw")), "--out", p(&j("bundle"))]].concat());
        ok(&[&c[..], &["embed", "--bundle", p(&j("bundle")), "--out", p(&j("emb"))]].concat());
        ok(&[&c[..], &["train", "--bundle", p(&j("bundle")), "--out", p(&j("m1"))]].concat());
        ok(&[
            &c[..],
            &[
                "pseudo",
                "--bundle",
                p(&j("bundle")),
                "--index",
                p(&j("emb")),
                "--checkpoint",
                p(&j("m1/model.ckpt")),
                "--out",
                p(&j("pseudo/pseudo.jsonl")),
            ],
        ]
        .concat());
        ok(&[
            &c[..],
            &[
                "train",
                "--bundle",
                p(&j("bundle")),
                "--init",
                p(&j("m1/model.ckpt")),
                "--pseudo",
                p(&j("pseudo/pseudo.jsonl")),
                "--out",
                p(&j("m2")),
            ],
        ]
        .concat());
        ok(&[
            &c[..],
            &[
                "sample",
                "--bundle",
                p(&j("bundle")),
                "--checkpoint",
                p(&j("m2/model.ckpt")),
                "--out",
                p(&j("s/samples.jsonl")),
            ],
        ]
        .concat());
        for mode in ["oracle", "consensus", "diversity"] {
            let out = j(&format!("r/{mode}.json"));
            ok(&[
                &c[..],
                &["eval", "--samples", p(&j("s/samples.jsonl")), "--bundle", p(&j("bundle")), "--mode", mode, "--out", p(&out)],
            ]
            .concat());
        }
    };
    run("a");
    run("b");
    for f in [
        "bundle/train.features.bin",
        "emb/index.bin",
        "m2/model.ckpt",
        "m2/loss.csv",
        "pseudo/pseudo.jsonl",
        "s/samples.jsonl",
        "r/oracle.json",
        "r/consensus.json",
        "r/diversity.json",
    ] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between reruns");
    }
    let manifests = std::fs::read_to_string(d.join("a/m2/manifests.jsonl")).unwrap();
    assert_eq!(manifests.lines().count(), 1);
    let m: serde_json::Value = serde_json::from_str(manifests.trim()).unwrap();
    assert_eq!(m["command"], "train");
    assert_eq!(m["checkpoints"].as_array().unwrap().len(), 1);
}

#[test]
fn oracle_on_references_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("fast.cfg");
    std::fs::write(&cfg, FAST).unwrap();
    let c = ["--config", p(&cfg)];
    ok(&[&c[..], &["toyworld", "--out", p(&d.join("raw"))]].concat());
    ok(&[&c[..], &["prepare", "--input", p(&d.join("raw")), "--out", p(&d.join("bundle"))]].concat());
    let caps = std::fs::read_to_string(d.join("bundle/test.captions.jsonl")).unwrap();
    let mut samples = String::new();
    for line in caps.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let rec = serde_json::json!({"image_id": v["image_id"], "samples": v["captions"], "seed": 0});
        samples.push_str(&rec.to_string());
        samples.push('\n');
    }
    std::fs::write(d.join("samples.jsonl"), samples).unwrap();
    let out = d.join("report.json");
    ok(&[
        &c[..],
        &["eval", "--samples", p(&d.join("samples.jsonl")), "--bundle", p(&d.join("bundle")), "--mode", "oracle", "--out", p(&out)],
    ]
    .concat());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(r["accuracy"]["bleu4"], 1.0);
}

#[test]
fn bad_inputs_fail_with_named_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = coscvae(&["train", "--alpha", "1.5", "--bundle", p(d), "--out", p(&d.join("m"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let out = coscvae(&["embed", "--bundle", p(&d.join("missing")), "--out", p(&d.join("e"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bundle"));

    let cfg = d.join("bad.cfg");
    std::fs::write(&cfg, "latent_size = 3\n").unwrap();
    let out = coscvae(&["--config", p(&cfg), "toyworld", "--out", p(&d.join("raw"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.cfg") && err.contains("latent_size"), "{err}");

    let out = coscvae(&["--profile", "huge", "toyworld", "--out", p(&d.join("raw"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--profile"));
}
