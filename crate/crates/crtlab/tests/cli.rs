use std::path::Path;
use std::process::Command;

fn crtlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_crtlab")).args(args).env_remove("CRTLAB_OUT").output().unwrap()
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p.display().to_string());
        }
    }
    out
}

#[test]
fn help_and_usage_exit_codes() {
    let o = crtlab(&["eval", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("--tokenizer") && text.contains("--set"));
    let o = crtlab(&["eval", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(crtlab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(crtlab(&["reproduce", "fig9-analog"]).status.code(), Some(1));
}

#[test]
fn validation_errors_exit_1_and_runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(crtlab(&["train-tokenizer", "--set", "crt.lamda=4", "--out", out]).status.code(), Some(1));
    assert_eq!(crtlab(&["synth", "--size", "4", "--out", out]).status.code(), Some(1));
    let missing = dir.path().join("missing");
    assert_eq!(crtlab(&["train-generator", "--tokenizer", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

#[test]
fn synth_writes_only_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let o =
        crtlab(&["synth", "--seed", "7", "--classes", "4", "--train", "8", "--val", "4", "--size", "16", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = files_under(dir.path());
    assert!(files.iter().all(|f| f.starts_with(out.to_str().unwrap())));
    assert_eq!(files.len(), 8 + 4 + 2);
    let cfg = std::fs::read_to_string(out.join("config.cfg")).unwrap();
    assert!(cfg.contains("corpus.seed = 7\n") && cfg.contains("corpus.side = 16\n"));
    let again =
        crtlab(&["synth", "--seed", "8", "--classes", "4", "--train", "8", "--val", "4", "--size", "16", "--out", out.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(1));
}

#[test]
fn tokenizer_generator_sample_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "crtlab-config 1\ncorpus.train = 32\ncorpus.val = 16\ncorpus.classes = 2\ntokenizer.widths = [8, 8, 8]\ntokenizer.latent_width = 8\n\
         tokenizer.quantizer = {\"codes\": 16, \"input_width\": 8, \"dim\": 4}\ntokenizer.iterations = 4\ntokenizer.batch = 4\n\
         tokenizer.optim.warmup_steps = 1\ngenerator.layers = 1\ngenerator.heads = 1\ngenerator.iterations = 4\ngenerator.batch = 4\n\
         generator.optim.warmup_steps = 1\n",
    )
    .unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let c = cfg.to_str().unwrap();
    let run = |args: &[&str]| {
        let o = crtlab(args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["train-tokenizer", "--config", c, "--set", "crt.enabled=true", "--set", "crt.lambda=4.0", "--out", &p("tok"), "--jobs", "1"]);
    let snap = std::fs::read_to_string(dir.path().join("tok/config.cfg")).unwrap();
    assert!(snap.contains("tokenizer.crt.enabled = true\n") && snap.contains("tokenizer.crt.lambda = 4.0\n"));
    run(&["train-generator", "--config", c, "--tokenizer", &p("tok"), "--out", &p("gen"), "--jobs", "1"]);
    assert_eq!(crtlab(&["train-generator", "--config", c, "--tokenizer", &p("tok"), "--out", &p("gen")]).status.code(), Some(1));
    for out in ["s1", "s2"] {
        run(&[
            "sample",
            "--tokenizer",
            &p("tok"),
            "--generator",
            &p("gen"),
            "--count",
            "2",
            "--alpha",
            "1.5",
            "--out",
            &p(out),
            "--jobs",
            "1",
        ]);
    }
    for f in ["samples.tok", "samples.jsonl", "images/00003-c1.ppm"] {
        assert_eq!(std::fs::read(dir.path().join("s1").join(f)).unwrap(), std::fs::read(dir.path().join("s2").join(f)).unwrap(), "{f}");
    }
    run(&["analyze", &p("tok/val.tok"), "--generator", &p("gen"), "--out", &p("an")]);
    for f in ["entropy.csv", "entropy.svg", "per_position_loss.csv", "per_position_loss.svg"] {
        assert!(dir.path().join("an").join(f).exists(), "{f}");
    }
    run(&[
        "eval",
        "--tokenizer",
        &p("tok"),
        "--generator",
        &p("gen"),
        "--corpus",
        &p("tok/corpus"),
        "--set",
        "eval.samples_per_class=1",
        "--set",
        "eval.held_in=8",
        "--out",
        &p("ev"),
    ]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("ev/metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = m.as_array().unwrap().iter().map(|e| e["metric"].as_str().unwrap()).collect();
    for want in ["mse", "psnr", "ms_ssim", "rfid", "val_loss", "gfid"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    assert!(m[0]["extractor_seed"].is_u64() && m[0]["n"].as_u64() == Some(16));
}
