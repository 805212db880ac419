use std::path::Path;
use std::process::{Command, Output};

fn gnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnet"))
        .current_dir(dir)
        .env_remove("MNIST_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = "data = synth\nsynth_samples = 600\nsynth_test_samples = 200\nsynth_dim = 8\nsynth_classes = 3\n";

fn synth_config(dir: &Path, extra: &str) -> String {
    let p = dir.join(if extra.is_empty() { "data.cfg" } else { "run.cfg" });
    std::fs::write(&p, format!("{SYNTH}{extra}")).unwrap();
    p.display().to_string()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnet(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnet(dir.path(), &["verify", "isometry", "--bogus", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_1_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path(), "no_such_key = 1\n");
    let o = gnet(dir.path(), &["--config", &cfg, "--out", "out", "train"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("no_such_key"));
    assert!(!dir.path().join("out").join("model.gnet").exists());
}

#[test]
fn missing_mnist_exits_2_and_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnet(dir.path(), &["--out", "out", "train", "--mnist-dir", "nowhere"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn grothendieck_prints_estimate_and_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnet(dir.path(), &["--out", "g", "verify", "grothendieck", "--n", "20000", "--pairs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("estimate") && text.contains("target"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("g/grothendieck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("g/grothendieck.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert!(json["max_abs_err"].as_f64().unwrap() < 0.05);
}

#[test]
fn train_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = synth_config(dir.path(), "arch = FC(16) CL(3)\nepochs = 4\nbatch_size = 32\n");
    let data_cfg = synth_config(dir.path(), "");
    let run = |args: &[&str]| {
        // only commands that read a dataset accept the data keys
        let cfg = match args[0] {
            "train" => train_cfg.as_str(),
            "eval" | "ehd-eval" | "robust" => data_cfg.as_str(),
            _ => "",
        };
        let mut all = vec!["--out", "o"];
        if !cfg.is_empty() {
            all.extend(["--config", cfg]);
        }
        all.extend_from_slice(args);
        let o = gnet(dir.path(), &all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["train"]);
    for f in ["init.gnet", "model.gnet", "history.csv", "train.json"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(dir.path().join("o/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss,train_acc,test_acc"));
    assert_eq!(history.lines().count(), 5);

    assert!(stdout(&run(&["eval", "--model", "o/model.gnet"])).starts_with("accuracy"));
    run(&["convert", "--model", "o/model.gnet", "--dim", "512"]);
    assert!(stdout(&run(&["ehd-eval", "--model", "o/model.ehd"])).starts_with("accuracy"));
    let cost = stdout(&run(&["cost", "--model", "o/model.gnet", "--ehd", "o/model.ehd"]));
    // first dense layer: (m + n) N and m n F
    let row: Vec<&str> = cost.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], ((8 + 16) * 512).to_string());
    assert_eq!(row[7], (8 * 16 * 32).to_string());
    run(&["drift", "--before", "o/init.gnet", "--after", "o/model.gnet"]);
    assert!(dir.path().join("o/drift.json").exists());
    let r = stdout(&run(&[
        "robust",
        "weights",
        "--model",
        "o/model.ehd",
        "--grid",
        "0,0.1",
        "--trials",
        "2",
    ]));
    assert_eq!(r.lines().count(), 3);
    run(&["robust", "floatbits", "--model", "o/model.gnet", "--grid", "0,0.01", "--trials", "2"]);
    run(&["robust", "hypervector", "--model", "o/model.ehd", "--grid", "0,0.1", "--trials", "1"]);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path(), "arch = FC(8) CL(3)\nepochs = 2\n");
    let mut bytes = Vec::new();
    for out in ["a", "b"] {
        let o = gnet(dir.path(), &["--seed", "11", "--config", &cfg, "--out", out, "train"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let files: Vec<Vec<u8>> = ["model.gnet", "history.csv", "train.json"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(out).join(f)).unwrap())
            .collect();
        bytes.push(files);
    }
    assert_eq!(bytes[0], bytes[1]);
    let o = gnet(dir.path(), &["--seed", "12", "--config", &cfg, "--out", "c", "train"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(dir.path().join("c/model.gnet")).unwrap(), bytes[0][0]);
}

#[test]
fn corrupted_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_config(dir.path(), "arch = FC(8) CL(3)\nepochs = 1\n");
    assert!(gnet(dir.path(), &["--config", &cfg, "--out", "o", "train"]).status.success());
    let cfg = synth_config(dir.path(), "");
    let p = dir.path().join("o/model.gnet");
    let mut b = std::fs::read(&p).unwrap();
    let mid = b.len() / 2;
    b[mid] ^= 0x40;
    std::fs::write(&p, b).unwrap();
    let o = gnet(dir.path(), &["--config", &cfg, "--out", "e", "eval", "--model", "o/model.gnet"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn verify_subcommands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (&["isometry", "--n", "8", "--grid", "256,1024", "--pairs", "50"], "isometry.csv"),
        (&["layer", "--n", "16", "--p", "8", "--grid", "256,1024", "--trials", "3"], "layer.csv"),
        (&["network", "--seeds", "2", "--inputs", "3", "--dim", "512"], "network.csv"),
        (&["asu-iso", "--p", "8", "--pairs", "100"], "asu_iso.json"),
        (&["rademacher", "--grid", "16,64", "--trials", "2", "--samples", "2000"], "rademacher.csv"),
        (&["gradcheck", "--act", "tasu", "--coords", "40"], "gradcheck.json"),
    ];
    for (args, file) in cases {
        let mut all = vec!["--out", "v", "verify"];
        all.extend_from_slice(args);
        let o = gnet(dir.path(), &all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        assert!(dir.path().join("v").join(file).exists(), "{file}");
    }
    let csv = std::fs::read_to_string(dir.path().join("v/layer.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("grid,mean,std,trials,bound"));
}

#[test]
fn tasu_layer_defaults_to_the_theoretical_hyperdimension() {
    let dir = tempfile::tempdir().unwrap();
    let o = gnet(
        dir.path(),
        &["--out", "v", "verify", "layer", "--act", "tasu", "--n", "4", "--p", "8", "--trials", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/layer.json")).unwrap()).unwrap();
    let theory = json["params"]["theory_N"].as_f64().unwrap();
    assert_eq!(json["rows"][0]["grid"].as_f64().unwrap(), theory);
}
