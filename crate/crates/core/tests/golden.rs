//! Byte-level regression checks against files committed under `tests/golden`.
//! Run with `GNET_BLESS=1` to rewrite them after an intended format change.

use std::fmt::Write;
use std::path::PathBuf;

use gnet_core::ehd::{convert_model, EmbedKind, EmbedSpec};
use gnet_core::io::{ehd_from_bytes, ehd_to_bytes, fmt_real, gnet_from_bytes, gnet_to_bytes, report_json, sweep_csv, SweepRow, Width};
use gnet_core::train::init_model;
use gnet_core::{ActivationKind, ArchSpec, GNet64, RngStream, Tensor};

fn golden(name: &str, actual: &[u8]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("GNET_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}; run with GNET_BLESS=1", path.display()));
    assert!(expected == actual, "{name} differs from the committed file");
}

fn read_golden(name: &str) -> Vec<u8> {
    std::fs::read(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn rng_draws() {
    let mut out = String::new();
    for stream in [0, 1, 7] {
        let mut rng = RngStream::new(2024, stream);
        let ints: Vec<String> = (0..3).map(|_| rng.next_u64().to_string()).collect();
        let unif: Vec<String> = (0..3).map(|_| fmt_real(rng.uniform())).collect();
        let norm: Vec<String> = (0..3).map(|_| fmt_real(rng.normal())).collect();
        let below: Vec<String> = (0..6).map(|_| rng.below(10).to_string()).collect();
        writeln!(out, "stream {stream}").unwrap();
        writeln!(out, "u64 {}", ints.join(" ")).unwrap();
        writeln!(out, "uniform {}", unif.join(" ")).unwrap();
        writeln!(out, "normal {}", norm.join(" ")).unwrap();
        writeln!(out, "below10 {}", below.join(" ")).unwrap();
    }
    golden("rng.txt", out.as_bytes());
}

#[test]
fn report_formatting() {
    let rows = [
        SweepRow { grid: 64.0, mean: 0.125, std: 1.0 / 3.0, trials: 20, bound: Some(0.5) },
        SweepRow { grid: 1e5, mean: -2.5e-7, std: 0.0, trials: 1, bound: None },
        SweepRow { grid: 3.0, mean: f64::NAN, std: f64::INFINITY, trials: 0, bound: None },
    ];
    let mut out = sweep_csv(&rows);
    out.push_str(&report_json("sweep", &serde_json::json!({ "rows": &rows[..2], "slope": -0.5 })).unwrap());
    golden("report.txt", out.as_bytes());
}

fn tiny_model() -> GNet64 {
    let arch = ArchSpec::parse(vec![1, 4, 4], "CN(1,2,3,s1,p1) FC(5) CL(3)", ActivationKind::Tasu { kappa: 3.0 }).unwrap();
    let mut rng = RngStream::new(5, 0);
    let mut m: GNet64 = init_model(&arch, 1e-6, &mut rng).unwrap();
    for (i, l) in m.layers_mut().iter_mut().enumerate() {
        *l.shift_mut() = 0.125 * i as f64;
    }
    m
}

fn probe() -> Tensor<f64> {
    Tensor::from_fn(&[2, 16], |i| ((i * 7) % 11) as f64 / 10.0 - 0.5)
}

#[test]
fn model_files_are_stable() {
    let m = tiny_model();
    let bytes = gnet_to_bytes(&m, Width::F64);
    golden("tiny.gnet", &bytes);
    let e = convert_model(&m, &EmbedSpec::per_layer(EmbedKind::Rademacher, 96, 9, 3).unwrap()).unwrap();
    golden("tiny.ehd", &ehd_to_bytes(&e));

    // outputs of the committed files, not of the freshly built models
    let loaded: GNet64 = gnet_from_bytes(&read_golden("tiny.gnet")).unwrap();
    let loaded_ehd = ehd_from_bytes(&read_golden("tiny.ehd")).unwrap();
    let x = probe();
    let mut out = String::new();
    let logits = loaded.logits(&x).unwrap();
    for r in 0..x.rows() {
        let l: Vec<String> = logits.row(r).iter().map(|&v| fmt_real(v)).collect();
        let s: Vec<String> = loaded_ehd.forward(x.row(r)).unwrap().0.iter().map(i64::to_string).collect();
        writeln!(out, "logits {}", l.join(" ")).unwrap();
        writeln!(out, "scores {}", s.join(" ")).unwrap();
    }
    golden("tiny_outputs.txt", out.as_bytes());
}
