//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ...: PASS|FAIL|SKIPPED` line. Criteria run one at a time so
//! that the reported runtimes are CPU times on a single core.
//!
//! MNIST criteria read the IDX files from `$MNIST_DIR`, else `data/mnist`
//! under the workspace root, and are skipped when neither exists.

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use gnet_core::bits::counters;
use gnet_core::data::{load_idx, Dataset};
use gnet_core::ehd::{
    convert_model, cost_report, ehd_accuracy, quantize_input, EhdLayer, EhdModel, Embed, EmbedKind, EmbedSpec,
    InputKind, Signal, Tau,
};
use gnet_core::robust::{robustness_sweep, CorruptionConfig, CorruptionMode, RobustTarget};
use gnet_core::train::{evaluate, fit, init_model, HeadLoss, LossSettings, TrainConfig};
use gnet_core::verify::{
    grad_check, grothendieck_mc, grothendieck_target, layer_discrepancy_sweep, mean_std, near_isometry_sweep,
    network_delta_trace, rademacher_error_curve, screened_inputs, tasu_theory, LayerSweep, LayerTarget,
};
use gnet_core::{ActivationKind, ArchSpec, GNet32, GNet64, RngStream, Tensor};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {verdict} ({:.1} s) {detail}", elapsed.as_secs_f64());
    assert!(pass, "criterion {id} [{name}] failed: {detail}");
}

fn skip(id: u32, name: &str, why: &str) {
    println!("criterion {id} [{name}]: SKIPPED ({why})");
}

#[test]
fn criterion_01_grothendieck_identity() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = RngStream::new(101, 0);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let (u, v) = (rng.unit_vector(32), rng.unit_vector(32));
        let est = grothendieck_mc(&u, &v, 1_000_000, EmbedKind::Gaussian, &mut RngStream::new(102, i)).unwrap();
        let inner: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        // target from the closed form, independent of the library helper
        let target = std::f64::consts::FRAC_2_PI * inner.asin();
        assert!((target - grothendieck_target(&u, &v)).abs() < 1e-12);
        worst = worst.max((est - target).abs());
    }
    let el = t.elapsed();
    let pass = worst <= 5e-3 && el < Duration::from_secs(30);
    report(1, "grothendieck identity", pass, el, &format!("max |err| = {worst:.2e} over 10 pairs"));
}

#[test]
fn criterion_02_near_isometry() {
    let _g = serial();
    let t = Instant::now();
    let r = near_isometry_sweep(16, &[16384], 1000, 202).unwrap();
    let dev = r.max[0];
    let identity = r.params["identity_max_err"];
    let el = t.elapsed();
    let pass = dev <= 0.05 && identity <= 1e-12 && el < Duration::from_secs(60);
    report(
        2,
        "near-isometry",
        pass,
        el,
        &format!("max |D_H - D_G| = {dev:.4}, identity residual = {identity:.1e}"),
    );
}

#[test]
fn criterion_03_rasu_layer_bound() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = RngStream::new(303, 0);
    let w = Tensor::from_fn(&[128, 64], |_| rng.normal());
    let x = vec![rng.unit_vector(64)];
    let grid: Vec<usize> = (8..=14).map(|e| 1 << e).collect();
    let cfg = LayerSweep {
        target: LayerTarget::Rasu,
        kind: EmbedKind::Gaussian,
        trials: 20,
        c: 3.0,
        seed: 304,
    };
    let r = layer_discrepancy_sweep(&w, &x, &grid, &cfg).unwrap();
    let within: Vec<usize> = r.within_bound.iter().map(|v| v.unwrap()).collect();
    let slope = r.loglog_slope().unwrap();
    let el = t.elapsed();
    let pass =
        within.iter().all(|&k| k >= 19) && (-0.6..=-0.4).contains(&slope) && el < Duration::from_secs(120);
    report(
        3,
        "RASU layer bound",
        pass,
        el,
        &format!("within bound per N = {within:?} of 20, slope = {slope:.3}"),
    );
}

#[test]
fn criterion_04_tasu_layer() {
    let _g = serial();
    let t = Instant::now();
    let (n, p, l_min, c) = (8usize, 16usize, 0.2, 3.0);
    let eps = 0.5 * (n as f64).sqrt();
    let mut rng = RngStream::new(404, 0);
    let w = Tensor::from_fn(&[n, p], |_| rng.normal());
    let x = screened_inputs(&w, 1, l_min, 1_000_000, &mut rng).unwrap();
    let (kappa, big_n) = tasu_theory(n, eps, l_min, c).unwrap();
    let cfg = LayerSweep {
        target: LayerTarget::Tasu { eps, l_min },
        kind: EmbedKind::Gaussian,
        trials: 50,
        c,
        seed: 405,
    };
    let r = layer_discrepancy_sweep(&w, &x, &[big_n], &cfg).unwrap();
    let within = r.within_bound[0].unwrap();
    let el = t.elapsed();
    let pass = within * 10 >= 9 * r.rows[0].trials && el < Duration::from_secs(120);
    report(
        4,
        "TASU layer",
        pass,
        el,
        &format!(
            "kappa = {kappa:.2}, N = {big_n}, |y - y~| <= {eps:.3} in {within}/{} trials, mean {:.4}",
            r.rows[0].trials, r.rows[0].mean
        ),
    );
}

#[test]
fn criterion_05_rademacher_scaling() {
    let _g = serial();
    let t = Instant::now();
    let r = rademacher_error_curve(&[64, 256, 1024, 4096], 16, 100_000, 505).unwrap();
    let slope = r.loglog_slope().unwrap();
    let el = t.elapsed();
    let errs: Vec<String> = r.means().iter().map(|e| format!("{e:.2e}")).collect();
    let pass = (-0.8..=-0.2).contains(&slope) && el < Duration::from_secs(180);
    report(
        5,
        "Rademacher scaling",
        pass,
        el,
        &format!("mean errors {errs:?}, slope = {slope:.3}"),
    );
}

#[test]
fn criterion_06_network_consistency() {
    let _g = serial();
    let t = Instant::now();
    let arch = ArchSpec::parse(vec![32], "FC(64) FC(64) CL(10)", ActivationKind::Asu).unwrap();
    let mut per_seed = Vec::new();
    for seed in 0..20u64 {
        let mut rng = RngStream::new(600 + seed, 0);
        let m: GNet64 = init_model(&arch, 1e-6, &mut rng).unwrap();
        let e = convert_model(&m, &EmbedSpec::per_layer(EmbedKind::Gaussian, 4096, 700 + seed, 3).unwrap()).unwrap();
        let x = Tensor::from_fn(&[10, 32], |_| rng.normal());
        per_seed.push(network_delta_trace(&m, &e, &x).unwrap().mean);
    }
    let means: Vec<f64> = (0..3).map(|l| per_seed.iter().map(|m| m[l]).sum::<f64>() / 20.0).collect();
    let el = t.elapsed();
    let pass = means.windows(2).all(|w| w[1] >= w[0]) && el < Duration::from_secs(120);
    report(
        6,
        "network consistency",
        pass,
        el,
        &format!("mean |delta_l| = {:?}", means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()),
    );
}

// ---------------------------------------------------------------- MNIST

struct Mnist {
    train: Dataset,
    test: Dataset,
}

fn mnist() -> Option<&'static Mnist> {
    static DATA: OnceLock<Option<Mnist>> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = std::env::var_os("MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
        let load = |img: &str, lab: &str| load_idx(dir.join(img), dir.join(lab)).ok();
        Some(Mnist {
            train: load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
            test: load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
        })
    })
    .as_ref()
}

/// Shared MNIST-FC recipe: 784 -> 512 -> 10, ten epochs of Adam.
fn fc_config() -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 64,
        lr: 1e-3,
        logit_scale: 32.0,
        head_loss: HeadLoss::SignedAndMagnitude,
        seed: 71,
        ..TrainConfig::default()
    }
}

struct Trained {
    model: GNet32,
    test_acc: f64,
    seconds: f64,
}

fn train_fc(act: ActivationKind) -> Trained {
    let data = mnist().expect("caller checked the data");
    let t = Instant::now();
    let arch = ArchSpec::parse(vec![28, 28], "FC(512) CL(10)", act).unwrap();
    let mut model: GNet32 = init_model(&arch, 1e-6, &mut RngStream::new(70, 0)).unwrap();
    let history = fit(&mut model, &data.train, Some(&data.test), &fc_config(), |_| {}).unwrap();
    Trained {
        model,
        test_acc: history.last().unwrap().test_acc,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn rasu_fc() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| train_fc(ActivationKind::Rasu))
}

fn tasu_fc() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| train_fc(ActivationKind::Tasu { kappa: 40.0 }))
}

#[test]
fn criterion_07_mnist_end_to_end() {
    let _g = serial();
    let name = "MNIST end-to-end";
    let Some(data) = mnist() else {
        return skip(7, name, "set MNIST_DIR");
    };
    let t = Instant::now();
    let rasu = rasu_fc();
    let primal = rasu.test_acc;
    assert_eq!(evaluate(&rasu.model, &data.test).unwrap(), primal);
    let accs: Vec<f64> = (0..10u64)
        .map(|seed| {
            let specs = EmbedSpec::per_layer(EmbedKind::Rademacher, 8192, 7000 + seed, 2).unwrap();
            let ehd = convert_model(&rasu.model, &specs).unwrap();
            ehd_accuracy(&ehd, &data.test.inputs, &data.test.labels).unwrap()
        })
        .collect();
    let (ehd_mean, ehd_std) = mean_std(&accs);

    // conv pipeline on a 2000-sample subset: must run end to end
    let arch = ArchSpec::parse(vec![28, 28], "CN(1,8,5,s2) FC(64) CL(10)", ActivationKind::Rasu).unwrap();
    let mut conv: GNet64 = init_model(&arch, 1e-6, &mut RngStream::new(72, 0)).unwrap();
    let (train, test) = (data.train.take(2000), data.test.take(2000));
    let cfg = TrainConfig {
        epochs: 2,
        ..fc_config()
    };
    fit(&mut conv, &train, Some(&test), &cfg, |_| {}).unwrap();
    let conv_acc = evaluate(&conv, &test).unwrap();
    let specs = EmbedSpec::per_layer(EmbedKind::Rademacher, 2048, 7100, 3).unwrap();
    let conv_ehd = ehd_accuracy(&convert_model(&conv, &specs).unwrap(), &test.inputs, &test.labels).unwrap();
    let conv_ok = conv_acc.is_finite() && conv_ehd.is_finite();

    let el = t.elapsed() + Duration::from_secs_f64(rasu.seconds);
    let pass = primal >= 0.97 && (primal - ehd_mean).abs() <= 0.015 && conv_ok && el < Duration::from_secs(1200);
    report(
        7,
        name,
        pass,
        el,
        &format!(
            "G-Net {primal:.4}, EHD N=8192 mean {ehd_mean:.4} (std {ehd_std:.4}, 10 seeds), gap {:.2} pp; conv subset G-Net {conv_acc:.3} EHD {conv_ehd:.3}",
            100.0 * (primal - ehd_mean)
        ),
    );
}

#[test]
fn criterion_08_robustness_ordering() {
    let _g = serial();
    let name = "robustness ordering";
    let Some(data) = mnist() else {
        return skip(8, name, "set MNIST_DIR");
    };
    let t = Instant::now();
    let (rasu, tasu) = (rasu_fc(), tasu_fc());
    let test = data.test.take(2000);
    let grid = [0.0, 0.05, 0.1, 0.2];
    // accuracy[model][rho] over 5 seeds; each seed has its own embeddings and flips
    let mut acc = [vec![Vec::new(); grid.len()], vec![Vec::new(); grid.len()]];
    let mut clean_exact = true;
    for (mi, model) in [&rasu.model, &tasu.model].into_iter().enumerate() {
        for seed in 0..5u64 {
            let specs = EmbedSpec::per_layer(EmbedKind::Rademacher, 8192, 8000 + seed, 2).unwrap();
            let ehd = convert_model(model, &specs).unwrap();
            let clean = ehd_accuracy(&ehd, &test.inputs, &test.labels).unwrap();
            let cfg = CorruptionConfig {
                mode: CorruptionMode::Weights { include_embeds: true },
                trials: 1,
                seed: 8100 + seed,
            };
            let r = robustness_sweep(RobustTarget::Ehd(&ehd), &test.inputs, &test.labels, &grid, &cfg).unwrap();
            clean_exact &= r.rows[0].mean == clean;
            for (g, row) in r.rows.iter().enumerate() {
                acc[mi][g].push(row.mean);
            }
        }
    }
    let mut ordered = true;
    let mut cells = Vec::new();
    for g in 1..grid.len() {
        let (mr, sr) = mean_std(&acc[0][g]);
        let (mt, st) = mean_std(&acc[1][g]);
        let pooled = ((sr * sr + st * st) / 2.0).sqrt();
        ordered &= mt >= mr - pooled;
        cells.push(format!("rho {}: TASU {mt:.4} vs RASU {mr:.4} (pooled std {pooled:.4})", grid[g]));
    }
    let el = t.elapsed();
    let (c0r, c0t) = (mean_std(&acc[0][0]).0, mean_std(&acc[1][0]).0);
    report(
        8,
        name,
        ordered && clean_exact,
        el,
        &format!(
            "clean TASU {c0t:.4} RASU {c0r:.4}, rho=0 equals clean: {clean_exact}; {}",
            cells.join("; ")
        ),
    );
}

// ------------------------------------------------------------ oracles

#[test]
fn criterion_09_gradient_oracle() {
    let _g = serial();
    let t = Instant::now();
    let mut worst = 0.0f64;
    let archs: [(&str, Vec<usize>); 2] = [
        ("FC(7) FC(5) CL(3)", vec![6]),
        ("CN(2,3,3,s2,p1) CN(3,2,2) FC(4) CL(3)", vec![2, 6, 5]),
    ];
    for act in [
        ActivationKind::Asu,
        ActivationKind::Rasu,
        ActivationKind::Tasu { kappa: 3.0 },
    ] {
        for (arch, shape) in &archs {
            for head_loss in [HeadLoss::Signed, HeadLoss::SignedAndMagnitude] {
                let spec = ArchSpec::parse(shape.clone(), arch, act).unwrap();
                let mut rng = RngStream::new(909, 0);
                let mut m: GNet64 = init_model(&spec, 1e-6, &mut rng).unwrap();
                for l in m.layers_mut() {
                    *l.shift_mut() = 0.2 * rng.normal();
                }
                let x = Tensor::from_fn(&[3, m.input_len()], |_| rng.normal());
                let settings = LossSettings {
                    logit_scale: 4.0,
                    head_loss,
                    grad_delta: 1e-6,
                };
                let r = grad_check(&m, &x, &[0, 1, 2], settings, 1e-5, usize::MAX, &mut rng).unwrap();
                worst = worst.max(r.max_rel_err);
            }
        }
    }
    let el = t.elapsed();
    report(
        9,
        "gradient oracle",
        worst <= 1e-4 && el < Duration::from_secs(60),
        el,
        &format!("max relative error {worst:.2e} over dense/conv/head x ASU/RASU/TASU"),
    );
}

#[test]
fn criterion_10_cost_formulas() {
    let _g = serial();
    let t = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for (act, dim) in [(ActivationKind::Rasu, 200usize), (ActivationKind::Tasu { kappa: 5.0 }, 129)] {
        let arch = ArchSpec::parse(vec![37], "FC(23) FC(11) CL(5)", act).unwrap();
        let m: GNet64 = init_model(&arch, 1e-6, &mut RngStream::new(1010, 0)).unwrap();
        let ehd = convert_model(&m, &EmbedSpec::per_layer(EmbedKind::Rademacher, dim, 1011, 3).unwrap()).unwrap();
        let r = cost_report(&m, &ehd, 32).unwrap();
        let dims = [(37u64, 23u64), (23, 11), (11, 5)];
        for (l, &(mm, nn)) in r.layers.iter().zip(&dims) {
            ok &= l.ehd_bits == (mm + nn) * dim as u64;
            ok &= l.fp_bits == mm * nn * 32;
        }
        let x: Vec<f64> = RngStream::new(1012, 0).unit_vector(37);
        counters::reset();
        ehd.forward(&x).unwrap();
        let counted = counters::read();
        ok &= counted.xor_words == r.total.xor_words && counted.popcount_words == r.total.popcount_words;
        detail.push_str(&format!(
            "{}: xor words counted {} predicted {}; ",
            act.name(),
            counted.xor_words,
            r.total.xor_words
        ));
    }
    report(10, "cost formulas", ok, t.elapsed(), &detail);
}

/// Unpacked integer emulation of an EHD network with Rademacher embeddings:
/// every embed and code is expanded to a `+-1` matrix and every stage is a
/// plain integer (or exactly representable) sum.
fn emulate(model: &EhdModel, x: &[f64]) -> Vec<Vec<i64>> {
    let mut outputs = Vec::new();
    let mut cur: Vec<f64> = x.to_vec();
    for layer in model.layers() {
        let embed = match layer.embed() {
            Embed::Rademacher(r) => r,
            Embed::Gaussian { .. } => panic!("emulation covers Rademacher embeddings"),
        };
        let (big_n, p) = (embed.rows(), embed.cols());
        let e: Vec<Vec<i64>> = (0..big_n).map(|i| (0..p).map(|j| embed.sign(i, j)).collect()).collect();
        let codes = layer.codes();
        let c = layer.shift();
        // (position, patch) reader over the current signal
        let (positions, patch, source): (usize, usize, Box<dyn Fn(usize, usize) -> Option<usize>>) = match layer {
            EhdLayer::Conv(l) => {
                let g = l.geom;
                (g.positions(), g.patch_len(), Box::new(move |k, q| g.source(k, q)))
            }
            _ => (1, p, Box::new(|_, q| Some(q))),
        };
        let values: Vec<f64> = match layer.input() {
            InputKind::Real => {
                let shifted: Vec<f64> = cur.iter().map(|v| v + c).collect();
                fixed_point(&shifted, patch)
            }
            _ => cur.clone(),
        };
        let sc = match layer.input() {
            InputKind::Real => 0.0,
            InputKind::Int { scale } => scale as f64 * c,
            InputKind::Bits => c,
        };
        let filters = codes.rows();
        let mut scores = vec![0i64; filters * positions];
        for k in 0..positions {
            let t: Vec<i64> = e
                .iter()
                .map(|row| {
                    let mut s = 0.0;
                    for (q, &eq) in row.iter().enumerate() {
                        if let Some(src) = source(k, q) {
                            s += eq as f64 * (values[src] + sc);
                        }
                    }
                    if s >= 0.0 {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            for f in 0..filters {
                scores[f * positions + k] = (0..big_n).map(|i| codes.sign(f, i) * t[i]).sum();
            }
        }
        let out: Vec<i64> = match layer.tau() {
            Tau::Identity => scores,
            Tau::Relu => scores.into_iter().map(|s| s.max(0)).collect(),
            Tau::Sign => scores.into_iter().map(|s| if s >= 0 { 1 } else { -1 }).collect(),
        };
        cur = out.iter().map(|&v| v as f64).collect();
        outputs.push(out);
    }
    outputs
}

/// `round(v 2^e)` with the largest `e` keeping `max |v| 2^e <= 2^(52 - ceil log2 terms)`.
fn fixed_point(v: &[f64], terms: usize) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        return vec![0.0; v.len()];
    }
    let mut ceil_log = 0;
    while (1usize << ceil_log) < terms {
        ceil_log += 1;
    }
    let limit = 2f64.powi(52 - ceil_log);
    let mut e = 0i32;
    while m * 2f64.powi(e) > limit {
        e -= 1;
    }
    while m * 2f64.powi(e + 1) <= limit {
        e += 1;
    }
    v.iter().map(|x| (x * 2f64.powi(e)).round()).collect()
}

fn signal_ints(s: &Signal) -> Vec<i64> {
    match s {
        Signal::Int(v) => v.clone(),
        Signal::Bits(b) => b.to_signs(),
        Signal::Real(_) => panic!("hidden signals are discrete"),
    }
}

#[test]
fn criterion_11_exact_emulation() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = RngStream::new(1111, 0);
    let mut mismatches = 0;
    for case in 0..200u64 {
        let act = match case % 3 {
            0 => ActivationKind::Asu,
            1 => ActivationKind::Rasu,
            _ => ActivationKind::Tasu { kappa: 4.0 },
        };
        let (shape, arch) = if case % 8 == 0 {
            (vec![2, 5, 4], "CN(2,3,3,s1,p1) FC(6) CL(3)".to_string())
        } else if case % 8 == 4 {
            (vec![1, 6, 5], "CN(1,3,3,s1,p1) CN(3,2,2,s2) CL(4)".to_string())
        } else {
            let p = 1 + rng.below(12) as usize;
            let h = 1 + rng.below(9) as usize;
            (vec![p], format!("FC({h}) FC({}) CL({})", 1 + rng.below(6), 2 + rng.below(4)))
        };
        let spec = ArchSpec::parse(shape, &arch, act).unwrap();
        let mut m: GNet64 = init_model(&spec, 1e-6, &mut rng).unwrap();
        for l in m.layers_mut() {
            // dyadic shifts keep the folded shift exact
            *l.shift_mut() = (rng.below(9) as f64 - 4.0) / 8.0;
        }
        let dim = 1 + rng.below(150) as usize;
        let specs = EmbedSpec::per_layer(EmbedKind::Rademacher, dim, 1200 + case, m.layers().len()).unwrap();
        let ehd = convert_model(&m, &specs).unwrap();
        let x: Vec<f64> = (0..m.input_len()).map(|_| rng.normal()).collect();
        let expected = emulate(&ehd, &x);
        let (scores, trace) = ehd.forward(&x).unwrap();
        let got: Vec<Vec<i64>> = trace.iter().map(signal_ints).collect();
        let batched = ehd.prepare().scores(&Tensor::new(vec![1, x.len()], x.clone()).unwrap()).unwrap();
        if got != expected || scores != *expected.last().unwrap() || batched[0] != scores {
            mismatches += 1;
        }
        // the fixed-point image matches the library's quantizer
        assert_eq!(
            quantize_input(&x, 7).unwrap().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            fixed_point(&x, 7)
        );
    }
    report(
        11,
        "exact emulation",
        mismatches == 0,
        t.elapsed(),
        &format!("{mismatches} mismatches over 200 randomized instances"),
    );
}
