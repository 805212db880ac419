//! Subcommand implementations.

use std::path::PathBuf;

use anyhow::Result;
use gnet_core::data::Dataset;
use gnet_core::ehd::{convert_model, cost_report, ehd_accuracy, Embed, EmbedKind, EmbedSpec};
use gnet_core::io::{ehd_to_bytes, gnet_to_bytes, history_csv, load_ehd, load_gnet, report_json, Width};
use gnet_core::rng::{mix_seed, RngStream};
use gnet_core::robust::{robustness_sweep, CorruptionConfig, CorruptionMode, RobustTarget};
use gnet_core::train::{evaluate, fit, init_model, weight_drift, HeadLoss, LossSettings, Optimizer, TrainConfig};
use gnet_core::verify::{
    asu_isometry_probe, grad_check, grothendieck_mc, grothendieck_target, layer_discrepancy_sweep,
    near_isometry_sweep, network_delta_trace, rademacher_error_curve, screened_inputs, LayerSweep, LayerTarget,
    SweepResult,
};
use gnet_core::{ActivationKind, ArchSpec, GNetModel, Real, Tensor};
use serde::Serialize;

use crate::settings::{load_data, usage, Outputs, Settings};
use crate::{
    AsuIsoArgs, Cli, Command, ConvertArgs, CostArgs, DriftArgs, EvalArgs, GradcheckArgs, GrothendieckArgs,
    IsometryArgs, LayerArgs, NetworkArgs, RademacherArgs, RobustArgs, TrainArgs, VerifyCommand,
};

pub fn run(cli: Cli) -> Result<()> {
    let name = command_name(&cli.command);
    let mut s = Settings::new(cli.config.as_deref(), cli.seed, &name)?;
    let mut out = Outputs::new(cli.out);
    let result = match cli.command {
        Command::Train(a) => train(&mut s, &mut out, a),
        Command::Eval(a) => eval(&mut s, &mut out, a),
        Command::Convert(a) => convert(&mut s, &mut out, a),
        Command::EhdEval(a) => ehd_eval(&mut s, &mut out, a),
        Command::Verify(v) => match v {
            VerifyCommand::Grothendieck(a) => grothendieck(&mut s, &mut out, a),
            VerifyCommand::Isometry(a) => isometry(&mut s, &mut out, a),
            VerifyCommand::Layer(a) => layer(&mut s, &mut out, a),
            VerifyCommand::Network(a) => network(&mut s, &mut out, a),
            VerifyCommand::AsuIso(a) => asu_iso(&mut s, &mut out, a),
            VerifyCommand::Rademacher(a) => rademacher(&mut s, &mut out, a),
            VerifyCommand::Gradcheck(a) => gradcheck(&mut s, &mut out, a),
        },
        Command::Robust(a) => robust(&mut s, &mut out, a),
        Command::Cost(a) => cost(&mut s, &mut out, a),
        Command::Drift(a) => drift(&mut s, &mut out, a),
    };
    if result.is_err() {
        out.cleanup();
    }
    result
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Train(_) => "train".into(),
        Command::Eval(_) => "eval".into(),
        Command::Convert(_) => "convert".into(),
        Command::EhdEval(_) => "ehd-eval".into(),
        Command::Verify(v) => format!(
            "verify {}",
            match v {
                VerifyCommand::Grothendieck(_) => "grothendieck",
                VerifyCommand::Isometry(_) => "isometry",
                VerifyCommand::Layer(_) => "layer",
                VerifyCommand::Network(_) => "network",
                VerifyCommand::AsuIso(_) => "asu-iso",
                VerifyCommand::Rademacher(_) => "rademacher",
                VerifyCommand::Gradcheck(_) => "gradcheck",
            }
        ),
        Command::Robust(a) => format!("robust {}", a.mode),
        Command::Cost(_) => "cost".into(),
        Command::Drift(_) => "drift".into(),
    }
}

fn activation(name: &str, kappa: f64) -> Result<ActivationKind> {
    match name {
        "asu" => Ok(ActivationKind::Asu),
        "rasu" => Ok(ActivationKind::Rasu),
        "tasu" => Ok(ActivationKind::Tasu { kappa }),
        other => Err(usage(format!("unknown activation `{other}` (asu, rasu or tasu)"))),
    }
}

fn embed_kind(name: &str) -> Result<EmbedKind> {
    match name {
        "gaussian" => Ok(EmbedKind::Gaussian),
        "rademacher" => Ok(EmbedKind::Rademacher),
        other => Err(usage(format!("unknown embedding `{other}` (gaussian or rademacher)"))),
    }
}

fn width(name: &str) -> Result<Width> {
    match name {
        "f32" => Ok(Width::F32),
        "f64" => Ok(Width::F64),
        other => Err(usage(format!("unknown width `{other}` (f32 or f64)"))),
    }
}

fn head_loss(name: &str) -> Result<HeadLoss> {
    match name {
        "signed" => Ok(HeadLoss::Signed),
        "signed+magnitude" => Ok(HeadLoss::SignedAndMagnitude),
        other => Err(usage(format!("unknown head loss `{other}` (signed or signed+magnitude)"))),
    }
}

fn required(s: &mut Settings, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
    s.get_opt(key, flag)?
        .ok_or_else(|| usage(format!("missing --{}", key.replace('_', "-"))))
}

fn write_sweep(out: &mut Outputs, stem: &str, r: &SweepResult) -> Result<()> {
    out.write(&format!("{stem}.csv"), r.to_csv().as_bytes())?;
    out.write(&format!("{stem}.json"), r.to_json()?.as_bytes())?;
    print!("{}", r.to_csv());
    Ok(())
}

fn write_json<P: Serialize>(out: &mut Outputs, name: &str, kind: &str, payload: &P) -> Result<()> {
    out.write(name, report_json(kind, payload)?.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    arch: String,
    activation: ActivationKind,
    precision: &'a str,
    config: &'a TrainConfig,
    train_samples: usize,
    test_samples: usize,
    final_test_acc: f64,
}

fn train(s: &mut Settings, out: &mut Outputs, a: TrainArgs) -> Result<()> {
    let arch = s.string("arch", a.arch, "FC(512) CL(10)");
    let act = s.string("act", a.act, "rasu");
    let kappa = s.get("kappa", a.kappa, 5.0)?;
    let act = activation(&act, kappa)?;
    let optimizer = match s.string("optimizer", a.optimizer, "adam").as_str() {
        "adam" => Optimizer::Adam,
        "sgd" => Optimizer::Sgd,
        other => return Err(usage(format!("unknown optimizer `{other}` (adam or sgd)"))),
    };
    let hl = s.string("head_loss", a.head_loss, "signed");
    let precision = s.string("precision", a.precision, "f64");
    let precision = width(&precision)?;
    let config = TrainConfig {
        epochs: s.get("epochs", a.epochs, 10)?,
        batch_size: s.get("batch_size", a.batch_size, 64)?,
        lr: s.get("lr", a.lr, 1e-3)?,
        optimizer,
        logit_scale: s.get("logit_scale", a.logit_scale, 16.0)?,
        head_loss: head_loss(&hl)?,
        seed: mix_seed(s.seed, 1),
        ..TrainConfig::default()
    };
    config.validate()?;
    let data = load_data(s, a.data.data, a.data.mnist_dir)?;
    s.finish()?;
    let spec = ArchSpec::parse(data.train.sample_shape().to_vec(), &arch, act)?;
    match precision {
        Width::F32 => train_with::<f32>(s, out, &spec, &config, &data.train, &data.test, "f32"),
        Width::F64 => train_with::<f64>(s, out, &spec, &config, &data.train, &data.test, "f64"),
    }
}

fn train_with<T: Real>(
    s: &Settings,
    out: &mut Outputs,
    spec: &ArchSpec,
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    precision: &str,
) -> Result<()> {
    let mut rng = RngStream::new(s.seed, 0);
    let mut model: GNetModel<T> = init_model(spec, T::of(config.eps_norm), &mut rng)?;
    let w = Width::of::<T>();
    out.write("init.gnet", &gnet_to_bytes(&model, w))?;
    let history = fit(&mut model, train, Some(test), config, |r| {
        println!(
            "epoch {} loss {:.6} train_acc {:.4} test_acc {:.4}",
            r.epoch, r.loss, r.train_acc, r.test_acc
        );
    })?;
    out.write("model.gnet", &gnet_to_bytes(&model, w))?;
    out.write("history.csv", history_csv(&history).as_bytes())?;
    let report = TrainReport {
        arch: spec.layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "),
        activation: spec.act,
        precision,
        config,
        train_samples: train.len(),
        test_samples: test.len(),
        final_test_acc: history.last().map_or(f64::NAN, |r| r.test_acc),
    };
    write_json(out, "train.json", "train", &report)
}

#[derive(Serialize)]
struct AccuracyReport {
    model: String,
    samples: usize,
    accuracy: f64,
}

fn eval(s: &mut Settings, out: &mut Outputs, a: EvalArgs) -> Result<()> {
    let path = required(s, "model", a.model)?;
    let data = load_data(s, a.data.data, a.data.mnist_dir)?;
    s.finish()?;
    let model: GNetModel<f64> = load_gnet(&path)?;
    let acc = evaluate(&model, &data.test)?;
    println!("accuracy {acc:.6}");
    let r = AccuracyReport {
        model: path.display().to_string(),
        samples: data.test.len(),
        accuracy: acc,
    };
    write_json(out, "eval.json", "eval", &r)
}

fn ehd_eval(s: &mut Settings, out: &mut Outputs, a: EvalArgs) -> Result<()> {
    let path = required(s, "model", a.model)?;
    let data = load_data(s, a.data.data, a.data.mnist_dir)?;
    s.finish()?;
    let model = load_ehd(&path)?;
    let acc = ehd_accuracy(&model, &data.test.inputs, &data.test.labels)?;
    println!("accuracy {acc:.6}");
    let r = AccuracyReport {
        model: path.display().to_string(),
        samples: data.test.len(),
        accuracy: acc,
    };
    write_json(out, "ehd_eval.json", "ehd-eval", &r)
}

#[derive(Serialize)]
struct ConvertReport {
    model: String,
    specs: Vec<EmbedSpec>,
    stored_gaussian: bool,
}

fn convert(s: &mut Settings, out: &mut Outputs, a: ConvertArgs) -> Result<()> {
    let path = required(s, "model", a.model)?;
    let kind = s.string("embed", a.embed, "rademacher");
    let kind = embed_kind(&kind)?;
    let dim = s.get("dim", a.dim, 8192)?;
    let store = s.get("store_gaussian", a.store_gaussian.then_some(true), false)?;
    s.finish()?;
    let model: GNetModel<f64> = load_gnet(&path)?;
    let specs = EmbedSpec::per_layer(kind, dim, s.seed, model.layers().len())?;
    let mut ehd = convert_model(&model, &specs)?;
    if store {
        for l in ehd.layers_mut() {
            if let Embed::Gaussian { stored, .. } = l.embed_mut() {
                *stored = true;
            }
        }
    }
    out.write("model.ehd", &ehd_to_bytes(&ehd))?;
    let r = ConvertReport {
        model: path.display().to_string(),
        specs,
        stored_gaussian: store,
    };
    write_json(out, "convert.json", "convert", &r)
}

#[derive(Serialize)]
struct GrothendieckRow {
    pair: usize,
    inner: f64,
    estimate: f64,
    target: f64,
    abs_err: f64,
}

#[derive(Serialize)]
struct GrothendieckReport {
    samples: usize,
    p: usize,
    embed: EmbedKind,
    pairs: Vec<GrothendieckRow>,
    max_abs_err: f64,
}

fn grothendieck(s: &mut Settings, out: &mut Outputs, a: GrothendieckArgs) -> Result<()> {
    let samples = s.get("n", a.n, 1_000_000)?;
    let p = s.get("p", a.p, 32)?;
    let pairs = s.get("pairs", a.pairs, 10)?;
    let kind = s.string("embed", a.embed, "gaussian");
    let kind = embed_kind(&kind)?;
    s.finish()?;
    let mut pick = RngStream::new(s.seed, 0);
    let mut rows = Vec::with_capacity(pairs);
    let mut csv = String::from("pair,inner,estimate,target,abs_err\n");
    println!("pair inner estimate target abs_err");
    for i in 0..pairs {
        let (u, v) = (pick.unit_vector(p), pick.unit_vector(p));
        let inner: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
        let mut rng = RngStream::new(s.seed, 1 + i as u64);
        let estimate = grothendieck_mc(&u, &v, samples, kind, &mut rng)?;
        let target = grothendieck_target(&u, &v);
        let r = GrothendieckRow {
            pair: i,
            inner,
            estimate,
            target,
            abs_err: (estimate - target).abs(),
        };
        println!("{} {:.6} {:.6} {:.6} {:.3e}", i, inner, estimate, target, r.abs_err);
        csv.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            i, inner, estimate, target, r.abs_err
        ));
        rows.push(r);
    }
    let max_abs_err = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    out.write("grothendieck.csv", csv.as_bytes())?;
    let report = GrothendieckReport {
        samples,
        p,
        embed: kind,
        pairs: rows,
        max_abs_err,
    };
    write_json(out, "grothendieck.json", "grothendieck", &report)
}

fn isometry(s: &mut Settings, out: &mut Outputs, a: IsometryArgs) -> Result<()> {
    let n = s.get("n", a.n, 16)?;
    let grid: Vec<usize> = s.list("grid", a.grid, "256,1024,4096,16384")?;
    let pairs = s.get("pairs", a.pairs, 1000)?;
    s.finish()?;
    let r = near_isometry_sweep(n, &grid, pairs, s.seed)?;
    write_sweep(out, "isometry", &r)
}

fn layer(s: &mut Settings, out: &mut Outputs, a: LayerArgs) -> Result<()> {
    let act = s.string("act", a.act, "rasu");
    let n = s.get("n", a.n, 128)?;
    let p = s.get("p", a.p, 64)?;
    let trials = s.get("trials", a.trials, 20)?;
    let c = s.get("c", a.c, 3.0)?;
    let kind = s.string("embed", a.embed, "gaussian");
    let kind = embed_kind(&kind)?;
    let eps = s.get("eps", a.eps, 0.5 * (n as f64).sqrt())?;
    let l_min = s.get("l_min", a.l_min, 0.2)?;
    let target = match act.as_str() {
        "asu" => LayerTarget::Asu,
        "rasu" => LayerTarget::Rasu,
        "tasu" => LayerTarget::Tasu { eps, l_min },
        other => return Err(usage(format!("unknown activation `{other}` (asu, rasu or tasu)"))),
    };
    let default_grid = match target {
        LayerTarget::Tasu { .. } => String::new(),
        _ => "256,512,1024,2048,4096,8192,16384".into(),
    };
    let grid_flag = s.string("grid", a.grid, &default_grid);
    s.finish()?;
    let mut rng = RngStream::new(s.seed, 0);
    let w = Tensor::from_fn(&[n, p], |_| rng.normal());
    let (inputs, grid) = match target {
        LayerTarget::Tasu { eps, l_min } => {
            let x = screened_inputs(&w, 1, l_min, 1_000_000, &mut rng)?;
            let grid: Vec<usize> = if grid_flag.is_empty() {
                vec![gnet_core::verify::tasu_theory(n, eps, l_min, c)?.1]
            } else {
                parse_grid(&grid_flag)?
            };
            (x, grid)
        }
        _ => (vec![rng.unit_vector(p)], parse_grid(&grid_flag)?),
    };
    let cfg = LayerSweep {
        target,
        kind,
        trials,
        c,
        seed: mix_seed(s.seed, 1),
    };
    let r = layer_discrepancy_sweep(&w, &inputs, &grid, &cfg)?;
    write_sweep(out, "layer", &r)
}

fn parse_grid(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| usage(format!("cannot parse `{v}` in `grid`"))))
        .collect()
}

fn network(s: &mut Settings, out: &mut Outputs, a: NetworkArgs) -> Result<()> {
    let arch = s.string("arch", a.arch, "FC(64) FC(64) CL(10)");
    let input_dim = s.get("input_dim", a.input_dim, 32)?;
    let act = s.string("act", a.act, "asu");
    let kappa = s.get("kappa", a.kappa, 5.0)?;
    let act = activation(&act, kappa)?;
    let dim = s.get("dim", a.dim, 4096)?;
    let kind = s.string("embed", a.embed, "gaussian");
    let kind = embed_kind(&kind)?;
    let seeds = s.get("seeds", a.seeds, 20)?;
    let inputs = s.get("inputs", a.inputs, 10)?;
    s.finish()?;
    if seeds == 0 {
        return Err(usage("need at least one seed"));
    }
    let spec = ArchSpec::parse(vec![input_dim], &arch, act)?;
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let seed = mix_seed(s.seed, k as u64);
        let mut rng = RngStream::new(seed, 0);
        let model: GNetModel<f64> = init_model(&spec, 1e-6, &mut rng)?;
        let ehd = convert_model(&model, &EmbedSpec::per_layer(kind, dim, seed, model.layers().len())?)?;
        let x = Tensor::from_fn(&[inputs, input_dim], |_| rng.normal());
        per_seed.push(network_delta_trace(&model, &ehd, &x)?.mean);
    }
    let mut r = SweepResult::new("network", "layer");
    for l in 0..per_seed[0].len() {
        let v: Vec<f64> = per_seed.iter().map(|m| m[l]).collect();
        r.push((l + 1) as f64, &v, None)?;
    }
    r.params.insert("hyperdim".into(), dim as f64);
    r.params.insert("inputs".into(), inputs as f64);
    write_sweep(out, "network", &r)
}

fn asu_iso(s: &mut Settings, out: &mut Outputs, a: AsuIsoArgs) -> Result<()> {
    let p = s.get("p", a.p, 32)?;
    let n = s.get("n", a.n, 64 * p)?;
    let pairs = s.get("pairs", a.pairs, 10_000)?;
    s.finish()?;
    let probe = asu_isometry_probe(n, p, pairs, &mut RngStream::new(s.seed, 0))?;
    println!(
        "n {} p {} beta_inv {:.6} min {:.6} max {:.6} max_abs {:.6}",
        n,
        p,
        probe.beta_inv,
        probe.min,
        probe.max,
        probe.max_abs()
    );
    write_json(out, "asu_iso.json", "asu-iso", &probe)
}

fn rademacher(s: &mut Settings, out: &mut Outputs, a: RademacherArgs) -> Result<()> {
    let grid: Vec<usize> = s.list("grid", a.grid, "64,256,1024,4096")?;
    let trials = s.get("trials", a.trials, 16)?;
    let samples = s.get("samples", a.samples, 100_000)?;
    s.finish()?;
    let r = rademacher_error_curve(&grid, trials, samples, s.seed)?;
    write_sweep(out, "rademacher", &r)?;
    if grid.len() >= 2 {
        println!("slope {:.4}", r.loglog_slope()?);
    }
    Ok(())
}

fn gradcheck(s: &mut Settings, out: &mut Outputs, a: GradcheckArgs) -> Result<()> {
    let arch = s.string("arch", a.arch, "FC(7) FC(5) CL(3)");
    let shape: Vec<usize> = s.list("input_shape", a.input_shape, "6")?;
    let act = s.string("act", a.act, "rasu");
    let kappa = s.get("kappa", a.kappa, 3.0)?;
    let act = activation(&act, kappa)?;
    let coords = s.get("coords", a.coords, 200)?;
    let hl = s.string("head_loss", a.head_loss, "signed");
    let settings = LossSettings {
        logit_scale: 4.0,
        head_loss: head_loss(&hl)?,
        grad_delta: 1e-6,
    };
    s.finish()?;
    let spec = ArchSpec::parse(shape, &arch, act)?;
    let mut rng = RngStream::new(s.seed, 0);
    let mut model: GNetModel<f64> = init_model(&spec, 1e-6, &mut rng)?;
    for l in model.layers_mut() {
        *l.shift_mut() = 0.1 * rng.normal();
    }
    let classes = model.classes();
    let x = Tensor::from_fn(&[4, model.input_len()], |_| rng.normal());
    let labels: Vec<usize> = (0..4).map(|i| i % classes).collect();
    let r = grad_check(&model, &x, &labels, settings, 1e-5, coords, &mut rng)?;
    println!("checked {} max_rel_err {:.3e}", r.checked, r.max_rel_err);
    write_json(out, "gradcheck.json", "gradcheck", &r)
}

fn robust(s: &mut Settings, out: &mut Outputs, a: RobustArgs) -> Result<()> {
    let path = required(s, "model", a.model)?;
    let grid: Vec<f64> = s.list("grid", a.grid, "0,0.05,0.1,0.2")?;
    let trials = s.get("trials", a.trials, 5)?;
    let codes_only = s.get("codes_only", a.codes_only.then_some(true), false)?;
    let w = s.string("width", a.width, "f32");
    let w = width(&w)?;
    let data = load_data(s, a.data.data, a.data.mnist_dir)?;
    s.finish()?;
    let (x, labels) = (&data.test.inputs, &data.test.labels);
    let r = match a.mode.as_str() {
        "floatbits" => {
            let model: GNetModel<f64> = load_gnet(&path)?;
            let cfg = CorruptionConfig {
                mode: CorruptionMode::FloatBits { width: w },
                trials,
                seed: s.seed,
            };
            robustness_sweep(RobustTarget::Float(&model), x, labels, &grid, &cfg)?
        }
        mode => {
            let model = load_ehd(&path)?;
            let mode = if mode == "weights" {
                CorruptionMode::Weights {
                    include_embeds: !codes_only,
                }
            } else {
                CorruptionMode::Hypervector
            };
            let cfg = CorruptionConfig {
                mode,
                trials,
                seed: s.seed,
            };
            robustness_sweep(RobustTarget::Ehd(&model), x, labels, &grid, &cfg)?
        }
    };
    write_sweep(out, &format!("robust_{}", a.mode), &r)
}

fn cost(s: &mut Settings, out: &mut Outputs, a: CostArgs) -> Result<()> {
    let model_path = required(s, "model", a.model)?;
    let ehd_path = required(s, "ehd", a.ehd)?;
    let float_bits = s.get("float_bits", a.float_bits, 32)?;
    s.finish()?;
    let model: GNetModel<f64> =
        load_gnet(&model_path)?;
    let ehd = load_ehd(&ehd_path)?;
    let r = cost_report(&model, &ehd, float_bits)?;
    let mut csv = String::from(
        "layer,kind,m,n,hyperdim,ehd_bits,ehd_bits_stored,fp_bits,xor_words,popcount_words,int_adds,ehd_real_mults,fp_real_mults,fp_real_adds,fp_arcsin\n",
    );
    for l in r.layers.iter().chain(std::iter::once(&r.total)) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            l.layer,
            l.kind,
            l.m,
            l.n,
            l.hyperdim,
            l.ehd_bits,
            l.ehd_bits_stored,
            l.fp_bits,
            l.xor_words,
            l.popcount_words,
            l.int_adds,
            l.ehd_real_mults,
            l.fp_real_mults,
            l.fp_real_adds,
            l.fp_arcsin
        ));
    }
    print!("{csv}");
    out.write("cost.csv", csv.as_bytes())?;
    write_json(out, "cost.json", "cost", &r)
}

#[derive(Serialize)]
struct DriftReport {
    layers: Vec<gnet_core::train::LayerDrift>,
}

fn drift(s: &mut Settings, out: &mut Outputs, a: DriftArgs) -> Result<()> {
    let before = required(s, "before", a.before)?;
    let after = required(s, "after", a.after)?;
    s.finish()?;
    let a: GNetModel<f64> = load_gnet(&before)?;
    let b: GNetModel<f64> = load_gnet(&after)?;
    let layers = weight_drift(&a, &b)?;
    let mut csv = String::from("layer,kind,ks,mean_before,mean_after,std_before,std_after\n");
    for l in &layers {
        csv.push_str(&format!(
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            l.layer, l.kind, l.ks, l.mean_a, l.mean_b, l.std_a, l.std_b
        ));
    }
    print!("{csv}");
    out.write("drift.csv", csv.as_bytes())?;
    write_json(out, "drift.json", "drift", &DriftReport { layers })
}
