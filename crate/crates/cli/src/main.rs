mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Train G-Nets, convert them into binary EHD networks and run the
/// verification and robustness experiments.
#[derive(Parser, Debug)]
#[command(name = "gnet", version, arg_required_else_help = true)]
pub struct Cli {
    /// Root seed; every subcommand derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` file; keys mirror the long flag names with `_` for `-`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a G-Net; writes init.gnet, model.gnet, history.csv, train.json.
    Train(TrainArgs),
    /// Accuracy of a G-Net on the test split.
    Eval(EvalArgs),
    /// Convert a G-Net into an EHD G-Net; writes model.ehd.
    Convert(ConvertArgs),
    /// Accuracy of an EHD G-Net on the test split.
    EhdEval(EvalArgs),
    /// Empirical checks of the concentration and isometry results.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Accuracy under random bit corruption.
    Robust(RobustArgs),
    /// Memory and operation counts of a G-Net and its EHD conversion.
    Cost(CostArgs),
    /// Weight-distribution drift between two G-Nets.
    Drift(DriftArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// `mnist` or `synth`.
    #[arg(long)]
    pub data: Option<String>,
    /// Directory of the IDX files (default $MNIST_DIR, else data/mnist).
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Layer list, e.g. "FC(512) CL(10)" or "CN(1,8,5,s2) FC(64) CL(10)".
    #[arg(long)]
    pub arch: Option<String>,
    /// `asu`, `rasu` or `tasu`.
    #[arg(long)]
    pub act: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub logit_scale: Option<f64>,
    /// `signed` or `signed+magnitude`.
    #[arg(long)]
    pub head_loss: Option<String>,
    /// Training precision and stored width: `f32` or `f64`.
    #[arg(long)]
    pub precision: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `gaussian` or `rademacher`.
    #[arg(long)]
    pub embed: Option<String>,
    /// Hyperdimension N of every layer.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Keep Gaussian embeddings as values instead of regenerating them.
    #[arg(long)]
    pub store_gaussian: bool,
}

#[derive(Subcommand, Debug)]
pub enum VerifyCommand {
    /// Monte Carlo estimate of E[sign(gu) sign(gv)] against (2/pi) asin(u.v).
    Grothendieck(GrothendieckArgs),
    /// Hamming versus geodesic distance of sign embeddings over N.
    Isometry(IsometryArgs),
    /// Discrepancy of one EHD layer against its primal layer over N.
    Layer(LayerArgs),
    /// Per-layer discrepancy of a random network and its EHD conversion.
    Network(NetworkArgs),
    /// Distortion of the ASU map of a random weight matrix.
    AsuIso(AsuIsoArgs),
    /// Rademacher bias against the dimension p.
    Rademacher(RademacherArgs),
    /// Analytic against finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GrothendieckArgs {
    /// Samples per pair.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub embed: Option<String>,
}

#[derive(Args, Debug)]
pub struct IsometryArgs {
    /// Sphere dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated hyperdimensions.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct LayerArgs {
    #[arg(long)]
    pub act: Option<String>,
    /// Output width of the layer.
    #[arg(long)]
    pub n: Option<usize>,
    /// Input width of the layer.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub embed: Option<String>,
    /// TASU target accuracy (default 0.5 sqrt(n)).
    #[arg(long)]
    pub eps: Option<f64>,
    /// TASU input margin.
    #[arg(long)]
    pub l_min: Option<f64>,
}

#[derive(Args, Debug)]
pub struct NetworkArgs {
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub act: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub embed: Option<String>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Inputs per seed.
    #[arg(long)]
    pub inputs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AsuIsoArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RademacherArgs {
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma-separated input shape, e.g. `6` or `2,6,5`.
    #[arg(long)]
    pub input_shape: Option<String>,
    #[arg(long)]
    pub act: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long)]
    pub head_loss: Option<String>,
}

#[derive(Args, Debug)]
pub struct RobustArgs {
    /// `weights`, `floatbits` or `hypervector`.
    #[arg(value_parser = ["weights", "floatbits", "hypervector"])]
    pub mode: String,
    #[command(flatten)]
    pub data: DataArgs,
    /// EHD model for weights/hypervector, G-Net for floatbits.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated flip fractions.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Leave Rademacher embeddings intact when flipping weights.
    #[arg(long)]
    pub codes_only: bool,
    /// Width of the float bit patterns: `f32` or `f64`.
    #[arg(long)]
    pub width: Option<String>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub ehd: Option<PathBuf>,
    #[arg(long)]
    pub float_bits: Option<u32>,
}

#[derive(Args, Debug)]
pub struct DriftArgs {
    #[arg(long)]
    pub before: Option<PathBuf>,
    #[arg(long)]
    pub after: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(settings::exit_code(&e) as u8)
        }
    }
}
