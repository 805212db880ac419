//! Flag/config merging, data loading and output bookkeeping.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use gnet_core::data::{load_idx, synth_sphere, Dataset};
use gnet_core::io::{write_atomic, Config};
use gnet_core::rng::mix_seed;

/// Marks an error as a usage error (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for a failed command: 1 for usage and configuration errors,
/// 2 for everything else (missing or malformed data, I/O).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<gnet_core::Error>() {
            return match e {
                gnet_core::Error::Config { .. } | gnet_core::Error::Invalid(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

/// Command-line values layered over an optional config file.
pub struct Settings {
    config: Config,
    /// Seed of this subcommand.
    pub seed: u64,
    /// Root seed; synthetic data depends on it alone so that every
    /// subcommand sees the same samples.
    pub root: u64,
}

impl Settings {
    pub fn new(config: Option<&Path>, seed: Option<u64>, command: &str) -> Result<Self> {
        let mut config = match config {
            Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
            None => Config::default(),
        };
        let root = match seed {
            Some(s) => s,
            None => config.get("seed", 0u64)?,
        };
        Ok(Self {
            config,
            seed: mix_seed(root, fnv1a(command)),
            root,
        })
    }

    /// Flag value, else config value, else `default`.
    pub fn get<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let from_config = self.config.get(key, default)?;
        Ok(flag.unwrap_or(from_config))
    }

    pub fn get_opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            self.config.str(key);
            return Ok(flag);
        }
        if !self.config.contains(key) {
            return Ok(None);
        }
        Ok(Some(self.config.require(key)?))
    }

    pub fn string(&mut self, key: &str, flag: Option<String>, default: &str) -> String {
        let c = self.config.str(key);
        flag.or(c).unwrap_or_else(|| default.to_string())
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<T>> {
        let raw = self.string(key, flag, default);
        raw.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| usage(format!("cannot parse `{s}` in `{key}`"))))
            .collect()
    }

    /// Rejects config keys no option consumed.
    pub fn finish(&self) -> Result<()> {
        self.config.finish()?;
        Ok(())
    }
}

/// FNV-1a, used to split the root seed per subcommand.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Train and test splits named by the `data` setting.
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(s: &mut Settings, data: Option<String>, dir: Option<PathBuf>) -> Result<Splits> {
    let kind = s.string("data", data, "mnist");
    let train_limit: usize = s.get("train_limit", None, 0)?;
    let test_limit: usize = s.get("test_limit", None, 0)?;
    let (train, test) = match kind.as_str() {
        "mnist" => {
            let default_dir = std::env::var("MNIST_DIR").unwrap_or_else(|_| "data/mnist".into());
            let dir = match dir {
                Some(d) => {
                    s.string("mnist_dir", None, "");
                    d
                }
                None => PathBuf::from(s.string("mnist_dir", None, &default_dir)),
            };
            let load = |img: &str, lab: &str| {
                load_idx(dir.join(img), dir.join(lab)).with_context(|| format!("loading MNIST from {}", dir.display()))
            };
            (
                load("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
                load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
            )
        }
        "synth" => {
            let n: usize = s.get("synth_samples", None, 2000)?;
            let n_test: usize = s.get("synth_test_samples", None, 500)?;
            let dim: usize = s.get("synth_dim", None, 16)?;
            let classes: usize = s.get("synth_classes", None, 4)?;
            let noise: f64 = s.get("synth_noise", None, 0.0)?;
            let seed = mix_seed(s.root, fnv1a("data"));
            (
                synth_sphere(n, dim, classes, noise, seed)?,
                synth_sphere(n_test, dim, classes, 0.0, seed ^ 1)?,
            )
        }
        other => return Err(usage(format!("unknown data source `{other}` (mnist or synth)"))),
    };
    let cut = |d: Dataset, n: usize| if n == 0 || n >= d.len() { d } else { d.take(n) };
    Ok(Splits {
        train: cut(train, train_limit),
        test: cut(test, test_limit),
    })
}

/// Files written by a command, removed again if the command fails.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let p = self.dir.join(name);
        write_atomic(&p, bytes)?;
        self.written.push(p.clone());
        Ok(p)
    }

    pub fn cleanup(&mut self) {
        for p in self.written.drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}
