//! Flat `section.key=value` run configuration.
//!
//! Every key has a default; a config file or `--set` override only lists
//! what differs. [`RunConfig::to_text`] writes all keys in a fixed order and
//! is what the run hash is computed over.

use std::path::PathBuf;

use mmfed_core::dataio::SynthConfig;
use mmfed_core::diffusion::{build_schedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS, DEFAULT_TIMESTEPS};
use mmfed_core::fedsim::{Codec, FedConfig, ModalityMode, ModelConfig, OptimConfig, OptimizerKind, RankPolicy};
use mmfed_core::fusion::DEFAULT_LAMBDA;
use mmfed_core::net::Encoder;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Whether training runs across clients or on one process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    Federated,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CodecMode {
    Off,
    Lossless,
    Energy,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// FDSC1 file; the synthetic block is used when absent
    pub data_path: Option<PathBuf>,
    pub window: usize,
    pub synth: SynthConfig,
    pub mode: TrainMode,
    pub clients: usize,
    pub alpha: f64,
    pub interval: usize,
    pub epochs: usize,
    pub batch: usize,
    pub val_fraction: f64,
    pub modality: ModalityMode,
    pub encoder: Encoder,
    pub widths: Vec<usize>,
    pub heads: usize,
    pub factor: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub timesteps: Vec<usize>,
    pub optim: OptimConfig,
    pub lambda: f64,
    pub codec: CodecMode,
    pub theta: f64,
    pub cap: bool,
    pub rank: usize,
    pub tau: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_path: None,
            window: 8,
            synth: SynthConfig::default(),
            mode: TrainMode::Federated,
            clients: 4,
            alpha: 1.0,
            interval: 1,
            epochs: 300,
            batch: 64,
            val_fraction: 0.05,
            modality: ModalityMode::Fused,
            encoder: Encoder::Improved,
            widths: vec![32, 64],
            heads: 4,
            factor: 2,
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            timesteps: DEFAULT_TIMESTEPS.to_vec(),
            optim: OptimConfig::default(),
            lambda: DEFAULT_LAMBDA,
            codec: CodecMode::Energy,
            theta: 0.99,
            cap: true,
            rank: 16,
            tau: 0.5,
        }
    }
}

/// Canonical key order.
pub const KEYS: &[&str] = &[
    "seed",
    "data.path",
    "data.window",
    "synth.height",
    "synth.width",
    "synth.classes",
    "synth.channels_a",
    "synth.channels_b",
    "synth.noise",
    "synth.cells_per_class",
    "synth.margin",
    "fed.mode",
    "fed.clients",
    "fed.alpha",
    "fed.interval",
    "train.epochs",
    "train.batch",
    "train.val_fraction",
    "model.modality",
    "model.encoder",
    "model.widths",
    "model.heads",
    "model.factor",
    "schedule.steps",
    "schedule.beta_start",
    "schedule.beta_end",
    "schedule.timesteps",
    "optimizer.kind",
    "optimizer.lr",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "optimizer.gamma",
    "optimizer.decay_every",
    "loss.lambda",
    "codec.mode",
    "codec.theta",
    "codec.cap",
    "codec.rank",
    "fusion.tau",
];

fn bad(key: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}: {detail}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(key, format!("cannot parse `{v}`: {e}")))
}

fn list(key: &str, v: &str) -> CliResult<Vec<usize>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn check(ok: bool, key: &str, detail: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(bad(key, detail()))
    }
}

fn in_range<T: PartialOrd + std::fmt::Display + Copy>(key: &str, v: T, lo: T, hi: T) -> CliResult<()> {
    check(v >= lo && v <= hi, key, || format!("{v} outside [{lo}, {hi}]"))
}

impl RunConfig {
    /// Applies `key=value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.set_pair(line)
                .map_err(|e| CliError::Validation(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` pair.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "data.path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.window" => self.window = num(key, v)?,
            "synth.height" => self.synth.height = num(key, v)?,
            "synth.width" => self.synth.width = num(key, v)?,
            "synth.classes" => self.synth.classes = num(key, v)?,
            "synth.channels_a" => self.synth.channels_a = num(key, v)?,
            "synth.channels_b" => self.synth.channels_b = num(key, v)?,
            "synth.noise" => self.synth.noise = num(key, v)?,
            "synth.cells_per_class" => self.synth.cells_per_class = num(key, v)?,
            "synth.margin" => self.synth.margin = num(key, v)?,
            "fed.mode" => {
                self.mode = match v {
                    "federated" => TrainMode::Federated,
                    "local" => TrainMode::Local,
                    _ => return Err(bad(key, format!("`{v}` is not one of federated, local"))),
                }
            }
            "fed.clients" => self.clients = num(key, v)?,
            "fed.alpha" => self.alpha = num(key, v)?,
            "fed.interval" => self.interval = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.batch" => self.batch = num(key, v)?,
            "train.val_fraction" => self.val_fraction = num(key, v)?,
            "model.modality" => {
                self.modality =
                    ModalityMode::parse(v).ok_or_else(|| bad(key, format!("`{v}` is not one of fused, hsi, lidar")))?
            }
            "model.encoder" => {
                self.encoder = match v {
                    "improved" => Encoder::Improved,
                    "plain" => Encoder::Plain,
                    _ => return Err(bad(key, format!("`{v}` is not one of improved, plain"))),
                }
            }
            "model.widths" => self.widths = list(key, v)?,
            "model.heads" => self.heads = num(key, v)?,
            "model.factor" => self.factor = num(key, v)?,
            "schedule.steps" => self.steps = num(key, v)?,
            "schedule.beta_start" => self.beta_start = num(key, v)?,
            "schedule.beta_end" => self.beta_end = num(key, v)?,
            "schedule.timesteps" => self.timesteps = list(key, v)?,
            "optimizer.kind" => {
                self.optim.kind = match v {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(bad(key, format!("`{v}` is not one of sgd, adam"))),
                }
            }
            "optimizer.lr" => self.optim.lr = num(key, v)?,
            "optimizer.beta1" => self.optim.beta1 = num(key, v)?,
            "optimizer.beta2" => self.optim.beta2 = num(key, v)?,
            "optimizer.eps" => self.optim.eps = num(key, v)?,
            "optimizer.gamma" => self.optim.gamma = num(key, v)?,
            "optimizer.decay_every" => self.optim.decay_every = num(key, v)?,
            "loss.lambda" => self.lambda = num(key, v)?,
            "codec.mode" => {
                self.codec = match v {
                    "off" => CodecMode::Off,
                    "lossless" => CodecMode::Lossless,
                    "energy" => CodecMode::Energy,
                    "fixed" => CodecMode::Fixed,
                    _ => return Err(bad(key, format!("`{v}` is not one of off, lossless, energy, fixed"))),
                }
            }
            "codec.theta" => self.theta = num(key, v)?,
            "codec.cap" => self.cap = num(key, v)?,
            "codec.rank" => self.rank = num(key, v)?,
            "fusion.tau" => self.tau = num(key, v)?,
            _ => return Err(CliError::Validation(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical textual value of `key`.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "data.path" => self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "data.window" => self.window.to_string(),
            "synth.height" => self.synth.height.to_string(),
            "synth.width" => self.synth.width.to_string(),
            "synth.classes" => self.synth.classes.to_string(),
            "synth.channels_a" => self.synth.channels_a.to_string(),
            "synth.channels_b" => self.synth.channels_b.to_string(),
            "synth.noise" => self.synth.noise.to_string(),
            "synth.cells_per_class" => self.synth.cells_per_class.to_string(),
            "synth.margin" => self.synth.margin.to_string(),
            "fed.mode" => match self.mode {
                TrainMode::Federated => "federated",
                TrainMode::Local => "local",
            }
            .into(),
            "fed.clients" => self.clients.to_string(),
            "fed.alpha" => self.alpha.to_string(),
            "fed.interval" => self.interval.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.batch" => self.batch.to_string(),
            "train.val_fraction" => self.val_fraction.to_string(),
            "model.modality" => self.modality.as_str().into(),
            "model.encoder" => match self.encoder {
                Encoder::Improved => "improved",
                Encoder::Plain => "plain",
            }
            .into(),
            "model.widths" => join(&self.widths),
            "model.heads" => self.heads.to_string(),
            "model.factor" => self.factor.to_string(),
            "schedule.steps" => self.steps.to_string(),
            "schedule.beta_start" => self.beta_start.to_string(),
            "schedule.beta_end" => self.beta_end.to_string(),
            "schedule.timesteps" => join(&self.timesteps),
            "optimizer.kind" => match self.optim.kind {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam => "adam",
            }
            .into(),
            "optimizer.lr" => self.optim.lr.to_string(),
            "optimizer.beta1" => self.optim.beta1.to_string(),
            "optimizer.beta2" => self.optim.beta2.to_string(),
            "optimizer.eps" => self.optim.eps.to_string(),
            "optimizer.gamma" => self.optim.gamma.to_string(),
            "optimizer.decay_every" => self.optim.decay_every.to_string(),
            "loss.lambda" => self.lambda.to_string(),
            "codec.mode" => match self.codec {
                CodecMode::Off => "off",
                CodecMode::Lossless => "lossless",
                CodecMode::Energy => "energy",
                CodecMode::Fixed => "fixed",
            }
            .into(),
            "codec.theta" => self.theta.to_string(),
            "codec.cap" => self.cap.to_string(),
            "codec.rank" => self.rank.to_string(),
            "fusion.tau" => self.tau.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Every key in canonical order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("canonical key")))
            .collect()
    }

    /// First 12 hex digits of the SHA-256 of the canonical text without
    /// the seed line.
    pub fn hash(&self) -> String {
        let body: String = self.to_text().lines().filter(|l| !l.starts_with("seed=")).map(|l| format!("{l}\n")).collect();
        hex(&Sha256::digest(body.as_bytes()))[..12].to_string()
    }

    /// `<hash>-s<seed>`
    pub fn run_name(&self) -> String {
        format!("{}-s{}", self.hash(), self.seed)
    }

    /// Bounds on every field, each failure naming its key.
    pub fn validate(&self) -> CliResult<()> {
        let s = &self.synth;
        in_range("data.window", self.window, 1, 64)?;
        if self.data_path.is_none() {
            in_range("synth.height", s.height, self.window, 4096)?;
            in_range("synth.width", s.width, self.window, 4096)?;
        }
        in_range("synth.classes", s.classes, 2, 64)?;
        in_range("synth.channels_a", s.channels_a, 1, 1024)?;
        in_range("synth.channels_b", s.channels_b, 1, 1024)?;
        check(s.noise.is_finite(), "synth.noise", || "must be finite".into())?;
        in_range("synth.noise", s.noise, 0.0, 10.0)?;
        in_range("synth.cells_per_class", s.cells_per_class, 1, 64)?;
        check(s.margin.is_finite(), "synth.margin", || "must be finite".into())?;
        in_range("synth.margin", s.margin, 0.0, 64.0)?;
        if self.mode == TrainMode::Federated {
            in_range("fed.clients", self.clients, 1, 64)?;
            check(self.clients == 1 || self.clients.is_multiple_of(2), "fed.clients", || {
                format!("{} is neither 1 nor even (clients pair up by modality)", self.clients)
            })?;
        }
        check(self.alpha.is_finite(), "fed.alpha", || "must be finite".into())?;
        check(self.alpha > 0.0 && self.alpha <= 1e6, "fed.alpha", || format!("{} outside (0, 1e6]", self.alpha))?;
        in_range("fed.interval", self.interval, 1, 1_000_000)?;
        in_range("train.epochs", self.epochs, 0, 100_000)?;
        in_range("train.batch", self.batch, 1, 4096)?;
        check(self.val_fraction.is_finite(), "train.val_fraction", || "must be finite".into())?;
        in_range("train.val_fraction", self.val_fraction, 0.0, 0.5)?;
        check(!self.widths.is_empty() && self.widths.len() <= 8, "model.widths", || {
            format!("needs 1 to 8 stages, got {}", self.widths.len())
        })?;
        in_range("model.heads", self.heads, 1, 64)?;
        for &w in &self.widths {
            in_range("model.widths", w, 1, 1024)?;
            check(self.encoder == Encoder::Plain || w % self.heads == 0, "model.widths", || {
                format!("{w} is not divisible by model.heads={}", self.heads)
            })?;
        }
        in_range("model.factor", self.factor, 1, 8)?;
        in_range("schedule.steps", self.steps, 1, 100_000)?;
        check(self.beta_start > 0.0 && self.beta_start < 1.0, "schedule.beta_start", || {
            format!("{} outside (0, 1)", self.beta_start)
        })?;
        check(self.beta_end >= self.beta_start && self.beta_end < 1.0, "schedule.beta_end", || {
            format!("{} outside [schedule.beta_start, 1)", self.beta_end)
        })?;
        let ts = &self.timesteps;
        check(
            ts.first() == Some(&0) && ts.windows(2).all(|w| w[0] < w[1]) && ts.len() <= 64,
            "schedule.timesteps",
            || "must start at 0, increase strictly and hold at most 64 entries".into(),
        )?;
        check(ts.iter().all(|&t| t <= self.steps), "schedule.timesteps", || {
            format!("entries must not exceed schedule.steps={}", self.steps)
        })?;
        let o = &self.optim;
        check(o.lr.is_finite() && (0.0..=10.0).contains(&o.lr), "optimizer.lr", || format!("{} outside [0, 10]", o.lr))?;
        check((0.0..1.0).contains(&o.beta1), "optimizer.beta1", || format!("{} outside [0, 1)", o.beta1))?;
        check((0.0..1.0).contains(&o.beta2), "optimizer.beta2", || format!("{} outside [0, 1)", o.beta2))?;
        check(o.eps > 0.0 && o.eps <= 1.0, "optimizer.eps", || format!("{} outside (0, 1]", o.eps))?;
        check(o.gamma > 0.0 && o.gamma <= 1.0, "optimizer.gamma", || format!("{} outside (0, 1]", o.gamma))?;
        in_range("optimizer.decay_every", o.decay_every, 1, 1_000_000)?;
        check(self.lambda.is_finite() && (0.0..=1.0).contains(&self.lambda), "loss.lambda", || {
            format!("{} outside [0, 1]", self.lambda)
        })?;
        check(self.theta > 0.0 && self.theta <= 1.0, "codec.theta", || format!("{} outside (0, 1]", self.theta))?;
        in_range("codec.rank", self.rank, 1, 1 << 20)?;
        check((0.0..=1.0).contains(&self.tau), "fusion.tau", || format!("{} outside [0, 1]", self.tau))?;
        Ok(())
    }

    /// Synthetic scene parameters, seeded by the run seed.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn codec(&self) -> Codec {
        match self.codec {
            CodecMode::Off => Codec::Off,
            CodecMode::Lossless => Codec::Lossless,
            CodecMode::Energy => Codec::LowRank(RankPolicy::Energy {
                theta: self.theta,
                capped: self.cap,
            }),
            CodecMode::Fixed => Codec::LowRank(RankPolicy::Fixed(self.rank)),
        }
    }

    /// Model for a scene with `c_a`/`c_b` raw channels and `classes` classes.
    pub fn model_config(&self, c_a: usize, c_b: usize, classes: usize) -> CliResult<ModelConfig> {
        let mut m = ModelConfig::new(c_a, c_b, classes);
        m.timesteps = self.timesteps.clone();
        m.schedule = build_schedule(self.steps, self.beta_start, self.beta_end)
            .map_err(|e| bad("schedule", e))?;
        for b in [&mut m.hsi, &mut m.lidar] {
            b.widths = self.widths.clone();
            b.heads = self.heads;
            b.factor = self.factor;
            b.patch = self.window;
            b.encoder = self.encoder;
        }
        m.set_raw_channels(c_a, c_b);
        m.lambda = self.lambda;
        m.mode = self.modality;
        m.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        Ok(m)
    }

    pub fn fed_config(&self, c_a: usize, c_b: usize, classes: usize) -> CliResult<FedConfig> {
        let mut f = FedConfig::new(self.model_config(c_a, c_b, classes)?);
        f.seed = self.seed;
        f.clients = match self.mode {
            TrainMode::Federated => self.clients,
            TrainMode::Local => 1,
        };
        f.alpha = self.alpha;
        f.batch = self.batch;
        f.epochs = self.epochs;
        f.interval = self.interval;
        f.codec = self.codec();
        f.optim = self.optim;
        f.val_fraction = self.val_fraction;
        f.validate().map_err(|e| CliError::Validation(format!("training: {e}")))?;
        Ok(f)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
