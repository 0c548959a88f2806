//! Run configuration: TOML schema, defaults, validation and hashing.
//!
//! Every section and field is optional in a config file; missing values
//! take the defaults below. The canonical form is the TOML re-serialization
//! of the parsed config, and the config hash is the SHA-256 of that text.
//!
//! ```toml
//! seed = 7
//! epochs = 3
//! batch_size = 16
//! record_step_time = false
//!
//! [task]
//! kind = "teacher-student"   # or "blobs"
//! samples = 2000
//! a_star = 4.0               # planted magnitude of the base direction
//! b_star = 1.5               # planted magnitude of the low-rank update
//! noise_std = 0.01
//! hidden = 16                # blobs: hidden width of the MLP
//! radius = 4.0               # blobs: distance of class means from 0
//!
//! [adapter]
//! kind = "map"               # "lora", "dora" or "map"
//! n = 16                     # input width
//! m = 12                     # output width (number of classes for blobs)
//! r = 2
//! lora_alpha = 16.0
//! beta_init = 1.0
//! b_init_std = 0.001
//! dropout_p = 0.0
//!
//! [optimizer]
//! kind = "adamw"             # or "sgd"
//! lr = 0.01
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! eps = 1e-8
//! weight_decay = 0.0
//! warmup_steps = 100
//! mode = "joint"             # or "stepwise"
//! stepwise_period = 100      # steps per phase; default one epoch
//! ```

use std::path::Path;

use clap::ValueEnum;
use mapft_core::adapters::{AdapterKind, InitOptions};
use mapft_core::optim::{Hyper, OptMode, OptimizerKind};
use mapft_core::tasks::VAL_FRACTION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TeacherStudent,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AdapterChoice {
    Lora,
    Dora,
    Map,
}

impl From<AdapterChoice> for AdapterKind {
    fn from(c: AdapterChoice) -> Self {
        match c {
            AdapterChoice::Lora => AdapterKind::PlainLora,
            AdapterChoice::Dora => AdapterKind::Dora,
            AdapterChoice::Map => AdapterKind::Map,
        }
    }
}

impl From<AdapterKind> for AdapterChoice {
    fn from(k: AdapterKind) -> Self {
        match k {
            AdapterKind::PlainLora => AdapterChoice::Lora,
            AdapterKind::Dora => AdapterChoice::Dora,
            AdapterKind::Map => AdapterChoice::Map,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    Joint,
    Stepwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub record_step_time: bool,
    pub task: TaskConfig,
    pub adapter: AdapterConfig,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub samples: usize,
    pub a_star: f64,
    pub b_star: f64,
    pub noise_std: f64,
    pub hidden: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub kind: AdapterChoice,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub lora_alpha: f64,
    pub beta_init: f64,
    pub b_init_std: f64,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerChoice,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub mode: ModeChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepwise_period: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 3,
            batch_size: 16,
            record_step_time: false,
            task: TaskConfig::default(),
            adapter: AdapterConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::TeacherStudent,
            samples: 2000,
            a_star: 4.0,
            b_star: 1.5,
            noise_std: 0.01,
            hidden: 16,
            radius: mapft_core::tasks::BLOB_RADIUS,
        }
    }
}

impl Default for AdapterConfig {
    fn default() -> Self {
        let init = InitOptions::default();
        Self {
            kind: AdapterChoice::Map,
            n: 16,
            m: 12,
            r: 2,
            lora_alpha: init.lora_alpha,
            beta_init: init.beta_init,
            b_init_std: init.b_init_std,
            dropout_p: init.dropout_p,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let h = Hyper::default();
        Self {
            kind: OptimizerChoice::Adamw,
            lr: 1e-2,
            adam_beta1: h.beta1,
            adam_beta2: h.beta2,
            eps: h.eps,
            weight_decay: h.weight_decay,
            warmup_steps: 100,
            mode: ModeChoice::Joint,
            stepwise_period: None,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be a positive finite number, got {v}")))
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Canonical TOML text; the config hash is taken over these bytes.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    pub fn kind(&self) -> AdapterKind {
        self.adapter.kind.into()
    }

    pub fn init_options(&self) -> InitOptions {
        InitOptions {
            rank: self.adapter.r,
            lora_alpha: self.adapter.lora_alpha,
            beta_init: self.adapter.beta_init,
            b_init_std: self.adapter.b_init_std,
            dropout_p: self.adapter.dropout_p,
        }
    }

    pub fn hyper(&self) -> Hyper {
        let o = &self.optimizer;
        Hyper {
            beta1: o.adam_beta1,
            beta2: o.adam_beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
        }
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer.kind {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adamw => OptimizerKind::AdamW,
        }
    }

    /// Layer widths of the model the task trains.
    pub fn dims(&self) -> Vec<usize> {
        let a = &self.adapter;
        match self.task.kind {
            TaskKind::TeacherStudent => vec![a.n, a.m],
            TaskKind::Blobs => vec![a.n, self.task.hidden, a.m],
        }
    }

    pub fn train_samples(&self) -> usize {
        let s = self.task.samples;
        s - (s as f64 * VAL_FRACTION).round() as usize
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_samples().div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }

    pub fn opt_mode(&self) -> OptMode {
        match self.optimizer.mode {
            ModeChoice::Joint => OptMode::Joint,
            ModeChoice::Stepwise => OptMode::Stepwise {
                period: self.optimizer.stepwise_period.unwrap_or_else(|| self.steps_per_epoch()),
            },
        }
    }

    /// Checks every field; nothing is computed from an unvalidated config.
    pub fn validate(&self) -> Result<()> {
        let (t, a, o) = (&self.task, &self.adapter, &self.optimizer);
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(bad("epochs and batch_size must be positive"));
        }
        if t.samples < 2 {
            return Err(bad(format!("task.samples must be at least 2, got {}", t.samples)));
        }
        if self.train_samples() == 0 || self.train_samples() == t.samples {
            return Err(bad("task.samples too small for a train/validation split"));
        }
        if !(t.noise_std >= 0.0 && t.noise_std.is_finite()) {
            return Err(bad(format!("task.noise_std must be >= 0, got {}", t.noise_std)));
        }
        if !(t.a_star.is_finite() && t.b_star.is_finite()) {
            return Err(bad("task.a_star and task.b_star must be finite"));
        }
        if t.kind == TaskKind::Blobs {
            if a.n < 2 || a.m < 2 {
                return Err(bad("blobs needs adapter.n >= 2 inputs and adapter.m >= 2 classes"));
            }
            if t.hidden == 0 {
                return Err(bad("task.hidden must be positive"));
            }
            if !t.radius.is_finite() {
                return Err(bad("task.radius must be finite"));
            }
        }
        if a.n == 0 || a.m == 0 {
            return Err(bad("adapter.n and adapter.m must be positive"));
        }
        let dims = self.dims();
        for w in dims.windows(2) {
            if a.r == 0 || a.r > w[0].min(w[1]) {
                return Err(bad(format!(
                    "adapter.r = {} must be in 1..=min({}, {})",
                    a.r, w[0], w[1]
                )));
            }
        }
        positive("adapter.lora_alpha", a.lora_alpha)?;
        positive("adapter.b_init_std", a.b_init_std)?;
        if !a.beta_init.is_finite() {
            return Err(bad("adapter.beta_init must be finite"));
        }
        if !(0.0..1.0).contains(&a.dropout_p) {
            return Err(bad(format!("adapter.dropout_p must be in [0, 1), got {}", a.dropout_p)));
        }
        positive("optimizer.lr", o.lr)?;
        positive("optimizer.eps", o.eps)?;
        for (name, b) in [("adam_beta1", o.adam_beta1), ("adam_beta2", o.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(format!("optimizer.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(bad("optimizer.weight_decay must be >= 0"));
        }
        if o.warmup_steps > self.total_steps() {
            return Err(bad(format!(
                "optimizer.warmup_steps = {} exceeds the {} total steps",
                o.warmup_steps,
                self.total_steps()
            )));
        }
        match o.mode {
            ModeChoice::Joint => {
                if o.stepwise_period.is_some() {
                    return Err(bad("optimizer.stepwise_period is only valid with mode = \"stepwise\""));
                }
            }
            ModeChoice::Stepwise => {
                if o.stepwise_period == Some(0) {
                    return Err(bad("optimizer.stepwise_period must be at least 1"));
                }
                if a.kind == AdapterChoice::Lora {
                    return Err(bad("stepwise mode needs magnitude parameters; plain LoRA has none"));
                }
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
