//! Command-line flags that override config file values.

use std::path::PathBuf;

use clap::Args;

use crate::config::{AdapterChoice, ModeChoice, OptimizerChoice, TaskKind, TrainConfig};
use crate::error::Result;

/// Every flag mirrors the config key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fill the step_ms column (makes metrics.csv timing-dependent).
    #[arg(long)]
    pub record_step_time: bool,

    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub a_star: Option<f64>,
    #[arg(long)]
    pub b_star: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,

    #[arg(long, value_enum)]
    pub kind: Option<AdapterChoice>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub lora_alpha: Option<f64>,
    #[arg(long)]
    pub beta_init: Option<f64>,
    #[arg(long)]
    pub b_init_std: Option<f64>,
    #[arg(long)]
    pub dropout_p: Option<f64>,

    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeChoice>,
    #[arg(long)]
    pub stepwise_period: Option<usize>,
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl ConfigArgs {
    /// True when any config value was given on the command line.
    pub fn any_set(&self) -> bool {
        let probe = TrainConfig::default();
        self.config.is_some() || self.record_step_time || self.apply(probe.clone()) != probe
    }

    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        set(&mut c.epochs, &self.epochs);
        set(&mut c.batch_size, &self.batch_size);
        c.record_step_time |= self.record_step_time;
        let t = &mut c.task;
        set(&mut t.kind, &self.task);
        set(&mut t.samples, &self.samples);
        set(&mut t.a_star, &self.a_star);
        set(&mut t.b_star, &self.b_star);
        set(&mut t.noise_std, &self.noise_std);
        set(&mut t.hidden, &self.hidden);
        set(&mut t.radius, &self.radius);
        let a = &mut c.adapter;
        set(&mut a.kind, &self.kind);
        set(&mut a.n, &self.n);
        set(&mut a.m, &self.m);
        set(&mut a.r, &self.r);
        set(&mut a.lora_alpha, &self.lora_alpha);
        set(&mut a.beta_init, &self.beta_init);
        set(&mut a.b_init_std, &self.b_init_std);
        set(&mut a.dropout_p, &self.dropout_p);
        let o = &mut c.optimizer;
        set(&mut o.kind, &self.optimizer);
        set(&mut o.lr, &self.lr);
        set(&mut o.adam_beta1, &self.adam_beta1);
        set(&mut o.adam_beta2, &self.adam_beta2);
        set(&mut o.eps, &self.eps);
        set(&mut o.weight_decay, &self.weight_decay);
        set(&mut o.warmup_steps, &self.warmup_steps);
        set(&mut o.mode, &self.mode);
        if self.stepwise_period.is_some() {
            o.stepwise_period = self.stepwise_period;
        }
        c
    }

    /// Defaults, then the config file, then flags, then `seed`; validated.
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let base = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let mut c = self.apply(base);
        set(&mut c.seed, &seed);
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[adapter]\nkind = \"dora\"\nr = 3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            r: Some(4),
            ..ConfigArgs::default()
        };
        let c = args.resolve(None).unwrap();
        assert_eq!((c.seed, c.adapter.kind, c.adapter.r), (3, AdapterChoice::Dora, 4));
        assert_eq!(args.resolve(Some(9)).unwrap().seed, 9);
        assert!(args.any_set());
        assert!(!ConfigArgs::default().any_set());
    }

    #[test]
    fn invalid_values_fail_resolution() {
        let args = ConfigArgs {
            r: Some(100),
            ..ConfigArgs::default()
        };
        assert_eq!(args.resolve(Some(1)).unwrap_err().exit_code(), 2);
    }
}
