//! Per-step wall time of each adapter kind at one shape.

use std::fmt::Write as _;

use mapft_core::adapters::{init_adapter, AdapterKind, FrozenBase, InitOptions};
use mapft_core::linalg::{gaussian_init, Rng};
use mapft_core::optim::{run_phase, Hyper, OptMode, OptimizerKind, OptimizerState, PhaseState, Schedule};
use mapft_core::tasks::{Model, Split, Targets};

use crate::error::{CliError, Result};

/// Steps between switching kinds, so slow drifts in machine load hit
/// every kind alike.
const ROUND: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub batch: usize,
    pub warmup: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n: 512,
            m: 512,
            r: 8,
            batch: 16,
            warmup: 20,
            steps: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub kind: AdapterKind,
    pub median_ms: f64,
    pub samples: usize,
}

struct Bencher {
    kind: AdapterKind,
    model: Model,
    batch: Split,
    state: PhaseState,
    times: Vec<f64>,
}

impl Bencher {
    fn new(kind: AdapterKind, o: &BenchOptions) -> Result<Self> {
        let mut rng = Rng::new(o.seed);
        let base = FrozenBase::new(gaussian_init(&mut rng, o.n, o.m, 1.0 / (o.n as f64).sqrt()))?;
        let opts = InitOptions {
            rank: o.r,
            ..InitOptions::default()
        };
        let model = Model::single(init_adapter(kind, &mut rng, base, &opts)?);
        let batch = Split {
            x: gaussian_init(&mut rng, o.batch, o.n, 1.0),
            targets: Targets::Regression(gaussian_init(&mut rng, o.batch, o.m, 1.0)),
        };
        let total = o.warmup + o.steps;
        let opt = OptimizerState::new(OptimizerKind::AdamW, Hyper::default())?;
        let schedule = Schedule::new(0, total, 1e-4)?;
        let mut state = PhaseState::new(opt, schedule, OptMode::Joint, o.batch, o.seed, Rng::new(o.seed))?;
        state.record_time = true;
        Ok(Self {
            kind,
            model,
            batch,
            state,
            times: Vec::new(),
        })
    }

    fn steps(&mut self, k: usize, keep: bool) -> Result<()> {
        let rows = run_phase(&mut self.model, &self.batch, &mut self.state, k)?;
        if keep {
            self.times.extend(rows.iter().filter_map(|r| r.step_ms));
        }
        Ok(())
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times a full training step (forward, backward, AdamW update) for every
/// kind. Warmup steps are run first and discarded.
pub fn run(o: &BenchOptions) -> Result<Vec<BenchRow>> {
    if o.steps == 0 || o.batch == 0 || o.r == 0 || o.r > o.n.min(o.m) {
        return Err(CliError::Config(format!(
            "bench needs steps > 0, batch > 0 and 1 <= r <= min(n, m); got {o:?}"
        )));
    }
    let mut benches = AdapterKind::ALL
        .iter()
        .map(|&k| Bencher::new(k, o))
        .collect::<Result<Vec<_>>>()?;
    for b in &mut benches {
        b.steps(o.warmup, false)?;
    }
    let mut done = 0;
    while done < o.steps {
        let k = ROUND.min(o.steps - done);
        for b in &mut benches {
            b.steps(k, true)?;
        }
        done += k;
    }
    Ok(benches
        .iter()
        .map(|b| BenchRow {
            kind: b.kind,
            median_ms: median(&b.times),
            samples: b.times.len(),
        })
        .collect())
}

pub fn render(rows: &[BenchRow]) -> String {
    let lora = rows
        .iter()
        .find(|r| r.kind == AdapterKind::PlainLora)
        .map(|r| r.median_ms);
    let mut out = format!("{:<6} {:>12} {:>10} {:>8}\n", "kind", "median_ms", "vs_lora", "steps");
    for r in rows {
        let ratio = lora.map_or(String::from("-"), |l| format!("{:.3}", r.median_ms / l));
        let _ = writeln!(
            out,
            "{:<6} {:>12.4} {:>10} {:>8}",
            r.kind.name(),
            r.median_ms,
            ratio,
            r.samples
        );
    }
    out
}
