//! Trainable-parameter accounting per adapter kind.

use std::fmt::Write as _;

use mapft_core::adapters::{param_count, AdapterKind};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountRow {
    pub kind: AdapterKind,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub params: usize,
    pub lora_params: usize,
}

impl CountRow {
    pub fn overhead(&self) -> usize {
        self.params - self.lora_params
    }

    pub fn ratio(&self) -> f64 {
        self.params as f64 / self.lora_params as f64
    }
}

pub fn count(kinds: &[AdapterKind], n: usize, m: usize, r: usize) -> Result<Vec<CountRow>> {
    if r == 0 || r > n.min(m) {
        return Err(CliError::Config(format!("r = {r} must be in 1..=min({n}, {m})")));
    }
    let lora_params = param_count(AdapterKind::PlainLora, n, m, r);
    Ok(kinds
        .iter()
        .map(|&kind| CountRow {
            kind,
            n,
            m,
            r,
            params: param_count(kind, n, m, r),
            lora_params,
        })
        .collect())
}

pub fn render(rows: &[CountRow]) -> String {
    let mut out = format!(
        "{:<6} {:>6} {:>6} {:>4} {:>10} {:>9} {:>10}\n",
        "kind", "n", "m", "r", "params", "overhead", "vs_lora"
    );
    for c in rows {
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>6} {:>4} {:>10} {:>9} {:>10.6}",
            c.kind.name(),
            c.n,
            c.m,
            c.r,
            c.params,
            format!("+{}", c.overhead()),
            c.ratio()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let rows = count(&AdapterKind::ALL, 256, 256, 8).unwrap();
        let get = |k| rows.iter().find(|r| r.kind == k).unwrap();
        assert_eq!(get(AdapterKind::PlainLora).params, 4096);
        assert_eq!(get(AdapterKind::Map).params, 4098);
        assert_eq!(get(AdapterKind::Map).overhead(), 2);
        assert_eq!(get(AdapterKind::Dora).params, 4352);
        assert_eq!(get(AdapterKind::Dora).overhead(), 256);
        let text = render(&rows);
        assert!(text.contains("+256"));
    }

    #[test]
    fn map_overhead_is_shape_independent() {
        let mut rng = mapft_core::linalg::Rng::new(8);
        for _ in 0..3 {
            let n = 1 + rng.below(300);
            let m = 1 + rng.below(300);
            let r = 1 + rng.below(n.min(m));
            assert_eq!(count(&[AdapterKind::Map], n, m, r).unwrap()[0].overhead(), 2);
        }
        assert!(count(&[AdapterKind::Map], 4, 4, 5).is_err());
    }
}
