use crate::error::{Error, Result};

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then linear
/// decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    warmup_steps: usize,
    total_steps: usize,
    peak_lr: f64,
}

impl Schedule {
    pub fn new(warmup_steps: usize, total_steps: usize, peak_lr: f64) -> Result<Self> {
        if warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup_steps ({warmup_steps}) exceeds total_steps ({total_steps})"
            )));
        }
        if !(peak_lr > 0.0 && peak_lr.is_finite()) {
            return Err(Error::Config(format!(
                "peak learning rate must be positive, got {peak_lr}"
            )));
        }
        Ok(Self {
            warmup_steps,
            total_steps,
            peak_lr,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn peak_lr(&self) -> f64 {
        self.peak_lr
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Range {
                what: "step",
                value: step as f64,
                lo: 0.0,
                hi: self.total_steps as f64,
            });
        }
        let (w, t) = (self.warmup_steps as f64, self.total_steps as f64);
        let s = step as f64;
        Ok(if step < self.warmup_steps {
            self.peak_lr * (s / w)
        } else if self.total_steps == self.warmup_steps {
            self.peak_lr
        } else {
            self.peak_lr * ((t - s) / (t - w))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let s = Schedule::new(100, 1000, 1e-3).unwrap();
        assert!((s.lr(50).unwrap() - 5e-4).abs() < 1e-18);
        assert_eq!(s.lr(100).unwrap(), 1e-3);
        assert_eq!(s.lr(1000).unwrap(), 0.0);
        assert_eq!(s.lr(0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_step() {
        let s = Schedule::new(10, 20, 1.0).unwrap();
        assert!(matches!(s.lr(21), Err(Error::Range { .. })));
    }

    #[test]
    fn invalid_schedules() {
        assert!(Schedule::new(11, 10, 1.0).is_err());
        assert!(Schedule::new(1, 10, 0.0).is_err());
    }

    #[test]
    fn continuous_piecewise_linear_with_peak_max() {
        for (w, t) in [(0, 50), (7, 50), (50, 50), (13, 14)] {
            let s = Schedule::new(w, t, 2.0).unwrap();
            let lrs: Vec<f64> = (0..=t).map(|k| s.lr(k).unwrap()).collect();
            let max = lrs.iter().copied().fold(0.0, f64::max);
            assert_eq!(max, 2.0);
            // constant slope on each side of the kink means no jumps
            for k in 1..t {
                if k != w {
                    let left = lrs[k] - lrs[k - 1];
                    let right = lrs[k + 1] - lrs[k];
                    assert!((left - right).abs() < 1e-12, "w={w} t={t} k={k}");
                }
            }
        }
    }
}
