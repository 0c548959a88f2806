use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{frob_norm, gaussian_init, Matrix, Rng};

/// Fraction of generated samples held out for validation.
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Matrix),
    Labels(Vec<usize>),
}

impl Targets {
    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(y.select_rows(idx)),
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Inputs with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Matrix,
    pub targets: Targets,
}

impl Split {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Split {
        Split {
            x: self.x.select_rows(idx),
            targets: self.targets.select(idx),
        }
    }

    fn range(&self, start: usize, end: usize) -> Split {
        let idx: Vec<usize> = (start..end).collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
}

impl Dataset {
    /// Splits the last `VAL_FRACTION` of the rows off as validation data.
    pub fn hold_out(all: Split) -> Dataset {
        let total = all.len();
        let n_val = (total as f64 * VAL_FRACTION).round() as usize;
        let n_train = total - n_val;
        Dataset {
            train: all.range(0, n_train),
            val: all.range(n_train, total),
        }
    }
}

/// Ground truth of the teacher–student task: the teacher weight is
/// `a_star·W_base/‖W_base‖_F + b_star·u_hat` with `‖u_hat‖_F = 1` and
/// `u_hat = u_left·u_right / ‖u_left·u_right‖_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTarget {
    pub w_base: Matrix,
    pub u_hat: Matrix,
    pub u_left: Matrix,
    pub u_right: Matrix,
    pub a_star: f64,
    pub b_star: f64,
    pub w_teacher: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherStudentSpec {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub a_star: f64,
    pub b_star: f64,
    pub samples: usize,
    pub noise_std: f64,
}

/// Planted-recovery regression task.
///
/// Draw order from `rng`: `W_base` (entries `N(0, 1/n)`), the two rank-`r`
/// factors, `X` (standard normal), then the noise.
pub fn gen_teacher_student(rng: &mut Rng, spec: &TeacherStudentSpec) -> Result<(Dataset, PlantedTarget)> {
    let TeacherStudentSpec {
        n,
        m,
        r,
        a_star,
        b_star,
        samples,
        noise_std,
    } = *spec;
    if r == 0 || r > n.min(m) {
        return Err(Error::Config(format!("rank {r} must be in 1..=min({n}, {m})")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
    }
    if samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let w_base = gaussian_init(rng, n, m, 1.0 / (n as f64).sqrt());
    let u_left = gaussian_init(rng, n, r, 1.0);
    let u_right = gaussian_init(rng, r, m, 1.0);
    let product = u_left.matmul(&u_right)?;
    let u_hat = product.scale(1.0 / frob_norm(&product));

    let mut w_teacher = w_base.scale(a_star / frob_norm(&w_base));
    w_teacher.axpy(b_star, &u_hat)?;

    let x = gaussian_init(rng, samples, n, 1.0);
    let mut y = x.matmul(&w_teacher)?;
    y.axpy(1.0, &gaussian_init(rng, samples, m, noise_std))?;

    let data = Dataset::hold_out(Split {
        x,
        targets: Targets::Regression(y),
    });
    Ok((
        data,
        PlantedTarget {
            w_base,
            u_hat,
            u_left,
            u_right,
            a_star,
            b_star,
            w_teacher,
        },
    ))
}

/// Default distance of the blob means from the origin (unit noise).
pub const BLOB_RADIUS: f64 = 4.0;

/// Balanced Gaussian blobs with unit covariance. Class `k` is centred on
/// `radius·(cos 2πk/K, sin 2πk/K, 0, …)`; sample `i` has label `i mod K`.
pub fn gen_gaussian_blobs(rng: &mut Rng, n: usize, classes: usize, samples: usize) -> Result<Dataset> {
    gen_gaussian_blobs_with_radius(rng, n, classes, samples, BLOB_RADIUS)
}

pub fn gen_gaussian_blobs_with_radius(
    rng: &mut Rng,
    n: usize,
    classes: usize,
    samples: usize,
    radius: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if n < 2 {
        return Err(Error::Config(format!("blob inputs need at least 2 dims, got {n}")));
    }
    if samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let mut x = gaussian_init(rng, samples, n, 1.0);
    for (i, &k) in labels.iter().enumerate() {
        let theta = 2.0 * PI * k as f64 / classes as f64;
        x.set(i, 0, x.get(i, 0) + radius * theta.cos());
        x.set(i, 1, x.get(i, 1) + radius * theta.sin());
    }
    Ok(Dataset::hold_out(Split {
        x,
        targets: Targets::Labels(labels),
    }))
}
