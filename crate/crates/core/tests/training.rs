#![allow(clippy::needless_range_loop)]

use mapft_core::adapters::{AdapterKind, InitOptions};
use mapft_core::linalg::{Matrix, Rng};
use mapft_core::optim::{run_phase, Hyper, OptMode, OptimizerKind, OptimizerState, PhaseState, Schedule};
use mapft_core::tasks::{gen_gaussian_blobs, LossKind, Model, Targets};

/// Solves `M z = v` by Gaussian elimination with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut v: Vec<f64>) -> Vec<f64> {
    let n = v.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        v.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut z = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row][k] * z[k]).sum();
        z[row] = (v[row] - tail) / m[row][row];
    }
    z
}

#[test]
fn separated_blobs_admit_a_linear_probe() {
    let data = gen_gaussian_blobs(&mut Rng::new(12), 5, 2, 600).unwrap();
    let (x, Targets::Labels(labels)) = (&data.train.x, &data.train.targets) else {
        panic!()
    };
    // least squares on [x, 1] against ±1 targets
    let d = x.cols() + 1;
    let feat = |i: usize, k: usize| if k < x.cols() { x.get(i, k) } else { 1.0 };
    let target = |i: usize| if labels[i] == 1 { 1.0 } else { -1.0 };
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for i in 0..x.rows() {
        for a in 0..d {
            rhs[a] += feat(i, a) * target(i);
            for b in 0..d {
                gram[a][b] += feat(i, a) * feat(i, b);
            }
        }
    }
    let w = solve(gram, rhs);
    let hits = (0..x.rows())
        .filter(|&i| {
            let score: f64 = (0..d).map(|k| w[k] * feat(i, k)).sum();
            (score > 0.0) == (labels[i] == 1)
        })
        .count();
    assert!(hits as f64 / x.rows() as f64 >= 0.99, "{hits}/{}", x.rows());
}

#[test]
fn mlp_learns_blobs_with_every_adapter() {
    for kind in AdapterKind::ALL {
        let data = gen_gaussian_blobs(&mut Rng::new(3), 6, 3, 600).unwrap();
        let opts = InitOptions {
            rank: 2,
            ..InitOptions::default()
        };
        let mut model = Model::mlp(kind, &mut Rng::new(4), &[6, 10, 3], &opts, LossKind::CrossEntropy).unwrap();
        let before = model.loss(&data.val).unwrap();
        let opt = OptimizerState::new(OptimizerKind::AdamW, Hyper::default()).unwrap();
        let steps = 300;
        let schedule = Schedule::new(30, steps, 1e-2).unwrap();
        let mut state = PhaseState::new(opt, schedule, OptMode::Joint, 16, 5, Rng::new(6)).unwrap();
        run_phase(&mut model, &data.train, &mut state, steps).unwrap();
        let after = model.loss(&data.val).unwrap();
        let acc = model.accuracy(&data.val).unwrap().unwrap();
        assert!(after < 0.5 * before, "{kind}: {before} -> {after}");
        assert!(acc > 0.9, "{kind}: accuracy {acc}");
    }
}

#[test]
fn eval_predictions_ignore_dropout() {
    let opts = InitOptions {
        rank: 2,
        dropout_p: 0.5,
        ..InitOptions::default()
    };
    let model = Model::mlp(AdapterKind::Map, &mut Rng::new(1), &[4, 5, 2], &opts, LossKind::Mse).unwrap();
    let x = Matrix::filled(3, 4, 0.3);
    assert_eq!(model.predict(&x).unwrap(), model.predict(&x).unwrap());
}
