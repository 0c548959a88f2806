use super::{Matrix, Rng};

/// Kaiming normal, fan-in form: i.i.d. `N(0, 2/rows)`.
///
/// Under the `y = x·W` convention the fan-in of a `rows x cols` weight is
/// `rows`.
pub fn kaiming_init(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    gaussian_init(rng, rows, cols, (2.0 / rows as f64).sqrt())
}

/// i.i.d. `N(0, std²)`, row-major fill order. `std = 0` still consumes
/// the stream but yields an all-zero matrix.
pub fn gaussian_init(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_std(m: &Matrix) -> f64 {
        let n = m.len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        (m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    #[test]
    fn kaiming_fixture_seed_42() {
        let m = kaiming_init(&mut Rng::new(42), 1, 1);
        assert!((m.get(0, 0) - 1.2476883685683615).abs() < 1e-15);
    }

    #[test]
    fn kaiming_sample_std() {
        let m = kaiming_init(&mut Rng::new(1), 256, 256);
        let want = (2.0f64 / 256.0).sqrt();
        assert!((sample_std(&m) - want).abs() / want < 0.05);
    }

    #[test]
    fn gaussian_std_and_zero() {
        let m = gaussian_init(&mut Rng::new(2), 100, 100, 0.3);
        assert!((sample_std(&m) - 0.3).abs() / 0.3 < 0.05);
        let z = gaussian_init(&mut Rng::new(2), 4, 4, 0.0);
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_matrix() {
        assert_eq!(
            kaiming_init(&mut Rng::new(9), 5, 3),
            kaiming_init(&mut Rng::new(9), 5, 3)
        );
        assert_eq!(
            gaussian_init(&mut Rng::new(9), 5, 3, 0.1),
            gaussian_init(&mut Rng::new(9), 5, 3, 0.1)
        );
    }
}
