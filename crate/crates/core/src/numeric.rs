//! Small numerical kernels shared by the analysis modules: difference
//! stencils, Simpson quadrature, RK4 and SVD-based rank / null space.

use nalgebra::{DMatrix, DVector};

/// Fourth-order derivative estimate of uniformly spaced samples.
///
/// Five-point central stencil in the interior, one-sided fourth-order
/// stencils at the two points nearest each end. Needs at least 5 samples.
pub fn derivative4(values: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    let m = values.len();
    assert!(m >= 5, "fourth-order stencil needs at least 5 samples");
    let f = values;
    let c = 1.0 / (12.0 * h);
    (0..m)
        .map(|i| {
            let v = if i == 0 {
                -25.0 * &f[0] + 48.0 * &f[1] - 36.0 * &f[2] + 16.0 * &f[3] - 3.0 * &f[4]
            } else if i == 1 {
                -3.0 * &f[0] - 10.0 * &f[1] + 18.0 * &f[2] - 6.0 * &f[3] + &f[4]
            } else if i == m - 2 {
                3.0 * &f[m - 1] + 10.0 * &f[m - 2] - 18.0 * &f[m - 3] + 6.0 * &f[m - 4] - &f[m - 5]
            } else if i == m - 1 {
                25.0 * &f[m - 1] - 48.0 * &f[m - 2] + 36.0 * &f[m - 3] - 16.0 * &f[m - 4]
                    + 3.0 * &f[m - 5]
            } else {
                -&f[i + 2] + 8.0 * &f[i + 1] - 8.0 * &f[i - 1] + &f[i - 2]
            };
            v * c
        })
        .collect()
}

/// Scalar version of [`derivative4`].
pub fn derivative4_scalar(values: &[f64], h: f64) -> Vec<f64> {
    let vecs: Vec<DVector<f64>> = values
        .iter()
        .map(|&v| DVector::from_element(1, v))
        .collect();
    derivative4(&vecs, h).into_iter().map(|v| v[0]).collect()
}

/// Composite Simpson weights for `m + 1` uniform samples (`m` even).
pub fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    assert!(
        m >= 2 && m.is_multiple_of(2),
        "Simpson needs an even number of intervals"
    );
    (0..=m)
        .map(|i| {
            let k = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            k * h / 3.0
        })
        .collect()
}

/// Running integral from the first sample, fourth-order at every grid point.
///
/// Even points use composite Simpson. Odd points add the cubic rule
/// `h (9 f0 + 19 f1 - 5 f2 + f3) / 24` for one interval to the preceding
/// even point (mirrored at the last interval).
pub fn cumulative_simpson(values: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    let m = values.len() - 1;
    assert!(
        m >= 2 && m.is_multiple_of(2),
        "Simpson needs an even number of intervals"
    );
    let f = values;
    let dim = f[0].len();
    let mut out = vec![DVector::zeros(dim); m + 1];
    let mut acc = DVector::zeros(dim);
    for i in (0..m).step_by(2) {
        acc += (&f[i] + 4.0 * &f[i + 1] + &f[i + 2]) * (h / 3.0);
        out[i + 2] = acc.clone();
    }
    for i in (1..m).step_by(2) {
        out[i] = if m < 4 {
            &out[i - 1] + (5.0 * &f[i - 1] + 8.0 * &f[i] - &f[i + 1]) * (h / 12.0)
        } else if i + 2 <= m {
            &out[i - 1]
                + (9.0 * &f[i - 1] + 19.0 * &f[i] - 5.0 * &f[i + 1] + &f[i + 2]) * (h / 24.0)
        } else {
            &out[i + 1]
                - (9.0 * &f[i + 1] + 19.0 * &f[i] - 5.0 * &f[i - 1] + &f[i - 2]) * (h / 24.0)
        };
    }
    out
}

/// One classical Runge–Kutta step for `y' = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + 0.5 * h * &k1));
    let k3 = f(t + 0.5 * h, &(y + 0.5 * h * &k2));
    let k4 = f(t + h, &(y + h * &k3));
    y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Matrix counterpart of [`rk4_step`].
pub fn rk4_step_matrix<F>(f: &mut F, t: f64, y: &DMatrix<f64>, h: f64) -> DMatrix<f64>
where
    F: FnMut(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + 0.5 * h * &k1));
    let k3 = f(t + 0.5 * h, &(y + 0.5 * h * &k2));
    let k4 = f(t + h, &(y + h * &k3));
    y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol * sigma_max`.
pub fn numerical_rank(singular: &[f64], tol: f64) -> usize {
    let smax = singular.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    singular.iter().filter(|&&s| s > tol * smax).count()
}

/// Null space of a (typically tall) matrix with `cols` columns.
#[derive(Clone, Debug)]
pub struct NullSpace {
    /// Orthonormal basis vectors, each of length `cols`.
    pub basis: Vec<DVector<f64>>,
    /// Full singular spectrum in decreasing order, padded with zeros to `cols`.
    pub singular_values: Vec<f64>,
}

/// Null space of the row stack `rows` (each row of length `cols`) at
/// relative tolerance `tol`.
///
/// Tall stacks are first reduced to a square triangular factor by QR; this
/// preserves singular values and right singular vectors.
pub fn null_space(rows: &DMatrix<f64>, tol: f64) -> NullSpace {
    let cols = rows.ncols();
    let square = if rows.nrows() > cols {
        rows.clone().qr().r()
    } else {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, rows.nrows()).copy_from(rows);
        padded
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    let basis = order
        .iter()
        .zip(&sv)
        .filter(|(_, &s)| smax == 0.0 || s <= tol * smax)
        .map(|(&i, _)| canonical_sign(v_t.row(i).transpose()))
        .collect();
    NullSpace {
        basis,
        singular_values: sv,
    }
}

/// Flips the sign so the largest-magnitude component is positive.
pub fn canonical_sign(v: DVector<f64>) -> DVector<f64> {
    let k = v.iamax();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Even step count covering `len` at `density` steps per unit, at least 4.
pub fn grid_steps(len: f64, density: f64) -> usize {
    let raw = (len * density).ceil().max(4.0) as usize;
    raw + raw % 2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(f: impl Fn(f64) -> f64, m: usize, h: f64) -> Vec<DVector<f64>> {
        (0..=m)
            .map(|i| DVector::from_element(1, f(i as f64 * h)))
            .collect()
    }

    #[test]
    fn derivative_is_exact_on_quartics() {
        let h = 0.1;
        let f = |t: f64| 1.0 + t - 2.0 * t * t + 0.5 * t.powi(3) - t.powi(4);
        let df = |t: f64| 1.0 - 4.0 * t + 1.5 * t * t - 4.0 * t.powi(3);
        let d = derivative4(&vecs(f, 10, h), h);
        for (i, v) in d.iter().enumerate() {
            assert!((v[0] - df(i as f64 * h)).abs() < 1e-11, "{i}");
        }
    }

    #[test]
    fn simpson_weights_sum_to_length() {
        let w = simpson_weights(8, 0.25);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cumulative_simpson_is_exact_on_cubics() {
        let h = 0.2;
        let f = |t: f64| 3.0 * t * t - t.powi(3);
        let big_f = |t: f64| t.powi(3) - t.powi(4) / 4.0;
        let c = cumulative_simpson(&vecs(f, 6, h), h);
        for (i, v) in c.iter().enumerate() {
            assert!((v[0] - big_f(i as f64 * h)).abs() < 1e-13, "{i}");
        }
    }

    #[test]
    fn rk4_exponential() {
        let mut f = |_t: f64, y: &DVector<f64>| y.clone();
        let mut y = DVector::from_element(1, 1.0);
        let h = 0.01;
        for i in 0..100 {
            y = rk4_step(&mut f, i as f64 * h, &y, h);
        }
        assert!((y[0] - 1f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn null_space_of_tall_stack() {
        let rows = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 1.0, 2.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0],
        );
        let ns = null_space(&rows, 1e-8);
        assert_eq!(ns.basis.len(), 1);
        let b = &ns.basis[0];
        assert!((&rows * b).norm() < 1e-12);
        assert!((b.norm() - 1.0).abs() < 1e-12);
        assert_eq!(ns.singular_values.len(), 3);
    }

    #[test]
    fn null_space_of_wide_stack() {
        let rows = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let ns = null_space(&rows, 1e-8);
        assert_eq!(ns.basis.len(), 2);
    }

    #[test]
    fn steps_are_even() {
        assert_eq!(grid_steps(1.0, 401.0), 402);
        assert_eq!(grid_steps(0.001, 400.0), 4);
        assert_eq!(grid_steps(1.0, 400.0), 400);
    }
}
