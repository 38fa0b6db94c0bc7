//! Dense row-major matrices just large enough for proposal covariances and
//! small Hessians (a few hundred dimensions at most).

use super::NumericsError;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(matrix: &[f64], n: usize) -> Result<Self, NumericsError> {
        assert_eq!(matrix.len(), n * n);
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = matrix[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(NumericsError::NotPositiveDefinite);
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(Self { n, lower: l })
    }

    /// Factor after adding increasing multiples of the mean diagonal until
    /// the matrix is positive definite.
    pub fn new_jittered(matrix: &[f64], n: usize, max_tries: usize) -> Result<Self, NumericsError> {
        if let Ok(c) = Self::new(matrix, n) {
            return Ok(c);
        }
        let mean_diag = (0..n).map(|i| matrix[i * n + i].abs()).sum::<f64>() / n.max(1) as f64;
        let mut jitter = 1e-10 * mean_diag.max(1e-300);
        let mut work = matrix.to_vec();
        for _ in 0..max_tries {
            for i in 0..n {
                work[i * n + i] = matrix[i * n + i] + jitter;
            }
            if let Ok(c) = Self::new(&work, n) {
                return Ok(c);
            }
            jitter *= 10.0;
        }
        Err(NumericsError::NotPositiveDefinite)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `L z`
    pub fn mul_lower(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = (0..=i).map(|k| self.lower[i * n + k] * z[k]).sum();
        }
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves `A x = b` where `A = L Lᵀ`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        self.solve_lower_in_place(&mut y);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }

    /// `ln det A`
    pub fn ln_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.lower[i * self.n + i].ln()).sum::<f64>()
    }
}

/// Mean and covariance of the rows of a row-major `rows × dim` sample.
pub fn mean_and_covariance(samples: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = samples.len() / dim;
    let mut mean = vec![0.0; dim];
    for r in samples.chunks_exact(dim) {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = vec![0.0; dim * dim];
    for r in samples.chunks_exact(dim) {
        for i in 0..dim {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[i * dim + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (rows.max(2) - 1) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve() {
        let a = [4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0];
        let c = Cholesky::new(&a, 3).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let inv = c.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        // det = 4*(2*3-0.25) - 2*(6-0.3) + 0.6*(1-1.2)
        let det: f64 = 4.0 * 5.75 - 2.0 * 5.7 + 0.6 * (-0.2);
        assert!((c.ln_det() - det.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_and_jitters_singular() {
        assert!(Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
        let singular = [1.0, 1.0, 1.0, 1.0];
        assert!(Cholesky::new(&singular, 2).is_err());
        assert!(Cholesky::new_jittered(&singular, 2, 20).is_ok());
    }

    #[test]
    fn sample_moments() {
        let s = [1.0, 2.0, 3.0, 6.0, 5.0, 10.0];
        let (m, c) = mean_and_covariance(&s, 2);
        assert_eq!(m, vec![3.0, 6.0]);
        assert!((c[0] - 4.0).abs() < 1e-12);
        assert!((c[1] - 8.0).abs() < 1e-12);
        assert!((c[3] - 16.0).abs() < 1e-12);
    }
}
