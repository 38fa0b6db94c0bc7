//! Small-dimensional optimizers: golden-section search and BFGS with
//! finite-difference gradients, plus a central-difference Hessian.

use super::NumericsError;

/// Maximizes a unimodal `f` on `[a, b]`; returns `(argmax, max)`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn step_size(x: f64) -> f64 {
    1e-5 * x.abs().max(1e-2)
}

/// Central-difference gradient.
pub fn gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step_size(x[i]);
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian (row-major).
pub fn hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut h = vec![0.0; n * n];
    let mut w = x.to_vec();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|&v| 1e-4 * v.abs().max(1e-1)).collect();
    for i in 0..n {
        let hi = steps[i];
        w[i] = x[i] + hi;
        let fp = f(&w);
        w[i] = x[i] - hi;
        let fm = f(&w);
        w[i] = x[i];
        h[i * n + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut eval = |si: f64, sj: f64| {
                w[i] = x[i] + si * hi;
                w[j] = x[j] + sj * hj;
                let v = f(&w);
                w[i] = x[i];
                w[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// BFGS minimization with a backtracking Armijo line search.
pub fn bfgs_minimize(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    grad_tol: f64,
    max_iter: usize,
) -> Result<Minimum, NumericsError> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(NumericsError::domain("bfgs_minimize", fx));
    }
    let mut g = gradient(&f, &x);
    let mut hinv = vec![0.0; n * n];
    for i in 0..n {
        hinv[i * n + i] = 1.0;
    }
    for iter in 0..max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < grad_tol {
            return Ok(Minimum { x, value: fx, iterations: iter, gradient_norm: gnorm });
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // Lost descent; restart from steepest descent.
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            // No decrease possible at numerical precision: treat as converged
            // when the gradient is already small in relative terms.
            if gnorm < grad_tol * 1e3 {
                return Ok(Minimum { x, value: fx, iterations: iter, gradient_norm: gnorm });
            }
            return Err(NumericsError::NoConvergence { function: "bfgs_minimize", iterations: iter });
        };
        let g_new = gradient(&f, &x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j]
                        - hy[i] * s[j]
                        - s[i] * hy[j]);
                }
            }
        }
        let converged = (fx - f_new).abs() <= 1e-14 * fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if converged {
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < grad_tol * 1e3 {
                return Ok(Minimum { x, value: fx, iterations: iter + 1, gradient_norm: gnorm });
            }
        }
    }
    Err(NumericsError::NoConvergence { function: "bfgs_minimize", iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3).powi(2) + 2.0, -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = bfgs_minimize(f, &[-1.2, 1.0], 1e-8, 500).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 5.0 * x[1] * x[1];
        let h = hessian(&f, &[0.4, -1.0]);
        let expect = [6.0, 2.0, 2.0, 10.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
