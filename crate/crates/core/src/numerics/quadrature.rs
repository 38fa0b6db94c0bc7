//! Gauss–Hermite rules and globally adaptive Gauss–Kronrod integration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    GaussHermite,
    AdaptiveInterval,
}

/// Fixed nodes and weights; for Gauss–Hermite the weight function is `e^{-x²}`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: QuadratureKind,
}

impl QuadratureRule {
    /// `Σ wᵢ f(xᵢ)`
    pub fn apply(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Orthonormal Hermite values `p_{m-1}(x), p_m(x)` for the weight `e^{-x²}`.
fn orthonormal_hermite(m: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..m {
        sum_sq += cur * cur;
        let next = (2.0 / (k as f64 + 1.0)).sqrt() * x * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (prev, cur, sum_sq)
}

/// Eigenvalues of the symmetric tridiagonal matrix with zero diagonal and
/// off-diagonal `off` (implicit QL with Wilkinson shifts).
fn tridiagonal_eigenvalues(off: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = off.len() + 1;
    let mut d = vec![0.0_f64; n];
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                return Err(NumericsError::NoConvergence {
                    function: "gauss_hermite",
                    iterations: iter,
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(d)
}

/// `m`-point Gauss–Hermite rule for `∫ f(x) e^{-x²} dx`.
///
/// Nodes come from the eigenvalues of the Jacobi matrix (Golub–Welsch), are
/// polished by Newton steps on the orthonormal recurrence, and the weights
/// are the Christoffel numbers `1 / Σ_k p_k(x)²`.
pub fn gauss_hermite(m: usize) -> Result<QuadratureRule, NumericsError> {
    if m == 0 || m > 200 {
        return Err(NumericsError::domain("gauss_hermite", m as f64));
    }
    let off: Vec<f64> = (1..m).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let mut nodes = tridiagonal_eigenvalues(&off)?;
    let mut weights = Vec::with_capacity(m);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pm1, pm, _) = orthonormal_hermite(m, *x);
            let deriv = (2.0 * m as f64).sqrt() * pm1;
            if deriv != 0.0 {
                *x -= pm / deriv;
            }
        }
        let (_, _, sum_sq) = orthonormal_hermite(m, *x);
        weights.push(1.0 / sum_sq);
    }
    // Exact symmetry.
    for i in 0..m / 2 {
        let j = m - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind: QuadratureKind::GaussHermite,
    })
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let s = f(center - dx) + f(center + dx);
        kron += w * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrationOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_intervals: 20_000,
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Maps an infinite or semi-infinite range onto a finite one.
enum Range {
    Finite,
    Upper(f64),
    Lower(f64),
    Whole,
}

/// Adaptive integral of `f` over `[points[0], points[last]]`, with the
/// interior points used as initial subdivision breakpoints. Either end may be
/// infinite.
pub fn integrate(
    mut f: impl FnMut(f64) -> f64,
    points: &[f64],
    opts: IntegrationOptions,
) -> Result<Integral, NumericsError> {
    assert!(points.len() >= 2, "need at least the two endpoints");
    let (a, b) = (points[0], points[points.len() - 1]);
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, evaluations: 0 });
    }
    if a > b {
        let rev: Vec<f64> = points.iter().rev().copied().collect();
        let r = integrate(f, &rev, opts)?;
        return Ok(Integral { value: -r.value, ..r });
    }
    let range = match (a.is_finite(), b.is_finite()) {
        (true, true) => Range::Finite,
        (true, false) => Range::Upper(a),
        (false, true) => Range::Lower(b),
        (false, false) => Range::Whole,
    };
    let to_t = |x: f64| -> f64 {
        match range {
            Range::Finite => x,
            Range::Upper(a0) => {
                if x.is_infinite() {
                    1.0
                } else {
                    let u = x - a0;
                    u / (1.0 + u)
                }
            }
            Range::Lower(b0) => {
                if x.is_infinite() {
                    -1.0
                } else {
                    let u = b0 - x;
                    -u / (1.0 + u)
                }
            }
            Range::Whole => {
                if x.is_infinite() {
                    x.signum()
                } else if x == 0.0 {
                    0.0
                } else {
                    // inverse of x = t / (1 - t²)
                    (2.0 * x) / (1.0 + (1.0 + 4.0 * x * x).sqrt())
                }
            }
        }
    };
    let mut g = |t: f64| -> f64 {
        let v = match range {
            Range::Finite => f(t),
            Range::Upper(a0) => {
                let om = 1.0 - t;
                f(a0 + t / om) / (om * om)
            }
            Range::Lower(b0) => {
                let op = 1.0 + t;
                f(b0 - (-t) / op) / (op * op)
            }
            Range::Whole => {
                let d = 1.0 - t * t;
                f(t / d) * (1.0 + t * t) / (d * d)
            }
        };
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evals = 0;
    let ts: Vec<f64> = points.iter().map(|&x| to_t(x)).collect();
    for w in ts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = kronrod15(&mut g, w[0], w[1]);
        evals += 15;
        total += v;
        total_err += e;
        heap.push(Piece { a: w[0], b: w[1], value: v, error: e });
    }
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if heap.len() >= opts.max_intervals {
            return Err(NumericsError::NoConvergence {
                function: "integrate",
                iterations: heap.len(),
            });
        }
        let piece = heap.pop().expect("non-empty");
        let mid = 0.5 * (piece.a + piece.b);
        if !(mid > piece.a && mid < piece.b) {
            // Interval cannot be split further; accept what we have.
            heap.push(piece);
            break;
        }
        let (v1, e1) = kronrod15(&mut g, piece.a, mid);
        let (v2, e2) = kronrod15(&mut g, mid, piece.b);
        evals += 30;
        total += v1 + v2 - piece.value;
        total_err += e1 + e2 - piece.error;
        heap.push(Piece { a: piece.a, b: mid, value: v1, error: e1 });
        heap.push(Piece { a: mid, b: piece.b, value: v2, error: e2 });
    }
    // Re-sum to shed accumulated rounding from the running updates.
    let value = heap.iter().map(|p| p.value).sum();
    let error = heap.iter().map(|p| p.error).sum();
    Ok(Integral { value, error, evaluations: evals })
}

/// `ln ∫ exp(g(x)) dx` over `[a, b]`.
///
/// `hints` should contain the location of every local maximum of `g` that
/// matters (for a sharply peaked integrand, at least the peak). The integrand
/// is rescaled by its largest sampled value before integrating.
pub fn integrate_ln(
    g: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    hints: &[(f64, f64)],
    opts: IntegrationOptions,
) -> Result<f64, NumericsError> {
    // Each hint is (location, width): breakpoints are laid out at several
    // width multiples so a narrow peak is resolved by short subintervals.
    let mut pts: Vec<f64> = Vec::new();
    for &(h, w) in hints {
        if !h.is_finite() {
            continue;
        }
        pts.push(h);
        if w.is_finite() && w > 0.0 {
            for m in [1.0, 3.0, 10.0, 30.0, 100.0] {
                pts.push(h - m * w);
                pts.push(h + m * w);
            }
        }
    }
    pts.retain(|p| *p > a && *p < b);
    let mut shift = f64::NEG_INFINITY;
    for &(h, _) in hints {
        if h > a && h < b {
            shift = shift.max(g(h));
        }
    }
    if a.is_finite() && b.is_finite() {
        for i in 1..256 {
            let x = a + (b - a) * i as f64 / 256.0;
            shift = shift.max(g(x));
        }
    }
    if !shift.is_finite() {
        return Err(NumericsError::domain("integrate_ln", shift));
    }
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let r = integrate(|x| (g(x) - shift).exp(), &pts, opts)?;
    if !(r.value > 0.0) {
        return Err(NumericsError::domain("integrate_ln", r.value));
    }
    Ok(r.value.ln() + shift)
}
