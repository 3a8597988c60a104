//! Dense O(n²)–O(n³) reference constructions used only as test oracles:
//! naive DFT differentiation matrices, Kohn-Nirenberg quantization matrices
//! and a scaling-and-squaring Padé matrix exponential.

pub use nalgebra;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Frequencies `2πk/L` in FFT order; the Nyquist index maps to `-πn/L`.
pub fn frequencies(n: usize, length: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let idx = if k < n / 2 { k as i64 } else { k as i64 - n as i64 };
            2.0 * PI * idx as f64 / length
        })
        .collect()
}

/// Sample points `x_min + j L / n`.
pub fn points(n: usize, x_min: f64, length: f64) -> Vec<f64> {
    (0..n).map(|j| x_min + j as f64 * length / n as f64).collect()
}

/// Dense Kohn-Nirenberg matrix `(1/n) Σ_k p(x_j, ξ_k) e^{i ξ_k (x_j - x_l)}`,
/// with the Nyquist bin dropped when `drop_nyquist` is set.
pub fn kn_matrix(
    n: usize,
    x_min: f64,
    length: f64,
    drop_nyquist: bool,
    p: impl Fn(f64, f64) -> C64,
) -> DMatrix<C64> {
    let xi = frequencies(n, length);
    let x = points(n, x_min, length);
    DMatrix::from_fn(n, n, |j, l| {
        let mut acc = C64::new(0.0, 0.0);
        for (k, &w) in xi.iter().enumerate() {
            if drop_nyquist && k == n / 2 {
                continue;
            }
            // x_j - x_l = (j - l) L / n exactly, which keeps the phase accurate
            let th = w * (j as f64 - l as f64) * length / n as f64;
            acc += p(x[j], w) * C64::from_polar(1.0, th);
        }
        acc / n as f64
    })
}

/// Matrix of `D^m`, `D = -i ∂`, with the Nyquist bin dropped for odd `m`.
pub fn derivative_matrix(n: usize, x_min: f64, length: f64, m: u32) -> DMatrix<C64> {
    kn_matrix(n, x_min, length, m % 2 == 1, |_, xi| C64::new(xi.powi(m as i32), 0.0))
}

/// Generator `G` of `∂_t u = G u` for `D_t u + a_p D^p u + Σ_j a_{p-j}(x) D^{p-j} u = 0`
/// with time independent coefficients; `lower` holds `(j, a_{p-j})`.
pub fn evolution_generator(
    n: usize,
    x_min: f64,
    length: f64,
    p: u32,
    a_p: f64,
    lower: &[(usize, &dyn Fn(f64) -> C64)],
) -> DMatrix<C64> {
    let x = points(n, x_min, length);
    let mut l = derivative_matrix(n, x_min, length, p) * C64::new(a_p, 0.0);
    for (j, a) in lower {
        let d = derivative_matrix(n, x_min, length, p - *j as u32);
        let diag = DMatrix::from_fn(n, n, |r, c| if r == c { a(x[r]) } else { C64::new(0.0, 0.0) });
        l += diag * d;
    }
    l * C64::new(0.0, -1.0)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<C64>) -> f64 {
    (0..a.ncols()).map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `e^A` by scaling and squaring with the degree 13 Padé approximant.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(0.5f64.powi(s), 0.0);
    let b: Vec<C64> = PADE13.iter().map(|&v| C64::new(v, 0.0)).collect();
    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den.lu().solve(&num).expect("Padé denominator is invertible");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Applies a dense matrix to a sample vector.
pub fn apply(m: &DMatrix<C64>, u: &[C64]) -> Vec<C64> {
    let v = nalgebra::DVector::from_column_slice(u);
    (m * v).iter().copied().collect()
}
