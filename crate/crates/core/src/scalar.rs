//! Scalar abstraction shared by every numerical module.
//!
//! All spectral machinery is written against [`Real`], which is implemented
//! for `f32` and `f64`. The tolerances quoted throughout the crate documentation
//! assume `f64`; the `f32` instantiation is useful for quick exploratory runs.

use std::fmt::{Debug, Display};

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar usable by the FFT-backed grid.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for the finite constants used in this crate.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest exponent fed to `exp` before a weight is declared overflowing.
    #[inline]
    fn exp_clamp() -> Self {
        Self::lit(700.0).min(Self::max_value().ln() * Self::lit(0.98))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Japanese bracket `<x> = (1 + x^2)^(1/2)`.
#[inline]
pub fn bracket<S: Real>(x: S) -> S {
    (S::one() + x * x).sqrt()
}

#[inline]
pub fn c<S: Real>(re: S) -> Complex<S> {
    Complex::new(re, S::zero())
}

#[inline]
pub fn ci<S: Real>(im: S) -> Complex<S> {
    Complex::new(S::zero(), im)
}

#[inline]
pub fn is_finite_c<S: Real>(z: Complex<S>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// `k!` as a float (exact for `k <= 20` in `f64`).
pub fn factorial<S: Real>(k: usize) -> S {
    (1..=k).fold(S::one(), |acc, i| acc * S::from_usize_lossy(i))
}

/// `ln(k!)`.
pub fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Binomial coefficient in exact integer arithmetic.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// The rational whose decimal expansion is the shortest round-trip text of
/// `x`, so that `0.9` becomes exactly `9/10`.
pub fn exact_decimal(x: f64) -> Option<num_rational::BigRational> {
    use num_bigint::BigInt;
    if !x.is_finite() {
        return None;
    }
    let text = format!("{x}");
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10), frac.len());
    let r = num_rational::BigRational::new(digits, denom);
    Some(if neg { -r } else { r })
}
