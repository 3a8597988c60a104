//! Truncated Taylor arithmetic in one variable.
//!
//! A [`Jet`] of order `N` stores `c_k = f^{(k)}(x0) / k!` for `k ≤ N`. All
//! operations are exact up to floating point rounding, which makes jets the
//! tool of choice for high derivatives of compactly supported Gevrey bumps
//! where spectral differentiation loses accuracy.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Jet<S> {
    pub c: Vec<S>,
}

impl<S: Real> Jet<S> {
    pub fn constant(v: S, order: usize) -> Self {
        let mut c = vec![S::zero(); order + 1];
        c[0] = v;
        Self { c }
    }

    /// The identity `x` expanded at `x0`.
    pub fn variable(x0: S, order: usize) -> Self {
        let mut c = vec![S::zero(); order + 1];
        c[0] = x0;
        if order > 0 {
            c[1] = S::one();
        }
        Self { c }
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> S {
        self.c[0]
    }

    /// `f^{(k)}(x0)` for every `k`.
    pub fn derivatives(&self) -> Vec<S> {
        let mut fact = S::one();
        self.c
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if k > 0 {
                    fact = fact * S::from_usize_lossy(k);
                }
                v * fact
            })
            .collect()
    }

    pub fn scale(&self, a: S) -> Self {
        Self { c: self.c.iter().map(|&v| v * a).collect() }
    }

    pub fn add_scalar(&self, a: S) -> Self {
        let mut c = self.c.clone();
        c[0] = c[0] + a;
        Self { c }
    }

    pub fn exp(&self) -> Self {
        // y' = y f'  ⇒  k y_k = Σ_{j=1..k} j f_j y_{k-j}
        let n = self.c.len();
        let mut y = vec![S::zero(); n];
        y[0] = self.c[0].exp();
        for k in 1..n {
            let mut acc = S::zero();
            for j in 1..=k {
                acc = acc + S::from_usize_lossy(j) * self.c[j] * y[k - j];
            }
            y[k] = acc / S::from_usize_lossy(k);
        }
        Self { c: y }
    }

    /// Natural log; requires a positive constant term.
    pub fn ln(&self) -> Self {
        // f y' = f'  ⇒  k y_k f_0 = k f_k - Σ_{j=1..k-1} j y_j f_{k-j}
        let n = self.c.len();
        let mut y = vec![S::zero(); n];
        y[0] = self.c[0].ln();
        for k in 1..n {
            let mut acc = S::from_usize_lossy(k) * self.c[k];
            for j in 1..k {
                acc = acc - S::from_usize_lossy(j) * y[j] * self.c[k - j];
            }
            y[k] = acc / (S::from_usize_lossy(k) * self.c[0]);
        }
        Self { c: y }
    }

    /// `f^q` for a positive constant term.
    pub fn powf(&self, q: S) -> Self {
        // f y' = q f' y  ⇒  k f_0 y_k = Σ_{j=1..k} (q j - (k - j)) f_j y_{k-j}
        let n = self.c.len();
        let mut y = vec![S::zero(); n];
        y[0] = self.c[0].powf(q);
        for k in 1..n {
            let mut acc = S::zero();
            for j in 1..=k {
                let w = q * S::from_usize_lossy(j) - S::from_usize_lossy(k - j);
                acc = acc + w * self.c[j] * y[k - j];
            }
            y[k] = acc / (S::from_usize_lossy(k) * self.c[0]);
        }
        Self { c: y }
    }

    pub fn recip(&self) -> Self {
        let n = self.c.len();
        let mut y = vec![S::zero(); n];
        y[0] = S::one() / self.c[0];
        for k in 1..n {
            let mut acc = S::zero();
            for j in 1..=k {
                acc = acc + self.c[j] * y[k - j];
            }
            y[k] = -acc / self.c[0];
        }
        Self { c: y }
    }
}

impl<S: Real> Add for &Jet<S> {
    type Output = Jet<S>;
    fn add(self, o: &Jet<S>) -> Jet<S> {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| *a + *b).collect() }
    }
}

impl<S: Real> Sub for &Jet<S> {
    type Output = Jet<S>;
    fn sub(self, o: &Jet<S>) -> Jet<S> {
        Jet { c: self.c.iter().zip(&o.c).map(|(a, b)| *a - *b).collect() }
    }
}

impl<S: Real> Neg for &Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        Jet { c: self.c.iter().map(|a| -*a).collect() }
    }
}

impl<S: Real> Mul for &Jet<S> {
    type Output = Jet<S>;
    fn mul(self, o: &Jet<S>) -> Jet<S> {
        let n = self.c.len().min(o.c.len());
        let mut c = vec![S::zero(); n];
        for (i, ci) in c.iter_mut().enumerate() {
            for j in 0..=i {
                *ci = *ci + self.c[j] * o.c[i - j];
            }
        }
        Jet { c }
    }
}

impl<S: Real> Div for &Jet<S> {
    type Output = Jet<S>;
    fn div(self, o: &Jet<S>) -> Jet<S> {
        self * &o.recip()
    }
}
