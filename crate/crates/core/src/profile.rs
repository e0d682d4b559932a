//! Closed-form C² functions on `[0, 1]` used as observables and test inputs.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::{cos, ln, pow_nonneg, sin};

/// A function on `[0, 1]` with its first two derivatives.
pub trait Smooth: Sync {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// Small expression tree of closed forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Const(f64),
    /// `amp · cos(2π k x)`
    Cos { amp: f64, freq: f64 },
    /// `amp · sin(2π k x)`
    Sin { amp: f64, freq: f64 },
    /// `coef · x^exp` (exp ≥ 0)
    Pow { coef: f64, exp: f64 },
    /// `Σ c_k x^k`
    Poly(Vec<f64>),
    Sum(Vec<Profile>),
    Product(Box<Profile>, Box<Profile>),
}

impl Profile {
    pub fn cos2pi() -> Self {
        Profile::Cos { amp: 1.0, freq: 1.0 }
    }

    pub fn identity() -> Self {
        Profile::Poly(alloc::vec![0.0, 1.0])
    }

    pub fn monomial(exp: f64) -> Self {
        Profile::Pow { coef: 1.0, exp }
    }

    /// `F + c`
    pub fn shifted(self, c: f64) -> Self {
        Profile::Sum(alloc::vec![self, Profile::Const(c)])
    }

    /// True when the expression is a constant function.
    pub fn is_constant(&self) -> bool {
        match self {
            Profile::Const(_) => true,
            Profile::Cos { amp, freq } | Profile::Sin { amp, freq } => *amp == 0.0 || *freq == 0.0,
            Profile::Pow { coef, exp } => *coef == 0.0 || *exp == 0.0,
            Profile::Poly(c) => c.iter().skip(1).all(|&v| v == 0.0),
            Profile::Sum(terms) => terms.iter().all(Profile::is_constant),
            Profile::Product(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Largest `|F|` on a uniform sample of `[0, 1]`.
    pub fn sup_norm(&self, samples: usize) -> f64 {
        let m = samples.max(2);
        (0..m)
            .map(|k| self.value(k as f64 / (m - 1) as f64).abs())
            .fold(0.0, f64::max)
    }
}

fn pow_term(coef: f64, exp: f64, x: f64, order: u32) -> f64 {
    // d^k/dx^k x^e = e(e-1)..(e-k+1) x^{e-k}
    let mut factor = coef;
    for j in 0..order {
        factor *= exp - j as f64;
    }
    if factor == 0.0 {
        return 0.0;
    }
    let e = exp - order as f64;
    if e == 0.0 {
        factor
    } else if x <= 0.0 {
        if e > 0.0 {
            0.0
        } else {
            f64::INFINITY * factor.signum()
        }
    } else {
        factor * crate::math::exp(e * ln(x))
    }
}

impl Smooth for Profile {
    fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Const(c) => *c,
            Profile::Cos { amp, freq } => amp * cos(2.0 * PI * freq * x),
            Profile::Sin { amp, freq } => amp * sin(2.0 * PI * freq * x),
            Profile::Pow { coef, exp } => coef * pow_nonneg(x, *exp),
            Profile::Poly(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            Profile::Sum(terms) => terms.iter().map(|t| t.value(x)).sum(),
            Profile::Product(a, b) => a.value(x) * b.value(x),
        }
    }

    fn d1(&self, x: f64) -> f64 {
        match self {
            Profile::Const(_) => 0.0,
            Profile::Cos { amp, freq } => -amp * 2.0 * PI * freq * sin(2.0 * PI * freq * x),
            Profile::Sin { amp, freq } => amp * 2.0 * PI * freq * cos(2.0 * PI * freq * x),
            Profile::Pow { coef, exp } => pow_term(*coef, *exp, x, 1),
            Profile::Poly(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + k as f64 * ck),
            Profile::Sum(terms) => terms.iter().map(|t| t.d1(x)).sum(),
            Profile::Product(a, b) => a.d1(x) * b.value(x) + a.value(x) * b.d1(x),
        }
    }

    fn d2(&self, x: f64) -> f64 {
        match self {
            Profile::Const(_) => 0.0,
            Profile::Cos { amp, freq } => {
                let w = 2.0 * PI * freq;
                -amp * w * w * cos(w * x)
            }
            Profile::Sin { amp, freq } => {
                let w = 2.0 * PI * freq;
                -amp * w * w * sin(w * x)
            }
            Profile::Pow { coef, exp } => pow_term(*coef, *exp, x, 2),
            Profile::Poly(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + (k * (k - 1)) as f64 * ck),
            Profile::Sum(terms) => terms.iter().map(|t| t.d2(x)).sum(),
            Profile::Product(a, b) => {
                a.d2(x) * b.value(x) + 2.0 * a.d1(x) * b.d1(x) + a.value(x) * b.d2(x)
            }
        }
    }
}

impl<F: Smooth + ?Sized> Smooth for &F {
    fn value(&self, x: f64) -> f64 {
        (**self).value(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (**self).d1(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (**self).d2(x)
    }
}
