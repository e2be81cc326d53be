//! Forward-mode automatic differentiation on a small fixed number of
//! parameters.
//!
//! A [`Dual<N>`] carries a value together with N partial derivatives, so one
//! evaluation of a generic function yields its gradient with respect to N
//! seeded inputs. The projection/warping/loss pipeline is written against the
//! [`Real`] trait and can therefore run either on plain `f64` or on duals
//! seeded on the six pose parameters.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by `f64` and [`Dual`].
///
/// Branching (`max`, comparisons, bounds checks) is always decided on the
/// primal value, so a dual evaluation follows exactly the same code path as
/// the plain one.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal (derivative-free) value.
    fn value(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// Select the larger operand by primal value.
    fn max(self, other: Self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn is_finite(self) -> bool {
        self.value().is_finite()
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
}

/// Value plus N partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { re: v, d: [0.0; N] }
    }

    /// The `lane`-th independent variable: value `v`, derivative 1 in its
    /// own lane, 0 elsewhere.
    pub fn variable(v: f64, lane: usize) -> Self {
        let mut d = [0.0; N];
        d[lane] = 1.0;
        Dual { re: v, d }
    }

    fn map2(self, rhs: Self, re: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = f(self.d[i], rhs.d[i]);
        }
        Dual { re, d }
    }

    fn scale_d(self, re: f64, s: f64) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * s;
        }
        Dual { re, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.map2(rhs, self.re + rhs.re, |a, b| a + b)
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.map2(rhs, self.re - rhs.re, |a, b| a - b)
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * rhs.re + rhs.d[i] * self.re;
        }
        Dual { re: self.re * rhs.re, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - re * rhs.d[i]) * inv;
        }
        Dual { re, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_d(-self.re, -1.0)
    }
}

impl<const N: usize> PartialOrd for Dual<N> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<const N: usize> Real for Dual<N> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn abs(self) -> Self {
        // Subgradient 0 at the kink.
        let s = if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.scale_d(self.re.abs(), s)
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.scale_d(r, 0.5 / r)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.scale_d(e, e)
    }
    fn ln(self) -> Self {
        self.scale_d(self.re.ln(), 1.0 / self.re)
    }
    fn sin(self) -> Self {
        self.scale_d(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.scale_d(self.re.cos(), -self.re.sin())
    }
    fn max(self, other: Self) -> Self {
        if self.re >= other.re {
            self
        } else {
            other
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    type D3 = Dual<3>;

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn arithmetic_matches_finite_differences() {
        let g = |x: f64| (x * x + 3.0 * x).sin() / (x.exp() + 1.0);
        let gd = |x: D3| {
            let three = D3::constant(3.0);
            let one = D3::constant(1.0);
            (x * x + three * x).sin() / (x.exp() + one)
        };
        for &x in &[0.3, 1.7, -0.9] {
            let d = gd(D3::variable(x, 0));
            assert_relative_eq!(d.re, g(x), max_relative = 1e-12);
            assert_relative_eq!(d.d[0], fd(g, x, 1e-6), max_relative = 1e-7);
            assert_eq!(d.d[1], 0.0);
        }
    }

    #[test]
    fn lanes_are_independent() {
        // f(x, y) = x * y + sqrt(y)
        let x = D3::variable(2.0, 0);
        let y = D3::variable(9.0, 1);
        let f = x * y + y.sqrt();
        assert_relative_eq!(f.re, 21.0);
        assert_relative_eq!(f.d[0], 9.0);
        assert_relative_eq!(f.d[1], 2.0 + 0.5 / 3.0);
        assert_eq!(f.d[2], 0.0);
    }

    #[test]
    fn abs_ln_max_chain() {
        let x = D3::variable(-2.5, 0);
        let y = x.abs().ln();
        assert_relative_eq!(y.re, 2.5f64.ln());
        assert_relative_eq!(y.d[0], -1.0 / 2.5);

        let a = D3::variable(1.0, 0);
        let b = D3::variable(2.0, 1);
        let m = a.max(b);
        assert_eq!(m.re, 2.0);
        assert_eq!(m.d, [0.0, 1.0, 0.0]);
    }
}
