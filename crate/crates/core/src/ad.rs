//! Forward-mode automatic differentiation.
//!
//! Geometry, kinematics and costs are written once against the [`Real`]
//! trait and evaluated either with plain `f64` or with [`DiffScalar`], which
//! carries directional derivatives along a fixed set of seed directions.
//!
//! Partials live in an inline array of [`MAX_SEED`] entries so that scalars
//! are `Copy` and never allocate; the active seed dimension is tracked
//! explicitly.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Largest number of seed directions a [`DiffScalar`] can carry.
pub const MAX_SEED: usize = 32;

/// Scalar abstraction shared by `f64` and [`DiffScalar`].
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// `atan2(self, x)`, i.e. the angle of the vector `(x, self)`.
    fn atan2(self, x: Self) -> Self;
    fn is_finite(&self) -> bool;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn one() -> Self {
        Self::cst(1.0)
    }

    fn powi2(self) -> Self {
        self * self
    }

    /// `ln(1 + exp(self))`, evaluated without overflow.
    fn softplus(self) -> Self {
        let v = self.value();
        if v > 0.0 {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    fn ln_1p(self) -> Self {
        (self + 1.0).ln()
    }

    /// Clamp onto `[lo, hi]`; the derivative is zero at and beyond the bounds.
    fn clamp_to(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        if v <= lo {
            Self::cst(lo)
        } else if v >= hi {
            Self::cst(hi)
        } else {
            self
        }
    }

    fn max_with(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }

    fn min_with(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
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
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
}

/// `min(1, max(0, x))` with one-sided zero derivative at the bounds.
pub fn clamp01<T: Real>(x: T) -> T {
    x.clamp_to(0.0, 1.0)
}

/// A value together with its derivatives along the active seed directions.
#[derive(Clone, Copy)]
pub struct DiffScalar {
    value: f64,
    dim: usize,
    partials: [f64; MAX_SEED],
}

impl DiffScalar {
    /// A constant: no active seed directions.
    pub fn constant(value: f64) -> Self {
        Self {
            value,
            dim: 0,
            partials: [0.0; MAX_SEED],
        }
    }

    /// The `index`-th independent variable of a `dim`-dimensional seed.
    pub fn variable(value: f64, index: usize, dim: usize) -> Self {
        assert!(dim <= MAX_SEED, "seed dimension {dim} exceeds {MAX_SEED}");
        assert!(index < dim);
        let mut partials = [0.0; MAX_SEED];
        partials[index] = 1.0;
        Self {
            value,
            dim,
            partials,
        }
    }

    /// Seed every entry of `values` as an independent variable.
    pub fn seed(values: &[f64]) -> Vec<Self> {
        let dim = values.len();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Self::variable(v, i, dim))
            .collect()
    }

    /// A value with explicitly given partials.
    pub fn with_partials(value: f64, partials: &[f64]) -> Self {
        assert!(partials.len() <= MAX_SEED);
        let mut p = [0.0; MAX_SEED];
        p[..partials.len()].copy_from_slice(partials);
        Self {
            value,
            dim: partials.len(),
            partials: p,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Derivatives along the active seed directions.
    pub fn partials(&self) -> &[f64] {
        &self.partials[..self.dim]
    }

    pub fn partial(&self, i: usize) -> f64 {
        if i < self.dim {
            self.partials[i]
        } else {
            0.0
        }
    }

    /// Chain rule for a scalar function with value `f` and derivative `df`.
    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        let mut out = Self {
            value: f,
            dim: self.dim,
            partials: [0.0; MAX_SEED],
        };
        for i in 0..self.dim {
            out.partials[i] = df * self.partials[i];
        }
        out
    }
}

impl fmt::Debug for DiffScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DiffScalar({} {:?})", self.value, self.partials())
    }
}

impl PartialEq for DiffScalar {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value
    }
}

impl Add for DiffScalar {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let dim = self.dim.max(rhs.dim);
        let mut partials = [0.0; MAX_SEED];
        for (i, p) in partials.iter_mut().enumerate().take(dim) {
            *p = self.partials[i] + rhs.partials[i];
        }
        Self {
            value: self.value + rhs.value,
            dim,
            partials,
        }
    }
}

impl Sub for DiffScalar {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let dim = self.dim.max(rhs.dim);
        let mut partials = [0.0; MAX_SEED];
        for (i, p) in partials.iter_mut().enumerate().take(dim) {
            *p = self.partials[i] - rhs.partials[i];
        }
        Self {
            value: self.value - rhs.value,
            dim,
            partials,
        }
    }
}

impl Mul for DiffScalar {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let dim = self.dim.max(rhs.dim);
        let mut partials = [0.0; MAX_SEED];
        for (i, p) in partials.iter_mut().enumerate().take(dim) {
            *p = self.partials[i] * rhs.value + self.value * rhs.partials[i];
        }
        Self {
            value: self.value * rhs.value,
            dim,
            partials,
        }
    }
}

impl Div for DiffScalar {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let dim = self.dim.max(rhs.dim);
        let inv = 1.0 / rhs.value;
        let q = self.value * inv;
        let mut partials = [0.0; MAX_SEED];
        for (i, p) in partials.iter_mut().enumerate().take(dim) {
            *p = (self.partials[i] - q * rhs.partials[i]) * inv;
        }
        Self {
            value: q,
            dim,
            partials,
        }
    }
}

impl Neg for DiffScalar {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl Add<f64> for DiffScalar {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for DiffScalar {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for DiffScalar {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.chain(self.value * rhs, rhs)
    }
}

impl Div<f64> for DiffScalar {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.chain(self.value / rhs, 1.0 / rhs)
    }
}

impl AddAssign for DiffScalar {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for DiffScalar {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for DiffScalar {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Real for DiffScalar {
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        // d/dx sqrt(x) is unbounded at 0; the subgradient 0 keeps callers finite.
        let ds = if s > 0.0 { 0.5 / s } else { 0.0 };
        self.chain(s, ds)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.value.ln_1p(), 1.0 / (1.0 + self.value))
    }
    fn sin(self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }
    fn atan2(self, x: Self) -> Self {
        let y = self;
        let r2 = y.value * y.value + x.value * x.value;
        let dim = y.dim.max(x.dim);
        let mut partials = [0.0; MAX_SEED];
        if r2 > 0.0 {
            for (i, p) in partials.iter_mut().enumerate().take(dim) {
                *p = (x.value * y.partials[i] - y.value * x.partials[i]) / r2;
            }
        }
        Self {
            value: y.value.atan2(x.value),
            dim,
            partials,
        }
    }
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.partials().iter().all(|p| p.is_finite())
    }
}
