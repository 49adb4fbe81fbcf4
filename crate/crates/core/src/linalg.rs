//! Small dense 2x2 kernels used by the per-mode companion calculus.
//!
//! Everything here is closed-form; there is no iteration anywhere.

use num_complex::Complex;

use crate::real::Real;

pub type Vec2<T> = [T; 2];

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> Mat2<T> {
    pub fn new(a: T, b: T, c: T, d: T) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub fn identity() -> Self {
        Mat2::new(T::one(), T::zero(), T::zero(), T::one())
    }

    pub fn zero() -> Self {
        Mat2::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    pub fn diag(a: T, d: T) -> Self {
        Mat2::new(a, T::zero(), T::zero(), d)
    }

    pub fn scale(self, s: T) -> Self {
        Mat2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    pub fn add(self, o: Self) -> Self {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.scale(-T::one()))
    }

    pub fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn mul_vec(self, v: Vec2<T>) -> Vec2<T> {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn transpose(self) -> Self {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn det(self) -> T {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(self) -> Self {
        let d = self.det();
        Mat2::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        )
    }

    pub fn symmetrize(self) -> Self {
        let half = T::cast(0.5);
        let off = (self.m[0][1] + self.m[1][0]) * half;
        Mat2::new(self.m[0][0], off, off, self.m[1][1])
    }

    /// Largest singular value (spectral norm).
    pub fn spectral_norm(self) -> T {
        let g = self.transpose().mul(self); // Gram matrix, symmetric psd
        let tr = g.m[0][0] + g.m[1][1];
        let det = g.det().max(T::zero());
        let half = T::cast(0.5);
        let disc = (tr * tr * T::cast(0.25) - det).max(T::zero()).sqrt();
        (tr * half + disc).max(T::zero()).sqrt()
    }

    pub fn frobenius_norm(self) -> T {
        self.m
            .iter()
            .flatten()
            .map(|&x| x * x)
            .fold(T::zero(), |s, x| s + x)
            .sqrt()
    }

    /// Lower Cholesky factor of a symmetric psd matrix, with a diagonal floor
    /// guarding the nearly singular small-step covariances. The off-diagonal
    /// is capped by Cauchy-Schwarz so a rounding-noise matrix factors to
    /// rounding noise instead of amplifying through the floored diagonal.
    pub fn cholesky_with_floor(self, floor: T) -> Self {
        let floor = floor.max(T::zero());
        let d0 = self.m[0][0].max(floor);
        let l11 = d0.sqrt();
        let mut l21 = if l11 > T::zero() {
            self.m[1][0] / l11
        } else {
            T::zero()
        };
        let cap = self.m[1][1].max(T::zero()).sqrt();
        if l21.abs() > cap {
            l21 = l21.signum() * cap;
        }
        let rest = (self.m[1][1] - l21 * l21).max(floor);
        Mat2::new(l11, T::zero(), l21, rest.sqrt())
    }
}

/// Complex 2x2 matrix, used for resolvents and fractional powers.
#[derive(Debug, Clone, Copy)]
pub struct CMat2<T> {
    pub m: [[Complex<T>; 2]; 2],
}

impl<T: Real> CMat2<T> {
    pub fn new(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> Self {
        CMat2 { m: [[a, b], [c, d]] }
    }

    pub fn from_real(r: Mat2<T>) -> Self {
        let c = |x: T| Complex::new(x, T::zero());
        CMat2::new(c(r.m[0][0]), c(r.m[0][1]), c(r.m[1][0]), c(r.m[1][1]))
    }

    pub fn real_part(self) -> Mat2<T> {
        Mat2::new(self.m[0][0].re, self.m[0][1].re, self.m[1][0].re, self.m[1][1].re)
    }

    pub fn max_abs_imag(self) -> T {
        self.m
            .iter()
            .flatten()
            .map(|z| z.im.abs())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn mul(self, o: Self) -> Self {
        let a = &self.m;
        let b = &o.m;
        CMat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn mul_vec(self, v: [Complex<T>; 2]) -> [Complex<T>; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn scale(self, s: Complex<T>) -> Self {
        CMat2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    pub fn det(self) -> Complex<T> {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(self) -> Self {
        let d = self.det();
        CMat2::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        )
    }

    /// Largest singular value of a complex 2x2 matrix.
    pub fn spectral_norm(self) -> T {
        let fro2: T = self
            .m
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .fold(T::zero(), |a, b| a + b);
        let det2 = self.det().norm_sqr();
        let half = T::cast(0.5);
        let disc = (fro2 * fro2 * T::cast(0.25) - det2).max(T::zero()).sqrt();
        (fro2 * half + disc).max(T::zero()).sqrt()
    }
}
