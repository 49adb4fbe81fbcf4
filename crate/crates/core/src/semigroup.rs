//! Per-mode companion calculus for the damped pair operator.
//!
//! On each eigenmode the pair operator restricts to the 2x2 companion matrix
//!
//! ```text
//! A_k = |    0        1      |          lambda^2 + rho sqrt(a) lambda + a = 0
//!       |   -a   -rho sqrt(a)|
//! ```
//!
//! whose eigenvalues `lambda = (sqrt(a)/2)(-rho +- sqrt(rho^2 - 4))` always
//! have real part `-rho sqrt(a)/2 < 0`. The exponential, the resolvent and
//! the fractional powers `(w - A_k)^theta` all have closed forms:
//!
//! ```text
//! exp(tA) = e^{-dt} [ cos(wt) I + sin(wt)/w (A + dI) ],   d = rho sqrt(a)/2,
//! ```
//!
//! with `w = sqrt(a - d^2)` in the oscillatory regime `rho < 2`, the obvious
//! `cosh/sinh` variant for `rho > 2`, and the rank-one-nilpotent formula
//! `e^{-dt}(I + t(A + dI))` at the double root `rho = 2`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{CMat2, Mat2, Vec2};
use crate::real::Real;
use crate::spectral::{EquationKind, SpectralTruncation};

/// Spectral classification of one companion matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumClass<T> {
    /// rho < 2: complex pair `-d +- i omega`.
    Oscillatory { omega: T },
    /// rho = 2 (within tolerance): double eigenvalue `-d`, one Jordan block.
    Jordan,
    /// rho > 2: real pair `-d +- gamma`.
    Overdamped { gamma: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeMatrix<T> {
    pub a: T,
    pub rho: T,
    /// rho sqrt(a): the damping coefficient actually entering the matrix.
    pub damping: T,
    pub class: SpectrumClass<T>,
}

/// Discriminant tolerance below which the double-root formula takes over;
/// keeps the eigenvector basis well conditioned near rho = 2.
const JORDAN_TOL: f64 = 1e-9;

pub fn mode_matrix<T: Real>(a: T, rho: T) -> Result<ModeMatrix<T>> {
    if !(a > T::zero()) || !a.is_finite() {
        return Err(Error::config("mode eigenvalue a must be positive"));
    }
    if !(rho > T::zero()) || !rho.is_finite() {
        return Err(Error::config("damping constant rho must be positive"));
    }
    let damping = rho * a.sqrt();
    let half_trace = damping * T::cast(0.5);
    let disc = half_trace * half_trace - a; // d^2 - a = a (rho^2/4 - 1)
    let class = if disc.abs() <= T::cast(JORDAN_TOL) * a {
        SpectrumClass::Jordan
    } else if disc < T::zero() {
        SpectrumClass::Oscillatory { omega: (-disc).sqrt() }
    } else {
        SpectrumClass::Overdamped { gamma: disc.sqrt() }
    };
    Ok(ModeMatrix {
        a,
        rho,
        damping,
        class,
    })
}

impl<T: Real> ModeMatrix<T> {
    pub fn matrix(&self) -> Mat2<T> {
        Mat2::new(T::zero(), T::one(), -self.a, -self.damping)
    }

    /// `A^{-1} = (-rho A^{-1/2}, -A^{-1}; I, 0)` realized per mode.
    pub fn inverse(&self) -> Mat2<T> {
        Mat2::new(
            -self.damping / self.a,
            -T::one() / self.a,
            T::one(),
            T::zero(),
        )
    }

    /// Adjoint under the mode-wise duality pairing: the transpose.
    pub fn adjoint(&self) -> Mat2<T> {
        self.matrix().transpose()
    }

    pub fn decay_rate(&self) -> T {
        self.damping * T::cast(0.5)
    }

    /// Spectral abscissa magnitude: the slowest decay rate among the two
    /// eigenvalues. Coincides with `decay_rate` for rho <= 2; strictly
    /// smaller in the overdamped regime.
    pub fn slow_decay_rate(&self) -> T {
        match self.class {
            SpectrumClass::Overdamped { gamma } => self.decay_rate() - gamma,
            _ => self.decay_rate(),
        }
    }

    pub fn is_jordan(&self) -> bool {
        matches!(self.class, SpectrumClass::Jordan)
    }

    pub fn eigenvalues(&self) -> (Complex<T>, Complex<T>) {
        let d = self.decay_rate();
        match self.class {
            SpectrumClass::Oscillatory { omega } => (
                Complex::new(-d, omega),
                Complex::new(-d, -omega),
            ),
            SpectrumClass::Jordan => (Complex::new(-d, T::zero()), Complex::new(-d, T::zero())),
            SpectrumClass::Overdamped { gamma } => (
                Complex::new(-d + gamma, T::zero()),
                Complex::new(-d - gamma, T::zero()),
            ),
        }
    }
}

/// `exp(t A_k)`, exact up to rounding.
pub fn mode_exp<T: Real>(m: &ModeMatrix<T>, t: T) -> Mat2<T> {
    assert!(t >= T::zero(), "mode_exp wants t >= 0");
    if t == T::zero() {
        return Mat2::identity();
    }
    let d = m.decay_rate();
    // B = A + dI is trace free with B^2 = (d^2 - a) I
    let b = m.matrix().add(Mat2::diag(d, d));
    match m.class {
        SpectrumClass::Oscillatory { omega } => {
            let e = (-d * t).exp();
            let (s, c) = ((omega * t).sin(), (omega * t).cos());
            Mat2::identity().scale(c).add(b.scale(s / omega)).scale(e)
        }
        SpectrumClass::Jordan => {
            let e = (-d * t).exp();
            Mat2::identity().add(b.scale(t)).scale(e)
        }
        SpectrumClass::Overdamped { gamma } => {
            // e^{-dt} cosh/sinh assembled from one-sided exponentials so the
            // large-t overdamped regime cannot overflow.
            let ep = ((gamma - d) * t).exp();
            let em = ((-gamma - d) * t).exp();
            let half = T::cast(0.5);
            let cosh_term = Mat2::identity().scale((ep + em) * half);
            let sinh_term = b.scale((ep - em) * half / gamma);
            cosh_term.add(sinh_term)
        }
    }
}

/// `Phi_1(t) = int_0^t exp(rA) dr = A^{-1} (exp(tA) - I)`.
pub fn phi1<T: Real>(m: &ModeMatrix<T>, t: T) -> Mat2<T> {
    m.inverse().mul(mode_exp(m, t).sub(Mat2::identity()))
}

/// `Phi_2(t) = int_0^t r exp(rA) dr = A^{-1} (t exp(tA) - Phi_1(t))`.
pub fn phi2<T: Real>(m: &ModeMatrix<T>, t: T) -> Mat2<T> {
    m.inverse().mul(mode_exp(m, t).scale(t).sub(phi1(m, t)))
}

/// `(w - A_k)^theta v` through the principal branch of the eigenvalue powers.
pub fn fractional_power_apply<T: Real>(
    m: &ModeMatrix<T>,
    w: T,
    theta: T,
    vec: Vec2<T>,
) -> Result<Vec2<T>> {
    if theta.abs() > T::one() {
        return Err(Error::config("fractional power exponent must lie in [-1, 1]"));
    }
    if !(w > T::zero()) {
        return Err(Error::config("shift w must be positive"));
    }
    let (l1, l2) = m.eigenvalues();
    if w <= l1.re.max(l2.re) {
        return Err(Error::config("shift w must lie to the right of the spectrum"));
    }
    let wz = Complex::new(w, T::zero());
    let out = if m.is_jordan() {
        // (w - A)^theta = (w-l)^theta (I - N/(w-l))^theta with N^2 = 0, so the
        // binomial series stops after the linear term.
        let l = l1;
        let n = CMat2::from_real(m.matrix()).m;
        let lam_mat = CMat2::new(l, Complex::new(T::zero(), T::zero()), Complex::new(T::zero(), T::zero()), l);
        let nil = CMat2 {
            m: [
                [n[0][0] - lam_mat.m[0][0], n[0][1]],
                [n[1][0], n[1][1] - lam_mat.m[1][1]],
            ],
        };
        let base = wz - l;
        let scale = base.powc(Complex::new(theta, T::zero()));
        let correction = nil.scale(-Complex::new(theta, T::zero()) / base);
        let op = CMat2::new(
            scale * (Complex::new(T::one(), T::zero()) + correction.m[0][0]),
            scale * correction.m[0][1],
            scale * correction.m[1][0],
            scale * (Complex::new(T::one(), T::zero()) + correction.m[1][1]),
        );
        op.mul_vec([Complex::new(vec[0], T::zero()), Complex::new(vec[1], T::zero())])
    } else {
        // V = [1 1; l1 l2], diag((w - l)^theta), V^{-1}
        let v = CMat2::new(
            Complex::new(T::one(), T::zero()),
            Complex::new(T::one(), T::zero()),
            l1,
            l2,
        );
        let p1 = (wz - l1).powc(Complex::new(theta, T::zero()));
        let p2 = (wz - l2).powc(Complex::new(theta, T::zero()));
        let diag = CMat2::new(
            p1,
            Complex::new(T::zero(), T::zero()),
            Complex::new(T::zero(), T::zero()),
            p2,
        );
        let op = v.mul(diag).mul(v.inverse());
        op.mul_vec([Complex::new(vec[0], T::zero()), Complex::new(vec[1], T::zero())])
    };
    Ok([out[0].re, out[1].re])
}

/// Mode-wise weighted norm realizing the pair-space norm: weights
/// `(sqrt(a), 1)` on the two components.
pub fn pair_weighted_norm<T: Real>(m: &ModeMatrix<T>, v: Vec2<T>) -> T {
    let w0 = m.a.sqrt() * v[0];
    (w0 * w0 + v[1] * v[1]).sqrt()
}

#[derive(Debug, Clone)]
pub struct SectorSample<T> {
    pub mu: T,
    pub lambda: Complex<T>,
    pub norm: T,
}

/// Resolvent scan along the rays `arg lambda = +-(pi - phi)`.
#[derive(Debug, Clone)]
pub struct SectorReport<T> {
    pub phi: T,
    pub radii: Vec<T>,
    /// `(cutoff, sup over rays and modes of ||lambda (lambda - A_k)^{-1}||)`.
    pub sup_by_cutoff: Vec<(usize, T)>,
    /// Mode-level samples of the largest truncation, for CSV export.
    pub samples: Vec<SectorSample<T>>,
    pub skipped: Vec<String>,
    /// True when the sups vary by less than 5% across the supplied cutoffs.
    pub bounded_verdict: bool,
}

/// Default radii per the scan policy: 24 log-spaced points per decade over
/// `[1e-3 sqrt(a_min), 1e3 a_max]`, bracketing both eigenvalue scales.
pub fn default_scan_radii<T: Real>(trunc: &SpectralTruncation<T>) -> Vec<T> {
    let a_min = trunc.modes.first().map(|m| m.a).unwrap_or_else(T::one);
    let a_max = trunc.modes.last().map(|m| m.a).unwrap_or_else(T::one);
    let lo = (T::cast(1e-3) * a_min.sqrt()).log10();
    let hi = (T::cast(1e3) * a_max).log10();
    let per_decade = T::cast(24.0);
    let count = ((hi - lo) * per_decade).ceil().as_f64() as usize + 1;
    (0..count)
        .map(|i| {
            let f = lo + (hi - lo) * T::cast(i as f64) / T::cast((count - 1).max(1) as f64);
            T::cast(10.0).powf(f)
        })
        .collect()
}

/// Weighted resolvent norm `|| lambda (lambda - A_k)^{-1} ||` at one point.
pub fn weighted_resolvent_norm<T: Real>(m: &ModeMatrix<T>, lambda: Complex<T>) -> Option<T> {
    let det = lambda * lambda + lambda * Complex::new(m.damping, T::zero())
        + Complex::new(m.a, T::zero());
    // on the scanned rays the characteristic polynomial stays away from zero
    // for rho > 0; treat near-zero determinants as eigenvalue hits
    if det.norm() <= T::cast(1e-300) {
        return None;
    }
    let sqrt_a = m.a.sqrt();
    // W (lambda - A)^{-1} W^{-1} with W = diag(sqrt(a), 1):
    // [[lambda + c, sqrt(a)], [-sqrt(a), lambda]] / det
    let r = CMat2::new(
        lambda + Complex::new(m.damping, T::zero()),
        Complex::new(sqrt_a, T::zero()),
        Complex::new(-sqrt_a, T::zero()),
        lambda,
    )
    .scale(lambda / det);
    Some(r.spectral_norm())
}

/// Scan the two rays for each supplied truncation and report the sups.
pub fn resolvent_scan<T: Real>(
    truncs: &[&SpectralTruncation<T>],
    rho: T,
    phi: T,
    radii: Option<Vec<T>>,
) -> Result<SectorReport<T>> {
    if !(phi > T::zero() && phi < T::FRAC_PI_2()) {
        return Err(Error::config("ray angle phi must lie in (0, pi/2)"));
    }
    if truncs.is_empty() {
        return Err(Error::config("resolvent scan needs at least one truncation"));
    }
    let largest = truncs
        .iter()
        .max_by_key(|t| t.len())
        .expect("nonempty");
    let radii = match radii {
        Some(r) => r,
        None => default_scan_radii(largest),
    };
    let angle = T::PI() - phi;
    let rays = [angle, -angle];
    let mut skipped = Vec::new();
    let mut sup_by_cutoff = Vec::with_capacity(truncs.len());
    let mut samples = Vec::new();
    for trunc in truncs {
        let mut sup = T::zero();
        for mode in &trunc.modes {
            let m = mode_matrix(mode.a, rho)?;
            let mut mode_sup = T::zero();
            for &r in &radii {
                for &ang in &rays {
                    let lambda = Complex::new(r * ang.cos(), r * ang.sin());
                    match weighted_resolvent_norm(&m, lambda) {
                        Some(n) => mode_sup = mode_sup.max(n),
                        None => skipped.push(format!(
                            "lambda = {:?} coincides with the spectrum at mu = {}",
                            lambda, mode.mu
                        )),
                    }
                }
            }
            sup = sup.max(mode_sup);
            if trunc.len() == largest.len() {
                // store one row per (mode, largest radius) plus the sup
                samples.push(SectorSample {
                    mu: mode.mu,
                    lambda: Complex::new(
                        *radii.last().unwrap() * angle.cos(),
                        *radii.last().unwrap() * angle.sin(),
                    ),
                    norm: mode_sup,
                });
            }
        }
        sup_by_cutoff.push((trunc.cutoff, sup));
    }
    let sups: Vec<T> = sup_by_cutoff.iter().map(|&(_, s)| s).collect();
    let max = sups.iter().fold(T::zero(), |a, &b| a.max(b));
    let min = sups.iter().fold(T::infinity(), |a, &b| a.min(b));
    let bounded_verdict = max.is_finite() && (max - min) / max < T::cast(0.05);
    Ok(SectorReport {
        phi,
        radii,
        sup_by_cutoff,
        samples,
        skipped,
        bounded_verdict,
    })
}

#[derive(Debug, Clone)]
pub struct ScaleIdentSample<T> {
    pub mu: T,
    pub ratio: T,
}

/// Equivalence-constant report for the fractional-domain identification
/// `X_theta = E_{1/2 + theta/2} x E_{theta/2}`.
#[derive(Debug, Clone)]
pub struct ScaleIdentReport<T> {
    pub theta: T,
    pub ratio_min: T,
    pub ratio_max: T,
    pub samples: Vec<ScaleIdentSample<T>>,
}

impl<T: Real> ScaleIdentReport<T> {
    pub fn spread(&self) -> T {
        self.ratio_max / self.ratio_min
    }
}

/// Sweep log-spaced `mu` in `[mu_lo, mu_hi]` and compare
/// `||(w - A_k)^theta v||_X` against the component-weighted norm with weights
/// `(a^{(1+theta)/2}, a^{theta/2})` over a fixed set of unit test vectors.
pub fn scale_identification_check<T: Real>(
    kind: EquationKind,
    rho: T,
    theta: T,
    w: T,
    mu_range: (T, T),
    samples_per_decade: usize,
) -> Result<ScaleIdentReport<T>> {
    if theta < T::zero() || theta > T::cast(0.5) {
        return Err(Error::config("scale identification wants theta in [0, 1/2]"));
    }
    let (lo, hi) = mu_range;
    if !(lo > T::zero() && hi > lo) {
        return Err(Error::config("mu range must be positive and increasing"));
    }
    let decades = (hi / lo).log10();
    let count = (decades * T::cast(samples_per_decade as f64)).ceil().as_f64() as usize + 1;
    let sq = T::cast(std::f64::consts::FRAC_1_SQRT_2);
    let vectors: [Vec2<T>; 4] = [
        [T::one(), T::zero()],
        [T::zero(), T::one()],
        [sq, sq],
        [sq, -sq],
    ];
    let mut ratio_min = T::infinity();
    let mut ratio_max = T::zero();
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let f = T::cast(i as f64) / T::cast((count - 1).max(1) as f64);
        let mu = lo * (hi / lo).powf(f);
        let a = match kind {
            EquationKind::Plate => mu * mu,
            EquationKind::Wave => mu,
        };
        let m = mode_matrix(a, rho)?;
        let w1 = a.powf((T::one() + theta) * T::cast(0.5));
        let w2 = a.powf(theta * T::cast(0.5));
        let mut mode_max = T::zero();
        let mut mode_min = T::infinity();
        for v in &vectors {
            let y = fractional_power_apply(&m, w, theta, *v)?;
            let lhs = pair_weighted_norm(&m, y);
            let rhs = ((w1 * v[0]) * (w1 * v[0]) + (w2 * v[1]) * (w2 * v[1])).sqrt();
            let ratio = lhs / rhs;
            mode_max = mode_max.max(ratio);
            mode_min = mode_min.min(ratio);
        }
        ratio_min = ratio_min.min(mode_min);
        ratio_max = ratio_max.max(mode_max);
        samples.push(ScaleIdentSample {
            mu,
            ratio: mode_max,
        });
    }
    Ok(ScaleIdentReport {
        theta,
        ratio_min,
        ratio_max,
        samples,
    })
}
