//! Pointwise nonlinearities and scalar functionals, evaluated
//! pseudo-spectrally: synthesize the pair (u, v) to the doubled grid, apply
//! the map, analyse back onto the retained modes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::spectral::{GridSelect, SpectralSpace};

/// Scalar pointwise map with a declared Lipschitz constant, used both as a
/// scalar nonlinearity and as the integrand of the flagship functional.
#[derive(Clone)]
pub struct PointwiseFn<T> {
    pub name: String,
    pub f: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub lipschitz: Option<T>,
}

impl<T: Real> PointwiseFn<T> {
    pub fn identity() -> Self {
        PointwiseFn {
            name: "identity".into(),
            f: Arc::new(|x| x),
            lipschitz: Some(T::one()),
        }
    }

    pub fn sine(amplitude: T, frequency: T) -> Self {
        PointwiseFn {
            name: "sin".into(),
            f: Arc::new(move |x| amplitude * (frequency * x).sin()),
            lipschitz: Some((amplitude * frequency).abs()),
        }
    }

    pub fn constant(c: T) -> Self {
        PointwiseFn {
            name: "constant".into(),
            f: Arc::new(move |_| c),
            lipschitz: Some(T::zero()),
        }
    }
}

impl<T> std::fmt::Debug for PointwiseFn<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PointwiseFn({})", self.name)
    }
}

/// Nemytskii coefficient `(t, s, u, v) -> R` with declared Lipschitz and
/// growth constants in `(u, v)`.
#[derive(Clone)]
pub struct NemytskiiMap<T> {
    pub name: String,
    pub f: Arc<dyn Fn(T, &[T], T, T) -> T + Send + Sync>,
    pub lipschitz: T,
    pub growth: T,
    /// True when the value does not depend on (u, v); such coefficients feed
    /// the exact additive-noise path in the integrator.
    pub state_independent: bool,
    /// True when the map is identically zero.
    pub zero: bool,
}

impl<T> std::fmt::Debug for NemytskiiMap<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NemytskiiMap({})", self.name)
    }
}

impl<T: Real> NemytskiiMap<T> {
    pub fn zero() -> Self {
        NemytskiiMap {
            name: "zero".into(),
            f: Arc::new(|_, _, _, _| T::zero()),
            lipschitz: T::zero(),
            growth: T::zero(),
            state_independent: true,
            zero: true,
        }
    }

    pub fn constant(c: T) -> Self {
        NemytskiiMap {
            name: "constant".into(),
            f: Arc::new(move |_, _, _, _| c),
            lipschitz: T::zero(),
            growth: c.abs(),
            state_independent: true,
            zero: c == T::zero(),
        }
    }

    /// `c0 + cu * u + cv * v`.
    pub fn linear(c0: T, cu: T, cv: T) -> Self {
        NemytskiiMap {
            name: "linear".into(),
            f: Arc::new(move |_, _, u, v| c0 + cu * u + cv * v),
            lipschitz: cu.abs().max(cv.abs()),
            growth: c0.abs() + cu.abs() + cv.abs(),
            state_independent: cu == T::zero() && cv == T::zero(),
            zero: c0 == T::zero() && cu == T::zero() && cv == T::zero(),
        }
    }

    /// `amp * sin(freq * u)`.
    pub fn sine(amp: T, freq: T) -> Self {
        NemytskiiMap {
            name: "sin".into(),
            f: Arc::new(move |_, _, u, _| amp * (freq * u).sin()),
            lipschitz: (amp * freq).abs(),
            growth: amp.abs(),
            state_independent: false,
            zero: amp == T::zero(),
        }
    }

    /// Polynomial in u clipped to `[-bound, bound]`: Lipschitz despite the
    /// polynomial growth of the core.
    pub fn clipped_poly(coeffs: Vec<T>, bound: T) -> Self {
        let c = coeffs.clone();
        // Lipschitz constant of the clipped polynomial: sup |p'| on the
        // region where |p| <= bound is bounded by sup |p'| on a conservative
        // bracket; estimate by dense sampling of p' over [-b', b'] where the
        // polynomial certainly exceeds the clip.
        let mut lip = T::zero();
        let probe = 512;
        let half_range = T::cast(8.0);
        for i in 0..=probe {
            let x = -half_range + T::cast(2.0 * i as f64 / probe as f64) * half_range;
            let mut dp = T::zero();
            for (k, &ck) in c.iter().enumerate().skip(1) {
                dp = dp + ck * T::cast(k as f64) * x.powi(k as i32 - 1);
            }
            lip = lip.max(dp.abs());
        }
        NemytskiiMap {
            name: "clipped_poly".into(),
            f: Arc::new(move |_, _, u, _| {
                let mut p = T::zero();
                for (k, &ck) in coeffs.iter().enumerate() {
                    p = p + ck * u.powi(k as i32);
                }
                p.max(-bound).min(bound)
            }),
            lipschitz: lip,
            growth: bound,
            state_independent: false,
            zero: false,
        }
    }

    /// `u^2`, for exactness tests on the dealiased grid (not Lipschitz
    /// globally; declared constant covers the tested range).
    pub fn square() -> Self {
        NemytskiiMap {
            name: "square".into(),
            f: Arc::new(|_, _, u, _| u * u),
            lipschitz: T::cast(8.0),
            growth: T::cast(16.0),
            state_independent: false,
            zero: false,
        }
    }
}

/// Scalar functional of the whole state, `(t, u(.), v(.)) -> R`.
#[derive(Clone)]
pub enum ScalarFunctional<T> {
    Zero,
    Constant(T),
    /// Example-style integral functional `x -> int phi(x(s)) ds` applied to
    /// the position component.
    IntegralOfU(PointwiseFn<T>),
}

impl<T> std::fmt::Debug for ScalarFunctional<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarFunctional::Zero => write!(f, "ScalarFunctional(zero)"),
            ScalarFunctional::Constant(_) => write!(f, "ScalarFunctional(constant)"),
            ScalarFunctional::IntegralOfU(p) => write!(f, "ScalarFunctional(integral {})", p.name),
        }
    }
}

impl<T: Real> ScalarFunctional<T> {
    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFunctional::Zero)
    }

    pub fn is_state_independent(&self) -> bool {
        matches!(self, ScalarFunctional::Zero | ScalarFunctional::Constant(_))
    }

    /// Declared Lipschitz constant against the L^q norm of u, via
    /// `|C(x) - C(y)| <= L_phi |S|^{1/q'} ||x - y||_q`.
    pub fn lipschitz(&self, volume: T, q: T) -> T {
        match self {
            ScalarFunctional::Zero | ScalarFunctional::Constant(_) => T::zero(),
            ScalarFunctional::IntegralOfU(p) => {
                let lp = p.lipschitz.unwrap_or(T::zero());
                let q_prime = q / (q - T::one());
                lp * volume.powf(T::one() / q_prime)
            }
        }
    }
}

/// Synthesize the state, apply the pointwise coefficient, analyse back.
/// Returns the coefficient vector destined for the velocity slot.
pub fn apply_nemytskii<T: Real>(
    map: &NemytskiiMap<T>,
    t: T,
    u_coeffs: &[T],
    v_coeffs: &[T],
    space: &SpectralSpace<T>,
) -> Result<Vec<T>> {
    if map.zero {
        return Ok(vec![T::zero(); space.n_modes()]);
    }
    let grid = GridSelect::Dealias;
    let u = space.synthesize(u_coeffs, grid);
    let v = space.synthesize(v_coeffs, grid);
    let mut values = vec![T::zero(); u.len()];
    for (j, val) in values.iter_mut().enumerate() {
        let s = space.node(grid, j);
        let y = (map.f)(t, &s, u[j], v[j]);
        if !y.is_finite() {
            return Err(Error::Numerical {
                path: 0,
                step: 0,
                detail: format!("nemytskii map {} produced a non-finite value", map.name),
            });
        }
        *val = y;
    }
    Ok(space.analyze(&values, grid))
}

/// Evaluate a scalar functional on the synthesized state. The integral
/// variant uses the boundary-corrected quadrature
/// `phi(0) |S| + h^d sum_j (phi(u_j) - phi(0))`, exact for constants and
/// second order otherwise (the state vanishes on the boundary).
pub fn apply_functional<T: Real>(
    fun: &ScalarFunctional<T>,
    _t: T,
    u_coeffs: &[T],
    space: &SpectralSpace<T>,
) -> Result<T> {
    match fun {
        ScalarFunctional::Zero => Ok(T::zero()),
        ScalarFunctional::Constant(c) => Ok(*c),
        ScalarFunctional::IntegralOfU(phi) => {
            let grid = GridSelect::Dealias;
            let u = space.synthesize(u_coeffs, grid);
            let phi0 = (phi.f)(T::zero());
            let cell = space.cell_volume(grid);
            let mut acc = T::zero();
            for &uj in &u {
                let y = (phi.f)(uj);
                if !y.is_finite() {
                    return Err(Error::Numerical {
                        path: 0,
                        step: 0,
                        detail: format!("functional integrand {} non-finite", phi.name),
                    });
                }
                acc = acc + (y - phi0);
            }
            Ok(phi0 * space.domain.volume() + cell * acc)
        }
    }
}

/// Config-level selection of a Nemytskii coefficient.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NemytskiiSel {
    Zero,
    Constant { value: f64 },
    Linear { c0: f64, cu: f64, cv: f64 },
    Sin { amplitude: f64, frequency: f64 },
    ClippedPoly { coeffs: Vec<f64>, bound: f64 },
}

impl NemytskiiSel {
    pub fn build<T: Real>(&self) -> NemytskiiMap<T> {
        match self {
            NemytskiiSel::Zero => NemytskiiMap::zero(),
            NemytskiiSel::Constant { value } => NemytskiiMap::constant(T::cast(*value)),
            NemytskiiSel::Linear { c0, cu, cv } => {
                NemytskiiMap::linear(T::cast(*c0), T::cast(*cu), T::cast(*cv))
            }
            NemytskiiSel::Sin { amplitude, frequency } => {
                NemytskiiMap::sine(T::cast(*amplitude), T::cast(*frequency))
            }
            NemytskiiSel::ClippedPoly { coeffs, bound } => NemytskiiMap::clipped_poly(
                coeffs.iter().map(|&c| T::cast(c)).collect(),
                T::cast(*bound),
            ),
        }
    }
}

/// Config-level selection of a scalar functional.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalSel {
    Zero,
    Constant { value: f64 },
    /// `x -> int phi(x(s)) ds` with phi from the pointwise catalogue.
    IntegralSin { amplitude: f64, frequency: f64 },
    IntegralIdentity,
}

impl FunctionalSel {
    pub fn build<T: Real>(&self) -> ScalarFunctional<T> {
        match self {
            FunctionalSel::Zero => ScalarFunctional::Zero,
            FunctionalSel::Constant { value } => ScalarFunctional::Constant(T::cast(*value)),
            FunctionalSel::IntegralSin { amplitude, frequency } => ScalarFunctional::IntegralOfU(
                PointwiseFn::sine(T::cast(*amplitude), T::cast(*frequency)),
            ),
            FunctionalSel::IntegralIdentity => {
                ScalarFunctional::IntegralOfU(PointwiseFn::identity())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{enumerate_modes, BoxDomain, EquationKind};
    use approx::assert_relative_eq;

    fn space(cutoff: usize, points: usize) -> SpectralSpace<f64> {
        let domain = BoxDomain::new(vec![1.0], points).unwrap();
        let trunc = enumerate_modes(&domain, EquationKind::Plate, cutoff).unwrap();
        SpectralSpace::new(domain, trunc).unwrap()
    }

    #[test]
    fn zero_map_gives_zero_vector() {
        let sp = space(4, 9);
        let u = vec![1.0, -0.5, 0.2, 0.0];
        let v = vec![0.0; 4];
        let out = apply_nemytskii(&NemytskiiMap::zero(), 0.0, &u, &v, &sp).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_map_returns_coefficients() {
        let sp = space(4, 9);
        let mut u = vec![0.0; 4];
        u[0] = 1.0;
        let v = vec![0.0; 4];
        let map = NemytskiiMap::linear(0.0, 1.0, 0.0);
        let out = apply_nemytskii(&map, 0.0, &u, &v, &sp).unwrap();
        for (a, b) in out.iter().zip(u.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn square_of_first_mode_matches_analytic_sine_coefficients() {
        // u = e_1 on (0,1): u^2 = 2 sin^2(pi s) = 1 - cos(2 pi s);
        // sine coefficients: c_n = -8 sqrt(2) / (n pi (n^2 - 4)) for odd n,
        // 0 for even n  (analytic Fourier-sine integrals)
        let sp = space(8, 1023);
        let mut u = vec![0.0; 8];
        let k1 = sp.trunc.modes.iter().position(|m| m.index == vec![1]).unwrap();
        u[k1] = 1.0;
        let v = vec![0.0; 8];
        let out = apply_nemytskii(&NemytskiiMap::square(), 0.0, &u, &v, &sp).unwrap();
        for (k, mode) in sp.trunc.modes.iter().enumerate() {
            let n = mode.index[0];
            let analytic = if n % 2 == 1 {
                let nf = n as f64;
                -8.0 * 2f64.sqrt() / (nf * std::f64::consts::PI * (nf * nf - 4.0))
            } else {
                0.0
            };
            assert!(
                (out[k] - analytic).abs() < 1e-8,
                "mode {n}: {} vs {}",
                out[k],
                analytic
            );
        }
    }

    #[test]
    fn functional_identity_on_first_mode() {
        // int sqrt(2) sin(pi s) ds = 2 sqrt(2) / pi
        let sp = space(4, 513);
        let mut u = vec![0.0; 4];
        u[0] = 1.0;
        let c = apply_functional(
            &ScalarFunctional::IntegralOfU(PointwiseFn::identity()),
            0.0,
            &u,
            &sp,
        )
        .unwrap();
        assert_relative_eq!(c, 2.0 * 2f64.sqrt() / std::f64::consts::PI, epsilon = 1e-6);
    }

    #[test]
    fn functional_constant_integrand_is_exact() {
        let sp = space(4, 65);
        let u = vec![0.3, 0.0, -0.2, 0.0];
        let c = apply_functional(
            &ScalarFunctional::IntegralOfU(PointwiseFn::constant(2.5)),
            0.0,
            &u,
            &sp,
        )
        .unwrap();
        assert_relative_eq!(c, 2.5, epsilon = 1e-12); // |S| = 1
    }

    #[test]
    fn functional_zero_on_zero_state() {
        let sp = space(4, 65);
        let u = vec![0.0; 4];
        let c = apply_functional(
            &ScalarFunctional::IntegralOfU(PointwiseFn::sine(1.0, 1.0)),
            0.0,
            &u,
            &sp,
        )
        .unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn declared_lipschitz_never_exceeded() {
        // for random state pairs the L^2 distance of the images is bounded by
        // L (||du|| + ||dv||) up to quadrature slack
        use rand::Rng;
        let sp = space(6, 63);
        let maps = [
            NemytskiiMap::linear(0.5, 0.8, -0.3),
            NemytskiiMap::sine(1.2, 2.0),
            NemytskiiMap::clipped_poly(vec![0.0, 1.0, 0.25], 3.0),
        ];
        let mut rng = crate::rng::stream(5, 0, crate::rng::Channel::MonteCarlo, 0);
        for map in &maps {
            for _ in 0..100 {
                let u1: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let v1: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let u2: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let v2: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let f1 = apply_nemytskii(map, 0.0, &u1, &v1, &sp).unwrap();
                let f2 = apply_nemytskii(map, 0.0, &u2, &v2, &sp).unwrap();
                let df: f64 = f1
                    .iter()
                    .zip(f2.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let du: f64 = u1
                    .iter()
                    .zip(u2.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dv: f64 = v1
                    .iter()
                    .zip(v2.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    df <= map.lipschitz * (du + dv) * (1.0 + 1e-6) + 1e-12,
                    "{}: {df} vs {}",
                    map.name,
                    map.lipschitz * (du + dv)
                );
            }
        }
    }

    #[test]
    fn reflection_symmetry_parity() {
        // an odd pointwise map of a reflection-antisymmetric state keeps the
        // odd-mode structure: even-index sine coefficients stay zero
        let sp = space(8, 255);
        let mut u = vec![0.0; 8];
        let k1 = sp.trunc.modes.iter().position(|m| m.index == vec![1]).unwrap();
        let k3 = sp.trunc.modes.iter().position(|m| m.index == vec![3]).unwrap();
        u[k1] = 0.7;
        u[k3] = -0.2;
        let v = vec![0.0; 8];
        let out = apply_nemytskii(&NemytskiiMap::sine(1.0, 1.0), 0.0, &u, &v, &sp).unwrap();
        for (k, mode) in sp.trunc.modes.iter().enumerate() {
            if mode.index[0] % 2 == 0 {
                assert!(out[k].abs() < 1e-10, "even mode {} leaked {}", mode.index[0], out[k]);
            }
        }
    }

    #[test]
    fn config_selection_roundtrip() {
        let sel = NemytskiiSel::Sin { amplitude: 1.0, frequency: 2.0 };
        let toml = toml::to_string(&sel).unwrap();
        let back: NemytskiiSel = toml::from_str(&toml).unwrap();
        assert_eq!(sel, back);
        let map: NemytskiiMap<f64> = sel.build();
        assert_eq!(map.lipschitz, 2.0);
    }
}
