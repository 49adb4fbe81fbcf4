//! Exact exponent arithmetic: which `(d, q, noise)` combinations admit a
//! solution, and the open exponent windows that go with them.
//!
//! All windows are computed and compared as exact rationals:
//!
//! * integrability window: plate `1 < q < d/(d-1)` for `d >= 2` (any `q > 1`
//!   for `d = 1`), wave `1 < q < 2d/(2d-1)`;
//! * point-channel window: plate `theta_C in (d/(2q'), 1/2)`, wave
//!   `theta_C in (d/q', 1/2)`, with `q' = q/(q-1)`;
//! * distributed-channel window per noise variant: compact covariance pins
//!   `theta_B = 0`, an L^r-valued channel needs `r > d` (plate, window
//!   `(d/(2r), 1/2)`) or `r > 2d` (wave, window `(d/r, 1/2)`), and the
//!   white-noise channel exists only for `d = 1`, `q > 2`, with window
//!   `(1/4 + 1/(2q), 1/2)`;
//! * drift window: `theta_G in (theta_C lower bound, 3/2 - 1/tau)` with
//!   `tau = min(q, 2)`.
//!
//! The solvability arithmetic `max{theta_B, theta_C} < alpha - 1/p`,
//! `alpha < 1/2 < ... ` is then checked constructively: the report carries an
//! explicit admissible pair `(alpha, p)` whenever the verdict is true.

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::rational::Rat;
use crate::spectral::EquationKind;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Open interval `(lo, hi)`; `hi = None` means unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub lo: BigRational,
    pub hi: Option<BigRational>,
}

impl Window {
    pub fn new(lo: BigRational, hi: BigRational) -> Self {
        Window { lo, hi: Some(hi) }
    }

    pub fn unbounded(lo: BigRational) -> Self {
        Window { lo, hi: None }
    }

    pub fn is_empty(&self) -> bool {
        match &self.hi {
            Some(hi) => self.lo >= *hi,
            None => false,
        }
    }

    pub fn contains(&self, x: &BigRational) -> bool {
        x > &self.lo
            && match &self.hi {
                Some(hi) => x < hi,
                None => true,
            }
    }

    /// Midpoint for bounded windows; `lo + 1/2` otherwise.
    pub fn midpoint(&self) -> BigRational {
        match &self.hi {
            Some(hi) => (&self.lo + hi) / int(2),
            None => &self.lo + rat(1, 2),
        }
    }

    pub fn display(&self) -> String {
        match &self.hi {
            Some(hi) => format!("({}, {})", Rat(self.lo.clone()), Rat(hi.clone())),
            None => format!("({}, inf)", Rat(self.lo.clone())),
        }
    }
}

/// Distributed-channel classification used by the exponent arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseClass {
    /// No distributed channel at all.
    None,
    /// Compact covariance with summable square function.
    Compact,
    /// L^r-valued Brownian motion.
    LrValued { r: BigRational },
    /// Space-time white noise (d = 1 only).
    White1D,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaB {
    /// The variant fixes `theta_B` (compact covariance, or no channel).
    Fixed(BigRational),
    Window(Window),
    /// Variant inadmissible; the report lists the violated conditions.
    Inadmissible,
}

#[derive(Debug, Clone)]
pub struct ChosenExponents {
    pub theta_b: BigRational,
    pub theta_c: BigRational,
    pub theta_g: BigRational,
    pub alpha: BigRational,
    pub p: BigRational,
    /// Regression ceiling at delta = 0 assuming smooth initial data
    /// (eta = 1/2): `min{1/2, 1/2 - theta_B, 1/2 - theta_C}`.
    pub lambda_max: BigRational,
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub kind: EquationKind,
    pub d: usize,
    pub q: BigRational,
    pub tau: BigRational,
    pub q_window: Window,
    pub theta_c_window: Window,
    pub theta_g_window: Window,
    pub theta_b: ThetaB,
    pub h3_ok: bool,
    pub h4_ok: bool,
    pub h5_ok: bool,
    pub theorem_arithmetic_ok: bool,
    pub verdict: bool,
    pub violated: Vec<String>,
    pub chosen: Option<ChosenExponents>,
}

impl AdmissibilityReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "equation: {}  d = {}  q = {}\n",
            self.kind,
            self.d,
            Rat(self.q.clone())
        ));
        out.push_str(&format!("q window:       {}\n", self.q_window.display()));
        out.push_str(&format!("theta_C window: {}\n", self.theta_c_window.display()));
        out.push_str(&format!("theta_G window: {}\n", self.theta_g_window.display()));
        match &self.theta_b {
            ThetaB::Fixed(v) => out.push_str(&format!("theta_B:        {} (fixed)\n", Rat(v.clone()))),
            ThetaB::Window(w) => out.push_str(&format!("theta_B window: {}\n", w.display())),
            ThetaB::Inadmissible => out.push_str("theta_B window: none (inadmissible channel)\n"),
        }
        if let Some(c) = &self.chosen {
            out.push_str(&format!(
                "chosen: theta_B = {}, theta_C = {}, theta_G = {}, alpha = {}, p = {}, lambda_max = {}\n",
                Rat(c.theta_b.clone()),
                Rat(c.theta_c.clone()),
                Rat(c.theta_g.clone()),
                Rat(c.alpha.clone()),
                Rat(c.p.clone()),
                Rat(c.lambda_max.clone()),
            ));
        }
        for v in &self.violated {
            out.push_str(&format!("violated: {v}\n"));
        }
        out.push_str(&format!("verdict: {}\n", if self.verdict { "admissible" } else { "inadmissible" }));
        out
    }
}

/// The integrability window for the equation kind.
pub fn q_window(kind: EquationKind, d: usize) -> Window {
    match kind {
        EquationKind::Plate => {
            if d == 1 {
                Window::unbounded(int(1))
            } else {
                Window::new(int(1), rat(d as i64, d as i64 - 1))
            }
        }
        EquationKind::Wave => Window::new(int(1), rat(2 * d as i64, 2 * d as i64 - 1)),
    }
}

/// Point-evaluation window `(d/(2q'), 1/2)` (plate) or `(d/q', 1/2)` (wave).
pub fn theta_c_window(kind: EquationKind, d: usize, q: &BigRational) -> Window {
    // 1/q' = (q-1)/q
    let inv_q_prime = (q - int(1)) / q;
    let lo = match kind {
        EquationKind::Plate => rat(d as i64, 2) * &inv_q_prime,
        EquationKind::Wave => int(d as i64) * &inv_q_prime,
    };
    Window::new(lo, rat(1, 2))
}

/// Full admissibility check; inadmissible inputs produce `verdict = false`
/// with the violated conditions named, never an error.
pub fn check_admissibility(
    kind: EquationKind,
    d: usize,
    q: &BigRational,
    noise: &NoiseClass,
) -> AdmissibilityReport {
    let mut violated = Vec::new();
    let qw = q_window(kind, d);
    if !qw.contains(q) {
        match kind {
            EquationKind::Plate => {
                violated.push(format!("q >= d/(d-1): plate requires q in {}", qw.display()))
            }
            EquationKind::Wave => {
                violated.push(format!("q >= 2d/(2d-1): wave requires q in {}", qw.display()))
            }
        }
    }

    let tcw = theta_c_window(kind, d, q);
    let h5_ok = qw.contains(q) && !tcw.is_empty();
    if tcw.is_empty() {
        violated.push("theta_C window empty: point evaluation not admissible".into());
    }

    let tau = if q >= &int(2) { int(2) } else { q.clone() };
    // theta_G shares Lambda with theta_C but only needs theta_G < 3/2 - 1/tau
    let theta_g_hi = rat(3, 2) - tau.recip();
    let tgw = Window::new(tcw.lo.clone(), theta_g_hi.min(int(1)));
    let h3_ok = !tgw.is_empty();
    if tgw.is_empty() {
        violated.push("theta_G window empty: a + theta_G < 3/2 - 1/tau unsatisfiable".into());
    }

    let theta_b = match noise {
        NoiseClass::None | NoiseClass::Compact => ThetaB::Fixed(int(0)),
        NoiseClass::LrValued { r } => {
            let (min_r, lo) = match kind {
                EquationKind::Plate => (int(d as i64), rat(d as i64, 2) / r),
                EquationKind::Wave => (int(2 * d as i64), int(d as i64) / r),
            };
            if r <= &min_r {
                violated.push(format!(
                    "L^r channel requires r > {} for the {} equation, got r = {}",
                    Rat(min_r),
                    kind,
                    Rat(r.clone())
                ));
                ThetaB::Inadmissible
            } else {
                let w = Window::new(lo, rat(1, 2));
                if w.is_empty() {
                    violated.push("theta_B window empty for the L^r channel".into());
                    ThetaB::Inadmissible
                } else {
                    ThetaB::Window(w)
                }
            }
        }
        NoiseClass::White1D => {
            let mut ok = true;
            if d != 1 {
                violated.push("white-noise distributed channel requires d = 1".into());
                ok = false;
            }
            if q <= &int(2) {
                violated.push("white-noise distributed channel requires q > 2".into());
                ok = false;
            }
            if ok {
                let lo = rat(1, 4) + (int(2) * q).recip();
                let w = Window::new(lo, rat(1, 2));
                if w.is_empty() {
                    violated.push("theta_B window empty for white noise".into());
                    ThetaB::Inadmissible
                } else {
                    ThetaB::Window(w)
                }
            } else {
                ThetaB::Inadmissible
            }
        }
    };
    let h4_ok = !matches!(theta_b, ThetaB::Inadmissible);

    // Midpoint defaults, then the solvability arithmetic with a = 0.
    let chosen = if h3_ok && h4_ok && h5_ok {
        let theta_c = tcw.midpoint();
        let theta_b_sel = match &theta_b {
            ThetaB::Fixed(v) => v.clone(),
            ThetaB::Window(w) => w.midpoint(),
            ThetaB::Inadmissible => unreachable!(),
        };
        let theta_g = theta_c.clone();
        let max_theta = theta_b_sel.clone().max(theta_c.clone());
        let half = rat(1, 2);
        if max_theta < half && theta_g < rat(3, 2) - tau.recip() {
            // gap = 1/2 - max_theta; p > 1/gap makes
            // alpha = (1/2 + max_theta)/2 + 1/(2p) feasible
            let gap = &half - &max_theta;
            let p_min = gap.recip();
            let p = {
                let ceil = p_min.ceil().to_integer();
                let candidate = BigRational::from_integer(ceil) + int(1);
                candidate.max(int(3))
            };
            let alpha = (&half + &max_theta) / int(2) + (int(2) * &p).recip();
            debug_assert!(alpha < half);
            debug_assert!(&alpha - p.recip() > max_theta);
            let lambda_max = (&half - &theta_b_sel).min(&half - &theta_c).min(half.clone());
            Some(ChosenExponents {
                theta_b: theta_b_sel,
                theta_c,
                theta_g,
                alpha,
                p,
                lambda_max,
            })
        } else {
            violated.push("max{theta_B, theta_C} < 1/2 unsatisfiable at the midpoints".into());
            None
        }
    } else {
        None
    };

    let theorem_arithmetic_ok = chosen.is_some();
    let verdict = h3_ok && h4_ok && h5_ok && theorem_arithmetic_ok && violated.is_empty();
    AdmissibilityReport {
        kind,
        d,
        q: q.clone(),
        tau,
        q_window: qw,
        theta_c_window: tcw,
        theta_g_window: tgw,
        theta_b,
        h3_ok,
        h4_ok,
        h5_ok,
        theorem_arithmetic_ok,
        verdict,
        violated,
        chosen,
    }
}
