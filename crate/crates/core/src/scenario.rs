//! Scenario configuration: the TOML schema, validation against the exponent
//! arithmetic, and construction of the runtime model.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admissibility::{check_admissibility, AdmissibilityReport};
use crate::coefficients::{FunctionalSel, NemytskiiSel};
use crate::error::{Error, Result};
use crate::integrator::ModelRt;
use crate::noise::{NoiseRt, NoiseSpec};
use crate::rational::Rat;
use crate::real::Real;
use crate::spectral::{enumerate_modes, BoxDomain, EquationKind, FractionalNormSpec, SpectralSpace};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EquationSection {
    pub kind: EquationKind,
    pub rho: f64,
    /// Integrability exponent, exact (number or "p/q" string).
    pub q: Rat,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSection {
    pub lengths: Vec<f64>,
    pub grid_points_per_axis: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TruncationSection {
    pub cutoff: usize,
    #[serde(default = "default_w_shift")]
    pub w_shift: f64,
}

fn default_w_shift() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSel {
    Zero,
    /// Explicit coefficients in mode order (padded with zeros).
    Modes { coeffs: Vec<f64> },
}

impl InitialSel {
    fn realize<T: Real>(&self, n: usize) -> Vec<T> {
        match self {
            InitialSel::Zero => vec![T::zero(); n],
            InitialSel::Modes { coeffs } => (0..n)
                .map(|k| coeffs.get(k).copied().map(T::cast).unwrap_or_else(T::zero))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InitialSection {
    pub u0: InitialSel,
    pub u1: InitialSel,
    /// Smoothness tag eta in (0, 1/2] of the initial data.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputSel {
    AllSteps,
    /// Every `stride`-th step (plus step 0 and the final step).
    EveryN { stride: u64 },
    /// 2^level + 1 equally spaced dyadic times.
    Dyadic { level: u32 },
    Times { times: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSection {
    pub t_final: f64,
    pub dt: f64,
    pub output: OutputSel,
    pub paths: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct OutputSection {
    #[serde(default)]
    pub store_coefficients: bool,
    #[serde(default)]
    pub persist_increments: bool,
    /// Extra fractional norms of u recorded per snapshot.
    #[serde(default)]
    pub fractional_norms: Vec<FractionalNormSpec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoefficientSection {
    pub f: NemytskiiSel,
    pub b: NemytskiiSel,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        CoefficientSection {
            f: NemytskiiSel::Zero,
            b: NemytskiiSel::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub schema_version: u32,
    pub equation: EquationSection,
    pub domain: DomainSection,
    pub truncation: TruncationSection,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    pub initial: InitialSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("{e}")))
    }

    pub fn to_canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Content hash of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_canonical_toml().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn admissibility(&self) -> AdmissibilityReport {
        check_admissibility(
            self.equation.kind,
            self.domain.lengths.len(),
            &self.equation.q.0,
            &self.noise.class(),
        )
    }

    /// Default point location `(sqrt(2) - 1) L_i`: irrational coordinates
    /// avoid eigenfunction zeros.
    pub fn point_location(&self) -> Option<Vec<f64>> {
        self.noise.point.as_ref().map(|p| {
            p.s0.clone().unwrap_or_else(|| {
                self.domain
                    .lengths
                    .iter()
                    .map(|l| (2f64.sqrt() - 1.0) * l)
                    .collect()
            })
        })
    }

    /// Number of time steps; `dt` must divide `t_final` to rounding.
    pub fn n_steps(&self) -> Result<u64> {
        let steps = self.run.t_final / self.run.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 * steps.max(1.0) || rounded < 1.0 {
            return Err(Error::config(format!(
                "dt = {} must divide t_final = {}",
                self.run.dt, self.run.t_final
            )));
        }
        Ok(rounded as u64)
    }

    pub fn output_steps(&self) -> Result<Vec<u64>> {
        let n = self.n_steps()?;
        let steps = match &self.run.output {
            OutputSel::AllSteps => (0..=n).collect(),
            OutputSel::EveryN { stride } => {
                if *stride == 0 {
                    return Err(Error::config("output stride must be positive"));
                }
                let mut v: Vec<u64> = (0..=n).step_by(*stride as usize).collect();
                if *v.last().unwrap() != n {
                    v.push(n);
                }
                v
            }
            OutputSel::Dyadic { level } => {
                let pieces = 1u64 << level;
                if n % pieces != 0 {
                    return Err(Error::config(format!(
                        "dyadic level {level} needs step count divisible by {pieces}, got {n}"
                    )));
                }
                (0..=pieces).map(|k| k * (n / pieces)).collect()
            }
            OutputSel::Times { times } => {
                let mut v = Vec::with_capacity(times.len());
                for &t in times {
                    let s = t / self.run.dt;
                    let r = s.round();
                    if (s - r).abs() > 1e-9 * s.max(1.0) || r < 0.0 || (r as u64) > n {
                        return Err(Error::config(format!(
                            "output time {t} is not a step multiple inside [0, T]"
                        )));
                    }
                    v.push(r as u64);
                }
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        Ok(steps)
    }

    /// Validate and build the runtime model at scalar type `T`.
    pub fn build<T: Real>(&self) -> Result<ModelRt<T>> {
        if self.schema_version != 1 {
            return Err(Error::config(format!(
                "unsupported schema version {}",
                self.schema_version
            )));
        }
        if !(self.equation.rho > 0.0) {
            return Err(Error::config("rho must be positive"));
        }
        let report = self.admissibility();
        if !report.verdict {
            return Err(Error::config(format!(
                "scenario is inadmissible: {}",
                report.violated.join("; ")
            )));
        }
        if !(self.initial.eta > 0.0 && self.initial.eta <= 0.5) {
            return Err(Error::config("eta must lie in (0, 1/2]"));
        }
        let domain = BoxDomain::new(
            self.domain.lengths.iter().map(|&l| T::cast(l)).collect(),
            self.domain.grid_points_per_axis,
        )?;
        let mut trunc = enumerate_modes(&domain, self.equation.kind, self.truncation.cutoff)?;
        if !(self.truncation.w_shift > 0.0) {
            return Err(Error::config("w_shift must be positive"));
        }
        trunc.w_shift = T::cast(self.truncation.w_shift);
        let space = SpectralSpace::new(domain, trunc)?;
        let n = space.n_modes();
        let s0_coeffs = match self.point_location() {
            Some(s0) => {
                let s0_t: Vec<T> = s0.iter().map(|&x| T::cast(x)).collect();
                Some(space.point_mass_coefficients(&s0_t)?)
            }
            None => None,
        };
        let noise = NoiseRt::new(&self.noise, n);
        let (c, g) = match &self.noise.point {
            Some(p) => (
                p.c.build::<T>(),
                p.g.as_ref().map(|g| g.build::<T>()).unwrap_or(
                    crate::coefficients::ScalarFunctional::Zero,
                ),
            ),
            None => (
                crate::coefficients::ScalarFunctional::Zero,
                crate::coefficients::ScalarFunctional::Zero,
            ),
        };
        let model = ModelRt {
            space,
            rho: T::cast(self.equation.rho),
            noise,
            f: self.coefficients.f.build::<T>(),
            b: self.coefficients.b.build::<T>(),
            g,
            c,
            s0_coeffs,
            u0: self.initial.u0.realize(n),
            u1: self.initial.u1.realize(n),
            eta: T::cast(self.initial.eta),
            dt: T::cast(self.run.dt),
            n_steps: self.n_steps()?,
            output_steps: self.output_steps()?,
            seed: self.run.seed,
        };
        Ok(model)
    }
}

/// Persisted run metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario_digest: String,
    pub trajectories_path: String,
    pub moments_path: String,
    pub increments_path: Option<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub paths: u64,
}
