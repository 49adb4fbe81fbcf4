//! Verification suite: weak-form residuals, Monte-Carlo Hölder regressions,
//! exponent planning, and trajectory consistency checks.

use num_rational::BigRational;
use num_traits::ToPrimitive;

use crate::admissibility::AdmissibilityReport;
use crate::coefficients::{apply_functional, apply_nemytskii, ScalarFunctional};
use crate::error::{Error, Result};
use crate::integrator::{flow_state, ModelRt, StateField};
use crate::noise::StepIncrements;
use crate::rational::Rat;
use crate::real::Real;

/// Composite Simpson on uniformly spaced samples (3/8 rule absorbs an odd
/// final interval). Falls back to trapezoid for fewer than 3 points.
pub fn simpson_uniform<T: Real>(values: &[T], h: T) -> T {
    let n = values.len();
    if n < 2 {
        return T::zero();
    }
    if n == 2 {
        return h * (values[0] + values[1]) * T::cast(0.5);
    }
    let intervals = n - 1;
    let c = |x: f64| T::cast(x);
    if intervals % 2 == 0 {
        let mut acc = values[0] + values[intervals];
        for (j, &v) in values.iter().enumerate().take(intervals).skip(1) {
            acc = acc + v * if j % 2 == 1 { c(4.0) } else { c(2.0) };
        }
        acc * h / c(3.0)
    } else if intervals >= 3 {
        // Simpson on the even-length head, 3/8 on the last three intervals
        let head = simpson_uniform(&values[..n - 3], h);
        let tail = (values[n - 4]
            + values[n - 3] * c(3.0)
            + values[n - 2] * c(3.0)
            + values[n - 1])
            * h
            * c(3.0 / 8.0);
        head + tail
    } else {
        h * (values[0] + values[1]) * c(0.5)
    }
}

#[derive(Debug, Clone)]
pub struct WeakResidualEntry<T> {
    pub mode: usize,
    pub t: T,
    pub residual_rel: T,
    pub residual_abs: T,
    pub max_term: T,
    /// Relative residual with the damping terms dropped (negative control).
    pub control_rel: T,
}

#[derive(Debug, Clone)]
pub struct WeakResidualReport<T> {
    pub entries: Vec<WeakResidualEntry<T>>,
    pub max_relative: T,
    /// Smallest control residual: corrupting the identity must be visible.
    pub negative_control_min: T,
}

/// Evaluate the tested integral identity of the pair formulation against an
/// eigenmode functional: for mode k with elastic eigenvalue `a` and damping
/// `rho sqrt(a)`,
///
/// ```text
/// u_k(t) - u_k(0) - t v_k(0) + a II(u_k) + rho sqrt(a) I(u_k)
///     - t rho sqrt(a) u_k(0)
///   = II(f_k + G e_k(s0)) + c e_k(s0) int_0^t (t - tau) dw(tau) + ...
/// ```
///
/// where `I` and `II` are the single and kernel-weighted time integrals,
/// computed by composite Simpson on the stored per-step trajectory, and the
/// stochastic double integrals are re-summed exactly from the recorded
/// `(dw, Theta)` stream: `int (t - tau) dw = sum_n ((t - t_n) dw_n - Theta_n)`.
///
/// Requires per-step storage and recorded increments; supports
/// state-independent distributed intensity only.
pub fn weak_residual<T: Real>(
    model: &ModelRt<T>,
    states: &[StateField<T>],
    increments: &[StepIncrements<T>],
    test_modes: &[usize],
    t_checks: &[T],
) -> Result<WeakResidualReport<T>> {
    let n_steps = model.n_steps as usize;
    if states.len() != n_steps + 1 {
        return Err(Error::MissingArtifact(format!(
            "weak residual needs the trajectory at every step: got {} states for {} steps",
            states.len(),
            n_steps
        )));
    }
    if increments.len() != n_steps {
        return Err(Error::MissingArtifact(
            "weak residual needs the recorded increment stream".into(),
        ));
    }
    if !model.b.zero && !model.b.state_independent {
        return Err(Error::config(
            "weak residual supports state-independent distributed intensity only",
        ));
    }
    let dt = model.dt;
    // drift values along the trajectory (recomputed; the maps are pure)
    let f_series: Option<Vec<Vec<T>>> = if model.f.zero {
        None
    } else {
        let mut all = Vec::with_capacity(states.len());
        for s in states {
            all.push(apply_nemytskii(&model.f, s.t, &s.u, &s.v, &model.space)?);
        }
        Some(all)
    };
    let g_series: Option<Vec<T>> = if model.g.is_zero() || model.s0_coeffs.is_none() {
        None
    } else {
        let mut all = Vec::with_capacity(states.len());
        for s in states {
            all.push(apply_functional(&model.g, s.t, &s.u, &model.space)?);
        }
        Some(all)
    };
    let c_series: Option<Vec<T>> = if model.noise.point_active {
        let mut all = Vec::with_capacity(states.len());
        for s in states {
            let v = match &model.c {
                ScalarFunctional::Zero => T::zero(),
                ScalarFunctional::Constant(c) => *c,
                other => apply_functional(other, s.t, &s.u, &model.space)?,
            };
            all.push(v);
        }
        Some(all)
    } else {
        None
    };
    let b_const = if model.b.zero {
        T::zero()
    } else {
        (model.b.f)(T::zero(), &[], T::zero(), T::zero())
    };

    let mut entries = Vec::new();
    for &t in t_checks {
        let idx_f = (t / dt).as_f64().round();
        let idx = idx_f as usize;
        if idx == 0 || idx > n_steps || (t - dt * T::cast(idx_f)).abs() > T::cast(1e-9) * dt {
            return Err(Error::config(format!(
                "checkpoint {t} does not sit on the step grid"
            )));
        }
        for &k in test_modes {
            let mode = &model.space.trunc.modes[k];
            let a = mode.a;
            let damping = model.rho * a.sqrt();
            let u0 = states[0].u[k];
            let v0 = states[0].v[k];
            let ut = states[idx].u[k];
            // time integrals on the stored grid
            let u_slice: Vec<T> = states[..=idx].iter().map(|s| s.u[k]).collect();
            let kernel: Vec<T> = states[..=idx]
                .iter()
                .map(|s| (t - s.t) * s.u[k])
                .collect();
            let single = simpson_uniform(&u_slice, dt);
            let double = simpson_uniform(&kernel, dt);
            // deterministic right-hand side
            let mut rhs = T::zero();
            if let Some(f) = &f_series {
                let vals: Vec<T> = (0..=idx).map(|j| (t - states[j].t) * f[j][k]).collect();
                rhs = rhs + simpson_uniform(&vals, dt);
            }
            if let Some(g) = &g_series {
                let e = model.s0_coeffs.as_ref().unwrap()[k];
                let vals: Vec<T> = (0..=idx).map(|j| (t - states[j].t) * g[j] * e).collect();
                rhs = rhs + simpson_uniform(&vals, dt);
            }
            // stochastic double integrals, exact per step
            let mut stoch = T::zero();
            if let (Some(c), Some(e)) = (&c_series, model.s0_coeffs.as_ref()) {
                let ek = e[k];
                for (n, inc) in increments[..idx].iter().enumerate() {
                    if let Some(p) = &inc.point {
                        let tn = dt * T::cast(n as f64);
                        stoch = stoch + c[n] * ek * ((t - tn) * p.dw - p.theta);
                    }
                }
            }
            if b_const != T::zero() {
                for (n, inc) in increments[..idx].iter().enumerate() {
                    if let Some(d) = &inc.distributed {
                        let tn = dt * T::cast(n as f64);
                        stoch = stoch + b_const * ((t - tn) * d[k].dw - d[k].theta);
                    }
                }
            }
            let terms = [
                ut,
                -u0,
                -t * v0,
                a * double,
                damping * single,
                -t * damping * u0,
                -rhs,
                -stoch,
            ];
            let residual = terms.iter().fold(T::zero(), |s, &x| s + x);
            let max_term = terms
                .iter()
                .fold(T::zero(), |m, &x| m.max(x.abs()))
                .max(T::cast(1e-300));
            // negative control: drop the damping terms
            let control = residual - damping * single + t * damping * u0;
            entries.push(WeakResidualEntry {
                mode: k,
                t,
                residual_rel: residual.abs() / max_term,
                residual_abs: residual,
                max_term,
                control_rel: control.abs() / max_term,
            });
        }
    }
    let max_relative = entries
        .iter()
        .fold(T::zero(), |m, e| m.max(e.residual_rel));
    let negative_control_min = entries
        .iter()
        .fold(T::infinity(), |m, e| m.min(e.control_rel));
    Ok(WeakResidualReport {
        entries,
        max_relative,
        negative_control_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    U,
    V,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::U => write!(f, "u"),
            Component::V => write!(f, "v"),
        }
    }
}

/// Disclosure attached to every regularity report.
pub const MOMENT_SURROGATE_NOTE: &str =
    "second-moment log-log regression; pathwise Holder constants are not certified";

#[derive(Debug, Clone)]
pub struct RegularityReport<T> {
    pub space_index: T,
    pub component: Component,
    /// Slope of log2 E||X(t0+h) - X(t0)||^2 against log2 h; the Hölder
    /// surrogate is slope/2.
    pub measured_slope: T,
    pub predicted_bound: T,
    pub pass: bool,
    pub h_range: (T, T),
    pub paths: usize,
    /// 95% band on the slope (same scale as `measured_slope`).
    pub confidence_band: (T, T),
    pub note: &'static str,
    /// Plot-ready `(log2 h, log2 moment)` pairs.
    pub points: Vec<(T, T)>,
}

/// Streaming second-moment accumulator for the Hölder regression.
///
/// Paths are fed one at a time as snapshot arrays aligned with the sampling
/// times `t0` and `t0 + h` for every base point and scale; the deterministic
/// flow of the initial data is subtracted exactly per mode before the norms.
pub struct HolderAccumulator<T> {
    base_points: Vec<T>,
    h_scales: Vec<T>,
    snapshot_times: Vec<T>,
    /// index pairs per (base, scale) into the snapshot list
    pairs: Vec<(usize, usize)>,
    weights: Vec<T>,
    component: Component,
    space_index: T,
    groups: usize,
    /// per (base*scale) per group: sum of squared increments
    sums: Vec<Vec<T>>,
    counts: Vec<usize>,
    paths: usize,
}

const HOLDER_GROUPS: usize = 8;
/// Student-t 97.5% quantile at 7 degrees of freedom.
const T_CRIT_7: f64 = 2.365;

impl<T: Real> HolderAccumulator<T> {
    pub fn new(
        model: &ModelRt<T>,
        base_points: Vec<T>,
        h_scales: Vec<T>,
        space_index: T,
        component: Component,
    ) -> Result<Self> {
        if h_scales.len() < 5 {
            return Err(Error::config("Holder regression wants at least 5 dyadic scales"));
        }
        let t_final = model.t_final();
        for &t0 in &base_points {
            if t0 < t_final * T::cast(0.25) {
                return Err(Error::config(
                    "base points must sit at or after T/4 to avoid the startup layer",
                ));
            }
        }
        // snapshot times: all t0 and t0 + h
        let mut times: Vec<T> = Vec::new();
        let push_unique = |t: T, times: &mut Vec<T>| -> usize {
            for (i, &x) in times.iter().enumerate() {
                if (x - t).abs() < T::cast(1e-12) * (T::one() + t.abs()) {
                    return i;
                }
            }
            times.push(t);
            times.len() - 1
        };
        let mut pairs = Vec::new();
        for &t0 in &base_points {
            for &h in &h_scales {
                let i0 = push_unique(t0, &mut times);
                let i1 = push_unique(t0 + h, &mut times);
                pairs.push((i0, i1));
            }
        }
        let theta = match component {
            Component::U => (T::one() + space_index) * T::cast(0.5),
            Component::V => space_index * T::cast(0.5),
        };
        let weights: Vec<T> = (0..model.space.n_modes())
            .map(|k| model.space.trunc.modes[k].a.powf(theta))
            .collect();
        let n_pairs = pairs.len();
        Ok(HolderAccumulator {
            base_points,
            h_scales,
            snapshot_times: times,
            pairs,
            weights,
            component,
            space_index,
            groups: HOLDER_GROUPS,
            sums: vec![vec![T::zero(); HOLDER_GROUPS]; n_pairs],
            counts: vec![0; n_pairs],
            paths: 0,
        })
    }

    /// The times at which the model must emit snapshots, in emission order.
    pub fn snapshot_times(&self) -> &[T] {
        &self.snapshot_times
    }

    /// Sorted-unique step indices for `ModelRt::output_steps`.
    pub fn output_steps(&self, dt: T) -> Result<Vec<u64>> {
        let mut steps: Vec<u64> = Vec::with_capacity(self.snapshot_times.len());
        for &t in &self.snapshot_times {
            let s = (t / dt).as_f64().round();
            if ((t - dt * T::cast(s)).abs()) > T::cast(1e-9) * dt.max(t) {
                return Err(Error::config(format!(
                    "snapshot time {t} is not a step multiple of dt = {dt}"
                )));
            }
            steps.push(s as u64);
        }
        let mut sorted = steps.clone();
        sorted.sort_unstable();
        sorted.dedup();
        Ok(sorted)
    }

    /// Feed one path. `states` must contain the snapshots at
    /// `snapshot_times()` (sorted by time, as the integrator emits them);
    /// the flow of the initial data is subtracted here.
    pub fn add_path(&mut self, model: &ModelRt<T>, states: &[StateField<T>]) -> Result<()> {
        // map each required time to the stored snapshot
        let find = |t: T| -> Result<usize> {
            states
                .iter()
                .position(|s| (s.t - t).abs() < T::cast(1e-9) * (T::one() + t.abs()))
                .ok_or_else(|| Error::MissingArtifact(format!("snapshot at t = {t} missing")))
        };
        let has_initial_data = model.u0.iter().chain(model.u1.iter()).any(|&x| x != T::zero());
        let group = self.paths % self.groups;
        for (pair_idx, &(i0, i1)) in self.pairs.iter().enumerate() {
            let t0 = self.snapshot_times[i0];
            let t1 = self.snapshot_times[i1];
            let s0 = &states[find(t0)?];
            let s1 = &states[find(t1)?];
            let mut acc = T::zero();
            if has_initial_data {
                let f0 = flow_state(&model.space, model.rho, &model.u0, &model.u1, t0)?;
                let f1 = flow_state(&model.space, model.rho, &model.u0, &model.u1, t1)?;
                for k in 0..self.weights.len() {
                    let d = match self.component {
                        Component::U => (s1.u[k] - f1.u[k]) - (s0.u[k] - f0.u[k]),
                        Component::V => (s1.v[k] - f1.v[k]) - (s0.v[k] - f0.v[k]),
                    };
                    let w = self.weights[k] * d;
                    acc = acc + w * w;
                }
            } else {
                for k in 0..self.weights.len() {
                    let d = match self.component {
                        Component::U => s1.u[k] - s0.u[k],
                        Component::V => s1.v[k] - s0.v[k],
                    };
                    let w = self.weights[k] * d;
                    acc = acc + w * w;
                }
            }
            self.sums[pair_idx][group] = self.sums[pair_idx][group] + acc;
            self.counts[pair_idx] += 1;
        }
        self.paths += 1;
        Ok(())
    }

    /// Least-squares slope with a group-wise confidence band.
    pub fn finalize(&self, predicted_bound: T) -> Result<RegularityReport<T>> {
        if self.paths < 8 {
            return Err(Error::config("Holder regression wants at least 8 paths"));
        }
        let n_scales = self.h_scales.len();
        let n_base = self.base_points.len();
        // pooled moment per scale: average over base points and paths
        let log2 = |x: T| x.ln() / T::cast(std::f64::consts::LN_2);
        let mut points = Vec::with_capacity(n_scales);
        let mut xs = Vec::with_capacity(n_scales);
        let mut ys = Vec::with_capacity(n_scales);
        for (si, &h) in self.h_scales.iter().enumerate() {
            let mut total = T::zero();
            for bi in 0..n_base {
                let pair_idx = bi * n_scales + si;
                let s: T = self.sums[pair_idx].iter().fold(T::zero(), |a, &b| a + b);
                total = total + s / T::cast(self.counts[pair_idx] as f64);
            }
            let moment = total / T::cast(n_base as f64);
            let x = log2(h);
            let y = log2(moment.max(T::cast(1e-300)));
            points.push((x, y));
            xs.push(x);
            ys.push(y);
        }
        let slope = least_squares_slope(&xs, &ys);
        // per-group slopes for the confidence band
        let mut group_slopes = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let mut ys_g = Vec::with_capacity(n_scales);
            for si in 0..n_scales {
                let mut total = T::zero();
                for bi in 0..n_base {
                    let pair_idx = bi * n_scales + si;
                    total = total + self.sums[pair_idx][g];
                }
                ys_g.push(log2(total.max(T::cast(1e-300))));
            }
            group_slopes.push(least_squares_slope(&xs, &ys_g));
        }
        let gmean = group_slopes.iter().fold(T::zero(), |a, &b| a + b)
            / T::cast(self.groups as f64);
        let gvar = group_slopes
            .iter()
            .map(|&s| (s - gmean) * (s - gmean))
            .fold(T::zero(), |a, b| a + b)
            / T::cast((self.groups - 1) as f64);
        let hw = T::cast(T_CRIT_7) * (gvar / T::cast(self.groups as f64)).sqrt();
        let band = (gmean - hw, gmean + hw);
        let pass = slope * T::cast(0.5) >= predicted_bound - T::cast(0.1);
        Ok(RegularityReport {
            space_index: self.space_index,
            component: self.component,
            measured_slope: slope,
            predicted_bound,
            pass,
            h_range: (
                self.h_scales.iter().fold(T::infinity(), |a, &b| a.min(b)),
                self.h_scales.iter().fold(T::zero(), |a, &b| a.max(b)),
            ),
            paths: self.paths,
            confidence_band: band,
            note: MOMENT_SURROGATE_NOTE,
            points,
        })
    }
}

fn least_squares_slope<T: Real>(xs: &[T], ys: &[T]) -> T {
    let n = T::cast(xs.len() as f64);
    let mx = xs.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = ys.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        num = num + (x - mx) * (y - my);
        den = den + (x - mx) * (x - mx);
    }
    num / den
}

/// One regression target emitted by the exponent planner.
#[derive(Debug, Clone)]
pub struct ExponentProbe {
    pub alpha: BigRational,
    pub p: BigRational,
    pub delta: BigRational,
    pub lambda: BigRational,
    pub informational: bool,
}

/// Regression targets from an admissibility report: the two three-quarter
/// probes of the `delta + lambda < lambda_max` window plus a near-boundary
/// informational probe.
pub fn exponent_plan(
    report: &AdmissibilityReport,
    theta_b: Option<&BigRational>,
    theta_c: Option<&BigRational>,
) -> Result<Vec<ExponentProbe>> {
    if !report.verdict {
        return Err(Error::config(format!(
            "inadmissible scenario: {}",
            report.violated.join("; ")
        )));
    }
    let chosen = report.chosen.as_ref().expect("verdict implies chosen");
    let tb = theta_b.cloned().unwrap_or_else(|| chosen.theta_b.clone());
    let tc = theta_c.cloned().unwrap_or_else(|| chosen.theta_c.clone());
    let half = BigRational::new(1.into(), 2.into());
    if tb >= half || tc >= half || tb < BigRational::from_integer(0.into()) {
        return Err(Error::config("theta overrides must lie in [0, 1/2)"));
    }
    let lambda_max = (&half - &tb).min(&half - &tc).min(half.clone());
    let three_quarters = BigRational::new(3.into(), 4.into());
    let nineteen_twentieths = BigRational::new(19.into(), 20.into());
    let zero = BigRational::from_integer(0.into());
    let probes = vec![
        ExponentProbe {
            alpha: chosen.alpha.clone(),
            p: chosen.p.clone(),
            delta: zero.clone(),
            lambda: &lambda_max * &three_quarters,
            informational: false,
        },
        ExponentProbe {
            alpha: chosen.alpha.clone(),
            p: chosen.p.clone(),
            delta: &lambda_max * &three_quarters,
            lambda: zero.clone(),
            informational: false,
        },
        ExponentProbe {
            alpha: chosen.alpha.clone(),
            p: chosen.p.clone(),
            delta: zero,
            lambda: &lambda_max * &nineteen_twentieths,
            informational: true,
        },
    ];
    Ok(probes)
}

pub fn probe_to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone)]
pub struct UdotVReport<T> {
    /// RMS finite-difference error of the ensemble-mean trajectory at the
    /// base spacing and at twice the spacing.
    pub err_fine: T,
    pub err_coarse: T,
    /// Observed order log2(coarse/fine); 2 for a consistent pair.
    pub observed_order: T,
    /// RMS pathwise trapezoid residual |u(t+h) - u(t) - h/2 (v + v')|.
    pub pathwise_residual: T,
}

/// Consistency of the stored velocity with the time derivative of the stored
/// position. The second-order claim is checked on the ensemble mean (the
/// pathwise derivative error is dominated by the Hölder roughness of v and
/// cannot exceed first order); the pathwise integral residual is reported
/// alongside.
pub fn u_dot_v_consistency<T: Real>(
    mean_states: &[StateField<T>],
    pathwise_residual: T,
) -> Result<UdotVReport<T>> {
    if mean_states.len() < 9 {
        return Err(Error::config("u-dot consistency wants at least 9 snapshots"));
    }
    let n_modes = mean_states[0].u.len();
    let fd_err = |stride: usize| -> T {
        let mut acc = T::zero();
        let mut count = 0usize;
        let h = (mean_states[stride].t - mean_states[0].t) * T::cast(1.0);
        let mut i = stride;
        while i + stride < mean_states.len() {
            let prev = &mean_states[i - stride];
            let next = &mean_states[i + stride];
            let here = &mean_states[i];
            for k in 0..n_modes {
                let fd = (next.u[k] - prev.u[k]) / (T::cast(2.0) * h);
                let d = fd - here.v[k];
                acc = acc + d * d;
            }
            count += n_modes;
            i += stride;
        }
        (acc / T::cast(count as f64)).sqrt()
    };
    let err_fine = fd_err(1);
    let err_coarse = fd_err(2);
    let observed_order = (err_coarse / err_fine).ln() / T::cast(std::f64::consts::LN_2);
    Ok(UdotVReport {
        err_fine,
        err_coarse,
        observed_order,
        pathwise_residual,
    })
}

/// Mean dyadic-block tail energies `E sum_{N < k <= 2N} u_k(T)^2` computed
/// from final states; in the linear diagonal case these coincide with the
/// truncation differences `||u^(2N)(T) - u^(N)(T)||^2`.
#[derive(Debug, Clone)]
pub struct TruncationCauchyReport<T> {
    /// `(N, mean tail energy over (N, 2N])`.
    pub blocks: Vec<(usize, T)>,
    pub monotone: bool,
    /// log2 slope of the tail energy against log2 N.
    pub slope: T,
}

pub fn truncation_cauchy<T: Real>(
    final_states: &[StateField<T>],
    block_starts: &[usize],
) -> Result<TruncationCauchyReport<T>> {
    if final_states.is_empty() {
        return Err(Error::config("truncation check needs final states"));
    }
    let n_modes = final_states[0].u.len();
    let mut blocks = Vec::new();
    for &start in block_starts {
        let end = (2 * start).min(n_modes);
        if start >= n_modes {
            return Err(Error::config(format!(
                "block ({start}, {end}] outside the truncation of {n_modes} modes"
            )));
        }
        let mut acc = T::zero();
        for s in final_states {
            for k in start..end {
                acc = acc + s.u[k] * s.u[k];
            }
        }
        blocks.push((start, acc / T::cast(final_states.len() as f64)));
    }
    let monotone = blocks.windows(2).all(|w| w[1].1 <= w[0].1);
    let xs: Vec<T> = blocks
        .iter()
        .map(|&(n, _)| T::cast((n as f64).log2()))
        .collect();
    let ys: Vec<T> = blocks
        .iter()
        .map(|&(_, e)| T::cast(e.as_f64().max(1e-300).log2()))
        .collect();
    let slope = least_squares_slope(&xs, &ys);
    Ok(TruncationCauchyReport {
        blocks,
        monotone,
        slope,
    })
}

/// Text rendering of a regularity report (one line per scale plus verdict).
pub fn render_regularity<T: Real>(r: &RegularityReport<T>) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "component {} in E_theta (delta = {}), {} paths [{}]\n",
        r.component, r.space_index, r.paths, r.note
    ));
    for (x, y) in &r.points {
        out.push_str(&format!("log2 h = {x:>8.3}   log2 E||dX||^2 = {y:>10.4}\n"));
    }
    out.push_str(&format!(
        "slope = {:.4} (band [{:.4}, {:.4}]), slope/2 = {:.4} vs predicted {:.4} - 0.1 -> {}\n",
        r.measured_slope,
        r.confidence_band.0,
        r.confidence_band.1,
        r.measured_slope * T::cast(0.5),
        r.predicted_bound,
        if r.pass { "PASS" } else { "FAIL" }
    ));
    out
}

/// Lambda ceiling `min{eta, 1/2 - theta_B, 1/2 - theta_C} - delta`.
pub fn predicted_lambda_max<T: Real>(eta: T, theta_b: T, theta_c: T, delta: T) -> T {
    let half = T::cast(0.5);
    eta.min(half - theta_b).min(half - theta_c) - delta
}

/// Convenience: the exact-rational version used in reports.
pub fn predicted_lambda_max_rat(eta: &Rat, theta_b: &Rat, theta_c: &Rat, delta: &Rat) -> Rat {
    let half = Rat::new(1, 2);
    let a = (&half.0 - &theta_b.0).min(&half.0 - &theta_c.0).min(eta.0.clone());
    Rat(a - &delta.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissibility::{check_admissibility, NoiseClass};
    use crate::spectral::EquationKind;
    use num_bigint::BigInt;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn simpson_exact_on_cubics() {
        // int_0^1 x^3 = 1/4 with 9 points
        let h = 1.0 / 8.0;
        let vals: Vec<f64> = (0..=8).map(|j| ((j as f64) * h).powi(3)).collect();
        assert!((simpson_uniform(&vals, h) - 0.25).abs() < 1e-14);
        // odd interval count: 3/8 tail keeps cubic exactness
        let h = 1.0 / 7.0;
        let vals: Vec<f64> = (0..=7).map(|j| ((j as f64) * h).powi(3)).collect();
        assert!((simpson_uniform(&vals, h) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn simpson_converges_on_sine() {
        let f = |x: f64| x.sin();
        let exact = 1.0 - 1f64.cos();
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let h = 1.0 / n as f64;
            let vals: Vec<f64> = (0..=n).map(|j| f(j as f64 * h)).collect();
            errs.push((simpson_uniform(&vals, h) - exact).abs());
        }
        assert!(errs[1] < errs[0] / 8.0);
        assert!(errs[2] < errs[1] / 8.0);
    }

    #[test]
    fn least_squares_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.5 * x).collect();
        assert!((least_squares_slope(&xs, &ys) + 2.5).abs() < 1e-12);
    }

    #[test]
    fn exponent_plan_contains_spec_probes() {
        let report = check_admissibility(
            EquationKind::Plate,
            1,
            &BigRational::from_integer(2.into()),
            &NoiseClass::None,
        );
        let theta_c = rat(3, 10);
        let probes = exponent_plan(&report, None, Some(&theta_c)).unwrap();
        // lambda_max = 1/2 - 3/10 = 1/5; probes (0, 3/20) and (3/20, 0)
        assert!(probes.iter().any(|p| p.delta == rat(0, 1) && p.lambda == rat(3, 20)));
        assert!(probes.iter().any(|p| p.delta == rat(3, 20) && p.lambda == rat(0, 1)));
    }

    #[test]
    fn exponent_plan_rejects_inadmissible() {
        let report = check_admissibility(
            EquationKind::Plate,
            2,
            &BigRational::from_integer(3.into()),
            &NoiseClass::None,
        );
        let err = exponent_plan(&report, None, None).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("d/(d-1)"), "{msg}");
    }

    #[test]
    fn predicted_lambda_arithmetic() {
        // d=2, q=1.5 -> theta_C window (1/3, 1/2); midpoint 5/12
        let report = check_admissibility(
            EquationKind::Plate,
            2,
            &rat(3, 2),
            &NoiseClass::None,
        );
        assert!(report.verdict);
        let chosen = report.chosen.unwrap();
        assert_eq!(chosen.theta_c, rat(5, 12));
        let lm = predicted_lambda_max_rat(
            &Rat::new(1, 2),
            &Rat(chosen.theta_b.clone()),
            &Rat(chosen.theta_c.clone()),
            &Rat::new(0, 1),
        );
        assert_eq!(lm.0, rat(1, 12));
    }
}

#[cfg(test)]
pub(crate) mod residual_scaling {
    use super::*;
    use crate::coefficients::{NemytskiiMap, ScalarFunctional};
    use crate::integrator::run_path_trajectory;
    use crate::noise::{NoiseRt, NoiseSpec, PointChannelSpec};
    use crate::spectral::{enumerate_modes, BoxDomain, EquationKind, SpectralSpace};

    pub(crate) fn point_model(cutoff: usize, dt: f64, t_final: f64) -> ModelRt<f64> {
        let domain = BoxDomain::new(vec![1.0], 2 * cutoff + 1).unwrap();
        let trunc = enumerate_modes(&domain, EquationKind::Plate, cutoff).unwrap();
        let space = SpectralSpace::new(domain, trunc).unwrap();
        let n = space.n_modes();
        let s0 = vec![2f64.sqrt() - 1.0];
        let s0_coeffs = space.point_mass_coefficients(&s0).unwrap();
        let n_steps = (t_final / dt).round() as u64;
        ModelRt {
            space,
            rho: 1.0,
            noise: NoiseRt::new(
                &NoiseSpec {
                    point: Some(PointChannelSpec {
                        s0: Some(s0),
                        c: crate::coefficients::FunctionalSel::Constant { value: 1.0 },
                        g: None,
                    }),
                    distributed: None,
                },
                n,
            ),
            f: NemytskiiMap::zero(),
            b: NemytskiiMap::zero(),
            g: ScalarFunctional::Zero,
            c: ScalarFunctional::Constant(1.0),
            s0_coeffs: Some(s0_coeffs),
            u0: vec![0.0; n],
            u1: vec![0.0; n],
            eta: 0.5,
            dt,
            n_steps,
            output_steps: (0..=n_steps).collect(),
            seed: 31,
        }
    }

    #[test]
    fn residual_shrinks_with_dt() {
        let t_final = 0.25;
        let mut maxima = Vec::new();
        for dt in [1.0 / 256.0, 1.0 / 1024.0, 1.0 / 4096.0, 1.0 / 16384.0] {
            let mut worst: f64 = 0.0;
            for path in 0..3 {
                let model = point_model(4, dt, t_final);
                let plan = model.plan().unwrap();
                let traj = run_path_trajectory(&model, &plan, path, true).unwrap();
                let report = weak_residual(
                    &model,
                    &traj.states,
                    traj.increments.as_ref().unwrap(),
                    &[0, 1, 2, 3],
                    &[0.125, 0.25],
                )
                .unwrap();
                worst = worst.max(report.max_relative);
            }
            println!("dt = {dt}: worst rel residual over 3 paths = {worst:.3e}");
            maxima.push(worst);
        }
        assert!(maxima[2] < maxima[0] / 10.0, "{maxima:?}");
        assert!(maxima[3] < maxima[1] / 10.0, "{maxima:?}");
    }
}


#[cfg(test)]
mod residual_bisect2 {
    use super::*;
    use crate::integrator::run_path_trajectory;

    #[test]
    fn residual_with_integrator_single_mode() {
        for dt in [1.0 / 1024.0, 1.0 / 4096.0] {
            let model = super::residual_scaling::point_model(1, dt, 0.25);
            let plan = model.plan().unwrap();
            let traj = run_path_trajectory(&model, &plan, 0, true).unwrap();
            let report = weak_residual(
                &model,
                &traj.states,
                traj.increments.as_ref().unwrap(),
                &[0],
                &[0.125, 0.25],
            )
            .unwrap();
            println!("single-mode integrator residual at dt={dt}: {:.3e}", report.max_relative);
        }
    }
}

#[cfg(test)]
mod residual_bisect3 {
    use super::*;
    use crate::integrator::run_path_trajectory;

    #[test]
    fn residual_scaling_averaged() {
        for cutoff in [1usize, 4] {
            for dt in [1.0 / 1024.0, 1.0 / 4096.0, 1.0 / 16384.0] {
                let model = super::residual_scaling::point_model(cutoff, dt, 0.25);
                let plan = model.plan().unwrap();
                let mut mean = 0.0;
                let mut worst: f64 = 0.0;
                let paths = 20u64;
                for p in 0..paths {
                    let traj = run_path_trajectory(&model, &plan, p, true).unwrap();
                    let modes: Vec<usize> = (0..cutoff).collect();
                    let report = weak_residual(
                        &model,
                        &traj.states,
                        traj.increments.as_ref().unwrap(),
                        &modes,
                        &[0.25],
                    )
                    .unwrap();
                    mean += report.max_relative;
                    worst = worst.max(report.max_relative);
                }
                println!(
                    "cutoff {cutoff} dt {dt:.2e}: mean {:.3e} worst {:.3e}",
                    mean / paths as f64,
                    worst
                );
            }
        }
    }
}


#[cfg(test)]
mod residual_bisect5 {
    use super::*;
    use crate::integrator::run_path_trajectory;

    #[test]
    fn debug_small_dt_terms() {
        let dt = 1.0 / 16384.0;
        let model = super::residual_scaling::point_model(1, dt, 0.25);
        let plan = model.plan().unwrap();
        let traj = run_path_trajectory(&model, &plan, 0, true).unwrap();
        let states = &traj.states;
        let incs = traj.increments.as_ref().unwrap();
        let idx = 4096usize;
        let mode = &model.space.trunc.modes[0];
        let a = mode.a;
        let damping = model.rho * a.sqrt();
        let t = 0.25;
        let u_slice: Vec<f64> = states[..=idx].iter().map(|s| s.u[0]).collect();
        let kernel: Vec<f64> = states[..=idx].iter().map(|s| (t - s.t) * s.u[0]).collect();
        let single = simpson_uniform(&u_slice, dt);
        let double = simpson_uniform(&kernel, dt);
        let ek = model.s0_coeffs.as_ref().unwrap()[0];
        let mut stoch = 0.0;
        for (n, inc) in incs[..idx].iter().enumerate() {
            let p = inc.point.as_ref().unwrap();
            let tn = dt * n as f64;
            stoch += ek * ((t - tn) * p.dw - p.theta);
        }
        println!("n_steps = {}, states = {}, incs = {}", model.n_steps, states.len(), incs.len());
        println!("u(t) = {:.6e}", states[idx].u[0]);
        println!("a*double = {:.6e}", a * double);
        println!("damping*single = {:.6e}", damping * single);
        println!("stoch = {:.6e}", stoch);
        println!("residual = {:.6e}", states[idx].u[0] + a * double + damping * single - stoch);
        println!("last state t = {}, expected {}", states[idx].t, t);
    }
}
