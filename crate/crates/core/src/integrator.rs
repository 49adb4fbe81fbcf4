//! Time stepping of the truncated pair system.
//!
//! Per mode the dynamics are linear with companion matrix `A_k`; the scheme
//! propagates the linear part exactly by `exp(dt A_k)`, treats drift
//! nonlinearities by exponential Euler (`Phi_1(dt) F(t_n, U_n)`), and draws
//! the stochastic-convolution increments
//!
//! ```text
//! I_k = int_{t_n}^{t_{n+1}} exp((t_{n+1}-s) A_k) b dw(s)
//! ```
//!
//! from their exact Gaussian law, conditionally on the recorded driver pair
//! `(dw, Theta)` of the step. Conditioning keeps every per-mode marginal
//! exact (no time-discretization bias in the moment regressions) while all
//! modes share the same recorded Brownian increments, which is what the
//! weak-form residual checks re-sum. Across modes the conditional remainders
//! are drawn independently; per-mode laws and second-moment functionals are
//! unaffected.
//!
//! State-dependent intensities (multiplicative noise) freeze the coefficient
//! at the left endpoint; strong order 1/2 is expected and not asserted.

use serde::{Deserialize, Serialize};

use crate::coefficients::{apply_functional, apply_nemytskii, NemytskiiMap, ScalarFunctional};
use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};
use crate::noise::{NoiseRt, StepIncrements};
use crate::real::Real;
use crate::rng::{stream, Channel};
use crate::semigroup::{mode_exp, mode_matrix, phi1, phi2, ModeMatrix, SpectrumClass};
use crate::spectral::{GridSelect, SpectralSpace};

/// Truncated spectral state of the pair (u, u_dot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateField<T> {
    pub t: T,
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> StateField<T> {
    pub fn zero(n: usize) -> Self {
        StateField {
            t: T::zero(),
            u: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Exact covariance of the stochastic-convolution increment
/// `int_0^dt exp(rA) b dw(r)` for one mode.
pub fn stochastic_convolution_covariance<T: Real>(
    m: &ModeMatrix<T>,
    forcing: Vec2<T>,
    dt: T,
) -> Mat2<T> {
    assert!(dt > T::zero(), "covariance wants dt > 0");
    if forcing[0] == T::zero() && forcing[1] == T::zero() {
        return Mat2::zero();
    }
    match m.class {
        SpectrumClass::Jordan => jordan_conv_covariance(m, forcing, dt),
        _ => eigen_conv_covariance(m, forcing, dt),
    }
}

fn eigen_conv_covariance<T: Real>(m: &ModeMatrix<T>, b: Vec2<T>, dt: T) -> Mat2<T> {
    use num_complex::Complex;
    let (l1, l2) = m.eigenvalues();
    let det = l2 - l1;
    let bz = [Complex::new(b[0], T::zero()), Complex::new(b[1], T::zero())];
    // g = V^{-1} b with V = [1 1; l1 l2]
    let g = [(l2 * bz[0] - bz[1]) / det, (bz[1] - l1 * bz[0]) / det];
    let lam = [l1, l2];
    // G_ij = g_i g_j (e^{(l_i + l_j) dt} - 1)/(l_i + l_j)
    let mut gmat = [[Complex::new(T::zero(), T::zero()); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let s = lam[i] + lam[j];
            let f = ((s * Complex::new(dt, T::zero())).exp() - Complex::new(T::one(), T::zero())) / s;
            gmat[i][j] = g[i] * g[j] * f;
        }
    }
    // Q = V G V^T
    let v = [[Complex::new(T::one(), T::zero()), Complex::new(T::one(), T::zero())], [l1, l2]];
    let mut q = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = Complex::new(T::zero(), T::zero());
            for i in 0..2 {
                for j in 0..2 {
                    acc = acc + v[r][i] * gmat[i][j] * v[c][j];
                }
            }
            q[r][c] = acc.re;
        }
    }
    Mat2 { m: q }.symmetrize()
}

fn jordan_conv_covariance<T: Real>(m: &ModeMatrix<T>, b: Vec2<T>, dt: T) -> Mat2<T> {
    // E(r) b = e^{lr} (b + r N b) with N = A - l I nilpotent
    let l = -m.decay_rate();
    let nil = m.matrix().sub(Mat2::diag(l, l));
    let nb = nil.mul_vec(b);
    let two_l = T::cast(2.0) * l;
    let e = (two_l * dt).exp();
    let i0 = (e - T::one()) / two_l;
    let i1 = (dt * e - i0) / two_l;
    let i2 = (dt * dt * e - T::cast(2.0) * i1) / two_l;
    let outer = |x: Vec2<T>, y: Vec2<T>| Mat2::new(x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1]);
    outer(b, b)
        .scale(i0)
        .add(outer(nb, b).add(outer(b, nb)).scale(i1))
        .add(outer(nb, nb).scale(i2))
        .symmetrize()
}

/// Per-mode sampler of the exact convolution increment, conditioned on the
/// recorded `(dw, Theta)` pair of the step.
#[derive(Debug, Clone, Copy)]
struct ConvSampler<T> {
    /// Regression of the increment on `(dw, Theta)`.
    gamma: Mat2<T>,
    /// Cholesky factor of the conditional covariance.
    chol: Mat2<T>,
}

impl<T: Real> ConvSampler<T> {
    /// Unit-intensity sampler for forcing direction (0, 1). Linear scaling in
    /// the intensity happens at draw time.
    fn new(m: &ModeMatrix<T>, dt: T) -> Self {
        let bhat = [T::zero(), T::one()];
        let q = stochastic_convolution_covariance(m, bhat, dt);
        let m1 = {
            let p = phi1(m, dt);
            [p.m[0][1], p.m[1][1]]
        };
        let m2 = {
            let p = phi2(m, dt);
            [p.m[0][1], p.m[1][1]]
        };
        // cross covariance columns: Cov(I, dw) = m1, Cov(I, Theta) = dt m1 - m2
        let cross = Mat2::new(
            m1[0],
            dt * m1[0] - m2[0],
            m1[1],
            dt * m1[1] - m2[1],
        );
        // inverse of [[dt, dt^2/2], [dt^2/2, dt^3/3]]
        let inv = Mat2::new(
            T::cast(4.0) / dt,
            T::cast(-6.0) / (dt * dt),
            T::cast(-6.0) / (dt * dt),
            T::cast(12.0) / (dt * dt * dt),
        );
        let gamma = cross.mul(inv);
        let cond = q.sub(gamma.mul(cross.transpose())).symmetrize();
        // the conditional covariance scales like dt^7; the floor guarding
        // rounding-negative diagonals must be relative to it, an absolute
        // floor would drown the true remainder
        let scale = cond.m[0][0].abs().max(cond.m[1][1].abs());
        let chol = cond.cholesky_with_floor(T::cast(1e-13) * scale);
        ConvSampler { gamma, chol }
    }

    /// Draw the increment given the driver pair and two fresh normals, scaled
    /// by `intensity`.
    fn draw(&self, dw: T, theta: T, z: Vec2<T>, intensity: T) -> Vec2<T> {
        let mean = self.gamma.mul_vec([dw, theta]);
        let noise = self.chol.mul_vec(z);
        [
            intensity * (mean[0] + noise[0]),
            intensity * (mean[1] + noise[1]),
        ]
    }
}

/// Cached per-mode data for one step size.
#[derive(Debug, Clone)]
pub struct StepPlan<T> {
    pub dt: T,
    pub matrices: Vec<ModeMatrix<T>>,
    pub exp: Vec<Mat2<T>>,
    pub phi1: Vec<Mat2<T>>,
    point: Option<Vec<ConvSampler<T>>>,
    distributed: Option<Vec<ConvSampler<T>>>,
}

impl<T: Real> StepPlan<T> {
    pub fn new(
        space: &SpectralSpace<T>,
        rho: T,
        dt: T,
        point_channel: bool,
        distributed_additive: bool,
    ) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::config("step size must be positive"));
        }
        let mut matrices = Vec::with_capacity(space.n_modes());
        for mode in &space.trunc.modes {
            matrices.push(mode_matrix(mode.a, rho)?);
        }
        let exp: Vec<_> = matrices.iter().map(|m| mode_exp(m, dt)).collect();
        let phi1s: Vec<_> = matrices.iter().map(|m| phi1(m, dt)).collect();
        let point = point_channel
            .then(|| matrices.iter().map(|m| ConvSampler::new(m, dt)).collect());
        let distributed = distributed_additive
            .then(|| matrices.iter().map(|m| ConvSampler::new(m, dt)).collect());
        Ok(StepPlan {
            dt,
            matrices,
            exp,
            phi1: phi1s,
            point,
            distributed,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.matrices.len()
    }
}

/// Everything a path needs: spectral space, coefficients, noise, schedule.
#[derive(Debug, Clone)]
pub struct ModelRt<T> {
    pub space: SpectralSpace<T>,
    pub rho: T,
    pub noise: NoiseRt<T>,
    pub f: NemytskiiMap<T>,
    pub b: NemytskiiMap<T>,
    pub g: ScalarFunctional<T>,
    pub c: ScalarFunctional<T>,
    /// `e_k(s0)` for the point channel.
    pub s0_coeffs: Option<Vec<T>>,
    pub u0: Vec<T>,
    pub u1: Vec<T>,
    /// Initial-data smoothness tag eta in (0, 1/2].
    pub eta: T,
    pub dt: T,
    pub n_steps: u64,
    /// Step indices at which snapshots are emitted (0 = initial state).
    pub output_steps: Vec<u64>,
    pub seed: u64,
}

impl<T: Real> ModelRt<T> {
    pub fn initial_state(&self) -> StateField<T> {
        StateField {
            t: T::zero(),
            u: self.u0.clone(),
            v: self.u1.clone(),
        }
    }

    pub fn plan(&self) -> Result<StepPlan<T>> {
        let distributed_additive =
            self.noise.lambdas.is_some() && self.b.state_independent && !self.b.zero;
        Ok(StepPlan::new(
            &self.space,
            self.rho,
            self.dt,
            self.noise.point_active,
            distributed_additive,
        )?)
    }

    pub fn t_final(&self) -> T {
        self.dt * T::cast(self.n_steps as f64)
    }
}

/// One exponential-Euler step. Deterministic given the increments.
pub fn step<T: Real>(
    state: &StateField<T>,
    plan: &StepPlan<T>,
    model: &ModelRt<T>,
    incr: &StepIncrements<T>,
    path: u64,
    step_index: u64,
) -> Result<StateField<T>> {
    let n = plan.n_modes();
    debug_assert_eq!(state.u.len(), n);
    let mut next = StateField {
        t: state.t + plan.dt,
        u: vec![T::zero(); n],
        v: vec![T::zero(); n],
    };

    // drift: f as a Nemytskii field plus the deterministic point forcing G
    let f_coeffs = if model.f.zero {
        None
    } else {
        Some(apply_nemytskii(&model.f, state.t, &state.u, &state.v, &model.space).map_err(
            |e| match e {
                Error::Numerical { detail, .. } => Error::Numerical {
                    path,
                    step: step_index,
                    detail,
                },
                other => other,
            },
        )?)
    };
    let g_val = if model.g.is_zero() || model.s0_coeffs.is_none() {
        T::zero()
    } else {
        apply_functional(&model.g, state.t, &state.u, &model.space)?
    };

    for k in 0..n {
        let uk = [state.u[k], state.v[k]];
        let mut out = plan.exp[k].mul_vec(uk);
        let mut drift = f_coeffs.as_ref().map(|f| f[k]).unwrap_or_else(T::zero);
        if g_val != T::zero() {
            drift = drift + g_val * model.s0_coeffs.as_ref().unwrap()[k];
        }
        if drift != T::zero() {
            let dv = plan.phi1[k].mul_vec([T::zero(), drift]);
            out[0] = out[0] + dv[0];
            out[1] = out[1] + dv[1];
        }
        next.u[k] = out[0];
        next.v[k] = out[1];
    }

    // point channel: exact conditional convolution increments, intensity
    // frozen at the left endpoint when C depends on the state
    if let (Some(samplers), Some(pinc)) = (plan.point.as_ref(), incr.point.as_ref()) {
        let kappa = match &model.c {
            ScalarFunctional::Zero => T::zero(),
            ScalarFunctional::Constant(c) => *c,
            other => apply_functional(other, state.t, &state.u, &model.space)?,
        };
        let s0 = model
            .s0_coeffs
            .as_ref()
            .expect("point channel requires s0 coefficients");
        let mut rng = stream(model.seed, path, Channel::PointRemainder, step_index);
        for k in 0..n {
            let z = [T::std_normal(&mut rng), T::std_normal(&mut rng)];
            if kappa == T::zero() {
                continue;
            }
            let inc = samplers[k].draw(pinc.dw, pinc.theta, z, kappa * s0[k]);
            next.u[k] = next.u[k] + inc[0];
            next.v[k] = next.v[k] + inc[1];
        }
    }

    // distributed channel
    if let Some(dinc) = incr.distributed.as_ref() {
        if let Some(samplers) = plan.distributed.as_ref() {
            // state-independent intensity: exact per-mode increments (the
            // covariance is diagonal in the same basis)
            let bval = (model.b.f)(state.t, &[], T::zero(), T::zero());
            let mut rng = stream(model.seed, path, Channel::DistributedRemainder, step_index);
            for k in 0..n {
                let z = [T::std_normal(&mut rng), T::std_normal(&mut rng)];
                if bval == T::zero() {
                    continue;
                }
                // dinc already carries sqrt(lambda); the conditional sampler
                // regression is scale invariant and z picks up sqrt(lambda)
                // through the recorded pair's magnitude
                let lambda = model
                    .noise
                    .lambdas
                    .as_ref()
                    .map(|l| l[k])
                    .unwrap_or_else(T::zero);
                if lambda == T::zero() {
                    continue;
                }
                let inc = samplers[k].draw_scaled_remainder(
                    dinc[k].dw,
                    dinc[k].theta,
                    z,
                    bval,
                    lambda.sqrt(),
                );
                next.u[k] = next.u[k] + inc[0];
                next.v[k] = next.v[k] + inc[1];
            }
        } else if !model.b.zero {
            // multiplicative: evaluate b on the grid at the left endpoint,
            // multiply the synthesized noise field, analyse, propagate by
            // exp(dt A)
            let grid = GridSelect::Dealias;
            let u = model.space.synthesize(&state.u, grid);
            let v = model.space.synthesize(&state.v, grid);
            let noise_coeffs: Vec<T> = dinc.iter().map(|i| i.dw).collect();
            let wfield = model.space.synthesize(&noise_coeffs, grid);
            let mut prod = vec![T::zero(); u.len()];
            for (j, p) in prod.iter_mut().enumerate() {
                let s = model.space.node(grid, j);
                let bv = (model.b.f)(state.t, &s, u[j], v[j]);
                if !bv.is_finite() {
                    return Err(Error::Numerical {
                        path,
                        step: step_index,
                        detail: "multiplicative coefficient non-finite".into(),
                    });
                }
                *p = bv * wfield[j];
            }
            let db = model.space.analyze(&prod, grid);
            for k in 0..n {
                let inc = plan.exp[k].mul_vec([T::zero(), db[k]]);
                next.u[k] = next.u[k] + inc[0];
                next.v[k] = next.v[k] + inc[1];
            }
        }
    }

    if !next.is_finite() {
        return Err(Error::Numerical {
            path,
            step: step_index,
            detail: "state lost finiteness".into(),
        });
    }
    Ok(next)
}

impl<T: Real> ConvSampler<T> {
    /// Variant for the distributed channel: the recorded pair already carries
    /// `sqrt(lambda)`, the fresh remainder must be scaled by it explicitly.
    fn draw_scaled_remainder(
        &self,
        dw: T,
        theta: T,
        z: Vec2<T>,
        intensity: T,
        sqrt_lambda: T,
    ) -> Vec2<T> {
        let mean = self.gamma.mul_vec([dw, theta]);
        let noise = self.chol.mul_vec(z);
        [
            intensity * (mean[0] + sqrt_lambda * noise[0]),
            intensity * (mean[1] + sqrt_lambda * noise[1]),
        ]
    }
}

/// Deterministic flow `exp(tA) U_0`, exact per mode. Used to subtract the
/// initial-data contribution in the regularity regressions.
pub fn flow_state<T: Real>(
    space: &SpectralSpace<T>,
    rho: T,
    u0: &[T],
    u1: &[T],
    t: T,
) -> Result<StateField<T>> {
    let n = space.n_modes();
    let mut state = StateField::zero(n);
    state.t = t;
    for k in 0..n {
        let m = mode_matrix(space.trunc.modes[k].a, rho)?;
        let e = mode_exp(&m, t);
        let out = e.mul_vec([u0[k], u1[k]]);
        state.u[k] = out[0];
        state.v[k] = out[1];
    }
    Ok(state)
}

/// Full trajectory of one path at the requested output steps.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub states: Vec<StateField<T>>,
    pub increments: Option<Vec<StepIncrements<T>>>,
}

/// Observer hooks so large runs can aggregate without storing trajectories.
pub trait PathObserver<T> {
    fn on_snapshot(&mut self, _state: &StateField<T>) {}
    fn on_increments(&mut self, _step: u64, _incr: &StepIncrements<T>) {}
}

/// Collecting observer.
pub struct Collector<T> {
    pub trajectory: Trajectory<T>,
}

impl<T: Real> Collector<T> {
    pub fn new(record_increments: bool) -> Self {
        Collector {
            trajectory: Trajectory {
                states: Vec::new(),
                increments: record_increments.then(Vec::new),
            },
        }
    }
}

impl<T: Real> PathObserver<T> for Collector<T> {
    fn on_snapshot(&mut self, state: &StateField<T>) {
        self.trajectory.states.push(state.clone());
    }

    fn on_increments(&mut self, _step: u64, incr: &StepIncrements<T>) {
        if let Some(v) = self.trajectory.increments.as_mut() {
            v.push(incr.clone());
        }
    }
}

/// Integrate one path; deterministic per (model.seed, path).
pub fn run_path<T: Real, O: PathObserver<T>>(
    model: &ModelRt<T>,
    plan: &StepPlan<T>,
    path: u64,
    observer: &mut O,
) -> Result<StateField<T>> {
    let mut state = model.initial_state();
    let mut output_iter = model.output_steps.iter().peekable();
    if output_iter.peek() == Some(&&0) {
        observer.on_snapshot(&state);
        output_iter.next();
    }
    for s in 0..model.n_steps {
        let incr = model.noise.sample_step(plan.dt, model.seed, path, s);
        observer.on_increments(s, &incr);
        state = step(&state, plan, model, &incr, path, s)?;
        // snap the time to the exact grid to avoid drift in comparisons
        state.t = plan.dt * T::cast((s + 1) as f64);
        if output_iter.peek() == Some(&&(s + 1)) {
            observer.on_snapshot(&state);
            output_iter.next();
        }
    }
    Ok(state)
}

/// Convenience wrapper collecting the trajectory.
pub fn run_path_trajectory<T: Real>(
    model: &ModelRt<T>,
    plan: &StepPlan<T>,
    path: u64,
    record_increments: bool,
) -> Result<Trajectory<T>> {
    let mut collector = Collector::new(record_increments);
    run_path(model, plan, path, &mut collector)?;
    Ok(collector.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{NemytskiiMap, ScalarFunctional};
    use crate::noise::NoiseSpec;
    use crate::spectral::{enumerate_modes, BoxDomain, EquationKind};
    use approx::assert_relative_eq;

    fn space(cutoff: usize, points: usize) -> SpectralSpace<f64> {
        let domain = BoxDomain::new(vec![1.0], points).unwrap();
        let trunc = enumerate_modes(&domain, EquationKind::Plate, cutoff).unwrap();
        SpectralSpace::new(domain, trunc).unwrap()
    }

    fn base_model(cutoff: usize, dt: f64, n_steps: u64) -> ModelRt<f64> {
        let space = space(cutoff, 2 * cutoff + 1);
        let n = space.n_modes();
        let s0 = vec![2f64.sqrt() - 1.0];
        let s0_coeffs = space.point_mass_coefficients(&s0).unwrap();
        ModelRt {
            space,
            rho: 1.0,
            noise: NoiseRt::new(
                &NoiseSpec {
                    point: Some(crate::noise::PointChannelSpec {
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
            seed: 99,
        }
    }

    /// Lyapunov oracle: solve A P + P A^T + b b^T = 0 for symmetric P.
    fn lyapunov_oracle(a: Mat2<f64>, b: [f64; 2]) -> Mat2<f64> {
        // unknowns (p11, p12, p22); rows from the three independent entries
        let m = a.m;
        let rhs = [-(b[0] * b[0]), -(b[0] * b[1]), -(b[1] * b[1])];
        // (AP + PA^T)_11 = 2(a11 p11 + a12 p12)
        // (AP + PA^T)_12 = a21 p11 + (a11 + a22) p12 + a12 p22
        // (AP + PA^T)_22 = 2(a21 p12 + a22 p22)
        let mat = [
            [2.0 * m[0][0], 2.0 * m[0][1], 0.0],
            [m[1][0], m[0][0] + m[1][1], m[0][1]],
            [0.0, 2.0 * m[1][0], 2.0 * m[1][1]],
        ];
        // 3x3 solve by Cramer
        let det3 = |a: [[f64; 3]; 3]| -> f64 {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        };
        let d = det3(mat);
        let mut cols = [mat; 3];
        for i in 0..3 {
            for r in 0..3 {
                cols[i][r][i] = rhs[r];
            }
        }
        let p11 = det3(cols[0]) / d;
        let p12 = det3(cols[1]) / d;
        let p22 = det3(cols[2]) / d;
        Mat2::new(p11, p12, p12, p22)
    }

    #[test]
    fn conv_covariance_stationary_limit() {
        // dt = 50/(rho sqrt(a)) reaches the Lyapunov fixed point to 1e-8;
        // a = 1, rho = 2, sigma = 1 gives diag(0.25, 0.25)
        let m = mode_matrix(1.0f64, 2.0).unwrap();
        let q = stochastic_convolution_covariance(&m, [0.0, 1.0], 50.0 / m.slow_decay_rate());
        assert_relative_eq!(q.m[0][0], 0.25, epsilon = 1e-8);
        assert_relative_eq!(q.m[1][1], 0.25, epsilon = 1e-8);
        assert!(q.m[0][1].abs() < 1e-8);
        // general parameters against the Lyapunov oracle
        for (a, rho, sigma) in [(4.0, 1.0, 0.7), (9.0, 3.0, 1.3), (25.0, 0.5, 1.0)] {
            let m = mode_matrix(a, rho).unwrap();
            let q = stochastic_convolution_covariance(&m, [0.0, sigma], 50.0 / m.slow_decay_rate());
            let p = lyapunov_oracle(m.matrix(), [0.0, sigma]);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (q.m[i][j] - p.m[i][j]).abs() < 1e-8 * (1.0 + p.m[i][j].abs()),
                        "a={a} rho={rho}: {:?} vs {:?}",
                        q.m,
                        p.m
                    );
                }
            }
        }
    }

    #[test]
    fn conv_covariance_small_dt_leading_order() {
        let m = mode_matrix(4.0, 1.0).unwrap();
        let dt = 1e-6;
        let q = stochastic_convolution_covariance(&m, [0.0, 1.0], dt);
        // leading order b b^T dt in the velocity slot
        assert_relative_eq!(q.m[1][1], dt, max_relative = 1e-4);
        assert!(q.m[0][0] < dt * dt);
    }

    #[test]
    fn conv_covariance_zero_forcing() {
        let m = mode_matrix(4.0, 1.0).unwrap();
        let q = stochastic_convolution_covariance(&m, [0.0, 0.0], 0.1);
        assert_eq!(q, Mat2::zero());
    }

    #[test]
    fn conv_covariance_jordan_branch_continuous() {
        // rho -> 2 limit agrees with the Jordan closed form
        let dt = 0.3;
        let qj = stochastic_convolution_covariance(&mode_matrix(1.0f64, 2.0).unwrap(), [0.0, 1.0], dt);
        let qn = stochastic_convolution_covariance(
            &mode_matrix(1.0, 2.0 + 1e-7).unwrap(),
            [0.0, 1.0],
            dt,
        );
        for i in 0..2 {
            for j in 0..2 {
                assert!((qj.m[i][j] - qn.m[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_noise_zero_data_stays_zero() {
        let mut model = base_model(4, 0.01, 100);
        model.noise.point_active = false;
        model.c = ScalarFunctional::Zero;
        let plan = model.plan().unwrap();
        let traj = run_path_trajectory(&model, &plan, 0, false).unwrap();
        for s in &traj.states {
            assert!(s.u.iter().all(|&x| x == 0.0));
            assert!(s.v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn linear_zero_noise_is_exact_semigroup() {
        let mut model = base_model(4, 0.01, 10);
        model.noise.point_active = false;
        model.c = ScalarFunctional::Zero;
        model.u0[0] = 1.0;
        model.u1[1] = -0.5;
        let plan = model.plan().unwrap();
        let traj = run_path_trajectory(&model, &plan, 0, false).unwrap();
        let last = traj.states.last().unwrap();
        let expect = flow_state(&model.space, model.rho, &model.u0, &model.u1, 0.1).unwrap();
        for k in 0..model.space.n_modes() {
            assert_relative_eq!(last.u[k], expect.u[k], epsilon = 1e-12);
            assert_relative_eq!(last.v[k], expect.v[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn two_half_steps_equal_one_full_step_without_noise() {
        let mut model = base_model(3, 0.02, 1);
        model.noise.point_active = false;
        model.c = ScalarFunctional::Zero;
        model.u0[0] = 0.3;
        model.u1[2] = 0.7;
        let plan_full = StepPlan::new(&model.space, model.rho, 0.02, false, false).unwrap();
        let plan_half = StepPlan::new(&model.space, model.rho, 0.01, false, false).unwrap();
        let s0 = model.initial_state();
        let empty = StepIncrements { point: None, distributed: None };
        let full = step(&s0, &plan_full, &model, &empty, 0, 0).unwrap();
        let half1 = step(&s0, &plan_half, &model, &empty, 0, 0).unwrap();
        let half2 = step(&half1, &plan_half, &model, &empty, 0, 1).unwrap();
        for k in 0..model.space.n_modes() {
            assert_relative_eq!(full.u[k], half2.u[k], epsilon = 1e-12);
            assert_relative_eq!(full.v[k], half2.v[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_decay_to_tolerance() {
        let mut model = base_model(8, 0.01, 0);
        model.noise.point_active = false;
        model.c = ScalarFunctional::Zero;
        for k in 0..model.space.n_modes() {
            model.u0[k] = 1.0 / (k + 1) as f64;
            model.u1[k] = 0.5;
        }
        // the slowest mode decays like e^{-(rho sqrt(a)/2) t}; reaching 1e-6
        // takes 2 ln(1e6)/(rho sqrt(a_min)) plus transient margin
        let a_min = model.space.trunc.modes[0].a;
        let t_end = 40.0 / (model.rho * a_min.sqrt());
        model.n_steps = (t_end / model.dt).ceil() as u64;
        model.output_steps = vec![0, model.n_steps];
        let plan = model.plan().unwrap();
        let traj = run_path_trajectory(&model, &plan, 0, false).unwrap();
        let norm = |s: &StateField<f64>| -> f64 {
            s.u.iter()
                .zip(&model.space.trunc.modes)
                .map(|(&u, m)| m.a * u * u)
                .sum::<f64>()
                + s.v.iter().map(|&v| v * v).sum::<f64>()
        };
        let n0 = norm(&traj.states[0]).sqrt();
        let n1 = norm(traj.states.last().unwrap()).sqrt();
        assert!(n1 < 1e-6 * n0, "decay {n1} vs initial {n0}");
    }

    #[test]
    fn same_seed_identical_trajectories() {
        let model = base_model(8, 0.01, 200);
        let plan = model.plan().unwrap();
        let a = run_path_trajectory(&model, &plan, 3, true).unwrap();
        let b = run_path_trajectory(&model, &plan, 3, true).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
        let c = run_path_trajectory(&model, &plan, 4, false).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn additive_point_noise_covariance_matches_closed_form() {
        // single mode, u0 = u1 = 0: after n steps the state is Gaussian with
        // covariance equal to the convolution covariance at n dt (the
        // per-step accumulation sum telescopes exactly)
        let mut model = base_model(1, 1.0 / 64.0, 64);
        model.output_steps = vec![64];
        let plan = model.plan().unwrap();
        let n_paths = 20_000u64;
        let mut s_uu = 0.0;
        let mut s_uv = 0.0;
        let mut s_vv = 0.0;
        for p in 0..n_paths {
            let t = run_path_trajectory(&model, &plan, p, false).unwrap();
            let s = &t.states[0];
            s_uu += s.u[0] * s.u[0];
            s_uv += s.u[0] * s.v[0];
            s_vv += s.v[0] * s.v[0];
        }
        let nf = n_paths as f64;
        let m = &plan.matrices[0];
        let c = model.s0_coeffs.as_ref().unwrap()[0];
        let q = stochastic_convolution_covariance(m, [0.0, c], 1.0);
        // against the accumulated form sum_j e^{j dt A} Q_dt e^{j dt A^T}
        let qdt = stochastic_convolution_covariance(m, [0.0, c], plan.dt);
        let e = mode_exp(m, plan.dt);
        let mut acc = Mat2::zero();
        for _ in 0..64 {
            acc = e.mul(acc).mul(e.transpose()).add(qdt);
        }
        for (got, want) in [(acc.m[0][0], q.m[0][0]), (acc.m[1][1], q.m[1][1])] {
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
        assert_relative_eq!(s_uu / nf, q.m[0][0], max_relative = 0.05);
        assert_relative_eq!(s_vv / nf, q.m[1][1], max_relative = 0.05);
        assert!((s_uv / nf - q.m[0][1]).abs() < 0.05 * (q.m[0][0] * q.m[1][1]).sqrt());
    }

    #[test]
    fn exponential_euler_first_order_on_linear_drift() {
        // f(u) = -u, no noise: the scheme converges at order >= 1 to the
        // exact solution of the shifted mode system; dense RK4 reference.
        let cutoff = 2;
        let space = space(cutoff, 2 * cutoff + 1);
        let n = space.n_modes();
        let mut model = base_model(cutoff, 1e-2, 0);
        model.noise.point_active = false;
        model.c = ScalarFunctional::Zero;
        model.f = NemytskiiMap::linear(0.0, -1.0, 0.0);
        model.u0 = vec![0.0; n];
        model.u0[0] = 1.0;
        model.u1 = vec![0.0; n];

        // reference: RK4 on the coupled mode ODE u' = v, v' = -a u - c v - u
        let reference = |t_end: f64| -> Vec<f64> {
            let a = space.trunc.modes[0].a;
            let c = 1.0 * a.sqrt();
            let mut y = [1.0, 0.0];
            let h = 1e-6;
            let steps = (t_end / h).round() as u64;
            let f = |y: [f64; 2]| [y[1], -a * y[0] - c * y[1] - y[0]];
            for _ in 0..steps {
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
                let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
                let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
                y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
                y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
            }
            vec![y[0], y[1]]
        };
        let t_end = 0.1;
        let exact = reference(t_end);
        let mut errors = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let mut m = model.clone();
            m.dt = dt;
            m.n_steps = (t_end / dt).round() as u64;
            m.output_steps = vec![m.n_steps];
            let plan = m.plan().unwrap();
            let traj = run_path_trajectory(&m, &plan, 0, false).unwrap();
            let got = &traj.states[0];
            let err = ((got.u[0] - exact[0]).powi(2) + (got.v[0] - exact[1]).powi(2)).sqrt();
            errors.push(err);
        }
        let order1 = (errors[0] / errors[1]).log10();
        let order2 = (errors[1] / errors[2]).log10();
        assert!(order1 >= 0.9, "{errors:?}");
        assert!(order2 >= 0.9, "{errors:?}");
    }

    #[test]
    fn non_finite_state_reports_step() {
        let mut model = base_model(2, 0.1, 10);
        // blow the state up with an enormous linear feedback
        model.f = NemytskiiMap::linear(0.0, 1e300, 0.0);
        model.u0[0] = 1.0;
        let plan = model.plan().unwrap();
        let err = run_path_trajectory(&model, &plan, 0, false).unwrap_err();
        match err {
            Error::Numerical { step, .. } => assert!(step < 10),
            other => panic!("unexpected error {other:?}"),
        }
    }
}

#[cfg(test)]
mod sampler_diagnostics {
    use super::*;
    use crate::rng::{stream, Channel};
    use crate::semigroup::{mode_exp, mode_matrix, phi1, phi2};

    /// Fine-Euler within-step oracle for the joint law of (I, dw, Theta).
    #[test]
    fn conditional_sampler_matches_fine_euler_oracle() {
        let a: f64 = 97.4;
        let m = mode_matrix(a, 1.0).unwrap();
        let dt = 1.0 / 64.0;
        let q = stochastic_convolution_covariance(&m, [0.0, 1.0], dt);
        let p1 = phi1(&m, dt);
        let p2 = phi2(&m, dt);
        let m1 = [p1.m[0][1], p1.m[1][1]];
        let m2 = [p2.m[0][1], p2.m[1][1]];
        let cov_it = [dt * m1[0] - m2[0], dt * m1[1] - m2[1]];

        let sub = 512usize;
        let h = dt / sub as f64;
        let n_mc = 40_000usize;
        let mut rng = stream(4242, 0, Channel::MonteCarlo, 0);
        let mut s_iw = [0.0f64; 2];
        let mut s_it = [0.0f64; 2];
        let mut s_ii = [[0.0f64; 2]; 2];
        for _ in 0..n_mc {
            let mut i_acc = [0.0f64; 2];
            let mut w_acc = 0.0;
            let mut th_acc = 0.0;
            for j in 0..sub {
                let s = (j as f64 + 0.5) * h;
                let dwj = f64::std_normal(&mut rng) * h.sqrt();
                let e = mode_exp(&m, dt - s);
                i_acc[0] += e.m[0][1] * dwj;
                i_acc[1] += e.m[1][1] * dwj;
                w_acc += dwj;
                th_acc += s * dwj;
            }
            s_iw[0] += i_acc[0] * w_acc;
            s_iw[1] += i_acc[1] * w_acc;
            s_it[0] += i_acc[0] * th_acc;
            s_it[1] += i_acc[1] * th_acc;
            for r in 0..2 {
                for c in 0..2 {
                    s_ii[r][c] += i_acc[r] * i_acc[c];
                }
            }
        }
        let n = n_mc as f64;
        for c in 0..2 {
            let emp = s_iw[c] / n;
            assert!(
                (emp - m1[c]).abs() < 0.05 * m1[c].abs().max(1e-6),
                "Cov(I{c}, dw): emp {emp} vs closed {}",
                m1[c]
            );
            let emp = s_it[c] / n;
            assert!(
                (emp - cov_it[c]).abs() < 0.05 * cov_it[c].abs().max(1e-8),
                "Cov(I{c}, Theta): emp {emp} vs closed {}",
                cov_it[c]
            );
        }
        for r in 0..2 {
            for c in 0..2 {
                let emp = s_ii[r][c] / n;
                assert!(
                    (emp - q.m[r][c]).abs() < 0.05 * q.m[r][c].abs().max(1e-8),
                    "Var(I)[{r}][{c}]: emp {emp} vs closed {}",
                    q.m[r][c]
                );
            }
        }
    }
}
