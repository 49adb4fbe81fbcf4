//! Dirichlet-Laplacian sine eigenbasis on a box, with forward/inverse sine
//! transforms, fractional-power norms and point-mass coefficients.
//!
//! On S = (0,L_1) x ... x (0,L_d) the negative Dirichlet Laplacian has the
//! orthonormal eigenfunctions
//!
//! ```text
//! e_n(s) = prod_i sqrt(2/L_i) sin(n_i pi s_i / L_i),   mu_n = sum_i (pi n_i / L_i)^2,
//! ```
//!
//! and the elastic operator of the pair formulation has per-mode eigenvalue
//! `a = mu^2` (plate) or `a = mu` (wave). All transforms below use the
//! interior nodes s_j = j L/(M+1); on that grid the discrete sine basis is
//! exactly orthogonal, so analyse(synthesize(c)) = c for band-limited data and
//! the discrete L^2 norm matches Parseval to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationKind {
    Plate,
    Wave,
}

impl EquationKind {
    /// Exponent p in `a = mu^p`.
    pub fn mu_power(self) -> i32 {
        match self {
            EquationKind::Plate => 2,
            EquationKind::Wave => 1,
        }
    }
}

impl std::fmt::Display for EquationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EquationKind::Plate => write!(f, "plate"),
            EquationKind::Wave => write!(f, "wave"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxDomain<T> {
    pub lengths: Vec<T>,
    pub grid_points_per_axis: usize,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(lengths: Vec<T>, grid_points_per_axis: usize) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::config("domain needs at least one axis"));
        }
        if lengths.iter().any(|&l| !(l > T::zero()) || !l.is_finite()) {
            return Err(Error::config("all box lengths must be positive"));
        }
        if grid_points_per_axis < 3 {
            return Err(Error::config("grid needs at least 3 interior points per axis"));
        }
        Ok(BoxDomain {
            lengths,
            grid_points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn volume(&self) -> T {
        self.lengths.iter().fold(T::one(), |p, &l| p * l)
    }
}

/// One retained eigenmode: multi-index, Laplacian eigenvalue, and the
/// eigenvalue of the elastic operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode<T> {
    pub index: Vec<usize>,
    pub mu: T,
    pub a: T,
}

#[derive(Debug, Clone)]
pub struct SpectralTruncation<T> {
    pub kind: EquationKind,
    pub cutoff: usize,
    pub w_shift: T,
    /// Sorted by `mu` ascending, ties broken lexicographically on the index.
    pub modes: Vec<Mode<T>>,
}

impl<T: Real> SpectralTruncation<T> {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// All modes with index components in `1..=cutoff`, sorted by `mu`.
pub fn enumerate_modes<T: Real>(
    domain: &BoxDomain<T>,
    kind: EquationKind,
    cutoff: usize,
) -> Result<SpectralTruncation<T>> {
    if cutoff == 0 {
        return Err(Error::config("mode cutoff must be at least 1"));
    }
    if domain.grid_points_per_axis < 2 * cutoff + 1 {
        return Err(Error::config(format!(
            "grid does not resolve cutoff {}: needs at least {} points per axis, got {}",
            cutoff,
            2 * cutoff + 1,
            domain.grid_points_per_axis
        )));
    }
    let d = domain.dim();
    let mut modes = Vec::with_capacity(cutoff.pow(d as u32));
    let mut index = vec![1usize; d];
    loop {
        let mut mu = T::zero();
        for (i, &n) in index.iter().enumerate() {
            let f = T::PI() * T::cast(n as f64) / domain.lengths[i];
            mu = mu + f * f;
        }
        let a = match kind {
            EquationKind::Plate => mu * mu,
            EquationKind::Wave => mu,
        };
        modes.push(Mode {
            index: index.clone(),
            mu,
            a,
        });
        // next multi-index in {1..cutoff}^d
        let mut axis = 0;
        loop {
            if axis == d {
                let mut sorted = modes;
                sorted.sort_by(|x, y| {
                    x.mu.partial_cmp(&y.mu)
                        .unwrap()
                        .then_with(|| x.index.cmp(&y.index))
                });
                return Ok(SpectralTruncation {
                    kind,
                    cutoff,
                    w_shift: T::one(),
                    modes: sorted,
                });
            }
            if index[axis] < cutoff {
                index[axis] += 1;
                break;
            }
            index[axis] = 1;
            axis += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalNormSpec<T> {
    pub theta: T,
    pub q: T,
}

impl<T: Real> FractionalNormSpec<T> {
    pub fn new(theta: T, q: T) -> Result<Self> {
        if !(q > T::one()) {
            return Err(Error::config("integrability exponent q must exceed 1"));
        }
        if theta.abs() > T::one() {
            return Err(Error::config("|theta| must be at most 1"));
        }
        Ok(FractionalNormSpec { theta, q })
    }
}

/// Per-axis sine tables for one uniform interior grid.
#[derive(Debug, Clone)]
struct GridTables<T> {
    points_per_axis: usize,
    /// `sin(n pi j / (M+1))` flattened as `[axis][ (j-1)*n_modes + (n-1) ]`.
    sin: Vec<Vec<T>>,
    nodes: Vec<Vec<T>>,
    cell: T,
}

impl<T: Real> GridTables<T> {
    fn new(domain: &BoxDomain<T>, cutoff: usize, points_per_axis: usize) -> Self {
        let d = domain.dim();
        let m1 = T::cast((points_per_axis + 1) as f64);
        let mut sin = Vec::with_capacity(d);
        let mut nodes = Vec::with_capacity(d);
        let mut cell = T::one();
        for axis in 0..d {
            let mut tab = Vec::with_capacity(points_per_axis * cutoff);
            for j in 1..=points_per_axis {
                for n in 1..=cutoff {
                    let arg = T::PI() * T::cast((n * j) as f64) / m1;
                    tab.push(arg.sin());
                }
            }
            sin.push(tab);
            let h = domain.lengths[axis] / m1;
            nodes.push((1..=points_per_axis).map(|j| h * T::cast(j as f64)).collect());
            cell = cell * h;
        }
        GridTables {
            points_per_axis,
            sin,
            nodes,
            cell,
        }
    }

    fn total_points(&self, d: usize) -> usize {
        self.points_per_axis.pow(d as u32)
    }
}

/// A truncation bound to a concrete quadrature/transform grid.
///
/// The analysis grid has the domain's `grid_points_per_axis` nodes; pointwise
/// nonlinearities are evaluated on a separate grid with twice the resolution
/// and truncated on analysis, which keeps quadratic products alias-free.
#[derive(Debug, Clone)]
pub struct SpectralSpace<T> {
    pub domain: BoxDomain<T>,
    pub trunc: SpectralTruncation<T>,
    base: GridTables<T>,
    dealias: GridTables<T>,
    norm_factor: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSelect {
    Base,
    Dealias,
}

impl<T: Real> SpectralSpace<T> {
    pub fn new(domain: BoxDomain<T>, trunc: SpectralTruncation<T>) -> Result<Self> {
        if domain.grid_points_per_axis < 2 * trunc.cutoff + 1 {
            return Err(Error::config(format!(
                "grid under-resolves the truncation: {} points per axis < {}",
                domain.grid_points_per_axis,
                2 * trunc.cutoff + 1
            )));
        }
        let base = GridTables::new(&domain, trunc.cutoff, domain.grid_points_per_axis);
        let dealias = GridTables::new(&domain, trunc.cutoff, 2 * domain.grid_points_per_axis + 1);
        // prod_i sqrt(2/L_i)
        let norm_factor = domain
            .lengths
            .iter()
            .fold(T::one(), |p, &l| p * (T::cast(2.0) / l).sqrt());
        Ok(SpectralSpace {
            domain,
            trunc,
            base,
            dealias,
            norm_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn n_modes(&self) -> usize {
        self.trunc.len()
    }

    fn tables(&self, grid: GridSelect) -> &GridTables<T> {
        match grid {
            GridSelect::Base => &self.base,
            GridSelect::Dealias => &self.dealias,
        }
    }

    pub fn grid_len(&self, grid: GridSelect) -> usize {
        self.tables(grid).total_points(self.dim())
    }

    pub fn cell_volume(&self, grid: GridSelect) -> T {
        self.tables(grid).cell
    }

    /// Coordinates of the flattened grid node `j`.
    pub fn node(&self, grid: GridSelect, mut j: usize) -> Vec<T> {
        let t = self.tables(grid);
        let d = self.dim();
        let mut out = vec![T::zero(); d];
        for axis in 0..d {
            out[axis] = t.nodes[axis][j % t.points_per_axis];
            j /= t.points_per_axis;
        }
        out
    }

    /// Evaluate `sum_k c_k e_k` on the grid nodes.
    pub fn synthesize(&self, coeffs: &[T], grid: GridSelect) -> Vec<T> {
        assert_eq!(coeffs.len(), self.n_modes(), "coefficient length mismatch");
        let t = self.tables(grid);
        let d = self.dim();
        let n = self.trunc.cutoff;
        let total = t.total_points(d);
        let mut out = vec![T::zero(); total];
        for (j_flat, value) in out.iter_mut().enumerate() {
            let mut digits = j_flat;
            let mut js = [0usize; 8];
            for js_i in js.iter_mut().take(d) {
                *js_i = digits % t.points_per_axis;
                digits /= t.points_per_axis;
            }
            let mut acc = T::zero();
            for (k, mode) in self.trunc.modes.iter().enumerate() {
                let mut prod = coeffs[k];
                if prod == T::zero() {
                    continue;
                }
                for axis in 0..d {
                    prod = prod * t.sin[axis][js[axis] * n + (mode.index[axis] - 1)];
                }
                acc = acc + prod;
            }
            *value = acc * self.norm_factor;
        }
        out
    }

    /// Project grid values onto the retained modes: discrete `<f, e_k>`.
    pub fn analyze(&self, values: &[T], grid: GridSelect) -> Vec<T> {
        let t = self.tables(grid);
        let d = self.dim();
        let n = self.trunc.cutoff;
        assert_eq!(values.len(), t.total_points(d), "grid length mismatch");
        let m1 = T::cast((t.points_per_axis + 1) as f64);
        // prod_i 2/((M+1) kappa_i) with kappa_i = sqrt(2/L_i)
        let mut scale = T::one();
        for &l in &self.domain.lengths {
            scale = scale * T::cast(2.0) / (m1 * (T::cast(2.0) / l).sqrt());
        }
        let mut out = vec![T::zero(); self.n_modes()];
        for (k, mode) in self.trunc.modes.iter().enumerate() {
            let mut acc = T::zero();
            for (j_flat, &f) in values.iter().enumerate() {
                let mut digits = j_flat;
                let mut prod = f;
                for axis in 0..d {
                    let j = digits % t.points_per_axis;
                    digits /= t.points_per_axis;
                    prod = prod * t.sin[axis][j * n + (mode.index[axis] - 1)];
                }
                acc = acc + prod;
            }
            out[k] = acc * scale;
        }
        out
    }

    /// Spectral coefficients of the point mass at `s0`: `e_k(s0)`.
    pub fn point_mass_coefficients(&self, s0: &[T]) -> Result<Vec<T>> {
        if s0.len() != self.dim() {
            return Err(Error::domain("point dimension mismatch"));
        }
        for (i, &x) in s0.iter().enumerate() {
            if !(x > T::zero()) || !(x < self.domain.lengths[i]) {
                return Err(Error::domain(
                    "point mass must sit strictly inside the box; on the boundary it pairs to \
                     zero against every eigenfunction",
                ));
            }
        }
        Ok(self
            .trunc
            .modes
            .iter()
            .map(|mode| {
                let mut v = self.norm_factor;
                for (axis, &n) in mode.index.iter().enumerate() {
                    let arg = T::PI() * T::cast(n as f64) * s0[axis] / self.domain.lengths[axis];
                    v = v * arg.sin();
                }
                v
            })
            .collect())
    }

    /// Per-mode weight `a_k^theta` applied by the fractional norm.
    pub fn fractional_weight(&self, k: usize, theta: T) -> T {
        self.trunc.modes[k].a.powf(theta)
    }

    /// `|| A^theta x ||_{L^q}`: exact weighted Parseval for q = 2, grid
    /// quadrature of the synthesized field otherwise.
    pub fn fractional_norm(&self, coeffs: &[T], spec: &FractionalNormSpec<T>) -> Result<T> {
        if !(spec.q > T::one()) {
            return Err(Error::config("fractional norm needs q > 1"));
        }
        if coeffs.len() != self.n_modes() {
            return Err(Error::config("coefficient length does not match truncation"));
        }
        let two = T::cast(2.0);
        if spec.q == two {
            let mut acc = T::zero();
            for (k, &c) in coeffs.iter().enumerate() {
                let w = self.fractional_weight(k, spec.theta);
                acc = acc + (w * c) * (w * c);
            }
            return Ok(acc.sqrt());
        }
        let weighted: Vec<T> = coeffs
            .iter()
            .enumerate()
            .map(|(k, &c)| c * self.fractional_weight(k, spec.theta))
            .collect();
        let grid = self.synthesize(&weighted, GridSelect::Base);
        Ok(self.lq_norm(&grid, spec.q, GridSelect::Base))
    }

    /// Discrete `L^q` norm on the grid (functions vanishing on the boundary).
    pub fn lq_norm(&self, values: &[T], q: T, grid: GridSelect) -> T {
        let cell = self.cell_volume(grid);
        let sum = values
            .iter()
            .map(|&v| v.abs().powf(q))
            .fold(T::zero(), |a, b| a + b);
        (cell * sum).powf(T::one() / q)
    }
}
