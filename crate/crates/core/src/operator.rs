//! Grid discretizations of `H_h = -h²Δ + V1 - i h V2` and its variants,
//! spatial weights, Weyl/standard quantization of test symbols and
//! quadratic observables.

use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cutoff::smooth_step;
use crate::linalg::CsrMatrix;
use crate::potentials::{DissipativeSplit, PotentialModel};
use crate::{bracket, Error, Result, C64};

/// Cell-centred tensor grid on `[-L, L]ⁿ` with a complex absorbing layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
    /// Width of the absorbing layer along each face.
    pub cap_width: f64,
    pub cap_strength: f64,
    #[serde(default)]
    pub cap_profile: CapProfile,
}

/// Shape of the absorbing layer as a function of depth `s ∈ [0, 1]` into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapProfile {
    /// `s³`.
    #[default]
    Cubic,
    /// C^∞ step, flat at the inner edge; its onset reflects less than any power of h.
    Smooth,
}

impl GridDomain {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize, cap_width: f64, cap_strength: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::config(format!("grid dimension {dim} not supported (1 or 2)")));
        }
        if !(half_width > 0.0) || points_per_axis < 4 {
            return Err(Error::config("grid needs L > 0 and at least 4 points per axis"));
        }
        if !(cap_width >= 0.0 && cap_width < half_width) || cap_strength < 0.0 {
            return Err(Error::config("absorbing layer must lie strictly inside the box"));
        }
        Ok(GridDomain { dim, half_width, points_per_axis, cap_width, cap_strength, cap_profile: CapProfile::Cubic })
    }

    pub fn with_cap_profile(mut self, profile: CapProfile) -> Self {
        self.cap_profile = profile;
        self
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Δxⁿ`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    pub fn coordinate(&self, j: usize) -> f64 {
        -self.half_width + (j as f64 + 0.5) * self.dx()
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.points_per_axis).map(|j| self.coordinate(j)).collect()
    }

    /// Multi-index of a flat node index (last axis fastest).
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n = self.points_per_axis;
        match self.dim {
            1 => [idx, 0],
            _ => [idx / n, idx % n],
        }
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        match self.dim {
            1 => i,
            _ => i * self.points_per_axis + j,
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        (0..self.dim).map(|a| self.coordinate(m[a])).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Inner edge of the absorbing layer.
    pub fn layer_start(&self) -> f64 {
        self.half_width - self.cap_width
    }

    /// `max |x_i|` below which nodes are trusted (layer plus one buffer cell excluded).
    pub fn interior_limit(&self) -> f64 {
        self.layer_start() - self.dx()
    }

    pub fn is_trusted(&self, idx: usize) -> bool {
        self.point(idx).iter().all(|v| v.abs() <= self.interior_limit())
    }

    /// `strength · profile(d / width)` summed over the axes, `d` the depth into the layer.
    pub fn cap(&self, x: &[f64]) -> f64 {
        if self.cap_width == 0.0 {
            return 0.0;
        }
        x.iter()
            .map(|v| {
                let s = ((v.abs() - self.layer_start()).max(0.0) / self.cap_width).min(1.0);
                self.cap_strength
                    * match self.cap_profile {
                        CapProfile::Cubic => s.powi(3),
                        CapProfile::Smooth => smooth_step(s),
                    }
            })
            .sum()
    }

    /// `Δxⁿ Σ conj(u) v`.
    pub fn inner(&self, u: &[C64], v: &[C64]) -> C64 {
        self.cell_volume() * u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>()
    }

    pub fn l2_norm(&self, u: &[C64]) -> f64 {
        (self.cell_volume() * u.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `‖⟨x⟩^s u‖_{L²}`, optionally restricted to nodes selected by `mask`.
    pub fn weighted_norm(&self, u: &[C64], s: f64, mask: Option<&dyn Fn(&[f64]) -> bool>) -> f64 {
        let mut acc = 0.0;
        for (i, v) in u.iter().enumerate() {
            let x = self.point(i);
            if mask.is_none_or(|m| m(&x)) {
                acc += bracket(&x).powf(2.0 * s) * v.norm_sqr();
            }
        }
        (acc * self.cell_volume()).sqrt()
    }

    /// Samples `f` at the nodes.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len()).map(|i| f(&self.point(i))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
pub enum Variant {
    /// `H_h = -h²Δ + V1 - ihV2`.
    H,
    /// `H² = -h²Δ + V1 - ihW2`.
    H2,
    /// `H³ = H² + ihW3`.
    H3,
    /// `H_h - hθ⟨x⟩^{-1-ρ}`.
    Theta { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Order of the Laplacian stencil (2 or 4).
    pub order: usize,
    /// Largest momentum of interest, for the resolution check `Δx ≤ h / (4 ξ_max)`.
    pub xi_max: f64,
    /// Weight exponent δ for `⟨x⟩^{±δ}`.
    pub delta: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { order: 2, xi_max: 1.0, delta: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    pub h: f64,
    pub variant: Variant,
    pub grid: GridDomain,
    pub matrix: CsrMatrix,
    pub delta: f64,
    /// `⟨x⟩^{δ}` at the nodes.
    pub weight_plus: Vec<f64>,
    /// `⟨x⟩^{-δ}` at the nodes.
    pub weight_minus: Vec<f64>,
    /// Real potential on the diagonal.
    pub real_potential: Vec<f64>,
    /// Imaginary part of the diagonal potential, absorbing layer excluded.
    pub imag_potential: Vec<f64>,
    pub cap: Vec<f64>,
    pub order: usize,
}

/// `-Δ` on the grid with homogeneous Dirichlet data, as a sparse matrix.
pub fn laplacian(grid: &GridDomain, order: usize) -> Result<CsrMatrix> {
    let coeffs: &[f64] = match order {
        2 => &[2.0, -1.0],
        4 => &[30.0 / 12.0, -16.0 / 12.0, 1.0 / 12.0],
        _ => return Err(Error::config(format!("stencil order {order} not supported (2 or 4)"))),
    };
    let n = grid.points_per_axis;
    let inv = 1.0 / (grid.dx() * grid.dx());
    let mut t = Vec::with_capacity(grid.len() * (1 + 2 * grid.dim * (coeffs.len() - 1)));
    for idx in 0..grid.len() {
        let m = grid.multi_index(idx);
        t.push((idx, idx, C64::new(grid.dim as f64 * coeffs[0] * inv, 0.0)));
        for a in 0..grid.dim {
            for (k, c) in coeffs.iter().enumerate().skip(1) {
                for s in [-(k as isize), k as isize] {
                    let j = m[a] as isize + s;
                    if j < 0 || j >= n as isize {
                        continue;
                    }
                    let mut mm = m;
                    mm[a] = j as usize;
                    t.push((idx, grid.flat(mm[0], mm[1]), C64::new(c * inv, 0.0)));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(grid.len(), grid.len(), t))
}

/// Points per axis needed for `Δx ≤ h / (4 ξ_max)`.
pub fn required_points(half_width: f64, h: f64, xi_max: f64) -> usize {
    (2.0 * half_width * 4.0 * xi_max / h).ceil() as usize
}

pub fn build_hamiltonian(
    model: &PotentialModel,
    split: Option<&DissipativeSplit>,
    grid: &GridDomain,
    h: f64,
    variant: Variant,
    opts: &BuildOptions,
) -> Result<DiscretizedOperator> {
    if !(h > 0.0) {
        return Err(Error::pre("h must be positive"));
    }
    if model.dim != grid.dim {
        return Err(Error::Shape { expected: grid.dim, got: model.dim });
    }
    let max_dx = h / (4.0 * opts.xi_max);
    if grid.dx() > max_dx * (1.0 + 1e-12) {
        return Err(Error::UnderResolved {
            dx: grid.dx(),
            max_dx,
            required_points: required_points(grid.half_width, h, opts.xi_max),
        });
    }
    let needs_split = matches!(variant, Variant::H2 | Variant::H3);
    if needs_split && split.is_none() {
        return Err(Error::pre("variants H2 and H3 need a dissipative split"));
    }
    let points = grid.points();
    let mut real_potential: Vec<f64> = points.iter().map(|x| model.v1(x)).collect();
    let imag_potential: Vec<f64> = match (variant, split) {
        (Variant::H2, Some(s)) => points.iter().map(|x| -h * s.w2(x)).collect(),
        (Variant::H3, Some(s)) => points.iter().map(|x| -h * (s.w2(x) - s.w3(x))).collect(),
        _ => points.iter().map(|x| -h * model.v2(x)).collect(),
    };
    if let Variant::Theta { theta } = variant {
        for (v, x) in real_potential.iter_mut().zip(&points) {
            *v -= h * theta * bracket(x).powf(-1.0 - model.rho);
        }
    }
    let cap: Vec<f64> = points.iter().map(|x| grid.cap(x)).collect();
    let diag: Vec<C64> = (0..grid.len()).map(|i| C64::new(real_potential[i], imag_potential[i] - cap[i])).collect();
    let lap = laplacian(grid, opts.order)?;
    let mut kinetic = lap.clone();
    kinetic.values.iter_mut().for_each(|v| *v *= h * h);
    let matrix = kinetic.add_diagonal(&diag);
    let weight_plus: Vec<f64> = points.iter().map(|x| bracket(x).powf(opts.delta)).collect();
    let weight_minus: Vec<f64> = weight_plus.iter().map(|w| 1.0 / w).collect();
    Ok(DiscretizedOperator {
        h,
        variant,
        grid: grid.clone(),
        matrix,
        delta: opts.delta,
        weight_plus,
        weight_minus,
        real_potential,
        imag_potential,
        cap,
        order: opts.order,
    })
}

impl DiscretizedOperator {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `⟨x⟩^{δ} (H - z) ⟨x⟩^{δ}`.
    pub fn weighted_shifted(&self, z: C64) -> CsrMatrix {
        self.matrix.shifted(z).scale(&self.weight_plus, &self.weight_plus)
    }

    /// Matrix of the adjoint operator `H*`.
    pub fn adjoint(&self) -> DiscretizedOperator {
        let mut out = self.clone();
        out.matrix = self.matrix.adjoint();
        out.imag_potential.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

/// Real scalar function on ℝⁿ.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Complex phase-space function `q(x, ξ)`.
pub type PhaseFn = Arc<dyn Fn(&[f64], &[f64]) -> C64 + Send + Sync>;

/// Phase-space test symbol.
#[derive(Clone)]
pub enum TestSymbol {
    Zero,
    /// `a(x) b(ξ)`, real valued.
    Product {
        a: ScalarFn,
        b: ScalarFn,
    },
    General {
        q: PhaseFn,
        real: bool,
    },
    /// `Σ c_k q_k`.
    Sum(Vec<(f64, TestSymbol)>),
}

impl std::fmt::Debug for TestSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestSymbol::Zero => write!(f, "Zero"),
            TestSymbol::Product { .. } => write!(f, "Product"),
            TestSymbol::General { real, .. } => write!(f, "General {{ real: {real} }}"),
            TestSymbol::Sum(terms) => f.debug_list().entries(terms.iter().map(|t| (t.0, &t.1))).finish(),
        }
    }
}

impl TestSymbol {
    pub fn product(
        a: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        b: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TestSymbol::Product { a: Arc::new(a), b: Arc::new(b) }
    }

    pub fn position(a: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        TestSymbol::product(a, |_| 1.0)
    }

    pub fn momentum(b: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        TestSymbol::product(|_| 1.0, b)
    }

    pub fn general(q: impl Fn(&[f64], &[f64]) -> C64 + Send + Sync + 'static, real: bool) -> Self {
        TestSymbol::General { q: Arc::new(q), real }
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> C64 {
        match self {
            TestSymbol::Zero => C64::new(0.0, 0.0),
            TestSymbol::Product { a, b } => C64::new(a(x) * b(xi), 0.0),
            TestSymbol::General { q, .. } => q(x, xi),
            TestSymbol::Sum(terms) => terms.iter().map(|(c, s)| *c * s.eval(x, xi)).sum(),
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            TestSymbol::Zero | TestSymbol::Product { .. } => true,
            TestSymbol::General { real, .. } => *real,
            TestSymbol::Sum(terms) => terms.iter().all(|(_, s)| s.is_real()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantization {
    Weyl,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizeOptions {
    /// Refuse symbols that do not decay inside 80% of the Nyquist band.
    pub check_band: bool,
    /// Relative magnitude under which kernel entries are dropped.
    pub stencil_tol: f64,
}

impl Default for QuantizeOptions {
    fn default() -> Self {
        QuantizeOptions { check_band: true, stencil_tol: 1e-13 }
    }
}

/// Product kernel `a(mid) B(x - y)` applied matrix-free.
#[derive(Debug, Clone)]
pub struct ProductKernel {
    grid: GridDomain,
    quantization: Quantization,
    /// `a` at the midpoints `(x_j + x_k)/2`, indexed by `j + k` per axis (Weyl),
    /// or at the nodes (standard).
    a_values: Vec<f64>,
    stencil: Vec<([isize; 2], C64)>,
}

impl ProductKernel {
    fn a_at(&self, j: [usize; 2], k: [usize; 2]) -> f64 {
        let n = self.grid.points_per_axis;
        match (self.quantization, self.grid.dim) {
            (Quantization::Weyl, 1) => self.a_values[j[0] + k[0]],
            (Quantization::Weyl, _) => self.a_values[(j[0] + k[0]) * (2 * n - 1) + j[1] + k[1]],
            (Quantization::Standard, _) => self.a_values[self.grid.flat(j[0], j[1])],
        }
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let n = self.grid.points_per_axis as isize;
        let dim = self.grid.dim;
        (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let j = self.grid.multi_index(idx);
                let mut acc = C64::new(0.0, 0.0);
                for (d, b) in &self.stencil {
                    let k0 = j[0] as isize - d[0];
                    let k1 = if dim == 2 { j[1] as isize - d[1] } else { 0 };
                    if k0 < 0 || k0 >= n || k1 < 0 || (dim == 2 && k1 >= n) {
                        continue;
                    }
                    let k = [k0 as usize, k1 as usize];
                    acc += *b * self.a_at(j, k) * u[self.grid.flat(k[0], k[1])];
                }
                acc
            })
            .collect()
    }

    pub fn apply_adjoint(&self, u: &[C64]) -> Vec<C64> {
        let n = self.grid.points_per_axis as isize;
        let dim = self.grid.dim;
        (0..self.grid.len())
            .into_par_iter()
            .map(|idx| {
                let k = self.grid.multi_index(idx);
                let mut acc = C64::new(0.0, 0.0);
                for (d, b) in &self.stencil {
                    let j0 = k[0] as isize + d[0];
                    let j1 = if dim == 2 { k[1] as isize + d[1] } else { 0 };
                    if j0 < 0 || j0 >= n || j1 < 0 || (dim == 2 && j1 >= n) {
                        continue;
                    }
                    let j = [j0 as usize, j1 as usize];
                    acc += (*b * self.a_at(j, k)).conj() * u[self.grid.flat(j[0], j[1])];
                }
                acc
            })
            .collect()
    }
}

/// A quantized symbol acting on grid functions.
#[derive(Debug, Clone)]
pub enum GridOperator {
    Zero(usize),
    Dense(Mat<C64>),
    Product(ProductKernel),
    Sparse(CsrMatrix),
    Sum(Vec<(f64, GridOperator)>),
}

impl GridOperator {
    pub fn dim(&self) -> usize {
        match self {
            GridOperator::Zero(n) => *n,
            GridOperator::Dense(m) => m.nrows(),
            GridOperator::Product(k) => k.grid.len(),
            GridOperator::Sparse(m) => m.nrows,
            GridOperator::Sum(t) => t.first().map(|x| x.1.dim()).unwrap_or(0),
        }
    }

    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        match self {
            GridOperator::Zero(n) => vec![C64::new(0.0, 0.0); *n],
            GridOperator::Dense(m) => (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * u[j]).sum()).collect(),
            GridOperator::Product(k) => k.apply(u),
            GridOperator::Sparse(m) => m.matvec(u),
            GridOperator::Sum(terms) => {
                let mut acc = vec![C64::new(0.0, 0.0); u.len()];
                for (c, op) in terms {
                    acc.iter_mut().zip(op.apply(u)).for_each(|(a, b)| *a += *c * b);
                }
                acc
            }
        }
    }

    pub fn apply_adjoint(&self, u: &[C64]) -> Vec<C64> {
        match self {
            GridOperator::Zero(n) => vec![C64::new(0.0, 0.0); *n],
            GridOperator::Dense(m) => {
                (0..m.ncols()).map(|j| (0..m.nrows()).map(|i| m[(i, j)].conj() * u[i]).sum()).collect()
            }
            GridOperator::Product(k) => k.apply_adjoint(u),
            GridOperator::Sparse(m) => m.matvec_adjoint(u),
            GridOperator::Sum(terms) => {
                let mut acc = vec![C64::new(0.0, 0.0); u.len()];
                for (c, op) in terms {
                    acc.iter_mut().zip(op.apply_adjoint(u)).for_each(|(a, b)| *a += *c * b);
                }
                acc
            }
        }
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let n = self.dim();
        let mut m = Mat::<C64>::zeros(n, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
            e[j] = C64::new(0.0, 0.0);
        }
        m
    }
}

/// `ξ` at the momentum-grid angle `θ ∈ [-π, π)`: `ξ = hθ/Δx`.
fn theta_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / m as f64).collect()
}

/// Symbol magnitude in `0.8 ξ_N ≤ |ξ| ≤ ξ_N` relative to its overall size.
fn band_check(values_in: f64, values_out: f64, at: f64) -> Result<()> {
    if values_out > 1e-10 * values_in.max(1e-300) {
        return Err(Error::Aliasing { value: values_out, at });
    }
    Ok(())
}

fn momentum_kernel(grid: &GridDomain, h: f64, b: &ScalarFn, opts: &QuantizeOptions) -> Result<Vec<([isize; 2], C64)>> {
    let n = grid.points_per_axis;
    let scale = h / grid.dx();
    let nyquist = std::f64::consts::PI * scale;
    let oversample = if grid.dim == 1 { 8 } else { 4 };
    let m = oversample * n;
    let thetas = theta_grid(m);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(m);
    let (mut inside, mut outside, mut at) = (0.0f64, 0.0f64, 0.0);
    let mut out = Vec::new();
    if grid.dim == 1 {
        let mut buf: Vec<C64> = thetas
            .iter()
            .map(|t| {
                let xi = scale * t;
                let v = b(&[xi]);
                if xi.abs() >= 0.8 * nyquist {
                    if v.abs() > outside {
                        outside = v.abs();
                        at = xi.abs();
                    }
                } else {
                    inside = inside.max(v.abs());
                }
                C64::new(v, 0.0)
            })
            .collect();
        if opts.check_band {
            band_check(inside, outside, at)?;
        }
        fft.process(&mut buf);
        let coeff = |d: isize| {
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            buf[d.rem_euclid(m as isize) as usize] * (sign / m as f64)
        };
        let peak = (-(n as isize - 1)..n as isize).map(|d| coeff(d).norm()).fold(0.0, f64::max);
        for d in -(n as isize - 1)..n as isize {
            let c = coeff(d);
            if c.norm() > opts.stencil_tol * peak {
                out.push(([d, 0], c));
            }
        }
    } else {
        let mut buf = vec![C64::new(0.0, 0.0); m * m];
        for (i, t1) in thetas.iter().enumerate() {
            for (j, t2) in thetas.iter().enumerate() {
                let xi = [scale * t1, scale * t2];
                let v = b(&xi);
                let r = xi[0].abs().max(xi[1].abs());
                if r >= 0.8 * nyquist {
                    if v.abs() > outside {
                        outside = v.abs();
                        at = r;
                    }
                } else {
                    inside = inside.max(v.abs());
                }
                buf[i * m + j] = C64::new(v, 0.0);
            }
        }
        if opts.check_band {
            band_check(inside, outside, at)?;
        }
        for row in buf.chunks_mut(m) {
            fft.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); m];
        for j in 0..m {
            for i in 0..m {
                col[i] = buf[i * m + j];
            }
            fft.process(&mut col);
            for i in 0..m {
                buf[i * m + j] = col[i];
            }
        }
        let norm = 1.0 / (m * m) as f64;
        let coeff = |d0: isize, d1: isize| {
            let sign = if (d0 + d1).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let i = d0.rem_euclid(m as isize) as usize;
            let j = d1.rem_euclid(m as isize) as usize;
            buf[i * m + j] * (sign * norm)
        };
        let r = n as isize - 1;
        let mut peak = 0.0f64;
        for d0 in -r..=r {
            for d1 in -r..=r {
                peak = peak.max(coeff(d0, d1).norm());
            }
        }
        for d0 in -r..=r {
            for d1 in -r..=r {
                let c = coeff(d0, d1);
                if c.norm() > opts.stencil_tol * peak {
                    out.push(([d0, d1], c));
                }
            }
        }
    }
    Ok(out)
}

fn product_kernel(
    grid: &GridDomain,
    h: f64,
    a: &ScalarFn,
    b: &ScalarFn,
    quantization: Quantization,
    opts: &QuantizeOptions,
) -> Result<ProductKernel> {
    let stencil = momentum_kernel(grid, h, b, opts)?;
    let n = grid.points_per_axis;
    let half = |s: usize| -grid.half_width + (0.5 * s as f64 + 0.5) * grid.dx();
    let a_values = match (quantization, grid.dim) {
        (Quantization::Weyl, 1) => (0..2 * n - 1).map(|s| a(&[half(s)])).collect(),
        (Quantization::Weyl, _) => {
            let mut v = Vec::with_capacity((2 * n - 1) * (2 * n - 1));
            for s0 in 0..2 * n - 1 {
                for s1 in 0..2 * n - 1 {
                    v.push(a(&[half(s0), half(s1)]));
                }
            }
            v
        }
        (Quantization::Standard, _) => grid.points().iter().map(|x| a(x)).collect(),
    };
    Ok(ProductKernel { grid: grid.clone(), quantization, a_values, stencil })
}

fn dense_kernel_1d(
    grid: &GridDomain,
    h: f64,
    q: &PhaseFn,
    quantization: Quantization,
    opts: &QuantizeOptions,
) -> Result<Mat<C64>> {
    let n = grid.points_per_axis;
    let scale = h / grid.dx();
    let nyquist = std::f64::consts::PI * scale;
    let m = 2 * n;
    let thetas = theta_grid(m);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(m);
    let positions: Vec<f64> = match quantization {
        Quantization::Weyl => (0..2 * n - 1).map(|s| -grid.half_width + (0.5 * s as f64 + 0.5) * grid.dx()).collect(),
        Quantization::Standard => grid.axis(),
    };
    let mut kernel = Mat::<C64>::zeros(n, n);
    let (mut inside, mut outside, mut at) = (0.0f64, 0.0f64, 0.0);
    for (s, x) in positions.iter().enumerate() {
        let mut buf: Vec<C64> = thetas
            .iter()
            .map(|t| {
                let xi = scale * t;
                let v = q(&[*x], &[xi]);
                if xi.abs() >= 0.8 * nyquist {
                    if v.norm() > outside {
                        outside = v.norm();
                        at = xi.abs();
                    }
                } else {
                    inside = inside.max(v.norm());
                }
                v
            })
            .collect();
        fft.process(&mut buf);
        let coeff = |d: isize| {
            let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            buf[d.rem_euclid(m as isize) as usize] * (sign / m as f64)
        };
        match quantization {
            Quantization::Weyl => {
                // Pairs (j, k) with j + k = s.
                let lo = s.saturating_sub(n - 1);
                let hi = s.min(n - 1);
                for j in lo..=hi {
                    let k = s - j;
                    kernel[(j, k)] = coeff(j as isize - k as isize);
                }
            }
            Quantization::Standard => {
                for k in 0..n {
                    kernel[(s, k)] = coeff(s as isize - k as isize);
                }
            }
        }
    }
    if opts.check_band {
        band_check(inside, outside, at)?;
    }
    Ok(kernel)
}

fn quantize(
    q: &TestSymbol,
    grid: &GridDomain,
    h: f64,
    quantization: Quantization,
    opts: &QuantizeOptions,
) -> Result<GridOperator> {
    match q {
        TestSymbol::Zero => Ok(GridOperator::Zero(grid.len())),
        TestSymbol::Product { a, b } => Ok(GridOperator::Product(product_kernel(grid, h, a, b, quantization, opts)?)),
        TestSymbol::General { q, .. } => {
            if grid.dim != 1 {
                return Err(Error::config("general symbols are only quantized in one dimension; use products in 2D"));
            }
            Ok(GridOperator::Dense(dense_kernel_1d(grid, h, q, quantization, opts)?))
        }
        TestSymbol::Sum(terms) => Ok(GridOperator::Sum(
            terms
                .iter()
                .map(|(c, s)| Ok((*c, quantize(s, grid, h, quantization, opts)?)))
                .collect::<Result<Vec<_>>>()?,
        )),
    }
}

/// `Op_h^w(q)` with kernel `(2πh)^{-n} ∫ e^{i(x-y)·ξ/h} q((x+y)/2, ξ) dξ` over the Nyquist band.
pub fn weyl_quantize(q: &TestSymbol, grid: &GridDomain, h: f64, opts: &QuantizeOptions) -> Result<GridOperator> {
    quantize(q, grid, h, Quantization::Weyl, opts)
}

/// Standard (left) quantization: `q(x, ξ)` in place of `q((x+y)/2, ξ)`.
pub fn standard_quantize(q: &TestSymbol, grid: &GridDomain, h: f64, opts: &QuantizeOptions) -> Result<GridOperator> {
    quantize(q, grid, h, Quantization::Standard, opts)
}

/// `⟨Op u, u⟩ = Δxⁿ Σ (Op u)_j conj(u_j)`.
pub fn quadratic_observable(grid: &GridDomain, op: &GridOperator, u: &[C64]) -> Result<C64> {
    if u.len() != grid.len() || op.dim() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: u.len() });
    }
    let v = op.apply(u);
    Ok(grid.cell_volume() * v.iter().zip(u).map(|(a, b)| a * b.conj()).sum::<C64>())
}

/// `g(x) = (πh)^{-n/4} e^{-|x-x0|²/(2h)} e^{iξ0·x/h}`.
pub fn coherent_state(grid: &GridDomain, h: f64, x0: &[f64], xi0: &[f64]) -> Vec<C64> {
    let c = (std::f64::consts::PI * h).powf(-(grid.dim as f64) / 4.0);
    (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let r2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
            let phase: f64 = x.iter().zip(xi0).map(|(a, b)| a * b).sum::<f64>() / h;
            c * (-r2 / (2.0 * h)).exp() * C64::from_polar(1.0, phase)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_norm;
    use crate::potentials::Field;

    fn grid1(n: usize) -> GridDomain {
        GridDomain::new(1, 4.0, n, 0.0, 0.0).unwrap()
    }

    #[test]
    fn free_stencil_spectrum() {
        let g = grid1(64);
        let h = 0.1;
        let op = build_hamiltonian(
            &PotentialModel::free(1),
            None,
            &g,
            h,
            Variant::H,
            &BuildOptions { xi_max: 0.2, ..Default::default() },
        )
        .unwrap();
        let ev = op.matrix.to_dense().eigenvalues().unwrap();
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        let dx = g.dx();
        for (k, v) in re.iter().enumerate() {
            let exact = 2.0 * h * h / (dx * dx) * (1.0 - ((k + 1) as f64 * std::f64::consts::PI / 65.0).cos());
            assert!((v - exact).abs() < 1e-9 * (1.0 + exact));
        }
        assert!(op.matrix.hermitian_defect() < 1e-14);
    }

    #[test]
    fn under_resolved_grid_is_refused() {
        let g = grid1(16);
        let err = build_hamiltonian(&PotentialModel::free(1), None, &g, 0.1, Variant::H, &BuildOptions::default())
            .unwrap_err();
        match err {
            Error::UnderResolved { required_points, .. } => assert_eq!(required_points, 320),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn variant_h3_differs_by_w3() {
        use crate::potentials::{split_dissipative, SampleBox, Term};
        let m = PotentialModel::free(1).with_v2(Field::new(vec![Term::gaussian(-1.0, vec![0.0], 1.0)]));
        let s = split_dissipative(&m, 0.75, 3.0, &SampleBox::cube(1, 4.0, 801)).unwrap();
        let g = grid1(200);
        let o = BuildOptions { xi_max: 1.0, ..Default::default() };
        let h = 0.2;
        let h2 = build_hamiltonian(&m, Some(&s), &g, h, Variant::H2, &o).unwrap();
        let h3 = build_hamiltonian(&m, Some(&s), &g, h, Variant::H3, &o).unwrap();
        assert!(h2.imag_potential.iter().all(|v| *v <= 0.0));
        for (i, x) in g.points().iter().enumerate() {
            let d = h3.matrix.get(i, i) - h2.matrix.get(i, i);
            assert!((d - C64::new(0.0, h * s.w3(x))).norm() < 1e-14);
        }
    }

    #[test]
    fn identity_and_position_symbols() {
        let g = grid1(32);
        let no_check = QuantizeOptions { check_band: false, ..Default::default() };
        let id = weyl_quantize(&TestSymbol::momentum(|_| 1.0), &g, 0.1, &no_check).unwrap().to_dense();
        let a = weyl_quantize(&TestSymbol::position(|x| x[0].sin()), &g, 0.1, &no_check).unwrap().to_dense();
        let s = standard_quantize(&TestSymbol::position(|x| x[0].sin()), &g, 0.1, &no_check).unwrap().to_dense();
        for i in 0..32 {
            for j in 0..32 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - C64::new(e, 0.0)).norm() < 1e-13);
                let ax = if i == j { g.coordinate(i).sin() } else { 0.0 };
                assert!((a[(i, j)] - C64::new(ax, 0.0)).norm() < 1e-13);
                assert!((s[(i, j)] - C64::new(ax, 0.0)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn non_decaying_symbol_is_flagged() {
        let g = grid1(32);
        let err = weyl_quantize(&TestSymbol::momentum(|_| 1.0), &g, 0.1, &QuantizeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Aliasing { .. }));
    }

    #[test]
    fn weyl_of_real_symbol_is_hermitian() {
        let g = grid1(64);
        let q = TestSymbol::general(
            |x, xi| C64::new((-(x[0] * x[0]) - 4.0 * xi[0] * xi[0]).exp() * (1.0 + x[0] * xi[0]), 0.0),
            true,
        );
        let m = weyl_quantize(&q, &g, 0.2, &QuantizeOptions::default()).unwrap().to_dense();
        let mut defect = 0.0f64;
        for i in 0..64 {
            for j in 0..64 {
                defect = defect.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        assert!(defect < 1e-14);
    }

    #[test]
    fn product_and_general_paths_agree() {
        let g = grid1(48);
        let h = 0.1;
        let a = |x: &[f64]| (-(x[0] - 0.3).powi(2)).exp();
        let b = |xi: &[f64]| (-(xi[0] * xi[0]) * 30.0).exp();
        let p = weyl_quantize(&TestSymbol::product(a, b), &g, h, &QuantizeOptions::default()).unwrap().to_dense();
        let q = weyl_quantize(
            &TestSymbol::general(move |x, xi| C64::new(a(x) * b(xi), 0.0), true),
            &g,
            h,
            &QuantizeOptions::default(),
        )
        .unwrap()
        .to_dense();
        let diff = Mat::<C64>::from_fn(48, 48, |i, j| p[(i, j)] - q[(i, j)]);
        assert!(dense_norm(&diff).unwrap() < 1e-10);
    }

    #[test]
    fn coherent_state_is_normalized() {
        let g = GridDomain::new(1, 6.0, 512, 0.0, 0.0).unwrap();
        let u = coherent_state(&g, 0.05, &[0.5], &[1.0]);
        let v = quadratic_observable(&g, &GridOperator::Sparse(CsrMatrix::identity(512)), &u).unwrap();
        assert!((v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-14);
    }

    #[test]
    fn weights_are_dual() {
        let g = GridDomain::new(2, 3.0, 24, 1.0, 1.0).unwrap();
        let op =
            build_hamiltonian(&PotentialModel::free(2), None, &g, 1.0, Variant::H, &BuildOptions::default()).unwrap();
        assert!(op.weight_plus.iter().zip(&op.weight_minus).all(|(a, b)| (a * b - 1.0).abs() < 1e-15));
    }
}
