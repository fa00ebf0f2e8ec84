//! Concentrating sources, limiting-absorption outgoing solves and the
//! radiation-condition diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{vnorm, SparseLu};
use crate::operator::{build_hamiltonian, BuildOptions, DiscretizedOperator, GridDomain, Variant};
use crate::potentials::{DissipativeSplit, PotentialModel};
use crate::{bracket, norm, Error, Result, C64};

/// Source manifold `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Gamma {
    /// Finite point set (counting measure).
    Points { points: Vec<Vec<f64>> },
    /// Circle in the plane, midpoint rule in arc length.
    Circle { center: [f64; 2], radius: f64, nodes: usize },
    /// Straight segment in the plane.
    Segment { start: [f64; 2], end: [f64; 2], nodes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaNode {
    pub z: Vec<f64>,
    /// Quadrature weight of `σ_Γ`.
    pub weight: f64,
    /// Unit tangent for curves.
    pub tangent: Option<Vec<f64>>,
}

impl Gamma {
    pub fn point(z: Vec<f64>) -> Self {
        Gamma::Points { points: vec![z] }
    }

    /// Dimension `d` of `Γ`.
    pub fn dimension(&self) -> usize {
        match self {
            Gamma::Points { .. } => 0,
            _ => 1,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Gamma::Points { points } => points.first().map_or(0, |p| p.len()),
            _ => 2,
        }
    }

    pub fn quadrature(&self) -> Vec<GammaNode> {
        match self {
            Gamma::Points { points } => {
                points.iter().map(|z| GammaNode { z: z.clone(), weight: 1.0, tangent: None }).collect()
            }
            Gamma::Circle { center, radius, nodes } => {
                let w = 2.0 * std::f64::consts::PI * radius / *nodes as f64;
                (0..*nodes)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / *nodes as f64;
                        GammaNode {
                            z: vec![center[0] + radius * t.cos(), center[1] + radius * t.sin()],
                            weight: w,
                            tangent: Some(vec![-t.sin(), t.cos()]),
                        }
                    })
                    .collect()
            }
            Gamma::Segment { start, end, nodes } => {
                let d = [end[0] - start[0], end[1] - start[1]];
                let len = d[0].hypot(d[1]);
                (0..*nodes)
                    .map(|k| {
                        let s = (k as f64 + 0.5) / *nodes as f64;
                        GammaNode {
                            z: vec![start[0] + s * d[0], start[1] + s * d[1]],
                            weight: len / *nodes as f64,
                            tangent: Some(vec![d[0] / len, d[1] / len]),
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Source profile `S` with closed-form Fourier transform `Ŝ(ξ) = ∫ e^{-ix·ξ} S(x) dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Profile {
    /// `S(y) = e^{-|y|²/w²}`.
    Gaussian { width: f64 },
}

impl Profile {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Profile::Gaussian { width } => (-y.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp(),
        }
    }

    /// `Ŝ(ξ)` in dimension `ξ.len()`.
    pub fn fourier(&self, xi: &[f64]) -> f64 {
        match self {
            Profile::Gaussian { width } => {
                let n = xi.len() as i32;
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                (std::f64::consts::PI * width * width).powf(n as f64 / 2.0) * (-width * width * r2 / 4.0).exp()
            }
        }
    }

    fn scale(&self) -> f64 {
        match self {
            Profile::Gaussian { width } => *width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub gamma: Gamma,
    /// Constant amplitude `A` on `Γ`.
    pub amplitude: f64,
    pub profile: Profile,
}

impl SourceSpec {
    /// `V1(z) < E` at every node.
    pub fn check_energy(&self, model: &PotentialModel, energy: f64) -> Result<()> {
        for node in self.gamma.quadrature() {
            if model.v1(&node.z) >= energy {
                return Err(Error::pre(format!(
                    "V1 = {} ≥ E = {energy} at source node {:?}",
                    model.v1(&node.z),
                    node.z
                )));
            }
        }
        Ok(())
    }
}

/// `f_h(x) = Σ_k A S((x - z_k)/h) w_k`.
pub fn build_source(spec: &SourceSpec, grid: &GridDomain, h: f64) -> Result<Vec<C64>> {
    if spec.gamma.ambient_dim() != grid.dim {
        return Err(Error::Shape { expected: grid.dim, got: spec.gamma.ambient_dim() });
    }
    if grid.dx() > 0.5 * h * spec.profile.scale() {
        return Err(Error::pre(format!(
            "source profile of width {} h not resolved by dx = {}",
            spec.profile.scale(),
            grid.dx()
        )));
    }
    let nodes = spec.gamma.quadrature();
    for node in &nodes {
        if node.z.iter().any(|v| v.abs() > grid.interior_limit()) {
            return Err(Error::pre(format!("source node {:?} outside the trusted interior", node.z)));
        }
    }
    let mut y = vec![0.0; grid.dim];
    Ok((0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let mut acc = 0.0;
            for node in &nodes {
                for a in 0..grid.dim {
                    y[a] = (x[a] - node.z[a]) / h;
                }
                acc += node.weight * spec.profile.value(&y);
            }
            C64::new(spec.amplitude * acc, 0.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutgoingSolution {
    pub u: Vec<C64>,
    pub h: f64,
    pub energy: f64,
    pub delta: f64,
    /// `ζ = √z` at the smallest ε (principal branch).
    pub zeta: (f64, f64),
    /// Radiation factor `√z / h` used in `D_r - i√z/h`.
    pub radiation_k: (f64, f64),
    pub eps: Vec<f64>,
    /// `‖u_{ε_k} - u_{ε_{k+1}}‖_{L^{2,-δ}}` on the trusted interior.
    pub cauchy_gaps: Vec<f64>,
    pub cauchy_ok: bool,
    /// `‖(H - z) u - f‖ / ‖f‖` per ladder point.
    pub solver_residuals: Vec<f64>,
    /// Linear extrapolation to ε = 0 from the two smallest ε.
    pub extrapolated: Vec<C64>,
    /// `‖extrapolated - u‖_{L^{2,-δ}}` on the trusted interior.
    pub extrapolation_gap: f64,
}

impl OutgoingSolution {
    pub fn zeta(&self) -> C64 {
        C64::new(self.zeta.0, self.zeta.1)
    }

    pub fn radiation_k(&self) -> C64 {
        C64::new(self.radiation_k.0, self.radiation_k.1)
    }

    /// `gap_k / gap_{k+1}`.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.cauchy_gaps.windows(2).map(|g| g[0] / g[1]).collect()
    }

    pub fn require_cauchy(&self) -> Result<()> {
        if self.cauchy_ok {
            Ok(())
        } else {
            Err(Error::LimitingAbsorption(format!("ε-ladder gaps are not decreasing: {:?}", self.cauchy_gaps)))
        }
    }
}

/// `‖⟨x⟩^{s} u‖` over the trusted interior.
pub fn interior_weighted_norm(grid: &GridDomain, u: &[C64], s: f64) -> f64 {
    let lim = grid.interior_limit();
    grid.weighted_norm(u, s, Some(&|x: &[f64]| x.iter().all(|v| v.abs() <= lim)))
}

fn solve_refined(op: &DiscretizedOperator, z: C64, f: &[C64]) -> Result<(Vec<C64>, f64)> {
    let shifted = op.matrix.shifted(z);
    let lu = SparseLu::new(&shifted)?;
    let fnorm = vnorm(f);
    let mut u = lu.solve(f);
    let mut res = 0.0;
    for _ in 0..4 {
        let r: Vec<C64> = shifted.matvec(&u).iter().zip(f).map(|(a, b)| b - a).collect();
        res = if fnorm > 0.0 { vnorm(&r) / fnorm } else { vnorm(&r) };
        if res <= 1e-12 {
            break;
        }
        let du = lu.solve(&r);
        u.iter_mut().zip(du).for_each(|(a, b)| *a += b);
    }
    Ok((u, res))
}

/// `u_ε = (H - (E + iε))^{-1} f` along a decreasing ε ladder.
pub fn solve_outgoing(
    op: &DiscretizedOperator,
    f: &[C64],
    energy: f64,
    eps_ladder: &[f64],
    delta: f64,
) -> Result<OutgoingSolution> {
    if f.len() != op.len() {
        return Err(Error::Shape { expected: op.len(), got: f.len() });
    }
    if eps_ladder.len() < 3 || eps_ladder.windows(2).any(|w| !(w[1] < w[0])) || eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::pre("ε ladder must be positive, strictly decreasing and have at least 3 points"));
    }
    if op.grid.cap_width == 0.0 || op.grid.cap_strength == 0.0 {
        return Err(Error::pre("outgoing solves need an active absorbing layer"));
    }
    let solves =
        eps_ladder.par_iter().map(|&e| solve_refined(op, C64::new(energy, e), f)).collect::<Result<Vec<_>>>()?;
    let grid = &op.grid;
    let diff = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let cauchy_gaps: Vec<f64> =
        solves.windows(2).map(|w| interior_weighted_norm(grid, &diff(&w[0].0, &w[1].0), -delta)).collect();
    let cauchy_ok = cauchy_gaps.windows(2).all(|g| g[1] <= g[0] * (1.0 + 1e-12) || g[0] <= 1e-300);
    let k = eps_ladder.len();
    let (e1, e2) = (eps_ladder[k - 2], eps_ladder[k - 1]);
    let (u1, u2) = (&solves[k - 2].0, &solves[k - 1].0);
    let extrapolated: Vec<C64> = u1.iter().zip(u2).map(|(a, b)| (e1 * b - e2 * a) / (e1 - e2)).collect();
    let u = u2.clone();
    let extrapolation_gap = interior_weighted_norm(grid, &diff(&extrapolated, &u), -delta);
    let zeta = C64::new(energy, e2).sqrt();
    let rk = zeta / op.h;
    Ok(OutgoingSolution {
        u,
        h: op.h,
        energy,
        delta,
        zeta: (zeta.re, zeta.im),
        radiation_k: (rk.re, rk.im),
        eps: eps_ladder.to_vec(),
        cauchy_gaps,
        cauchy_ok,
        solver_residuals: solves.iter().map(|s| s.1).collect(),
        extrapolated,
        extrapolation_gap,
    })
}

/// Default ladder `{10⁻¹, 10⁻², 10⁻³}·h`.
pub fn default_eps_ladder(h: f64) -> Vec<f64> {
    vec![1e-1 * h, 1e-2 * h, 1e-3 * h]
}

/// Fourth-order centred gradient at node `idx`, `None` if the stencil leaves the grid.
fn gradient(grid: &GridDomain, u: &[C64], idx: usize) -> Option<Vec<C64>> {
    let m = grid.multi_index(idx);
    let n = grid.points_per_axis as isize;
    let dx = grid.dx();
    let mut g = Vec::with_capacity(grid.dim);
    for a in 0..grid.dim {
        let at = |s: isize| -> Option<C64> {
            let j = m[a] as isize + s;
            if j < 0 || j >= n {
                return None;
            }
            let mut mm = m;
            mm[a] = j as usize;
            Some(u[grid.flat(mm[0], mm[1])])
        };
        let (m2, m1, p1, p2) = (at(-2)?, at(-1)?, at(1)?, at(2)?);
        g.push((m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * dx));
    }
    Some(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationResidual {
    /// `‖(D_r - ik) u‖_{L^{2,δ-1}}` over the annulus.
    pub residual: f64,
    /// `‖u‖_{L^{2,δ-1}}` over the same annulus.
    pub u_norm: f64,
    pub ratio: f64,
    pub nodes: usize,
}

/// `(D_r - ik) u` with `D_r = ∂_r + (n-1)/(2|x|)` on `{|x| ≥ r_min} ∩` trusted interior.
pub fn radiation_residual(u: &[C64], k: C64, grid: &GridDomain, delta: f64, r_min: f64) -> Result<RadiationResidual> {
    if u.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: u.len() });
    }
    let lim = grid.interior_limit();
    let (mut res, mut un, mut nodes) = (0.0, 0.0, 0usize);
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let r = norm(&x);
        if r < r_min || x.iter().any(|v| v.abs() > lim) {
            continue;
        }
        let Some(g) = gradient(grid, u, idx) else {
            continue;
        };
        let dr: C64 = g.iter().zip(&x).map(|(gi, xi)| gi * (xi / r)).sum();
        let d = dr + u[idx] * ((grid.dim as f64 - 1.0) / (2.0 * r)) - C64::new(0.0, 1.0) * k * u[idx];
        let w = bracket(&x).powf(2.0 * (delta - 1.0));
        res += w * d.norm_sqr();
        un += w * u[idx].norm_sqr();
        nodes += 1;
    }
    if nodes == 0 {
        return Err(Error::config(format!("radiation annulus |x| ≥ {r_min} inside the trusted interior is empty")));
    }
    let vol = grid.cell_volume();
    let (residual, u_norm) = ((res * vol).sqrt(), (un * vol).sqrt());
    Ok(RadiationResidual { residual, u_norm, ratio: if u_norm > 0.0 { residual / u_norm } else { 0.0 }, nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRecord {
    pub r: f64,
    /// `|(D_r - iζ)u|²_{S_r}`.
    pub lhs: f64,
    pub rhs: f64,
    /// The five right-hand terms in order.
    pub terms: [f64; 5],
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereIdentity {
    pub records: Vec<SphereRecord>,
    pub max_defect: f64,
    pub skipped: Vec<f64>,
}

/// Bilinear interpolation of node values at `x` (2D).
fn interpolate(grid: &GridDomain, v: &[C64], x: &[f64]) -> C64 {
    let dx = grid.dx();
    let n = grid.points_per_axis;
    let s0 = ((x[0] + grid.half_width) / dx - 0.5).clamp(0.0, (n - 1) as f64 - 1e-12);
    let s1 = ((x[1] + grid.half_width) / dx - 0.5).clamp(0.0, (n - 1) as f64 - 1e-12);
    let (i, j) = (s0.floor() as usize, s1.floor() as usize);
    let (a, b) = (s0 - i as f64, s1 - j as f64);
    let at = |p: usize, q: usize| v[grid.flat(p.min(n - 1), q.min(n - 1))];
    at(i, j) * ((1.0 - a) * (1.0 - b))
        + at(i + 1, j) * (a * (1.0 - b))
        + at(i, j + 1) * ((1.0 - a) * b)
        + at(i + 1, j + 1) * (a * b)
}

/// Checks the sphere identity
/// `|(D_r - iζ)u|² = |D_r u + ζ₂u|² + ζ₁²|u|² + 2ζ₁⟨V₂u,u⟩_{B_r} + 4ζ₁²ζ₂‖u‖²_{B_r} + 2ζ₁ Im⟨f,u⟩_{B_r}`
/// for `(H_h - z)u = f`, rescaled to unit `h`: `ζ = √z/h`, `V₂ → -Im(diag)/h²`, `f → f/h²`.
pub fn sphere_identity_check(
    op: &DiscretizedOperator,
    u: &[C64],
    f: &[C64],
    z: C64,
    radii: &[f64],
) -> Result<SphereIdentity> {
    let grid = &op.grid;
    if u.len() != grid.len() || f.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: u.len() });
    }
    let h = op.h;
    let zeta = z.sqrt() / h;
    let (z1, z2) = (zeta.re, zeta.im);
    let v2: Vec<f64> = op.imag_potential.iter().map(|v| -v / (h * h)).collect();
    let fs: Vec<C64> = f.iter().map(|v| v / (h * h)).collect();
    let dx = grid.dx();
    let vol = grid.cell_volume();
    let lim = grid.interior_limit();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &r0 in radii {
        if r0 + 2.0 * dx > lim || r0 <= 0.0 {
            skipped.push(r0);
            continue;
        }
        // Surface data and ball weights.
        let (lhs, s_a, s_b, weights): (f64, f64, f64, Vec<f64>) = if grid.dim == 1 {
            // Snap to the cell face nearest r0.
            let m = ((r0 + grid.half_width) / dx).round() as usize;
            let r = -grid.half_width + m as f64 * dx;
            let mirror = grid.points_per_axis - m;
            let mut lhs = 0.0;
            let (mut a, mut b) = (0.0, 0.0);
            for (inner, outer) in [(m - 1, m), (mirror, mirror - 1)] {
                let uf = (u[inner] + u[outer]) * 0.5;
                let dr = (u[outer] - u[inner]) / dx;
                lhs += (dr - C64::new(0.0, 1.0) * zeta * uf).norm_sqr();
                a += (dr + z2 * uf).norm_sqr();
                b += uf.norm_sqr();
            }
            let w = (0..grid.len()).map(|i| if grid.coordinate(i).abs() < r { 1.0 } else { 0.0 }).collect();
            let _ = r;
            (lhs, a, b, w)
        } else {
            let nq = ((2.0 * std::f64::consts::PI * r0 / dx) as usize * 8).max(256);
            let grads: Vec<Vec<C64>> =
                (0..grid.len()).map(|i| gradient(grid, u, i).unwrap_or_else(|| vec![C64::new(0.0, 0.0); 2])).collect();
            let gx: Vec<C64> = grads.iter().map(|g| g[0]).collect();
            let gy: Vec<C64> = grads.iter().map(|g| g[1]).collect();
            let ds = 2.0 * std::f64::consts::PI * r0 / nq as f64;
            let (mut lhs, mut a, mut b) = (0.0, 0.0, 0.0);
            for q in 0..nq {
                let t = 2.0 * std::f64::consts::PI * (q as f64 + 0.5) / nq as f64;
                let x = [r0 * t.cos(), r0 * t.sin()];
                let uu = interpolate(grid, u, &x);
                let dr = interpolate(grid, &gx, &x) * t.cos() + interpolate(grid, &gy, &x) * t.sin() + uu / (2.0 * r0);
                lhs += ds * (dr - C64::new(0.0, 1.0) * zeta * uu).norm_sqr();
                a += ds * (dr + z2 * uu).norm_sqr();
                b += ds * uu.norm_sqr();
            }
            // Fraction of each cell inside the disc, by 8×8 subsampling near the circle.
            let w = (0..grid.len())
                .map(|i| {
                    let x = grid.point(i);
                    let rr = norm(&x);
                    if rr + dx < r0 {
                        1.0
                    } else if rr - dx > r0 {
                        0.0
                    } else {
                        let mut inside = 0;
                        for p in 0..8 {
                            for q in 0..8 {
                                let y0 = x[0] + dx * ((p as f64 + 0.5) / 8.0 - 0.5);
                                let y1 = x[1] + dx * ((q as f64 + 0.5) / 8.0 - 0.5);
                                if y0.hypot(y1) < r0 {
                                    inside += 1;
                                }
                            }
                        }
                        inside as f64 / 64.0
                    }
                })
                .collect();
            (lhs, a, b, w)
        };
        let (mut vterm, mut uball, mut fterm) = (0.0, 0.0, C64::new(0.0, 0.0));
        for i in 0..grid.len() {
            if weights[i] == 0.0 {
                continue;
            }
            let w = weights[i] * vol;
            vterm += w * v2[i] * u[i].norm_sqr();
            uball += w * u[i].norm_sqr();
            fterm += w * fs[i] * u[i].conj();
        }
        let terms = [s_a, z1 * z1 * s_b, 2.0 * z1 * vterm, 4.0 * z1 * z1 * z2 * uball, 2.0 * z1 * fterm.im];
        let rhs: f64 = terms.iter().sum();
        let scale = lhs.abs().max(terms.iter().map(|t| t.abs()).fold(0.0, f64::max)).max(1e-300);
        records.push(SphereRecord { r: r0, lhs, rhs, terms, defect: (lhs - rhs).abs() / scale });
    }
    let max_defect = records.iter().map(|r| r.defect).fold(0.0, f64::max);
    Ok(SphereIdentity { records, max_defect, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSuite {
    /// `‖u‖_{L^{2,-δ}}`.
    pub u_weighted: f64,
    /// `‖(D_r - ik)u‖_{L^{2,δ-1}(B₁ᶜ)}`.
    pub radiation: f64,
    /// `(R, R^{δ-1/2} ‖u‖_{L^{2,-δ}(B_Rᶜ)})`.
    pub tails: Vec<(f64, f64)>,
    /// `‖f‖_{L^{2,δ}}`.
    pub f_weighted: f64,
    /// Smallest `C` making the estimate hold for every listed `R`.
    pub constant: f64,
}

pub fn estimate_suite(sol: &OutgoingSolution, f: &[C64], grid: &GridDomain, radii: &[f64]) -> Result<EstimateSuite> {
    let delta = sol.delta;
    let lim = grid.interior_limit();
    let u_weighted = interior_weighted_norm(grid, &sol.u, -delta);
    let radiation = radiation_residual(&sol.u, sol.radiation_k(), grid, delta, 1.0)?.residual;
    let tails: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            let t =
                grid.weighted_norm(&sol.u, -delta, Some(&|x: &[f64]| norm(x) >= r && x.iter().all(|v| v.abs() <= lim)));
            (r, r.powf(delta - 0.5) * t)
        })
        .collect();
    let f_weighted = grid.weighted_norm(f, delta, None);
    if f_weighted == 0.0 {
        return Err(Error::pre("estimate suite needs a nonzero source"));
    }
    let worst_tail = tails.iter().map(|t| t.1).fold(0.0, f64::max);
    let constant = (u_weighted + radiation + worst_tail) / f_weighted;
    Ok(EstimateSuite { u_weighted, radiation, tails, f_weighted, constant })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaStep {
    pub theta: f64,
    pub theta_next: f64,
    /// `‖u_θ - u_θ'‖_{L^{2,-δ}}`.
    pub difference: f64,
    /// `h |θ - θ'| ‖⟨x⟩^{-1-ρ} u_θ‖`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub steps: Vec<ThetaStep>,
    /// `max difference / scale`.
    pub constant: f64,
}

/// Solves with `H_h - hθ⟨x⟩^{-1-ρ}` along `thetas` at fixed `z = E + iε`.
#[allow(clippy::too_many_arguments)]
pub fn theta_continuation(
    model: &PotentialModel,
    split: Option<&DissipativeSplit>,
    grid: &GridDomain,
    h: f64,
    opts: &BuildOptions,
    f: &[C64],
    z: C64,
    thetas: &[f64],
) -> Result<ThetaReport> {
    if thetas.len() < 2 {
        return Err(Error::pre("θ-continuation needs at least two values"));
    }
    let sols = thetas
        .par_iter()
        .map(|&theta| {
            let op = build_hamiltonian(model, split, grid, h, Variant::Theta { theta }, opts)?;
            Ok(solve_refined(&op, z, f)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let decay: Vec<f64> = grid.points().iter().map(|x| bracket(x).powf(-1.0 - model.rho)).collect();
    let steps: Vec<ThetaStep> = (0..thetas.len() - 1)
        .map(|k| {
            let d: Vec<C64> = sols[k].iter().zip(&sols[k + 1]).map(|(a, b)| a - b).collect();
            let weighted: Vec<C64> = sols[k].iter().zip(&decay).map(|(a, w)| a * *w).collect();
            ThetaStep {
                theta: thetas[k],
                theta_next: thetas[k + 1],
                difference: interior_weighted_norm(grid, &d, -opts.delta),
                scale: h * (thetas[k + 1] - thetas[k]).abs() * grid.l2_norm(&weighted),
            }
        })
        .collect();
    let constant = steps.iter().map(|s| s.difference / s.scale.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    Ok(ThetaReport { steps, constant })
}
