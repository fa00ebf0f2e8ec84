//! Semiclassical measure of the outgoing solution: the transport formula
//! over `N_EΓ`, Weyl pairings of computed solutions, the damped Liouville
//! equation, the propagation law and leading-order Egorov checks.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cutoff::Plateau;
use crate::flow::{
    escape_radius, flow_map, integrate_flow, region_membership, EnergyInterval, FlowOptions, PhasePoint, RegionSpec,
};
use crate::helmholtz::{Gamma, Profile};
use crate::operator::{quadratic_observable, weyl_quantize, GridDomain, QuantizeOptions, TestSymbol};
use crate::potentials::{Field, PotentialModel};
use crate::{dot, norm, Error, Result, C64};

/// Normalization of `Ŝ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FourierConvention {
    /// `Ŝ(ξ) = ∫ e^{-ix·ξ} S(x) dx`.
    #[default]
    Plain,
    /// `Ŝ(ξ) = (2π)^{-n/2} ∫ e^{-ix·ξ} S(x) dx`.
    Symmetric,
}

impl FourierConvention {
    /// Factor multiplying `|Ŝ|²` relative to the plain convention.
    pub fn factor(self, n: usize) -> f64 {
        match self {
            FourierConvention::Plain => 1.0,
            FourierConvention::Symmetric => (2.0 * PI).powi(-(n as i32)),
        }
    }
}

/// Quadrature of `σ_{N_EΓ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeGammaSample {
    pub energy: f64,
    /// Dimension `d` of `Γ`.
    pub gamma_dim: usize,
    pub particles: Vec<PhasePoint>,
    pub weights: Vec<f64>,
    pub total_weight: f64,
}

impl NeGammaSample {
    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, |p| p.dim())
    }

    /// Largest violation of `|ξ|² = E - V1(z)` and `ξ ⊥ T_zΓ`.
    pub fn constraint_defect(&self, model: &PotentialModel, gamma: &Gamma) -> f64 {
        let nodes = gamma.quadrature();
        let per_node = self.particles.len() / nodes.len().max(1);
        self.particles
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let shell = (dot(&p.xi, &p.xi) - (self.energy - model.v1(&p.x))).abs();
                let normal = nodes
                    .get(k / per_node.max(1))
                    .and_then(|n| n.tangent.as_ref())
                    .map_or(0.0, |t| dot(t, &p.xi).abs());
                shell.max(normal)
            })
            .fold(0.0, f64::max)
    }
}

/// Samples `N_EΓ = {(z, ξ): z ∈ Γ, ξ ⊥ T_zΓ, |ξ|² = E - V1(z)}` with weights of `σ_{N_EΓ}`.
///
/// Points in the plane get `resolution` directions on the circle of radius
/// `|ξ|`; curves in the plane get the two normal sheets weighted by arc length.
pub fn sample_negamma(model: &PotentialModel, gamma: &Gamma, energy: f64, resolution: usize) -> Result<NeGammaSample> {
    let n = gamma.ambient_dim();
    if n != model.dim {
        return Err(Error::Shape { expected: model.dim, got: n });
    }
    if n > 2 {
        return Err(Error::config("N_EΓ sampling supports dimensions 1 and 2"));
    }
    let d = gamma.dimension();
    let mut particles = Vec::new();
    let mut weights = Vec::new();
    for node in gamma.quadrature() {
        let gap = energy - model.v1(&node.z);
        if !(gap > 0.0) {
            return Err(Error::pre(format!("V1(z) = {} ≥ E = {energy} at z = {:?}", model.v1(&node.z), node.z)));
        }
        let rho = gap.sqrt();
        match (n, d) {
            (1, 0) => {
                for s in [1.0, -1.0] {
                    particles.push(PhasePoint::new(node.z.clone(), vec![s * rho]));
                    weights.push(node.weight);
                }
            }
            (2, 0) => {
                if resolution < 3 {
                    return Err(Error::config("need at least 3 directions on the momentum circle"));
                }
                let w = 2.0 * PI * rho / resolution as f64;
                for k in 0..resolution {
                    let a = 2.0 * PI * (k as f64 + 0.5) / resolution as f64;
                    particles.push(PhasePoint::new(node.z.clone(), vec![rho * a.cos(), rho * a.sin()]));
                    weights.push(w * node.weight);
                }
            }
            (2, 1) => {
                let t = node.tangent.as_ref().expect("curves carry tangents");
                let nu = [t[1], -t[0]];
                for s in [1.0, -1.0] {
                    particles.push(PhasePoint::new(node.z.clone(), vec![s * rho * nu[0], s * rho * nu[1]]));
                    weights.push(node.weight);
                }
            }
            _ => return Err(Error::config(format!("unsupported source geometry d = {d} in dimension {n}"))),
        }
    }
    let total_weight = weights.iter().sum();
    Ok(NeGammaSample { energy, gamma_dim: d, particles, weights, total_weight })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Provenance {
    FlowFormula { energy: f64, horizon: f64, dt: f64 },
    EmpiricalMomentFit { energy: f64, h: f64 },
}

/// Weighted particle cloud on `ℝ^{2n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceMeasure {
    pub dim: usize,
    /// `(x, ξ)` of each particle, flattened.
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl PhaseSpaceMeasure {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if coords.len() != 2 * dim * weights.len() {
            return Err(Error::Shape { expected: 2 * dim * weights.len(), got: coords.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::pre("measure weights must be non-negative"));
        }
        Ok(PhaseSpaceMeasure { dim, coords, weights, provenance })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.coords[2 * self.dim * i..2 * self.dim * i + self.dim]
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        &self.coords[2 * self.dim * i + self.dim..2 * self.dim * (i + 1)]
    }

    pub fn point(&self, i: usize) -> PhasePoint {
        PhasePoint::new(self.x(i).to_vec(), self.xi(i).to_vec())
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `∫ q dμ`.
    pub fn pair(&self, q: &TestSymbol) -> f64 {
        if matches!(q, TestSymbol::Zero) {
            return 0.0;
        }
        (0..self.len())
            .into_par_iter()
            .map(|i| self.weights[i] * q.eval(self.x(i), self.xi(i)).re)
            .collect::<Vec<f64>>()
            .into_iter()
            .sum()
    }

    /// `μ(Z)` for a phase-space region.
    pub fn region_mass(&self, region: &RegionSpec) -> f64 {
        (0..self.len()).filter(|&i| region_membership(&self.point(i), region)).map(|i| self.weights[i]).sum()
    }

    /// `max |p(w) - E|` over particles.
    pub fn shell_defect(&self, model: &PotentialModel, energy: f64) -> f64 {
        (0..self.len()).map(|i| (model.energy(self.x(i), self.xi(i)) - energy).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMeasureOptions {
    pub horizon: f64,
    pub dt: f64,
    pub convention: FourierConvention,
    /// `Im E₁` for `E_h = E₀ + hE₁`; added to `V2` in the weights.
    pub damping_shift: f64,
    /// Averaged damping constants `(c0, C)` for the tail bound.
    pub constants: Option<(f64, f64)>,
    pub flow: FlowOptions,
}

impl Default for FlowMeasureOptions {
    fn default() -> Self {
        FlowMeasureOptions {
            horizon: 20.0,
            dt: 1e-3,
            convention: FourierConvention::Plain,
            damping_shift: 0.0,
            constants: None,
            flow: FlowOptions::with_tolerance(1e-11),
        }
    }
}

/// `μ` from the transport formula together with its source data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMeasure {
    pub measure: PhaseSpaceMeasure,
    pub energy: f64,
    pub horizon: f64,
    pub dt: f64,
    pub damping_shift: f64,
    pub convention: FourierConvention,
    pub sources: Vec<PhasePoint>,
    /// `π(2π)^{d-n}|A|²|ξ|^{-1}|Ŝ(ξ)|²` times the `σ_{N_EΓ}` weight, per source point.
    pub source_weights: Vec<f64>,
    /// Particles per orbit; particle `k·m + j` sits at `t = (j + 1/2) dt` on orbit `k`.
    pub orbit_len: usize,
    /// `Σ_k source_weight_k e^{2C} e^{-2 c0 T} / (2 c0)` when `c0 > 0`.
    pub tail_bound: Option<f64>,
    /// Every orbit ends outside `B(Rc)` moving outward.
    pub escaped: bool,
    pub converged: bool,
    pub escape_radius: f64,
}

impl FlowMeasure {
    pub fn time(&self, i: usize) -> f64 {
        ((i % self.orbit_len) as f64 + 0.5) * self.dt
    }

    pub fn pair(&self, q: &TestSymbol) -> f64 {
        self.measure.pair(q)
    }

    /// `∫ q ρ dσ_{N_EΓ}`.
    pub fn source_pairing(&self, q: &TestSymbol) -> f64 {
        self.sources.iter().zip(&self.source_weights).map(|(w, s)| s * q.eval(&w.x, &w.xi).re).sum()
    }
}

/// `∫ q dμ = ∫_0^∞ ∫_{N_EΓ} π(2π)^{d-n}|A|²|ξ|^{-1}|Ŝ|² q(φ^t) e^{-2∫_0^t V2∘φ^s} dσ dt`
/// with midpoint times `(j + 1/2) dt`, `j < T/dt`.
pub fn flow_measure(
    model: &PotentialModel,
    ne: &NeGammaSample,
    profile: &Profile,
    amplitude: f64,
    opts: &FlowMeasureOptions,
) -> Result<FlowMeasure> {
    if !(opts.dt > 0.0) || !(opts.horizon > opts.dt) {
        return Err(Error::config("flow measure needs 0 < dt < horizon"));
    }
    let n = ne.dim();
    let steps = (opts.horizon / opts.dt).round() as usize;
    let horizon = steps as f64 * opts.dt;
    let d = ne.gamma_dim as i32;
    let pref = PI * (2.0 * PI).powi(d - n as i32) * amplitude * amplitude * opts.convention.factor(n);
    let source_weights: Vec<f64> = ne
        .particles
        .iter()
        .zip(&ne.weights)
        .map(|(w, s)| s * pref * profile.fourier(&w.xi).powi(2) / norm(&w.xi))
        .collect();
    let shift = opts.damping_shift;
    let orbits = ne
        .particles
        .par_iter()
        .map(|w0| {
            let (start, i0) = flow_map(model, w0, 0.5 * opts.dt, &opts.flow)?;
            let fo = FlowOptions { sample_dt: Some(opts.dt), ..opts.flow.clone() };
            let tr = integrate_flow(model, &start, (0.0, horizon - opts.dt), &fo)?;
            let mut pts = Vec::with_capacity(steps);
            for (k, (p, i)) in tr.points.iter().zip(&tr.damping_partials).enumerate().take(steps) {
                let t = (k as f64 + 0.5) * opts.dt;
                pts.push((p.clone(), -2.0 * (i0 + i + shift * t)));
            }
            if pts.len() != steps {
                return Err(Error::Integration {
                    t: horizon,
                    reason: format!("orbit produced {} samples, expected {steps}", pts.len()),
                    last_state: Vec::new(),
                });
            }
            Ok(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let rc = escape_radius(model, EnergyInterval::around(ne.energy))?;
    let escaped = orbits.iter().all(|o| {
        let last = &o.last().expect("nonempty orbit").0;
        norm(&last.x) >= rc && last.cosine() >= 0.0
    });
    let mut coords = Vec::with_capacity(2 * n * steps * orbits.len());
    let mut weights = Vec::with_capacity(steps * orbits.len());
    for (orbit, sw) in orbits.into_iter().zip(&source_weights) {
        for (p, log_damp) in orbit {
            coords.extend_from_slice(&p.x);
            coords.extend_from_slice(&p.xi);
            weights.push(opts.dt * sw * log_damp.exp());
        }
    }
    let tail_bound = match opts.constants {
        Some((c0, big_c)) if c0 > 0.0 => {
            let c0 = c0 + shift;
            Some(source_weights.iter().sum::<f64>() * (2.0 * big_c).exp() * (-2.0 * c0 * horizon).exp() / (2.0 * c0))
        }
        _ => None,
    };
    let measure = PhaseSpaceMeasure::new(
        n,
        coords,
        weights,
        Provenance::FlowFormula { energy: ne.energy, horizon, dt: opts.dt },
    )?;
    Ok(FlowMeasure {
        measure,
        energy: ne.energy,
        horizon,
        dt: opts.dt,
        damping_shift: shift,
        convention: opts.convention,
        sources: ne.particles.clone(),
        source_weights,
        orbit_len: steps,
        converged: tail_bound.is_some() || escaped,
        tail_bound,
        escaped,
        escape_radius: rc,
    })
}

/// `c_h = h^{-(n+d-1)/2}`: the scaling under which `c_h u_h` has an `h`-independent measure.
pub fn source_scaling(h: f64, n: usize, d: usize) -> f64 {
    h.powf(-((n + d) as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPairing {
    /// `c_h² ⟨Op_h^w(q) u, u⟩`.
    pub value: C64,
    /// `⟨Op_h^w(q) u, u⟩`.
    pub raw: C64,
}

/// Checks that `q` vanishes at every untrusted node for a few probe momenta.
pub fn check_interior_support(q: &TestSymbol, grid: &GridDomain) -> Result<()> {
    let mut probes = vec![vec![0.0; grid.dim]];
    for a in 0..grid.dim {
        for s in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
            let mut xi = vec![0.0; grid.dim];
            xi[a] = s;
            probes.push(xi);
        }
    }
    for i in 0..grid.len() {
        if grid.is_trusted(i) {
            continue;
        }
        let x = grid.point(i);
        for xi in &probes {
            if q.eval(&x, xi).norm() > 1e-12 {
                return Err(Error::pre(format!("test symbol does not vanish at untrusted node {x:?}")));
            }
        }
    }
    Ok(())
}

/// `c_h² ⟨Op_h^w(q) u, u⟩` with `c_h` from [`source_scaling`].
pub fn empirical_pairing(
    u: &[C64],
    q: &TestSymbol,
    grid: &GridDomain,
    h: f64,
    gamma_dim: usize,
    qopts: &QuantizeOptions,
) -> Result<EmpiricalPairing> {
    if u.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: u.len() });
    }
    if matches!(q, TestSymbol::Zero) {
        let z = C64::new(0.0, 0.0);
        return Ok(EmpiricalPairing { value: z, raw: z });
    }
    check_interior_support(q, grid)?;
    let op = weyl_quantize(q, grid, h, qopts)?;
    let raw = quadratic_observable(grid, &op, u)?;
    let c = source_scaling(h, grid.dim, gamma_dim);
    Ok(EmpiricalPairing { value: raw * (c * c), raw })
}

/// Named symbol of a comparison battery.
#[derive(Clone, Debug)]
pub struct BatterySymbol {
    pub name: String,
    pub symbol: TestSymbol,
}

fn angle_window(center: f64, half: f64, ramp: f64) -> impl Fn(f64) -> f64 + Send + Sync {
    let p = Plateau::centered(0.0, half, ramp);
    move |theta: f64| {
        let d = (theta - center + PI).rem_euclid(2.0 * PI) - PI;
        p.eval(d)
    }
}

/// Twelve product symbols for a planar point source at the origin with
/// `|ξ|² = energy`: radial annuli, position wedges, momentum-direction windows
/// and energy-shell weights, all supported in `r_min ≤ |x| ≤ r_max`.
pub fn planar_battery(r_min: f64, r_max: f64, energy: f64) -> Vec<BatterySymbol> {
    let span = r_max - r_min;
    let ramp = 0.1 * span / 0.7;
    let ann = move |lo: f64, hi: f64| {
        let p = Plateau::new(lo, lo + ramp, hi - ramp, hi);
        move |x: &[f64]| p.eval(norm(x))
    };
    let third = span / 3.0;
    let wide = Plateau::new(r_min, r_min + 1.5 * ramp, r_max - 1.5 * ramp, r_max);
    let wide_a = move |x: &[f64]| wide.eval(norm(x));
    let gauss = move |xi: &[f64]| (-dot(xi, xi) / (2.0 * 1.2 * 1.2 * energy)).exp();
    let window = |c: f64| {
        let xc = [energy.sqrt() * c.cos(), energy.sqrt() * c.sin()];
        let s2 = 2.0 * 0.7 * 0.7 * energy;
        move |xi: &[f64]| (-((xi[0] - xc[0]).powi(2) + (xi[1] - xc[1]).powi(2)) / s2).exp()
    };
    let shell1 = move |xi: &[f64]| {
        let s = dot(xi, xi) / energy;
        s * (1.0 - s).exp()
    };
    let shell2 = move |xi: &[f64]| {
        let s = dot(xi, xi) / energy;
        s * s * (2.0 - 2.0 * s).exp()
    };
    let wedge = move |c: f64, half: f64| {
        let w = angle_window(c, half, 0.5 * half);
        move |x: &[f64]| wide_a(x) * w(x[1].atan2(x[0]))
    };
    let sym = |name: &str, symbol: TestSymbol| BatterySymbol { name: name.into(), symbol };
    vec![
        sym("annulus-inner", TestSymbol::product(ann(r_min, r_min + third + ramp), gauss)),
        sym("annulus-middle", TestSymbol::product(ann(r_min + third - ramp, r_max - third + ramp), gauss)),
        sym("annulus-outer", TestSymbol::product(ann(r_max - third - ramp, r_max), gauss)),
        sym("annulus-wide", TestSymbol::product(wide_a, gauss)),
        sym("wedge-east", TestSymbol::product(wedge(0.0, PI / 4.0), gauss)),
        sym("wedge-north", TestSymbol::product(wedge(PI / 2.0, PI / 6.0), gauss)),
        sym("wedge-southwest", TestSymbol::product(wedge(1.25 * PI, PI / 3.0), gauss)),
        sym("momentum-east", TestSymbol::product(wide_a, window(0.0))),
        sym("momentum-northwest", TestSymbol::product(wide_a, window(0.75 * PI))),
        sym("shell-wide", TestSymbol::product(wide_a, shell1)),
        sym("shell-middle", TestSymbol::product(ann(r_min + third - ramp, r_max - third + ramp), shell2)),
        sym("shell-east", TestSymbol::product(wedge(0.0, PI / 4.0), shell1)),
    ]
}

/// Battery for a point source at the origin of the line with `ξ² = energy`:
/// windows on either side of the source, momentum-sign windows and shell weights.
pub fn line_battery(r_min: f64, r_max: f64, energy: f64) -> Vec<BatterySymbol> {
    let span = r_max - r_min;
    let ramp = 0.1 * span / 0.7;
    let half = 0.5 * (r_min + r_max);
    let side = move |lo: f64, hi: f64, sign: f64| {
        let p = Plateau::new(lo, lo + ramp, hi - ramp, hi);
        move |x: &[f64]| p.eval(sign * x[0])
    };
    let both = move |lo: f64, hi: f64| {
        let p = Plateau::new(lo, lo + ramp, hi - ramp, hi);
        move |x: &[f64]| p.eval(x[0].abs())
    };
    let gauss = move |xi: &[f64]| (-xi[0] * xi[0] / (2.0 * 1.2 * 1.2 * energy)).exp();
    let toward = move |sign: f64| {
        let k = sign * energy.sqrt();
        let s2 = 2.0 * 0.7 * 0.7 * energy;
        move |xi: &[f64]| (-(xi[0] - k).powi(2) / s2).exp()
    };
    let shell = move |xi: &[f64]| {
        let s = xi[0] * xi[0] / energy;
        s * (1.0 - s).exp()
    };
    let sym = |name: &str, symbol: TestSymbol| BatterySymbol { name: name.into(), symbol };
    vec![
        sym("right", TestSymbol::product(side(r_min, r_max, 1.0), gauss)),
        sym("left", TestSymbol::product(side(r_min, r_max, -1.0), gauss)),
        sym("both-near", TestSymbol::product(both(r_min, half + ramp), gauss)),
        sym("both-far", TestSymbol::product(both(half - ramp, r_max), gauss)),
        sym("right-moving", TestSymbol::product(both(r_min, r_max), toward(1.0))),
        sym("left-moving", TestSymbol::product(both(r_min, r_max), toward(-1.0))),
        sym("shell-right", TestSymbol::product(side(r_min, r_max, 1.0), shell)),
        sym("shell-both", TestSymbol::product(both(r_min, r_max), shell)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub symbol: String,
    pub h: f64,
    pub flow: f64,
    pub empirical: f64,
    pub empirical_im: f64,
    /// `|empirical - flow| / |flow|`.
    pub gap: f64,
}

/// Flow pairing against `c_h²⟨Op_h^w(q)u,u⟩` for every battery symbol.
pub fn compare_battery(
    fm: &FlowMeasure,
    battery: &[BatterySymbol],
    u: &[C64],
    grid: &GridDomain,
    h: f64,
    gamma_dim: usize,
    qopts: &QuantizeOptions,
) -> Result<Vec<ComparisonRow>> {
    battery
        .iter()
        .map(|b| {
            let flow = fm.pair(&b.symbol);
            let e = empirical_pairing(u, &b.symbol, grid, h, gamma_dim, qopts)?.value;
            Ok(ComparisonRow {
                symbol: b.name.clone(),
                h,
                flow,
                empirical: e.re,
                empirical_im: e.im,
                gap: (e.re - flow).abs() / flow.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}

/// `{p, q}` by a fourth-order difference along `X_p = (2ξ, -∇V1)`.
fn poisson_along_flow(model: &PotentialModel, q: &TestSymbol, x: &[f64], xi: &[f64], step: f64) -> f64 {
    let n = x.len();
    let g = model.v1.gradient(x);
    let mut xs = vec![0.0; n];
    let mut xis = vec![0.0; n];
    let mut at = |s: f64| {
        for i in 0..n {
            xs[i] = x[i] + s * 2.0 * xi[i];
            xis[i] = xi[i] - s * g[i];
        }
        q.eval(&xs, &xis).re
    };
    (-at(2.0 * step) + 8.0 * at(step) - 8.0 * at(-step) + at(-2.0 * step)) / (12.0 * step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleRecord {
    pub symbol: String,
    /// `∫ {p, q} dμ`.
    pub transport: f64,
    /// `-∫ 2(V2 + Im E₁) q dμ`.
    pub damping: f64,
    /// `∫ q ρ dσ_{N_EΓ}`.
    pub source: f64,
    pub defect: f64,
    /// Defect over the sum of the absolute contributions (0 when all vanish).
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleReport {
    pub records: Vec<LiouvilleRecord>,
    pub max_relative: f64,
}

/// Weak form `∫({p,q} - 2V2 q) dμ + ∫ q ρ dσ = 0` of the damped Liouville equation.
pub fn liouville_residual(
    fm: &FlowMeasure,
    model: &PotentialModel,
    battery: &[BatterySymbol],
    fd_step: f64,
) -> LiouvilleReport {
    let mu = &fm.measure;
    let records: Vec<LiouvilleRecord> = battery
        .iter()
        .map(|b| {
            if matches!(b.symbol, TestSymbol::Zero) {
                return LiouvilleRecord {
                    symbol: b.name.clone(),
                    transport: 0.0,
                    damping: 0.0,
                    source: 0.0,
                    defect: 0.0,
                    relative: 0.0,
                };
            }
            let (transport, damping, scale) = (0..mu.len())
                .into_par_iter()
                .map(|i| {
                    let (x, xi) = (mu.x(i), mu.xi(i));
                    let w = mu.weights[i];
                    let pq = poisson_along_flow(model, &b.symbol, x, xi, fd_step);
                    let dq = -2.0 * (model.v2(x) + fm.damping_shift) * b.symbol.eval(x, xi).re;
                    (w * pq, w * dq, w * (pq.abs() + dq.abs()))
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold((0.0, 0.0, 0.0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
            let source = fm.source_pairing(&b.symbol);
            let source_abs: f64 =
                fm.sources.iter().zip(&fm.source_weights).map(|(w, s)| s * b.symbol.eval(&w.x, &w.xi).re.abs()).sum();
            let defect = (transport + damping + source).abs();
            let total = scale + source_abs;
            LiouvilleRecord {
                symbol: b.name.clone(),
                transport,
                damping,
                source,
                defect,
                relative: if total > 0.0 { defect / total } else { 0.0 },
            }
        })
        .collect();
    let max_relative = records.iter().map(|r| r.relative).fold(0.0, f64::max);
    LiouvilleReport { records, max_relative }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationRecord {
    pub symbol: String,
    /// `∫ (q∘φ^t) e^{-2∫_0^t (V2 + β)∘φ^s} dμ`.
    pub propagated: f64,
    /// `∫ q dμ`.
    pub direct: f64,
    /// Mass of `q` carried by particles emitted during `(0, t)`.
    pub source_crossing: f64,
    pub defect: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub t: f64,
    pub beta: f64,
    pub records: Vec<PropagationRecord>,
    pub max_relative: f64,
}

/// `∫ q dμ = ∫ (q∘φ^t) e^{-2∫_0^t(V2+β)∘φ^s} dμ`, restricted to post-source
/// transport: particles emitted in `(0, t)` are removed from the direct side.
/// Each particle is pushed by an independent flow integration.
pub fn propagation_check(
    fm: &FlowMeasure,
    model: &PotentialModel,
    t: f64,
    beta: f64,
    battery: &[BatterySymbol],
    flow: &FlowOptions,
) -> Result<PropagationReport> {
    if t < 0.0 {
        return Err(Error::pre("propagation time must be non-negative"));
    }
    let mu = &fm.measure;
    let pushed: Vec<(PhasePoint, f64)> = if t == 0.0 {
        (0..mu.len()).map(|i| (mu.point(i), 1.0)).collect()
    } else {
        (0..mu.len())
            .into_par_iter()
            .map(|i| {
                let (p, int) = flow_map(model, &mu.point(i), t, flow)?;
                Ok((p, (-2.0 * (int + (beta + fm.damping_shift) * t)).exp()))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let records: Vec<PropagationRecord> = battery
        .iter()
        .map(|b| {
            let (mut propagated, mut direct, mut crossing, mut scale) = (0.0, 0.0, 0.0, 0.0);
            for (i, (p, damp)) in pushed.iter().enumerate() {
                let w = mu.weights[i];
                let lhs = w * damp * b.symbol.eval(&p.x, &p.xi).re;
                let rhs = w * b.symbol.eval(mu.x(i), mu.xi(i)).re;
                propagated += lhs;
                direct += rhs;
                if fm.time(i) < t {
                    crossing += rhs;
                }
                scale += lhs.abs() + rhs.abs();
            }
            let defect = (propagated - (direct - crossing)).abs();
            PropagationRecord {
                symbol: b.name.clone(),
                propagated,
                direct,
                source_crossing: crossing,
                defect,
                relative: if scale > 0.0 { defect / scale } else { 0.0 },
            }
        })
        .collect();
    let max_relative = records.iter().map(|r| r.relative).fold(0.0, f64::max);
    Ok(PropagationReport { t, beta, records, max_relative })
}

/// Source-weighted fraction of orbits that come back within `tol` of `Γ`
/// after first leaving its `tol`-neighbourhood.
pub fn reintersection_fraction(fm: &FlowMeasure, gamma: &Gamma, tol: f64) -> f64 {
    let nodes = gamma.quadrature();
    let dist = |x: &[f64]| -> f64 {
        match gamma {
            Gamma::Circle { center, radius, .. } => ((x[0] - center[0]).hypot(x[1] - center[1]) - radius).abs(),
            _ => nodes
                .iter()
                .map(|n| n.z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min),
        }
    };
    let m = fm.orbit_len;
    let total: f64 = fm.source_weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let returned: f64 = (0..fm.sources.len())
        .into_par_iter()
        .map(|k| {
            let mut left = false;
            for j in 0..m {
                let near = dist(fm.measure.x(k * m + j)) < tol;
                if !near {
                    left = true;
                } else if left {
                    return fm.source_weights[k];
                }
            }
            0.0
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    returned / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargeTimeReport {
    /// `T0 = (C + ln(1/ε)) / c0`.
    pub t0: f64,
    pub checked: usize,
    pub violations: usize,
}

/// At `T0` every sample either exits `B(Rc)` outward or carries
/// `e^{-∫_0^{T0} V2∘φ^s} ≤ ε`.
pub fn large_time_smallness(
    model: &PotentialModel,
    samples: &[PhasePoint],
    c0: f64,
    big_c: f64,
    rc: f64,
    eps: f64,
    flow: &FlowOptions,
) -> Result<LargeTimeReport> {
    if !(c0 > 0.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::pre("large-time smallness needs c0 > 0 and 0 < ε < 1"));
    }
    let t0 = (big_c + (1.0 / eps).ln()) / c0;
    let violations = samples
        .par_iter()
        .map(|w| {
            let (p, int) = flow_map(model, w, t0, flow)?;
            let exited = norm(&p.x) >= rc && p.cosine() >= 0.0;
            Ok(usize::from(!(exited || (-int).exp() <= eps)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(LargeTimeReport { t0, checked: samples.len(), violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgorovOptions {
    pub half_width: f64,
    /// Strang step.
    pub dt: f64,
    pub xi_max: f64,
    /// Spacing and half-range of the trapezoidal rule in Gaussian units.
    pub quad_step: f64,
    pub quad_range: f64,
    pub flow: FlowOptions,
}

impl Default for EgorovOptions {
    fn default() -> Self {
        EgorovOptions {
            half_width: 8.0,
            dt: 1e-3,
            xi_max: 3.0,
            quad_step: 0.2,
            quad_range: 7.0,
            flow: FlowOptions::with_tolerance(1e-11),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgorovRecord {
    pub h: f64,
    /// `⟨Op_h^w(a) Ũ(t) g, U(t) g⟩` per coherent state.
    pub propagated: Vec<(f64, f64)>,
    /// `⟨Op_h^w(α₀(t)) g, g⟩` per coherent state.
    pub leading: Vec<(f64, f64)>,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgorovReport {
    pub t: f64,
    pub records: Vec<EgorovRecord>,
    /// `deviation(h_k) / deviation(h_{k+1})`.
    pub ratios: Vec<f64>,
}

/// `e^{-it(H1 - ihW)/h} g` by Strang splitting on the periodic grid.
fn propagate(grid: &GridDomain, v1: &[f64], w: &[f64], h: f64, t: f64, dt: f64, g: &[C64]) -> Result<Vec<C64>> {
    let n = grid.points_per_axis;
    let steps = (t / dt).ceil().max(1.0) as usize;
    let tau = t / steps as f64;
    let half: Vec<C64> =
        v1.iter().zip(w).map(|(v, w)| C64::from_polar((-0.5 * tau * w).exp(), -0.5 * tau * v / h)).collect();
    let len = 2.0 * grid.half_width;
    let kinetic: Vec<C64> = (0..n)
        .map(|m| {
            let k = 2.0 * PI * (if m <= n / 2 { m as f64 } else { m as f64 - n as f64 }) / len;
            C64::from_polar(1.0 / n as f64, -tau * h * k * k)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut u = g.to_vec();
    let bound = (t * w.iter().map(|v| -v).fold(0.0, f64::max)).exp() * (1.0 + 1e-8);
    let n0 = grid.l2_norm(g);
    for _ in 0..steps {
        u.iter_mut().zip(&half).for_each(|(a, b)| *a *= b);
        fwd.process(&mut u);
        u.iter_mut().zip(&kinetic).for_each(|(a, b)| *a *= b);
        inv.process(&mut u);
        u.iter_mut().zip(&half).for_each(|(a, b)| *a *= b);
    }
    let n1 = grid.l2_norm(&u);
    if !n1.is_finite() || n1 > bound * n0 {
        return Err(Error::Integration {
            t,
            reason: format!("propagated norm {n1} exceeds {}", bound * n0),
            last_state: Vec::new(),
        });
    }
    Ok(u)
}

/// `⟨Op_h^w(b) g, g⟩ = ∫ b W_g` with the Gaussian Wigner function of `g`.
fn coherent_expectation(
    b: &(dyn Fn(f64, f64) -> Result<f64> + Sync),
    x0: f64,
    xi0: f64,
    h: f64,
    step: f64,
    range: f64,
) -> Result<f64> {
    let m = (range / step).round() as isize;
    let s = h.sqrt();
    let nodes: Vec<(f64, f64)> =
        (-m..=m).flat_map(|i| (-m..=m).map(move |j| (i as f64 * step, j as f64 * step))).collect();
    let total = nodes
        .par_iter()
        .map(|(u, v)| Ok((-u * u - v * v).exp() * b(x0 + s * u, xi0 + s * v)?))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(total * step * step / PI)
}

/// Compares `U(t)* Op_h^w(a) Ũ(t)` with `Op_h^w(α₀(t))`,
/// `α₀(t) = (a∘φ^t) e^{-∫_0^t (W + W̃)∘φ^s}`, on coherent states `(x0, ξ0)`.
/// `U` carries damping `w`, `Ũ` carries `w_tilde`; one dimension.
#[allow(clippy::too_many_arguments)]
pub fn egorov_leading_check(
    model: &PotentialModel,
    w: &Field,
    w_tilde: &Field,
    a: &TestSymbol,
    t: f64,
    hs: &[f64],
    states: &[(f64, f64)],
    opts: &EgorovOptions,
) -> Result<EgorovReport> {
    if model.dim != 1 {
        return Err(Error::config("Egorov checks run in one dimension"));
    }
    if !a.is_real() {
        return Err(Error::pre("Egorov check needs a real symbol"));
    }
    let mut terms = w.terms.clone();
    terms.extend(w_tilde.terms.iter().cloned());
    let total = model.clone().with_v2(Field::new(terms));
    let alpha0 = |x: f64, xi: f64| -> Result<f64> {
        if t == 0.0 {
            return Ok(a.eval(&[x], &[xi]).re);
        }
        let (p, int) = flow_map(&total, &PhasePoint::new(vec![x], vec![xi]), t, &opts.flow)?;
        Ok(a.eval(&p.x, &p.xi).re * (-int).exp())
    };
    let mut records = Vec::new();
    for &h in hs {
        let max_dx = h / (4.0 * opts.xi_max);
        let n = ((2.0 * opts.half_width / max_dx).ceil() as usize).next_power_of_two();
        let grid = GridDomain::new(1, opts.half_width, n, 0.0, 0.0)?;
        let v1 = grid.sample(|x| model.v1(x));
        let wv = grid.sample(|x| w.value(x));
        let wt = grid.sample(|x| w_tilde.value(x));
        let op = weyl_quantize(a, &grid, h, &QuantizeOptions::default())?;
        let mut propagated = Vec::new();
        let mut leading = Vec::new();
        let mut deviation = 0.0f64;
        for &(x0, xi0) in states {
            let g = crate::operator::coherent_state(&grid, h, &[x0], &[xi0]);
            let (ug, utg) = if t == 0.0 {
                (g.clone(), g.clone())
            } else {
                (propagate(&grid, &v1, &wv, h, t, opts.dt, &g)?, propagate(&grid, &v1, &wt, h, t, opts.dt, &g)?)
            };
            let lhs = grid.inner(&op.apply(&utg), &ug);
            let rhs = coherent_expectation(&alpha0, x0, xi0, h, opts.quad_step, opts.quad_range)?;
            deviation = deviation.max((lhs - rhs).norm());
            propagated.push((lhs.re, lhs.im));
            leading.push((rhs, 0.0));
        }
        records.push(EgorovRecord { h, propagated, leading, deviation });
    }
    let ratios = records.windows(2).map(|r| r[0].deviation / r[1].deviation).collect();
    Ok(EgorovReport { t, records, ratios })
}
