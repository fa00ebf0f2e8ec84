//! Damping integrals along the flow, the weak damping condition, averaged
//! damping constants and the escape function `f = f₊ + f₋`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::Plateau;
use crate::flow::{
    dopri, flow_map, flow_rhs, integrate_flow, EnergyInterval, FlowOptions, Method, OdeOptions, PhasePoint,
};
use crate::potentials::PotentialModel;
use crate::{bracket, dot, norm, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Future,
    Past,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Future => 1.0,
            Direction::Past => -1.0,
        }
    }
}

/// `∫_0^t V2(x̄(±s, w)) ds`.
pub fn damping_integral(
    model: &PotentialModel,
    w: &PhasePoint,
    t: f64,
    direction: Direction,
    opts: &FlowOptions,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::pre("damping horizon must be non-negative"));
    }
    let (_, i) = flow_map(model, w, direction.sign() * t, opts)?;
    Ok(direction.sign() * i)
}

/// `t ↦ ∫_0^t V2(x̄(±s, w)) ds` on the grid `times` (non-negative, increasing).
pub fn damping_profile(
    model: &PotentialModel,
    w: &PhasePoint,
    horizon: f64,
    samples: usize,
    direction: Direction,
    opts: &FlowOptions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<PhasePoint>)> {
    let dt = horizon / samples.max(1) as f64;
    let o = FlowOptions { sample_dt: Some(dt), ..opts.clone() };
    let tr = integrate_flow(model, w, (0.0, direction.sign() * horizon), &o)?;
    let s = direction.sign();
    let times = tr.times.iter().map(|t| t.abs()).collect();
    let ints = tr.damping_partials.iter().map(|v| s * v).collect();
    Ok((times, ints, tr.points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingRecord {
    pub w: PhasePoint,
    /// Smallest ladder time with a positive integral.
    pub t_found: Option<f64>,
    /// The integral at `t_found`, or at the largest ladder time when none.
    pub integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    pub records: Vec<DampingRecord>,
    pub holds: bool,
    pub beta: f64,
    pub t_max: f64,
    pub c0: Option<f64>,
    pub big_c: Option<f64>,
    pub t2: Option<f64>,
}

/// Ladder `T_k = 0.1 · 2^k ≤ t_max`.
pub fn time_ladder(t_max: f64) -> Vec<f64> {
    (0..64).map(|k| 0.1 * 2f64.powi(k)).take_while(|t| *t <= t_max * (1.0 + 1e-12)).collect()
}

/// Decides `∫_0^T (V2(x̄(-s, w)) + β) ds > 0` for some ladder `T ≤ t_max`
/// on every sample (past-time form of the weak damping condition).
pub fn check_damping_assumption(
    model: &PotentialModel,
    energy: f64,
    samples: &[PhasePoint],
    t_max: f64,
    beta: f64,
    shell_tol: f64,
    opts: &FlowOptions,
) -> Result<DampingReport> {
    if beta < 0.0 {
        return Err(Error::pre("beta offset must be non-negative"));
    }
    for (k, w) in samples.iter().enumerate() {
        let e = w.energy(model);
        if (e - energy).abs() > shell_tol {
            return Err(Error::pre(format!(
                "sample #{k} has energy {e}, off the shell {energy} by more than {shell_tol}"
            )));
        }
    }
    let ladder = time_ladder(t_max);
    if ladder.is_empty() {
        return Err(Error::pre("t_max below the first ladder time 0.1"));
    }
    let records: Vec<Result<DampingRecord>> = samples
        .par_iter()
        .map(|w| {
            let mut o = opts.clone();
            o.sample_dt = None;
            let rhs = flow_rhs(model);
            let (rtol, atol) = match o.method {
                Method::DormandPrince { rtol, atol } => (rtol, atol),
                Method::Leapfrog { .. } => (1e-11, 1e-11),
            };
            let mut y0 = w.x.clone();
            y0.extend_from_slice(&w.xi);
            y0.push(0.0);
            let outputs: Vec<f64> = ladder.iter().map(|t| -t).collect();
            let oo = OdeOptions { rtol, atol, max_steps: o.max_steps };
            let out = dopri(&rhs, &y0, 0.0, -ladder[ladder.len() - 1], &outputs, false, &oo, &mut |_, _| false)?;
            let n = model.dim;
            let mut last = 0.0;
            for (t, y) in out.samples.iter().skip(1) {
                let value = -y[2 * n] + beta * t.abs();
                last = value;
                if value > 0.0 {
                    return Ok(DampingRecord { w: w.clone(), t_found: Some(t.abs()), integral: value });
                }
            }
            Ok(DampingRecord { w: w.clone(), t_found: None, integral: last })
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let holds = records.iter().all(|r| r.t_found.is_some());
    Ok(DampingReport { records, holds, beta, t_max, c0: None, big_c: None, t2: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedDamping {
    pub c0: f64,
    pub big_c: f64,
    /// Upper end of the `c0` grid: the smallest `I(T)/T` over samples.
    pub mean_rate: f64,
    /// First sampled time after which every integral stays `≥ 2`.
    pub t2: Option<f64>,
    pub flag: Option<String>,
}

const C0_GRID: usize = 64;

struct Profiles {
    times: Vec<f64>,
    /// One integral profile per (sample, direction).
    values: Vec<Vec<f64>>,
}

fn required_offset(p: &Profiles, c: f64, until: f64) -> f64 {
    let mut need = 0.0f64;
    for v in &p.values {
        for (t, i) in p.times.iter().zip(v) {
            if *t > until {
                break;
            }
            need = need.max(c * t - i);
        }
    }
    need
}

fn fit_constants(p: &Profiles, horizon: f64) -> AveragedDamping {
    let mean = p.values.iter().map(|v| v.last().copied().unwrap_or(0.0) / horizon).fold(f64::INFINITY, f64::min);
    let t2 = {
        let mut t2 = None;
        for k in (0..p.times.len()).rev() {
            if p.values.iter().all(|v| v[k] >= 2.0) {
                t2 = Some(p.times[k]);
            } else {
                break;
            }
        }
        t2
    };
    if !(mean > 0.0) || p.values.is_empty() {
        return AveragedDamping {
            c0: 0.0,
            big_c: required_offset(p, 0.0, horizon),
            mean_rate: if mean.is_finite() { mean } else { 0.0 },
            t2,
            flag: Some("no positive averaged damping on the samples".into()),
        };
    }
    // Largest grid rate whose offset no longer grows between half and full horizon.
    for k in (1..=C0_GRID).rev() {
        let c = mean * k as f64 / C0_GRID as f64;
        let full = required_offset(p, c, horizon);
        let half = required_offset(p, c, 0.5 * horizon);
        if full <= half + 1e-9 * (1.0 + half) {
            return AveragedDamping { c0: c, big_c: full, mean_rate: mean, t2, flag: None };
        }
    }
    let c = mean / C0_GRID as f64;
    AveragedDamping {
        c0: c,
        big_c: required_offset(p, c, horizon),
        mean_rate: mean,
        t2,
        flag: Some("offset still growing at the smallest grid rate".into()),
    }
}

fn collect_profiles(
    model: &PotentialModel,
    samples: &[PhasePoint],
    horizon: f64,
    points: usize,
    opts: &FlowOptions,
) -> Result<(Profiles, Vec<Vec<PhasePoint>>)> {
    let runs: Vec<Result<(Vec<f64>, Vec<f64>, Vec<PhasePoint>)>> = samples
        .par_iter()
        .flat_map_iter(|w| [Direction::Future, Direction::Past].map(move |d| (w, d)))
        .map(|(w, d)| damping_profile(model, w, horizon, points, d, opts))
        .collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut orbits = Vec::new();
    for r in runs {
        let (t, v, o) = r?;
        if times.is_empty() {
            times = t;
        }
        values.push(v);
        orbits.push(o);
    }
    Ok((Profiles { times, values }, orbits))
}

/// Fits `∫_0^t V2∘φ^{±s}(w) ds ≥ c0 t - C` over samples, both time
/// directions and `t ∈ [0, horizon]`.
pub fn average_damping_constants(
    model: &PotentialModel,
    j: EnergyInterval,
    samples: &[PhasePoint],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<AveragedDamping> {
    for (k, w) in samples.iter().enumerate() {
        if !j.contains(w.energy(model)) {
            return Err(Error::pre(format!("sample #{k} outside p^-1(J)")));
        }
    }
    let points = (horizon / 0.05).ceil().clamp(64.0, 20_000.0) as usize;
    let (profiles, _) = collect_profiles(model, samples, horizon, points, opts)?;
    Ok(fit_constants(&profiles, horizon))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyViolation {
    pub sample: usize,
    pub direction: Direction,
    pub t: f64,
    pub integral: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub c0: f64,
    pub big_c: f64,
    pub escape_radius: f64,
    pub trapped_samples: usize,
    pub violations: Vec<DichotomyViolation>,
}

/// For each sampled `(w, t)` checks `∫_0^t V2∘φ^{±s} ≥ c0 t - C` or
/// `|x̄(±t)| ≥ Rc`, with `(c0, C)` from a joint grid search.
pub fn dichotomy_check(
    model: &PotentialModel,
    j: EnergyInterval,
    rc: f64,
    samples: &[PhasePoint],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<DichotomyReport> {
    for (k, w) in samples.iter().enumerate() {
        if !j.contains(w.energy(model)) {
            return Err(Error::pre(format!("sample #{k} outside p^-1(J)")));
        }
    }
    let points = (horizon / 0.05).ceil().clamp(64.0, 20_000.0) as usize;
    let (profiles, orbits) = collect_profiles(model, samples, horizon, points, opts)?;
    let stays: Vec<bool> = orbits.iter().map(|o| o.iter().all(|p| norm(&p.x) < rc)).collect();
    let trapped = Profiles {
        times: profiles.times.clone(),
        values: profiles.values.iter().zip(&stays).filter(|(_, s)| **s).map(|(v, _)| v.clone()).collect(),
    };
    let fit = fit_constants(&trapped, horizon);
    let cap = (2.0 * fit.big_c).max(fit.big_c + 1.0);
    // Offset needed at rate c where the escape branch fails.
    let need = |c: f64| {
        let mut need = 0.0f64;
        for (v, o) in profiles.values.iter().zip(&orbits) {
            for ((t, i), p) in profiles.times.iter().zip(v).zip(o) {
                if norm(&p.x) < rc {
                    need = need.max(c * t - i);
                }
            }
        }
        need
    };
    let top = if fit.c0 > 0.0 { fit.c0 } else { fit.mean_rate.max(0.0) };
    let mut chosen = (0.0, need(0.0));
    if top > 0.0 {
        for k in (1..=C0_GRID).rev() {
            let c = top * k as f64 / C0_GRID as f64;
            let cn = need(c);
            if cn <= cap {
                chosen = (c, cn);
                break;
            }
        }
    }
    let (c0, big_c) = chosen;
    let mut violations = Vec::new();
    for (idx, (v, o)) in profiles.values.iter().zip(&orbits).enumerate() {
        let direction = if idx % 2 == 0 { Direction::Future } else { Direction::Past };
        for ((t, i), p) in profiles.times.iter().zip(v).zip(o) {
            let r = norm(&p.x);
            if *i < c0 * t - big_c - 1e-9 && r < rc {
                violations.push(DichotomyViolation { sample: idx / 2, direction, t: *t, integral: *i, radius: r });
            }
        }
    }
    Ok(DichotomyReport {
        c0,
        big_c,
        escape_radius: rc,
        trapped_samples: stays.iter().filter(|s| **s).count() / 2,
        violations,
    })
}

/// Smooth cutoffs and quadrature settings of the escape function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeQuadrature {
    /// Hard cap on the time integrals.
    pub horizon: f64,
    pub rtol: f64,
}

impl Default for EscapeQuadrature {
    fn default() -> Self {
        EscapeQuadrature { horizon: 2000.0, rtol: 1e-12 }
    }
}

/// `f = f₊ + f₋`, `f₊(w) = ∫_0^∞ g₊(φ^{-t} w) dt`, `f₋(w) = -∫_0^∞ g₋(φ^t w) dt`,
/// `g_± = η_±(cos) (1 - χ(x)) η̃(p) ⟨x⟩^{-2δ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeFunction {
    pub energy: f64,
    pub j: EnergyInterval,
    pub delta: f64,
    pub sigma: f64,
    pub rc: f64,
    /// `η₊` as a function of the cosine; `η₋ = 1 - η₊`.
    pub eta_plus: Plateau,
    /// `χ` as a function of `|x|`.
    pub chi: Plateau,
    pub eta_tilde: Plateau,
    pub quadrature: EscapeQuadrature,
    model: PotentialModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeValue {
    pub f_plus: f64,
    pub f_minus: f64,
    /// True when a time integral hit the horizon without a vanishing certificate.
    pub truncated: bool,
}

impl EscapeValue {
    pub fn total(&self) -> f64 {
        self.f_plus + self.f_minus
    }
}

pub fn build_escape_function(
    model: &PotentialModel,
    energy: f64,
    delta: f64,
    sigma: f64,
    rc: f64,
    quadrature: EscapeQuadrature,
) -> Result<EscapeFunction> {
    if !(delta > 0.5) {
        return Err(Error::pre(format!("delta = {delta} must exceed 1/2")));
    }
    if !(sigma > 0.0 && sigma < 0.5) {
        return Err(Error::pre(format!("sigma = {sigma} must lie in (0, 1/2)")));
    }
    if !(energy > 0.0) {
        return Err(Error::pre("energy must be positive"));
    }
    let j = EnergyInterval::around(energy);
    Ok(EscapeFunction {
        energy,
        j,
        delta,
        sigma,
        rc,
        eta_plus: Plateau::rising(-0.9 * sigma, -0.1 * sigma),
        chi: Plateau::falling(rc + 1.0, rc + 2.0),
        eta_tilde: Plateau::new(0.6 * energy, 0.8 * energy, 1.25 * energy, 1.6 * energy),
        quadrature,
        model: model.clone(),
    })
}

fn cosine(x: &[f64], xi: &[f64]) -> f64 {
    let d = norm(x) * norm(xi);
    if d == 0.0 {
        0.0
    } else {
        dot(x, xi) / d
    }
}

impl EscapeFunction {
    pub fn model(&self) -> &PotentialModel {
        &self.model
    }

    /// `(1 - χ(x)) η̃(p) ⟨x⟩^{-2δ}`, the common factor of `g₊ + g₋`.
    pub fn target(&self, w: &PhasePoint) -> f64 {
        self.base(&w.x, &w.xi)
    }

    fn base(&self, x: &[f64], xi: &[f64]) -> f64 {
        let cut = 1.0 - self.chi.eval(norm(x));
        if cut == 0.0 {
            return 0.0;
        }
        let e = self.eta_tilde.eval(self.model.energy(x, xi));
        if e == 0.0 {
            return 0.0;
        }
        cut * e * bracket(x).powf(-2.0 * self.delta)
    }

    pub fn g_plus(&self, x: &[f64], xi: &[f64]) -> f64 {
        let b = self.base(x, xi);
        if b == 0.0 {
            0.0
        } else {
            self.eta_plus.eval(cosine(x, xi)) * b
        }
    }

    pub fn g_minus(&self, x: &[f64], xi: &[f64]) -> f64 {
        let b = self.base(x, xi);
        if b == 0.0 {
            0.0
        } else {
            (1.0 - self.eta_plus.eval(cosine(x, xi))) * b
        }
    }

    fn integrate(&self, w: &PhasePoint, forward: bool) -> Result<(f64, bool)> {
        let n = self.model.dim;
        let base = flow_rhs(&self.model);
        let plus = !forward;
        let rhs = |y: &[f64], dy: &mut [f64]| {
            base(&y[..2 * n + 1], &mut dy[..2 * n + 1]);
            let (x, xi) = (&y[..n], &y[n..2 * n]);
            dy[2 * n + 1] = if plus { self.g_plus(x, xi) } else { self.g_minus(x, xi) };
        };
        let mut y0 = w.x.clone();
        y0.extend_from_slice(&w.xi);
        y0.extend_from_slice(&[0.0, 0.0]);
        if self.eta_tilde.eval(w.energy(&self.model)) == 0.0 {
            return Ok((0.0, false));
        }
        let rc = self.rc;
        let lo = self.eta_plus.outer_lo;
        let hi = self.eta_plus.inner_lo;
        // Once outside B(Rc) and moving away in the integration direction,
        // the orbit never returns and its cosine stays past the cutoff ramp.
        let mut certified = |_: f64, y: &[f64]| {
            let (x, xi) = (&y[..n], &y[n..2 * n]);
            if norm(x) <= rc {
                return false;
            }
            let c = cosine(x, xi);
            if forward {
                dot(x, xi) > 0.0 && c >= hi
            } else {
                dot(x, xi) < 0.0 && c <= lo
            }
        };
        let t1 = if forward { self.quadrature.horizon } else { -self.quadrature.horizon };
        let o = OdeOptions { rtol: self.quadrature.rtol, atol: self.quadrature.rtol, max_steps: 50_000_000 };
        let out = dopri(&rhs, &y0, 0.0, t1, &[], false, &o, &mut certified)?;
        let (_, y) = out.samples.last().expect("nonempty");
        let value = y[2 * n + 1];
        let truncated = out.stopped_at.is_none() && {
            let (x, xi) = (&y[..n], &y[n..2 * n]);
            self.base(x, xi) > 0.0
        };
        Ok((value, truncated))
    }

    pub fn eval(&self, w: &PhasePoint) -> Result<EscapeValue> {
        if w.dim() != self.model.dim {
            return Err(Error::Shape { expected: self.model.dim, got: w.dim() });
        }
        // Backward integration accumulates ∫_0^{-T} g₊ dt' = -f₊.
        let (fp, tp) = self.integrate(w, false)?;
        let (fm, tm) = self.integrate(w, true)?;
        Ok(EscapeValue { f_plus: -fp, f_minus: -fm, truncated: tp || tm })
    }

    /// `{p, f}(w)` by a fourth-order centered difference along the flow.
    pub fn poisson_bracket(&self, w: &PhasePoint, step: f64) -> Result<f64> {
        let opts = FlowOptions::with_tolerance(self.quadrature.rtol);
        let mut vals = [0.0; 4];
        for (k, s) in [-2.0, -1.0, 1.0, 2.0].into_iter().enumerate() {
            let (p, _) = flow_map(&self.model, w, s * step, &opts)?;
            vals[k] = self.eval(&p)?.total();
        }
        Ok((vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * step))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeRelationReport {
    pub max_residual: f64,
    pub worst_sample: usize,
    pub max_abs_f: f64,
    pub truncated_samples: usize,
}

/// Largest `|{p, f} - (1 - χ) η̃(p) ⟨x⟩^{-2δ}|` over the samples.
pub fn verify_escape_relation(
    f: &EscapeFunction,
    samples: &[PhasePoint],
    fd_step: f64,
) -> Result<EscapeRelationReport> {
    let rows: Vec<Result<(f64, f64, bool)>> = samples
        .par_iter()
        .map(|w| {
            let b = f.poisson_bracket(w, fd_step)?;
            let v = f.eval(w)?;
            Ok(((b - f.target(w)).abs(), v.total().abs(), v.truncated))
        })
        .collect();
    let mut report = EscapeRelationReport { max_residual: 0.0, worst_sample: 0, max_abs_f: 0.0, truncated_samples: 0 };
    for (k, r) in rows.into_iter().enumerate() {
        let (res, fv, tr) = r?;
        if res > report.max_residual {
            report.max_residual = res;
            report.worst_sample = k;
        }
        report.max_abs_f = report.max_abs_f.max(fv);
        report.truncated_samples += tr as usize;
    }
    Ok(report)
}
