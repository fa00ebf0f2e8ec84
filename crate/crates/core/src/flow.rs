//! Hamiltonian flow of `p(x, ξ) = ξ² + V1(x)`:
//!
//! ```text
//! ẋ = 2ξ,   ξ̇ = -∇V1(x)
//! ```
//!
//! with the damping integral `∫ V2(x̄(s)) ds` carried along, trajectory
//! classification, incoming/outgoing regions, trapped-set sampling and
//! variational Jacobians.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::potentials::PotentialModel;
use crate::{dot, norm, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Self {
        assert_eq!(x.len(), xi.len(), "x and ξ must have the same dimension");
        PhasePoint { x, xi }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `(x, ξ) ↦ (x, -ξ)`.
    pub fn reversed(&self) -> Self {
        PhasePoint { x: self.x.clone(), xi: self.xi.iter().map(|v| -v).collect() }
    }

    pub fn energy(&self, model: &PotentialModel) -> f64 {
        model.energy(&self.x, &self.xi)
    }

    /// `x·ξ / (|x||ξ|)`, zero when either vector vanishes.
    pub fn cosine(&self) -> f64 {
        let d = norm(&self.x) * norm(&self.xi);
        if d == 0.0 {
            0.0
        } else {
            dot(&self.x, &self.xi) / d
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.xi).all(|v| v.is_finite())
    }

    fn state(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 * self.dim() + 1);
        y.extend_from_slice(&self.x);
        y.extend_from_slice(&self.xi);
        y.push(0.0);
        y
    }

    fn from_state(y: &[f64], n: usize) -> Self {
        PhasePoint { x: y[..n].to_vec(), xi: y[n..2 * n].to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    /// Adaptive Dormand–Prince 5(4).
    DormandPrince { rtol: f64, atol: f64 },
    /// Störmer–Verlet with fixed step; `∫V2` by the trapezoidal rule.
    Leapfrog { dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub method: Method,
    /// Maximum tolerated `|p(φ^t w) - p(w)|`.
    pub energy_tol: f64,
    /// Uniform output spacing; `None` records every accepted step.
    pub sample_dt: Option<f64>,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            method: Method::DormandPrince { rtol: 1e-12, atol: 1e-12 },
            energy_tol: 1e-8,
            sample_dt: None,
            max_steps: 50_000_000,
        }
    }
}

impl FlowOptions {
    pub fn with_tolerance(rtol: f64) -> Self {
        FlowOptions { method: Method::DormandPrince { rtol, atol: rtol }, ..Default::default() }
    }

    pub fn sampled(mut self, dt: f64) -> Self {
        self.sample_dt = Some(dt);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    BoundedPlus,
    BoundedMinus,
    EscapingPlus,
    EscapingMinus,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    pub energy_drift: f64,
    /// `∫_{t0}^{t} V2(x̄(s)) ds` at each sample time.
    pub damping_partials: Vec<f64>,
    pub classification: Classification,
    pub escape_radius_used: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.points.last().expect("trajectory has at least one sample")
    }

    pub fn final_damping(&self) -> f64 {
        *self.damping_partials.last().unwrap_or(&0.0)
    }
}

pub(crate) struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

pub(crate) struct OdeOutcome {
    pub samples: Vec<(f64, Vec<f64>)>,
    /// Time at which the stop predicate fired.
    pub stopped_at: Option<f64>,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand–Prince 5(4) from `t0` to `t1` (either direction).
///
/// Every time in `outputs` (monotone towards `t1`) is hit exactly; with
/// `record_steps` each accepted step is recorded as well. `stop` is polled
/// after each accepted step.
pub(crate) fn dopri(
    rhs: &(dyn Fn(&[f64], &mut [f64]) + Sync),
    y0: &[f64],
    t0: f64,
    t1: f64,
    outputs: &[f64],
    record_steps: bool,
    opts: &OdeOptions,
    stop: &mut dyn FnMut(f64, &[f64]) -> bool,
) -> Result<OdeOutcome> {
    let m = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut samples = vec![(t0, y0.to_vec())];
    if t1 == t0 {
        return Ok(OdeOutcome { samples, stopped_at: None });
    }
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut tmp = vec![0.0; m];
    let mut ynew = vec![0.0; m];
    rhs(&y, &mut k[0]);
    let scale0: f64 = (0..m).map(|i| k[0][i].abs() / (opts.atol + opts.rtol * y[i].abs())).fold(0.0, f64::max);
    let mut h = dir * (0.01 / scale0.max(1e-3)).min((t1 - t0).abs()).max(1e-6);
    let mut out_idx = 0;
    let mut steps = 0;
    while (t1 - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(Error::Integration { t, reason: "step budget exhausted".into(), last_state: y });
        }
        let next_out = outputs.get(out_idx).copied().unwrap_or(t1);
        let target = if (next_out - t1) * dir < 0.0 { next_out } else { t1 };
        let mut step = h;
        let mut hits = false;
        if (t + step - target) * dir >= 0.0 {
            step = target - t;
            hits = true;
        }
        if step.abs() < 1e-14 * t.abs().max(1.0) && !hits {
            return Err(Error::Integration { t, reason: "step size underflow".into(), last_state: y });
        }
        rhs(&y, &mut k[0]);
        let stages: [(&[f64], usize); 5] = [
            (&[A21], 1),
            (&[A31, A32], 2),
            (&[A41, A42, A43], 3),
            (&[A51, A52, A53, A54], 4),
            (&[A61, A62, A63, A64, A65], 5),
        ];
        for (coef, s) in stages {
            for i in 0..m {
                let mut acc = 0.0;
                for (j, c) in coef.iter().enumerate() {
                    acc += c * k[j][i];
                }
                tmp[i] = y[i] + step * acc;
            }
            rhs(&tmp, &mut k[s]);
        }
        for i in 0..m {
            ynew[i] = y[i] + step * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        rhs(&ynew, &mut k[6]);
        let mut err = 0.0f64;
        for i in 0..m {
            let e = step * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            h = step * 0.1;
            steps += 1;
            continue;
        }
        steps += 1;
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 {
            t = if hits { target } else { t + step };
            std::mem::swap(&mut y, &mut ynew);
            let at_output = hits && out_idx < outputs.len() && target == outputs[out_idx];
            if at_output {
                out_idx += 1;
            }
            if record_steps || at_output || (hits && target == t1) {
                samples.push((t, y.clone()));
            }
            if !hits {
                h = step * fac;
            } else if fac < 1.0 {
                h = step.abs().max(h.abs()) * dir * fac;
            }
            if stop(t, &y) {
                // Locate the event inside the last step by bisection on the step length.
                let t_prev = t - step;
                let (mut lo, mut hi) = (0.0, step);
                let mut y_event = y.clone();
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let ym = dp5_advance(rhs, &ynew, mid);
                    if stop(t_prev + mid, &ym) {
                        hi = mid;
                        y_event = ym;
                    } else {
                        lo = mid;
                    }
                    if (hi - lo).abs() <= 1e-13 * t.abs().max(1.0) {
                        break;
                    }
                }
                let te = t_prev + hi;
                while samples.last().is_some_and(|p| (p.0 - te) * dir > 0.0) {
                    samples.pop();
                }
                samples.push((te, y_event));
                return Ok(OdeOutcome { samples, stopped_at: Some(te) });
            }
        } else {
            h = step * fac.min(1.0);
        }
    }
    if samples.last().map(|s| s.0) != Some(t1) {
        samples.push((t1, y.clone()));
    }
    Ok(OdeOutcome { samples, stopped_at: None })
}

/// One fifth-order Dormand–Prince step of length `s` from `y`.
pub(crate) fn dp5_advance(rhs: &(dyn Fn(&[f64], &mut [f64]) + Sync), y: &[f64], s: f64) -> Vec<f64> {
    let m = y.len();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 6];
    let mut tmp = vec![0.0; m];
    rhs(y, &mut k[0]);
    let rows: [&[f64]; 5] = [&[A21], &[A31, A32], &[A41, A42, A43], &[A51, A52, A53, A54], &[A61, A62, A63, A64, A65]];
    for (r, coef) in rows.iter().enumerate() {
        for i in 0..m {
            let acc: f64 = coef.iter().enumerate().map(|(j, c)| c * k[j][i]).sum();
            tmp[i] = y[i] + s * acc;
        }
        rhs(&tmp, &mut k[r + 1]);
    }
    (0..m).map(|i| y[i] + s * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i])).collect()
}

/// Right-hand side of the flow with the damping integral as last component.
pub(crate) fn flow_rhs(model: &PotentialModel) -> impl Fn(&[f64], &mut [f64]) + Sync + '_ {
    let n = model.dim;
    move |y: &[f64], dy: &mut [f64]| {
        let (x, xi) = (&y[..n], &y[n..2 * n]);
        for i in 0..n {
            dy[i] = 2.0 * xi[i];
        }
        model.v1.gradient_into(x, &mut dy[n..2 * n]);
        for v in &mut dy[n..2 * n] {
            *v = -*v;
        }
        dy[2 * n] = model.v2(x);
    }
}

fn output_times(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let count = ((t1 - t0).abs() / dt).floor() as usize;
    let mut v: Vec<f64> = (1..=count).map(|k| t0 + dir * dt * k as f64).collect();
    if let Some(&last) = v.last() {
        if (t1 - last).abs() <= 1e-12 * dt {
            v.pop();
        }
    }
    v.push(t1);
    v
}

fn leapfrog(
    model: &PotentialModel,
    w0: &PhasePoint,
    t0: f64,
    t1: f64,
    dt: f64,
    outputs: &[f64],
    record_steps: bool,
    stop: &mut dyn FnMut(f64, &[f64]) -> bool,
) -> Result<OdeOutcome> {
    if !(dt > 0.0) {
        return Err(Error::config("leapfrog step must be positive"));
    }
    let n = model.dim;
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut y = w0.state();
    let mut samples = vec![(t0, y.clone())];
    let mut t = t0;
    let mut g = vec![0.0; n];
    let mut out_idx = 0;
    while (t1 - t) * dir > 0.0 {
        let next_out = outputs.get(out_idx).copied().unwrap_or(t1);
        let target = if (next_out - t1) * dir < 0.0 { next_out } else { t1 };
        let mut s = dir * dt;
        let hits = (t + s - target) * dir >= -1e-12 * dt;
        if hits {
            s = target - t;
        }
        let v2a = model.v2(&y[..n]);
        model.v1.gradient_into(&y[..n], &mut g);
        for i in 0..n {
            y[n + i] -= 0.5 * s * g[i];
        }
        for i in 0..n {
            y[i] += 2.0 * s * y[n + i];
        }
        model.v1.gradient_into(&y[..n], &mut g);
        for i in 0..n {
            y[n + i] -= 0.5 * s * g[i];
        }
        y[2 * n] += 0.5 * s * (v2a + model.v2(&y[..n]));
        t = if hits { target } else { t + s };
        let at_output = hits && out_idx < outputs.len() && target == outputs[out_idx];
        if at_output {
            out_idx += 1;
        }
        if record_steps || at_output {
            samples.push((t, y.clone()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t, reason: "non-finite state".into(), last_state: y });
        }
        if stop(t, &y) {
            if samples.last().map(|p| p.0) != Some(t) {
                samples.push((t, y.clone()));
            }
            return Ok(OdeOutcome { samples, stopped_at: Some(t) });
        }
    }
    if samples.last().map(|p| p.0) != Some(t1) {
        samples.push((t1, y));
    }
    Ok(OdeOutcome { samples, stopped_at: None })
}

fn run(
    model: &PotentialModel,
    w0: &PhasePoint,
    t0: f64,
    t1: f64,
    opts: &FlowOptions,
    stop: &mut dyn FnMut(f64, &[f64]) -> bool,
) -> Result<OdeOutcome> {
    if w0.dim() != model.dim {
        return Err(Error::Shape { expected: model.dim, got: w0.dim() });
    }
    if !w0.is_finite() || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Domain { what: "initial phase point".into() });
    }
    let outputs = match opts.sample_dt {
        Some(dt) if dt > 0.0 => output_times(t0, t1, dt),
        Some(_) => return Err(Error::config("sample_dt must be positive")),
        None => vec![t1],
    };
    let record = opts.sample_dt.is_none();
    match opts.method {
        Method::DormandPrince { rtol, atol } => {
            let rhs = flow_rhs(model);
            let o = OdeOptions { rtol, atol, max_steps: opts.max_steps };
            dopri(&rhs, &w0.state(), t0, t1, &outputs, record, &o, stop)
        }
        Method::Leapfrog { dt } => leapfrog(model, w0, t0, t1, dt, &outputs, record, stop),
    }
}

fn to_trajectory(model: &PotentialModel, outcome: OdeOutcome, energy_tol: f64) -> Result<Trajectory> {
    let n = model.dim;
    let e0 = model.energy(&outcome.samples[0].1[..n], &outcome.samples[0].1[n..2 * n]);
    let mut drift = 0.0f64;
    let mut times = Vec::with_capacity(outcome.samples.len());
    let mut points = Vec::with_capacity(outcome.samples.len());
    let mut damping = Vec::with_capacity(outcome.samples.len());
    for (t, y) in outcome.samples {
        let w = PhasePoint::from_state(&y, n);
        drift = drift.max((w.energy(model) - e0).abs());
        times.push(t);
        points.push(w);
        damping.push(y[2 * n]);
    }
    if drift > energy_tol {
        return Err(Error::EnergyDrift { drift, tol: energy_tol });
    }
    Ok(Trajectory {
        times,
        points,
        energy_drift: drift,
        damping_partials: damping,
        classification: Classification::Undetermined,
        escape_radius_used: None,
    })
}

/// Integrates the flow from `w0` at time `t_span.0` to `t_span.1`; a
/// decreasing span integrates backwards in time.
pub fn integrate_flow(
    model: &PotentialModel,
    w0: &PhasePoint,
    t_span: (f64, f64),
    opts: &FlowOptions,
) -> Result<Trajectory> {
    let outcome = run(model, w0, t_span.0, t_span.1, opts, &mut |_, _| false)?;
    to_trajectory(model, outcome, opts.energy_tol)
}

/// `φ^t(w)` together with `∫_0^t V2(x̄(s)) ds`.
pub fn flow_map(model: &PotentialModel, w: &PhasePoint, t: f64, opts: &FlowOptions) -> Result<(PhasePoint, f64)> {
    let mut o = opts.clone();
    o.sample_dt = None;
    let outcome = run(model, w, 0.0, t, &o, &mut |_, _| false)?;
    let (_, y) = outcome.samples.last().expect("nonempty");
    let n = model.dim;
    let p = PhasePoint::from_state(y, n);
    let e0 = w.energy(model);
    let drift = (p.energy(model) - e0).abs();
    if drift > opts.energy_tol {
        return Err(Error::EnergyDrift { drift, tol: opts.energy_tol });
    }
    Ok((p, y[2 * n]))
}

/// `∂²_t |x̄|² = 8|ξ|² - 4 x·∇V1(x)` at `w`.
pub fn radial_acceleration(model: &PotentialModel, w: &PhasePoint) -> f64 {
    let g = model.v1.gradient(&w.x);
    8.0 * dot(&w.xi, &w.xi) - 4.0 * dot(&w.x, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyInterval {
    pub lo: f64,
    pub hi: f64,
}

impl EnergyInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(0.0 < lo && lo < hi, "energy interval must satisfy 0 < lo < hi");
        EnergyInterval { lo, hi }
    }

    /// `J = (E/2, 2E)`.
    pub fn around(e: f64) -> Self {
        EnergyInterval::new(0.5 * e, 2.0 * e)
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lo < e && e < self.hi
    }

    /// `ν = 2 inf J / 3`.
    pub fn nu(&self) -> f64 {
        2.0 * self.lo / 3.0
    }
}

fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci-like lattice on the sphere, lifted to higher dimensions by padding.
            let golden = (1.0 + 5f64.sqrt()) / 2.0;
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = 2.0 * std::f64::consts::PI * k as f64 / golden;
                    let mut v = vec![0.0; dim];
                    v[0] = r * a.cos();
                    v[1] = r * a.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

/// Largest `|V1| + |x||∇V1|` over the shell `r0 ≤ |x| ≤ r1`.
pub fn far_field_influence(model: &PotentialModel, r0: f64, r1: f64) -> f64 {
    let dirs = directions(model.dim, 64);
    let radial = 256;
    let mut worst = 0.0f64;
    for k in 0..=radial {
        let r = r0 * (r1 / r0).powf(k as f64 / radial as f64);
        for d in &dirs {
            let x: Vec<f64> = d.iter().map(|v| v * r).collect();
            let g = model.v1.gradient(&x);
            worst = worst.max(model.v1(&x).abs() + r * norm(&g));
        }
    }
    worst
}

/// Smallest dyadic radius `Rc = 2^k` past which `|V1| + |x||∇V1| < ν`.
pub fn escape_radius(model: &PotentialModel, j: EnergyInterval) -> Result<f64> {
    let nu = j.nu();
    for k in -4..=20 {
        let r = 2f64.powi(k);
        if far_field_influence(model, r, 64.0 * r) < nu {
            return Ok(r);
        }
    }
    Err(Error::Model(format!("no escape radius below 2^20 for nu = {nu}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sign {
    Incoming,
    Outgoing,
}

/// `Z_±(R, d, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub r: f64,
    pub d: f64,
    pub sigma: f64,
    pub sign: Sign,
}

impl RegionSpec {
    pub fn incoming(r: f64, d: f64, sigma: f64) -> Self {
        RegionSpec { r, d, sigma, sign: Sign::Incoming }
    }

    pub fn outgoing(r: f64, d: f64, sigma: f64) -> Self {
        RegionSpec { r, d, sigma, sign: Sign::Outgoing }
    }
}

/// Closed membership test: `|x| ≥ R`, `|ξ| ≥ d` and `x·ξ ≥ σ|x||ξ|`
/// (outgoing) or `x·ξ ≤ σ|x||ξ|` (incoming).
pub fn region_membership(w: &PhasePoint, spec: &RegionSpec) -> bool {
    let (rx, rxi) = (norm(&w.x), norm(&w.xi));
    if rx < spec.r || rxi < spec.d {
        return false;
    }
    let lhs = dot(&w.x, &w.xi);
    let rhs = spec.sigma * rx * rxi;
    match spec.sign {
        Sign::Outgoing => lhs >= rhs,
        Sign::Incoming => lhs <= rhs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum DirectionStatus {
    /// Stayed in `B(Rc)` up to the horizon.
    Bounded,
    /// Left `B(Rc)` moving outward at `exit_time` (absolute value of time).
    Escaping { exit_time: f64 },
    /// Outside `B(Rc)` at the horizon without an exit certificate.
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub forward: DirectionStatus,
    pub backward: DirectionStatus,
    pub escape_radius: f64,
    pub horizon: f64,
}

impl ClassifyResult {
    pub fn is_trapped(&self) -> bool {
        self.forward == DirectionStatus::Bounded && self.backward == DirectionStatus::Bounded
    }

    pub fn classifications(&self) -> [Classification; 2] {
        let f = match self.forward {
            DirectionStatus::Bounded => Classification::BoundedPlus,
            DirectionStatus::Escaping { .. } => Classification::EscapingPlus,
            DirectionStatus::Undetermined => Classification::Undetermined,
        };
        let b = match self.backward {
            DirectionStatus::Bounded => Classification::BoundedMinus,
            DirectionStatus::Escaping { .. } => Classification::EscapingMinus,
            DirectionStatus::Undetermined => Classification::Undetermined,
        };
        [f, b]
    }
}

fn classify_direction(
    model: &PotentialModel,
    w0: &PhasePoint,
    horizon: f64,
    rc: f64,
    forward: bool,
    opts: &FlowOptions,
) -> Result<DirectionStatus> {
    let n = model.dim;
    let t1 = if forward { horizon } else { -horizon };
    let sgn = if forward { 1.0 } else { -1.0 };
    let exits = |y: &[f64]| norm(&y[..n]) > rc && sgn * dot(&y[..n], &y[n..2 * n]) > 0.0;
    if exits(&w0.state()) {
        return Ok(DirectionStatus::Escaping { exit_time: 0.0 });
    }
    let mut o = opts.clone();
    o.sample_dt = None;
    let outcome = run(model, w0, 0.0, t1, &o, &mut |_, y| exits(y))?;
    if let Some(t) = outcome.stopped_at {
        return Ok(DirectionStatus::Escaping { exit_time: t.abs() });
    }
    let (_, y) = outcome.samples.last().expect("nonempty");
    // With `record_steps` off only outputs are kept; boundedness along the
    // whole orbit was enforced by the stop predicate, except for excursions
    // with inward velocity, which are undetermined.
    if norm(&y[..n]) > rc {
        Ok(DirectionStatus::Undetermined)
    } else {
        Ok(DirectionStatus::Bounded)
    }
}

/// Classifies the orbit of `w0` in both time directions up to `horizon`.
pub fn classify_trajectory(
    model: &PotentialModel,
    w0: &PhasePoint,
    horizon: f64,
    j: EnergyInterval,
    rc: f64,
    opts: &FlowOptions,
) -> Result<ClassifyResult> {
    let e = w0.energy(model);
    if !j.contains(e) {
        return Err(Error::pre(format!("energy {e} outside J = ({}, {})", j.lo, j.hi)));
    }
    let forward = classify_direction(model, w0, horizon, rc, true, opts)?;
    let backward = classify_direction(model, w0, horizon, rc, false, opts)?;
    Ok(ClassifyResult { forward, backward, escape_radius: rc, horizon })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeBoundReport {
    /// `min |x̄(±t)| / (t + |x|)` over samples and sampled times.
    pub c0: f64,
    pub worst_sample: usize,
    pub worst_time: f64,
}

/// Checks `|x̄(±t)| ≥ c0 (t + |x|)` for starts in `Z_±(Rc, 0, ∓σ)`.
///
/// Outgoing samples are followed forward, incoming samples backward.
pub fn check_escape_bound(
    model: &PotentialModel,
    j: EnergyInterval,
    sigma: f64,
    rc: f64,
    samples: &[(PhasePoint, Sign)],
    horizon: f64,
    opts: &FlowOptions,
) -> Result<EscapeBoundReport> {
    if !(sigma * sigma * j.hi < j.lo) {
        return Err(Error::pre(format!("sigma^2 sup J = {} must be below inf J = {}", sigma * sigma * j.hi, j.lo)));
    }
    for (k, (w, sign)) in samples.iter().enumerate() {
        let e = w.energy(model);
        if !j.contains(e) {
            return Err(Error::pre(format!("sample #{k} has energy {e} outside J")));
        }
        let spec = match sign {
            Sign::Outgoing => RegionSpec::outgoing(rc, 0.0, -sigma),
            Sign::Incoming => RegionSpec::incoming(rc, 0.0, sigma),
        };
        if !region_membership(w, &spec) {
            return Err(Error::pre(format!("sample #{k} is not in the required region")));
        }
    }
    let per_sample: Vec<Result<(f64, f64)>> = samples
        .par_iter()
        .map(|(w, sign)| {
            let t1 = match sign {
                Sign::Outgoing => horizon,
                Sign::Incoming => -horizon,
            };
            let o = FlowOptions { sample_dt: Some(horizon / 400.0), ..opts.clone() };
            let traj = integrate_flow(model, w, (0.0, t1), &o)?;
            let r0 = norm(&w.x);
            let mut worst = (f64::INFINITY, 0.0);
            for (t, p) in traj.times.iter().zip(&traj.points) {
                let ratio = norm(&p.x) / (t.abs() + r0);
                if ratio < worst.0 {
                    worst = (ratio, t.abs());
                }
            }
            Ok(worst)
        })
        .collect();
    let mut report = EscapeBoundReport { c0: f64::INFINITY, worst_sample: 0, worst_time: 0.0 };
    for (k, r) in per_sample.into_iter().enumerate() {
        let (c, t) = r?;
        if c < report.c0 {
            report = EscapeBoundReport { c0: c, worst_sample: k, worst_time: t };
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappedSampling {
    /// Energies of the shells to sample (all in `J`).
    pub energies: Vec<f64>,
    /// Positions are drawn from `[-half_width, half_width]ⁿ`.
    pub half_width: f64,
    pub points_per_axis: usize,
    /// Momentum directions per position (ignored in 1D, where ±1 are used).
    pub directions: usize,
    pub horizon: f64,
}

impl TrappedSampling {
    fn candidates(&self, model: &PotentialModel) -> Vec<PhasePoint> {
        let n = model.dim;
        let m = self.points_per_axis.max(1);
        let total = m.pow(n as u32);
        let dirs = directions(n, self.directions.max(1));
        let mut out = Vec::new();
        for &e in &self.energies {
            for mut k in 0..total {
                let x: Vec<f64> = (0..n)
                    .map(|_| {
                        let j = k % m;
                        k /= m;
                        -self.half_width + self.half_width * (2.0 * j as f64 + 1.0) / m as f64
                    })
                    .collect();
                let k2 = e - model.v1(&x);
                if k2 <= 0.0 {
                    continue;
                }
                let s = k2.sqrt();
                for d in &dirs {
                    out.push(PhasePoint::new(x.clone(), d.iter().map(|v| v * s).collect()));
                }
            }
        }
        out
    }
}

/// Points of `p⁻¹(J)` in the sampling box whose orbits stay in `B(Rc)` for
/// `|t| ≤ horizon`: a finite-horizon over-approximation of `Ω_b(J)`.
pub fn sample_trapped_set(
    model: &PotentialModel,
    j: EnergyInterval,
    rc: f64,
    sampling: &TrappedSampling,
    opts: &FlowOptions,
) -> Result<Vec<PhasePoint>> {
    if sampling.half_width * (model.dim as f64).sqrt() < rc {
        return Err(Error::pre("sampling box must contain B(Rc)"));
    }
    if sampling.energies.iter().any(|e| !j.contains(*e)) {
        return Err(Error::pre("sampling energies must lie in J"));
    }
    let candidates = sampling.candidates(model);
    let kept: Vec<Result<Option<PhasePoint>>> = candidates
        .into_par_iter()
        .map(|w| {
            if norm(&w.x) > rc {
                return Ok(None);
            }
            let r = classify_trajectory(model, &w, sampling.horizon, j, rc, opts)?;
            Ok(r.is_trapped().then_some(w))
        })
        .collect();
    let mut out = Vec::new();
    for r in kept {
        if let Some(w) = r? {
            out.push(w);
        }
    }
    Ok(out)
}

/// Jacobian `∂φ^t / ∂(x, ξ)` as a row-major `2n × 2n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowJacobian {
    pub dim: usize,
    pub t: f64,
    pub endpoint: PhasePoint,
    pub entries: Vec<f64>,
}

impl FlowJacobian {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * 2 * self.dim + j]
    }

    /// Frobenius norm of the full matrix.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of the rows giving `∂ξ̄`.
    pub fn xi_rows_norm(&self) -> f64 {
        let m = 2 * self.dim;
        self.entries[self.dim * m..].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Integrates the variational system `Ȧ = B A`, `B = [[0, 2I], [-∇²V1, 0]]`.
///
/// When `zone` is given, `w0` must belong to it.
pub fn flow_jacobian(
    model: &PotentialModel,
    w0: &PhasePoint,
    t: f64,
    zone: Option<&RegionSpec>,
    opts: &FlowOptions,
) -> Result<FlowJacobian> {
    if let Some(z) = zone {
        if !region_membership(w0, z) {
            return Err(Error::pre("starting point outside the requested zone"));
        }
    }
    let n = model.dim;
    let m = 2 * n;
    let (rtol, atol) = match opts.method {
        Method::DormandPrince { rtol, atol } => (rtol, atol),
        Method::Leapfrog { .. } => (1e-11, 1e-11),
    };
    let rhs = move |y: &[f64], dy: &mut [f64]| {
        let (x, xi) = (&y[..n], &y[n..m]);
        let mut hess = vec![0.0; n * n];
        for i in 0..n {
            dy[i] = 2.0 * xi[i];
        }
        model.v1.gradient_into(x, &mut dy[n..m]);
        for v in &mut dy[n..m] {
            *v = -*v;
        }
        model.v1.hessian_into(x, &mut hess);
        let a = &y[m..];
        let da = &mut dy[m..];
        for c in 0..m {
            for i in 0..n {
                da[i * m + c] = 2.0 * a[(n + i) * m + c];
                let mut s = 0.0;
                for k in 0..n {
                    s += hess[i * n + k] * a[k * m + c];
                }
                da[(n + i) * m + c] = -s;
            }
        }
    };
    let mut y0 = Vec::with_capacity(m + m * m);
    y0.extend_from_slice(&w0.x);
    y0.extend_from_slice(&w0.xi);
    for i in 0..m {
        for j in 0..m {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    let o = OdeOptions { rtol, atol, max_steps: opts.max_steps };
    let out = dopri(&rhs, &y0, 0.0, t, &[t], false, &o, &mut |_, _| false)?;
    let (_, y) = out.samples.last().expect("nonempty");
    Ok(FlowJacobian { dim: n, t, endpoint: PhasePoint::from_state(&y[..m], n), entries: y[m..].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_flow_is_exact() {
        let m = PotentialModel::free(1);
        let tr =
            integrate_flow(&m, &PhasePoint::new(vec![0.0], vec![1.0]), (0.0, 3.0), &FlowOptions::default()).unwrap();
        let w = tr.last();
        assert!((w.x[0] - 6.0).abs() < 1e-12);
        assert!((w.xi[0] - 1.0).abs() < 1e-15);
        assert_eq!(*tr.times.last().unwrap(), 3.0);
    }

    #[test]
    fn time_reversal_and_semigroup() {
        let m = PotentialModel::double_bump(2.0, 2.0);
        let o = FlowOptions::default();
        let w = PhasePoint::new(vec![0.1], vec![0.9]);
        let (a, _) = flow_map(&m, &w, -3.0, &o).unwrap();
        let (b, _) = flow_map(&m, &w.reversed(), 3.0, &o).unwrap();
        assert!((a.x[0] - b.x[0]).abs() < 1e-9 && (a.xi[0] + b.xi[0]).abs() < 1e-9);
        let (c, _) = flow_map(&m, &w, 5.0, &o).unwrap();
        let (d1, _) = flow_map(&m, &w, 2.0, &o).unwrap();
        let (d, _) = flow_map(&m, &d1, 3.0, &o).unwrap();
        assert!((c.x[0] - d.x[0]).abs() < 1e-9 && (c.xi[0] - d.xi[0]).abs() < 1e-9);
    }

    #[test]
    fn sampled_output_lands_on_grid() {
        let m = PotentialModel::double_bump(2.0, 2.0);
        let tr = integrate_flow(
            &m,
            &PhasePoint::new(vec![0.0], vec![1.0]),
            (0.0, 1.0),
            &FlowOptions::default().sampled(0.25),
        )
        .unwrap();
        assert_eq!(tr.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn region_examples() {
        let spec = RegionSpec::incoming(5.0, 0.5, -0.9);
        assert!(region_membership(&PhasePoint::new(vec![10.0, 0.0], vec![-1.0, 0.0]), &spec));
        assert!(!region_membership(&PhasePoint::new(vec![10.0, 0.0], vec![1.0, 0.0]), &spec));
        let edge = RegionSpec::outgoing(1.0, 0.0, 0.0);
        assert!(region_membership(&PhasePoint::new(vec![2.0, 0.0], vec![0.0, 1.0]), &edge));
        let edge_in = RegionSpec::incoming(1.0, 0.0, 0.0);
        assert!(region_membership(&PhasePoint::new(vec![2.0, 0.0], vec![0.0, 1.0]), &edge_in));
    }

    #[test]
    fn free_model_escapes_both_ways() {
        let m = PotentialModel::free(2);
        let j = EnergyInterval::around(1.0);
        let rc = escape_radius(&m, j).unwrap();
        let w = PhasePoint::new(vec![0.3, -0.2], vec![1.0, 0.0]);
        let r = classify_trajectory(&m, &w, 100.0, j, rc, &FlowOptions::default()).unwrap();
        let bound = (rc + norm(&w.x)) / (2.0 * norm(&w.xi));
        match (r.forward, r.backward) {
            (DirectionStatus::Escaping { exit_time: a }, DirectionStatus::Escaping { exit_time: b }) => {
                assert!(a <= bound + 1e-9 && b <= bound + 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn energy_outside_j_is_rejected() {
        let m = PotentialModel::free(1);
        let w = PhasePoint::new(vec![0.0], vec![3.0]);
        let err = classify_trajectory(&m, &w, 1.0, EnergyInterval::around(1.0), 1.0, &FlowOptions::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn escape_bound_precondition() {
        let m = PotentialModel::free(1);
        let j = EnergyInterval::new(0.5, 2.0);
        let err = check_escape_bound(&m, j, 0.6, 1.0, &[], 10.0, &FlowOptions::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn free_jacobian_is_shear() {
        let m = PotentialModel::free(2);
        let jac =
            flow_jacobian(&m, &PhasePoint::new(vec![1.0, 0.0], vec![0.0, 1.0]), 2.5, None, &FlowOptions::default())
                .unwrap();
        for i in 0..4 {
            for k in 0..4 {
                let expected = if i == k {
                    1.0
                } else if k == i + 2 {
                    5.0
                } else {
                    0.0
                };
                assert!((jac.entry(i, k) - expected).abs() < 1e-12, "({i},{k})");
            }
        }
    }

    #[test]
    fn free_model_has_empty_trapped_set() {
        let m = PotentialModel::free(1);
        let j = EnergyInterval::around(1.0);
        let rc = escape_radius(&m, j).unwrap();
        let s = TrappedSampling {
            energies: vec![1.0],
            half_width: 2.0 * rc,
            points_per_axis: 20,
            directions: 2,
            horizon: 100.0,
        };
        assert!(sample_trapped_set(&m, j, rc, &s, &FlowOptions::with_tolerance(1e-9)).unwrap().is_empty());
    }
}
