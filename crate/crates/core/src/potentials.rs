//! Potential models: the long-range refraction part `V1`, the absorption
//! index `V2`, symbol-class validation and the dissipative splitting
//! `V2 = W2 - W3 - W4`.

use serde::{Deserialize, Serialize};

use crate::cutoff::Plateau;
use crate::{bracket, norm, Error, Result};

/// One analytic contribution to a potential field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Term {
    /// `value` everywhere. Not decaying; only meant for damping experiments.
    Constant { value: f64 },
    /// `A exp(-Σ ((x_i - c_i) / w_i)^2)`.
    Gaussian { amplitude: f64, center: Vec<f64>, widths: Vec<f64> },
    /// `A exp(-((|x| - r0) / w)^2)`.
    Ring { amplitude: f64, radius: f64, width: f64 },
    /// `A (1 + |x|^2)^(-s)`.
    InversePower { amplitude: f64, exponent: f64 },
}

impl Term {
    pub fn gaussian(amplitude: f64, center: Vec<f64>, width: f64) -> Self {
        let widths = vec![width; center.len()];
        Term::Gaussian { amplitude, center, widths }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Constant { value } => *value,
            Term::Gaussian { amplitude, center, widths } => {
                let e: f64 = x.iter().zip(center).zip(widths).map(|((xi, c), w)| ((xi - c) / w).powi(2)).sum();
                amplitude * (-e).exp()
            }
            Term::Ring { amplitude, radius, width } => {
                let s = (norm(x) - radius) / width;
                amplitude * (-s * s).exp()
            }
            Term::InversePower { amplitude, exponent } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                amplitude * (1.0 + r2).powf(-exponent)
            }
        }
    }

    fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Term::Constant { .. } => {}
            Term::Gaussian { center, widths, .. } => {
                let g = self.value(x);
                for i in 0..x.len() {
                    let u = (x[i] - center[i]) / widths[i];
                    out[i] += -2.0 * u / widths[i] * g;
                }
            }
            Term::Ring { radius, width, .. } => {
                let r = norm(x);
                if r == 0.0 {
                    return;
                }
                let s = (r - radius) / width;
                let dphi = -2.0 * s / width * self.value(x);
                for i in 0..x.len() {
                    out[i] += dphi * x[i] / r;
                }
            }
            Term::InversePower { amplitude, exponent } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let f = -2.0 * exponent * amplitude * (1.0 + r2).powf(-exponent - 1.0);
                for i in 0..x.len() {
                    out[i] += f * x[i];
                }
            }
        }
    }

    fn add_hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        match self {
            Term::Constant { .. } => {}
            Term::Gaussian { center, widths, .. } => {
                let g = self.value(x);
                for i in 0..n {
                    let ui = (x[i] - center[i]) / widths[i];
                    for j in 0..n {
                        let uj = (x[j] - center[j]) / widths[j];
                        let mut v = 4.0 * ui * uj / (widths[i] * widths[j]);
                        if i == j {
                            v -= 2.0 / (widths[i] * widths[i]);
                        }
                        out[i * n + j] += v * g;
                    }
                }
            }
            Term::Ring { radius, width, .. } => {
                let r = norm(x);
                let phi = self.value(x);
                let s = (r - radius) / width;
                let d1 = -2.0 * s / width * phi;
                let d2 = (4.0 * s * s - 2.0) / (width * width) * phi;
                if r < 1e-300 {
                    for i in 0..n {
                        out[i * n + i] += d2;
                    }
                    return;
                }
                for i in 0..n {
                    for j in 0..n {
                        let pij = x[i] * x[j] / (r * r);
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * n + j] += d2 * pij + d1 / r * (delta - pij);
                    }
                }
            }
            Term::InversePower { amplitude, exponent } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let a = -2.0 * exponent * amplitude * (1.0 + r2).powf(-exponent - 1.0);
                let b = 4.0 * exponent * (exponent + 1.0) * amplitude * (1.0 + r2).powf(-exponent - 2.0);
                for i in 0..n {
                    for j in 0..n {
                        let mut v = b * x[i] * x[j];
                        if i == j {
                            v += a;
                        }
                        out[i * n + j] += v;
                    }
                }
            }
        }
    }

    /// Exact infimum over ℝⁿ of the term.
    fn infimum(&self) -> f64 {
        match self {
            Term::Constant { value } => *value,
            Term::Gaussian { amplitude, .. } | Term::Ring { amplitude, .. } | Term::InversePower { amplitude, .. } => {
                amplitude.min(0.0)
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Term::Gaussian { center, widths, .. } => {
                if center.len() != dim || widths.len() != dim {
                    return Err(Error::config(format!(
                        "gaussian term has center/widths of length {}/{} in dimension {dim}",
                        center.len(),
                        widths.len()
                    )));
                }
                if widths.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::config("gaussian widths must be positive"));
                }
            }
            Term::Ring { width, radius, .. } => {
                if !(*width > 0.0) || *radius < 0.0 {
                    return Err(Error::config("ring term needs width > 0 and radius >= 0"));
                }
            }
            Term::InversePower { exponent, .. } => {
                if !(*exponent > 0.0) {
                    return Err(Error::config("inverse-power exponent must be positive"));
                }
            }
            Term::Constant { .. } => {}
        }
        Ok(())
    }
}

/// A sum of analytic terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub terms: Vec<Term>,
}

impl Field {
    pub fn zero() -> Self {
        Field { terms: Vec::new() }
    }

    pub fn new(terms: Vec<Term>) -> Self {
        Field { terms }
    }

    pub fn constant(value: f64) -> Self {
        Field { terms: vec![Term::Constant { value }] }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| match t {
            Term::Constant { value } => *value == 0.0,
            Term::Gaussian { amplitude, .. } | Term::Ring { amplitude, .. } | Term::InversePower { amplitude, .. } => {
                *amplitude == 0.0
            }
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            t.add_gradient(x, out);
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// Row-major `n × n` Hessian.
    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            t.add_hessian(x, out);
        }
    }

    /// Lower bound on `inf V`, exact for a single term.
    pub fn lower_bound(&self) -> f64 {
        self.terms.iter().map(Term::infimum).sum()
    }

    /// Returns the same field multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Field {
        let terms = self
            .terms
            .iter()
            .map(|t| match t.clone() {
                Term::Constant { value } => Term::Constant { value: value * factor },
                Term::Gaussian { amplitude, center, widths } => {
                    Term::Gaussian { amplitude: amplitude * factor, center, widths }
                }
                Term::Ring { amplitude, radius, width } => Term::Ring { amplitude: amplitude * factor, radius, width },
                Term::InversePower { amplitude, exponent } => {
                    Term::InversePower { amplitude: amplitude * factor, exponent }
                }
            })
            .collect();
        Field { terms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Free,
    GaussianBumps,
    RingBump,
    CustomSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    V1,
    V2,
}

/// The pair `(V1, V2)` together with its symbol-class metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialModel {
    pub dim: usize,
    pub family: Family,
    pub v1: Field,
    pub v2: Field,
    /// Decay rate ρ > 0.
    pub rho: f64,
    /// `c_α` for `V1`, indexed by the order `|α|`.
    pub c_alpha_v1: Vec<f64>,
    /// `c_α` for `V2`, indexed by the order `|α|`.
    pub c_alpha_v2: Vec<f64>,
}

impl PotentialModel {
    pub fn new(dim: usize, family: Family, v1: Field, v2: Field, rho: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be positive"));
        }
        if !(rho > 0.0) {
            return Err(Error::config("rho must be positive"));
        }
        for t in v1.terms.iter().chain(&v2.terms) {
            t.check_dim(dim)?;
        }
        Ok(PotentialModel { dim, family, v1, v2, rho, c_alpha_v1: Vec::new(), c_alpha_v2: Vec::new() })
    }

    pub fn free(dim: usize) -> Self {
        PotentialModel::new(dim, Family::Free, Field::zero(), Field::zero(), 1.0).expect("free model is valid")
    }

    /// `V1(x) = A (e^{-(x - a)^2} + e^{-(x + a)^2})` on the line.
    pub fn double_bump(amplitude: f64, offset: f64) -> Self {
        let v1 = Field::new(vec![
            Term::gaussian(amplitude, vec![offset], 1.0),
            Term::gaussian(amplitude, vec![-offset], 1.0),
        ]);
        PotentialModel::new(1, Family::GaussianBumps, v1, Field::zero(), 1.0).expect("double bump is valid")
    }

    /// Radial ring `V1(x) = A e^{-(|x| - r0)^2}` in the plane.
    pub fn ring_bump(amplitude: f64, radius: f64) -> Self {
        let v1 = Field::new(vec![Term::Ring { amplitude, radius, width: 1.0 }]);
        PotentialModel::new(2, Family::RingBump, v1, Field::zero(), 1.0).expect("ring is valid")
    }

    pub fn with_v2(mut self, v2: Field) -> Self {
        self.v2 = v2;
        self
    }

    pub fn with_symbol_constants(mut self, which: Which, c_alpha: Vec<f64>) -> Self {
        match which {
            Which::V1 => self.c_alpha_v1 = c_alpha,
            Which::V2 => self.c_alpha_v2 = c_alpha,
        }
        self
    }

    /// `m_- = -inf V2` clipped at zero (exact for single-term fields, an
    /// upper bound otherwise).
    pub fn m_minus(&self) -> f64 {
        (-self.v2.lower_bound()).max(0.0)
    }

    pub fn v1(&self, x: &[f64]) -> f64 {
        self.v1.value(x)
    }

    pub fn v2(&self, x: &[f64]) -> f64 {
        self.v2.value(x)
    }

    /// Principal symbol `p(x, ξ) = ξ² + V1(x)`.
    pub fn energy(&self, x: &[f64], xi: &[f64]) -> f64 {
        xi.iter().map(|v| v * v).sum::<f64>() + self.v1.value(x)
    }

    fn field(&self, which: Which) -> &Field {
        match which {
            Which::V1 => &self.v1,
            Which::V2 => &self.v2,
        }
    }

    fn symbol_constants(&self, which: Which) -> &[f64] {
        match which {
            Which::V1 => &self.c_alpha_v1,
            Which::V2 => &self.c_alpha_v2,
        }
    }

    /// Decay exponent of the symbol class: `ρ` for `V1`, `1 + ρ` for `V2`.
    fn class_exponent(&self, which: Which) -> f64 {
        match which {
            Which::V1 => self.rho,
            Which::V2 => 1.0 + self.rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSample {
    pub v1: f64,
    pub grad_v1: Vec<f64>,
    pub v2: f64,
}

pub fn eval_potential(model: &PotentialModel, points: &[Vec<f64>]) -> Result<Vec<PotentialSample>> {
    points
        .iter()
        .enumerate()
        .map(|(k, x)| {
            if x.len() != model.dim {
                return Err(Error::Shape { expected: model.dim, got: x.len() });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain { what: format!("point #{k}") });
            }
            Ok(PotentialSample { v1: model.v1(x), grad_v1: model.v1.gradient(x), v2: model.v2(x) })
        })
        .collect()
}

/// Tensor grid over an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl SampleBox {
    pub fn cube(dim: usize, half_width: f64, points_per_axis: usize) -> Self {
        SampleBox { lo: vec![-half_width; dim], hi: vec![half_width; dim], points_per_axis }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let m = self.points_per_axis.max(2);
        let total = m.pow(n as u32);
        (0..total)
            .map(|mut k| {
                (0..n)
                    .map(|i| {
                        let j = k % m;
                        k /= m;
                        self.lo[i] + (self.hi[i] - self.lo[i]) * j as f64 / (m - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }

    pub fn max_radius(&self) -> f64 {
        let far: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(a, b)| a.abs().max(b.abs())).collect();
        norm(&far)
    }
}

/// Base finite-difference step at `x` for derivatives of order `order`.
///
/// `10^-4 (1 + |x|)` up to second order, one decade coarser per extra order
/// to keep round-off below truncation error.
pub fn fd_step(x: &[f64], order: usize) -> f64 {
    let extra = order.saturating_sub(2) as i32;
    1e-4 * 10f64.powi(extra) * (1.0 + norm(x))
}

fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    // Non-decreasing axis sequences of length `order`, one per multi-index.
    fn rec(dim: usize, left: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for a in start..dim {
            cur.push(a);
            rec(dim, left - 1, a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, order, 0, &mut Vec::new(), &mut out);
    out
}

fn fd_derivative(f: &dyn Fn(&[f64]) -> f64, x: &[f64], axes: &[usize], step: f64) -> f64 {
    match axes.split_first() {
        None => f(x),
        Some((&a, rest)) => {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[a] += step;
            xm[a] -= step;
            (fd_derivative(f, &xp, rest, step) - fd_derivative(f, &xm, rest, step)) / (2.0 * step)
        }
    }
}

/// Finite-difference `∂^α V` where `axes` lists the differentiation axes.
pub fn fd_partial(field: &Field, x: &[f64], axes: &[usize]) -> f64 {
    let step = fd_step(x, axes.len());
    fd_derivative(&|y: &[f64]| field.value(y), x, axes, step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub order: usize,
    pub c_alpha: f64,
    pub max_ratio: f64,
    pub worst_point: Vec<f64>,
    pub step_at_origin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolClassReport {
    pub which: Which,
    pub exponent: f64,
    pub tolerance: f64,
    pub step_rule: String,
    pub orders: Vec<OrderReport>,
    pub pass: bool,
}

/// Worst-case ratios `|∂^α V| ⟨x⟩^{e + |α|} / c_|α|` over a sample box, with
/// `e = ρ` for `V1` and `e = 1 + ρ` for `V2`.
pub fn verify_symbol_class(
    model: &PotentialModel,
    which: Which,
    region: &SampleBox,
    max_order: usize,
    tolerance: f64,
) -> Result<SymbolClassReport> {
    if region.dim() != model.dim {
        return Err(Error::Shape { expected: model.dim, got: region.dim() });
    }
    let table = model.symbol_constants(which);
    if table.len() <= max_order {
        return Err(Error::config(format!(
            "c_alpha table for {which:?} has {} entries, orders up to {max_order} requested",
            table.len()
        )));
    }
    let field = model.field(which);
    let exponent = model.class_exponent(which);
    let points = region.points();
    let mut orders = Vec::with_capacity(max_order + 1);
    for order in 0..=max_order {
        let c = table[order];
        let mut worst = (0.0f64, points.first().cloned().unwrap_or_default());
        for x in &points {
            let weight = bracket(x).powf(exponent + order as f64);
            for axes in multi_indices(model.dim, order) {
                let d = fd_partial(field, x, &axes).abs();
                let ratio = if d == 0.0 {
                    0.0
                } else if c > 0.0 {
                    d * weight / c
                } else {
                    f64::INFINITY
                };
                if ratio > worst.0 {
                    worst = (ratio, x.clone());
                }
            }
        }
        orders.push(OrderReport {
            order,
            c_alpha: c,
            max_ratio: worst.0,
            worst_point: worst.1,
            step_at_origin: fd_step(&vec![0.0; model.dim], order),
        });
    }
    let pass = orders.iter().all(|o| o.max_ratio <= 1.0 + tolerance);
    Ok(SymbolClassReport {
        which,
        exponent,
        tolerance,
        step_rule: "1e-4 * 10^max(0, order-2) * (1 + |x|), nested central differences".into(),
        orders,
        pass,
    })
}

/// The splitting `W2 = V2 + 2C⟨x⟩^{-1-ρ} = (V2 + W3 + W4)`, with
/// `2C⟨x⟩^{-1-ρ} = W3 + W4`, `W4` compactly supported in `B(support_radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativeSplit {
    pub c: f64,
    pub rho: f64,
    pub delta: f64,
    pub support_radius: f64,
    /// Recorded bound on `sup ⟨x⟩^{2δ} |W3(x)|`.
    pub w3_bound: f64,
    v2: Field,
    cutoff: Plateau,
}

impl DissipativeSplit {
    fn tail(&self, x: &[f64]) -> f64 {
        2.0 * self.c * bracket(x).powf(-1.0 - self.rho)
    }

    pub fn w2(&self, x: &[f64]) -> f64 {
        self.v2.value(x) + self.tail(x)
    }

    pub fn w3(&self, x: &[f64]) -> f64 {
        self.tail(x) * (1.0 - self.cutoff.eval(norm(x)))
    }

    pub fn w4(&self, x: &[f64]) -> f64 {
        self.tail(x) * self.cutoff.eval(norm(x))
    }

    /// Radius outside of which `W4` vanishes, `None` when `W4 ≡ 0`.
    pub fn w4_support(&self) -> Option<f64> {
        (self.c > 0.0).then_some(self.support_radius)
    }

    pub fn check(&self, points: &[Vec<f64>]) -> SplitCheck {
        let mut check = SplitCheck {
            min_margin: f64::INFINITY,
            max_reconstruction_error: 0.0,
            max_weighted_w3: 0.0,
            max_w4_outside_support: 0.0,
        };
        for x in points {
            let lower = self.c * bracket(x).powf(-1.0 - self.rho);
            check.min_margin = check.min_margin.min(self.w2(x) - lower);
            let rebuilt = self.w2(x) - self.w3(x) - self.w4(x);
            check.max_reconstruction_error = check.max_reconstruction_error.max((rebuilt - self.v2.value(x)).abs());
            check.max_weighted_w3 = check.max_weighted_w3.max(bracket(x).powf(2.0 * self.delta) * self.w3(x).abs());
            if norm(x) >= self.support_radius {
                check.max_w4_outside_support = check.max_w4_outside_support.max(self.w4(x).abs());
            }
        }
        check
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCheck {
    /// `min (W2 - C⟨x⟩^{-1-ρ})`, non-negative when the split is admissible.
    pub min_margin: f64,
    pub max_reconstruction_error: f64,
    pub max_weighted_w3: f64,
    pub max_w4_outside_support: f64,
}

/// Largest admissible shift constant is capped here.
const SPLIT_C_CAP: f64 = 1e8;

pub fn split_dissipative(
    model: &PotentialModel,
    delta: f64,
    support_radius: f64,
    verification: &SampleBox,
) -> Result<DissipativeSplit> {
    let rho = model.rho;
    if !(delta > 0.5 && 2.0 * delta < 1.0 + rho) {
        return Err(Error::pre(format!("delta = {delta} outside (1/2, (1+rho)/2) with rho = {rho}")));
    }
    if !(support_radius > 0.0) {
        return Err(Error::pre("support radius must be positive"));
    }
    let points = verification.points();
    let rmax = verification.max_radius();
    let mut c = 0.0f64;
    let mut at_r = 0.0;
    for x in &points {
        let need = -model.v2(x) * bracket(x).powf(1.0 + rho);
        if need > c {
            c = need;
            at_r = norm(x);
        }
    }
    if c > SPLIT_C_CAP || !c.is_finite() {
        return Err(Error::Model(format!("shift constant {c:e} exceeds cap {SPLIT_C_CAP:e}")));
    }
    if c > 0.0 && at_r >= 0.95 * rmax {
        return Err(Error::Model(format!(
            "negative part of V2 decays slower than <x>^(-1-rho): worst point at |x| = {at_r} on the verification boundary"
        )));
    }
    let exponent = (2.0 * delta - 1.0 - rho) / 2.0;
    let half = 0.5 * support_radius;
    Ok(DissipativeSplit {
        c,
        rho,
        delta,
        support_radius,
        w3_bound: 2.0 * c * (1.0 + half).powf(exponent),
        v2: model.v2.clone(),
        cutoff: Plateau::falling(half, support_radius),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_gradient_error(field: &Field, x: &[f64]) -> f64 {
        let g = field.gradient(x);
        let scale = field.value(x).abs().max(g.iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(1e-300);
        (0..x.len())
            .map(|i| {
                let s = fd_step(x, 1);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += s;
                xm[i] -= s;
                let fd = (field.value(&xp) - field.value(&xm)) / (2.0 * s);
                (fd - g[i]).abs() / scale
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn free_model_is_zero() {
        let m = PotentialModel::free(2);
        let s = eval_potential(&m, &[vec![3.0, -1.0]]).unwrap();
        assert_eq!(s[0].v1, 0.0);
        assert_eq!(s[0].grad_v1, vec![0.0, 0.0]);
        assert_eq!(s[0].v2, 0.0);
    }

    #[test]
    fn single_bump_at_origin() {
        let v1 = Field::new(vec![Term::gaussian(2.0, vec![0.0, 0.0, 0.0], 1.0)]);
        let m = PotentialModel::new(3, Family::GaussianBumps, v1, Field::zero(), 1.0).unwrap();
        let s = eval_potential(&m, &[vec![0.0; 3]]).unwrap();
        assert_eq!(s[0].v1, 2.0);
        assert_eq!(s[0].grad_v1, vec![0.0; 3]);
    }

    #[test]
    fn double_bump_midpoint_value() {
        let m = PotentialModel::double_bump(2.0, 2.0);
        let s = eval_potential(&m, &[vec![0.0]]).unwrap();
        assert!((s[0].v1 - 4.0 * (-4.0f64).exp()).abs() < 1e-15);
        assert!((s[0].v1 - 0.07326).abs() < 1e-5);
    }

    #[test]
    fn non_finite_points_are_rejected() {
        let m = PotentialModel::free(1);
        assert!(matches!(eval_potential(&m, &[vec![f64::NAN]]), Err(Error::Domain { .. })));
        assert!(matches!(eval_potential(&m, &[vec![f64::INFINITY]]), Err(Error::Domain { .. })));
    }

    #[test]
    fn gradients_match_central_differences() {
        let fields = [
            Field::new(vec![
                Term::Gaussian { amplitude: 1.5, center: vec![0.3, -0.2], widths: vec![0.7, 1.3] },
                Term::gaussian(-0.5, vec![1.0, 1.0], 1.0),
            ]),
            Field::new(vec![Term::Ring { amplitude: 2.0, radius: 1.5, width: 0.8 }]),
            Field::new(vec![Term::InversePower { amplitude: 1.0, exponent: 0.75 }]),
        ];
        for field in &fields {
            for x in [[0.4, 0.1], [-1.3, 2.2], [3.0, -0.5]] {
                let s = fd_step(&x, 1);
                assert!(fd_gradient_error(field, &x) <= 10.0 * s * s, "{field:?} at {x:?}");
            }
        }
    }

    #[test]
    fn hessians_match_differences_of_gradients() {
        let fields = [
            Field::new(vec![Term::Gaussian { amplitude: 1.5, center: vec![0.3, -0.2], widths: vec![0.7, 1.3] }]),
            Field::new(vec![Term::Ring { amplitude: 2.0, radius: 1.5, width: 0.8 }]),
            Field::new(vec![Term::InversePower { amplitude: 1.0, exponent: 0.75 }]),
        ];
        for field in &fields {
            let x = [0.9, -0.4];
            let mut hess = [0.0; 4];
            field.hessian_into(&x, &mut hess);
            for j in 0..2 {
                let s = 1e-5;
                let mut xp = x;
                let mut xm = x;
                xp[j] += s;
                xm[j] -= s;
                let gp = field.gradient(&xp);
                let gm = field.gradient(&xm);
                for i in 0..2 {
                    let fd = (gp[i] - gm[i]) / (2.0 * s);
                    assert!((fd - hess[i * 2 + j]).abs() < 1e-7, "{field:?}");
                }
            }
        }
    }

    #[test]
    fn free_model_symbol_class_passes_with_zero_ratios() {
        let m = PotentialModel::free(2).with_symbol_constants(Which::V1, vec![1.0; 3]);
        let r = verify_symbol_class(&m, Which::V1, &SampleBox::cube(2, 5.0, 9), 2, 1e-6).unwrap();
        assert!(r.pass);
        assert!(r.orders.iter().all(|o| o.max_ratio == 0.0));
    }

    #[test]
    fn missing_constants_are_a_configuration_error() {
        let m = PotentialModel::double_bump(2.0, 2.0).with_symbol_constants(Which::V1, vec![1.0, 1.0]);
        let err = verify_symbol_class(&m, Which::V1, &SampleBox::cube(1, 5.0, 9), 2, 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn zero_absorption_gives_all_zero_split() {
        let m = PotentialModel::double_bump(2.0, 2.0);
        let split = split_dissipative(&m, 0.75, 4.0, &SampleBox::cube(1, 20.0, 401)).unwrap();
        assert_eq!(split.c, 0.0);
        assert_eq!(split.w4_support(), None);
        for x in [[-3.0], [0.0], [7.5]] {
            assert_eq!(split.w2(&x), 0.0);
            assert_eq!(split.w3(&x), 0.0);
            assert_eq!(split.w4(&x), 0.0);
        }
    }

    #[test]
    fn nonnegative_absorption_needs_no_shift() {
        let m = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(1.0, vec![0.0], 1.0)]));
        let split = split_dissipative(&m, 0.75, 4.0, &SampleBox::cube(1, 20.0, 401)).unwrap();
        assert_eq!(split.c, 0.0);
        assert_eq!(split.w4_support(), None);
    }

    #[test]
    fn split_rejects_delta_outside_window() {
        let m = PotentialModel::free(1);
        let grid = SampleBox::cube(1, 10.0, 11);
        assert!(matches!(split_dissipative(&m, 0.5, 1.0, &grid), Err(Error::Precondition(_))));
        assert!(matches!(split_dissipative(&m, 1.0, 1.0, &grid), Err(Error::Precondition(_))));
    }

    #[test]
    fn split_of_negative_gaussian_matches_scan_of_required_shift() {
        let m = PotentialModel::free(1).with_v2(Field::new(vec![Term::gaussian(-1.0, vec![0.0], 1.0)]));
        let grid = SampleBox::cube(1, 15.0, 3001);
        let split = split_dissipative(&m, 0.75, 6.0, &grid).unwrap();
        // Oracle: brute-force maximum of -V2(x) <x>^{1+ρ} on a finer grid.
        let oracle = (0..=60000)
            .map(|k| -15.0 + 30.0 * k as f64 / 60000.0)
            .map(|x: f64| (-x * x).exp() * (1.0 + x.abs()))
            .fold(0.0, f64::max);
        assert!(split.c <= oracle && oracle - split.c < 1e-4 * oracle, "{} vs {oracle}", split.c);
        let check = split.check(&grid.points());
        assert!(check.min_margin >= 0.0);
        assert!(check.max_reconstruction_error < 1e-15);
        assert!(check.max_weighted_w3 <= split.w3_bound * (1.0 + 1e-12));
        assert_eq!(check.max_w4_outside_support, 0.0);
    }

    #[test]
    fn slowly_decaying_negative_part_is_a_model_error() {
        let m =
            PotentialModel::free(1).with_v2(Field::new(vec![Term::InversePower { amplitude: -1.0, exponent: 0.1 }]));
        let err = split_dissipative(&m, 0.75, 2.0, &SampleBox::cube(1, 50.0, 501)).unwrap_err();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn m_minus_is_negative_infimum() {
        let m = PotentialModel::free(1).with_v2(Field::new(vec![Term::gaussian(-0.7, vec![0.0], 1.0)]));
        assert_eq!(m.m_minus(), 0.7);
        let m = PotentialModel::free(1).with_v2(Field::constant(0.3));
        assert_eq!(m.m_minus(), 0.0);
    }
}
