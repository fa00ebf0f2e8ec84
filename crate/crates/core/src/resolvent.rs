//! Weighted resolvent norms, eigenvalue-free regions, h-scaling fits and
//! the incoming-region block norm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{region_membership, PhasePoint, RegionSpec};
use crate::linalg::{dense_sigma_min, largest_singular_value, shift_invert_arnoldi, smallest_singular_value, SparseLu};
use crate::operator::{standard_quantize, DiscretizedOperator, QuantizeOptions, TestSymbol};
use crate::{bracket, Error, Result, C64};

/// Records with a solver residual above this are flagged.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub h: f64,
    pub z_re: f64,
    pub z_im: f64,
    pub norm: f64,
    pub residual: f64,
    pub iterations: usize,
    pub method: String,
    pub converged: bool,
}

impl NormRecord {
    pub fn z(&self) -> C64 {
        C64::new(self.z_re, self.z_im)
    }
}

fn weights(op: &DiscretizedOperator, delta: f64) -> Vec<f64> {
    op.grid.points().iter().map(|x| bracket(x).powf(delta)).collect()
}

/// `‖⟨x⟩^{-δ} (H - z)^{-1} ⟨x⟩^{-δ}‖` as `1 / σ_min(⟨x⟩^{δ} (H - z) ⟨x⟩^{δ})`.
pub fn weighted_resolvent_norm(op: &DiscretizedOperator, z: C64, delta: f64) -> Result<NormRecord> {
    let w = weights(op, delta);
    let m = op.matrix.shifted(z).scale(&w, &w);
    let est = smallest_singular_value(&m, 1e-11, 400)?;
    let mut rec = NormRecord {
        h: op.h,
        z_re: z.re,
        z_im: z.im,
        norm: 1.0 / est.sigma_min,
        residual: est.residual,
        iterations: est.iterations,
        method: est.method.to_string(),
        converged: est.residual <= RESIDUAL_TOL,
    };
    if !rec.converged && op.len() <= 400 {
        let sigma = dense_sigma_min(&m.to_dense())?;
        rec.norm = 1.0 / sigma;
        rec.residual = 0.0;
        rec.method = "dense-svd".into();
        rec.converged = true;
    }
    if !rec.norm.is_finite() {
        return Err(Error::Singular(format!("z = {z} is (numerically) an eigenvalue")));
    }
    Ok(rec)
}

/// Same quantity by a dense SVD.
pub fn weighted_resolvent_norm_dense(op: &DiscretizedOperator, z: C64, delta: f64) -> Result<f64> {
    let w = weights(op, delta);
    let m = op.matrix.shifted(z).scale(&w, &w);
    let sigma = dense_sigma_min(&m.to_dense())?;
    if sigma == 0.0 {
        return Err(Error::Singular(format!("z = {z} is an eigenvalue")));
    }
    Ok(1.0 / sigma)
}

/// `1 / (Im z - h m₋)` when `Im z > h m₋`.
pub fn dissipative_bound(h: f64, m_minus: f64, z: C64) -> Option<f64> {
    let gap = z.im - h * m_minus;
    (gap > 0.0).then(|| 1.0 / gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RegionTag {
    /// `{Re z ∈ I, Im z ≥ hβ}`.
    Strip {
        beta: f64,
    },
    UpperHalfPlane,
    LowerHalfPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub region: RegionTag,
    pub records: Vec<NormRecord>,
}

/// Norm at `z_rule(h)` for each `h`, operators built by `build`.
pub fn resolvent_scan(
    ladder: &[f64],
    build: &(dyn Fn(f64) -> Result<DiscretizedOperator> + Sync),
    z_rule: &(dyn Fn(f64) -> C64 + Sync),
    delta: f64,
    region: RegionTag,
) -> Result<ScanResult> {
    let records = ladder
        .par_iter()
        .map(|&h| {
            let op = build(h)?;
            weighted_resolvent_norm(&op, z_rule(h), delta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanResult { region, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares fit `log(norm) = intercept + slope · log(h)`.
pub fn h_scaling_fit(scan: &ScanResult) -> Result<ScalingFit> {
    if scan.records.len() < 4 {
        return Err(Error::pre(format!("scaling fit needs at least 4 ladder points, got {}", scan.records.len())));
    }
    if let Some(r) = scan.records.iter().find(|r| !r.converged) {
        return Err(Error::pre(format!("ladder point h = {} did not converge", r.h)));
    }
    let pts: Vec<(f64, f64)> = scan.records.iter().map(|r| (r.h.ln(), r.norm.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::pre("scaling fit needs distinct h values"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(ScalingFit { slope, intercept, residual, points: pts.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// `min_h norm · h / |ln h|`.
    pub constant: f64,
    pub values: Vec<(f64, f64)>,
}

/// `norm · h / |ln h|` across the ladder.
pub fn trapped_lower_bound(scan: &ScanResult) -> Result<LowerBound> {
    if scan.records.iter().any(|r| r.h >= 1.0) {
        return Err(Error::pre("the |ln h| / h law needs h < 1"));
    }
    let values: Vec<(f64, f64)> = scan.records.iter().map(|r| (r.h, r.norm * r.h / r.h.ln().abs())).collect();
    let constant = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    Ok(LowerBound { constant, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigScanOptions {
    pub krylov_dim: usize,
    /// Minimal eigenvector mass inside the trusted interior for an eigenvalue to count.
    pub interior_fraction: f64,
    pub residual_tol: f64,
    /// Number of shift columns across the interval.
    pub columns: usize,
}

impl Default for EigScanOptions {
    fn default() -> Self {
        EigScanOptions { krylov_dim: 80, interior_fraction: 0.9, residual_tol: 1e-8, columns: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigRecord {
    pub re: f64,
    pub im: f64,
    pub interior_mass: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No offender found but some shift discs were not certified.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigScan {
    pub h: f64,
    pub beta: f64,
    pub interval: (f64, f64),
    pub verdict: Verdict,
    pub offenders: Vec<EigRecord>,
    /// Converged eigenvalues found in the scanned rectangle, physical or not.
    pub eigenvalues: Vec<EigRecord>,
    /// Upper bound of `Im` over the numerical range.
    pub im_ceiling: f64,
    pub shifts: usize,
    pub uncovered_shifts: usize,
}

/// Interior-localized eigenvalues with `Re ∈ I` and `Im ≥ hβ`.
pub fn eigenvalue_free_scan(
    op: &DiscretizedOperator,
    interval: (f64, f64),
    beta: f64,
    opts: &EigScanOptions,
) -> Result<EigScan> {
    let (lo, hi) = interval;
    if !(hi > lo) || opts.columns == 0 {
        return Err(Error::config("eigenvalue scan needs a nonempty interval and at least one column"));
    }
    let h = op.h;
    let floor = h * beta;
    let im_ceiling = (0..op.len()).map(|i| op.imag_potential[i] - op.cap[i]).fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / opts.columns as f64;
    let rows = (((im_ceiling - floor) / step).ceil() as usize).max(1);
    let radius = step * std::f64::consts::FRAC_1_SQRT_2 * 1.01;
    let mut shifts = Vec::new();
    for r in 0..rows {
        for c in 0..opts.columns {
            shifts.push(C64::new(lo + (c as f64 + 0.5) * step, floor + (r as f64 + 0.5) * step));
        }
    }
    let interior: Vec<bool> = (0..op.len()).map(|i| op.grid.is_trusted(i)).collect();
    let results = shifts
        .par_iter()
        .map(|&s| {
            let pairs = shift_invert_arnoldi(&op.matrix, s, opts.krylov_dim)?;
            let converged: Vec<_> = pairs.into_iter().filter(|p| p.residual <= opts.residual_tol).collect();
            let covered = converged.len() >= op.len() || converged.iter().any(|p| (p.value - s).norm() >= radius);
            let recs: Vec<EigRecord> = converged
                .iter()
                .map(|p| {
                    let total: f64 = p.vector.iter().map(|v| v.norm_sqr()).sum();
                    let inside: f64 =
                        p.vector.iter().zip(&interior).filter(|(_, t)| **t).map(|(v, _)| v.norm_sqr()).sum();
                    EigRecord { re: p.value.re, im: p.value.im, interior_mass: inside / total, residual: p.residual }
                })
                .collect();
            Ok((covered, recs))
        })
        .collect::<Result<Vec<_>>>()?;
    let uncovered_shifts = results.iter().filter(|r| !r.0).count();
    let mut eigenvalues: Vec<EigRecord> = Vec::new();
    for rec in results.into_iter().flat_map(|r| r.1) {
        if rec.re < lo || rec.re > hi || rec.im < floor - step {
            continue;
        }
        let z = C64::new(rec.re, rec.im);
        let dup = eigenvalues.iter().any(|e| (C64::new(e.re, e.im) - z).norm() <= 1e-8 * z.norm().max(1.0));
        if !dup {
            eigenvalues.push(rec);
        }
    }
    eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let offenders: Vec<EigRecord> =
        eigenvalues.iter().filter(|e| e.im >= floor && e.interior_mass >= opts.interior_fraction).cloned().collect();
    let verdict = if !offenders.is_empty() {
        Verdict::Fail
    } else if im_ceiling < floor || uncovered_shifts == 0 {
        Verdict::Pass
    } else {
        Verdict::Partial
    };
    Ok(EigScan {
        h,
        beta,
        interval,
        verdict,
        offenders,
        eigenvalues,
        im_ceiling,
        shifts: shifts.len(),
        uncovered_shifts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakNorm {
    pub record: NormRecord,
    /// Real parts at which the norm was evaluated.
    pub candidates: Vec<f64>,
}

/// Largest weighted norm on `Re z ∈ I`, `Im z = ε₀ h`, probing the real
/// parts of interior-localized eigenvalues in `Re ∈ I`, `-h ≤ Im ≤ 0`
/// together with the endpoints and midpoint of `I`.
pub fn peak_resolvent_norm(
    op: &DiscretizedOperator,
    interval: (f64, f64),
    eps0: f64,
    delta: f64,
    opts: &EigScanOptions,
) -> Result<PeakNorm> {
    let (lo, hi) = interval;
    if !(hi > lo) || opts.columns == 0 {
        return Err(Error::config("peak search needs a nonempty interval and at least one column"));
    }
    let h = op.h;
    let step = (hi - lo) / opts.columns as f64;
    let interior: Vec<bool> = (0..op.len()).map(|i| op.grid.is_trusted(i)).collect();
    let shifts: Vec<C64> = (0..opts.columns).map(|c| C64::new(lo + (c as f64 + 0.5) * step, -0.5 * h)).collect();
    let found = shifts
        .par_iter()
        .map(|&s| {
            let pairs = shift_invert_arnoldi(&op.matrix, s, opts.krylov_dim)?;
            Ok(pairs
                .into_iter()
                .filter(|p| {
                    let total: f64 = p.vector.iter().map(|v| v.norm_sqr()).sum();
                    let inside: f64 =
                        p.vector.iter().zip(&interior).filter(|(_, t)| **t).map(|(v, _)| v.norm_sqr()).sum();
                    p.residual <= opts.residual_tol
                        && inside >= opts.interior_fraction * total
                        && (lo..=hi).contains(&p.value.re)
                        && (-h..=0.0).contains(&p.value.im)
                })
                .map(|p| p.value.re)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut candidates: Vec<f64> = vec![lo, 0.5 * (lo + hi), hi];
    candidates.extend(found.into_iter().flatten());
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let records = candidates
        .par_iter()
        .map(|&re| weighted_resolvent_norm(op, C64::new(re, eps0 * h), delta))
        .collect::<Result<Vec<_>>>()?;
    let record = records.into_iter().max_by(|a, b| a.norm.total_cmp(&b.norm)).expect("at least three candidates");
    Ok(PeakNorm { record, candidates })
}

/// Axis-aligned phase-space box sampled on a tensor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub xi_lo: Vec<f64>,
    pub xi_hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl PhaseBox {
    pub fn cube(dim: usize, x_half: f64, xi_half: f64, points_per_axis: usize) -> Self {
        PhaseBox {
            x_lo: vec![-x_half; dim],
            x_hi: vec![x_half; dim],
            xi_lo: vec![-xi_half; dim],
            xi_hi: vec![xi_half; dim],
            points_per_axis,
        }
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        let n = self.x_lo.len();
        let lo: Vec<f64> = self.x_lo.iter().chain(&self.xi_lo).copied().collect();
        let hi: Vec<f64> = self.x_hi.iter().chain(&self.xi_hi).copied().collect();
        let m = self.points_per_axis.max(2);
        let total = m.pow(2 * n as u32);
        (0..total)
            .map(|mut k| {
                let mut c = vec![0.0; 2 * n];
                for a in (0..2 * n).rev() {
                    let i = k % m;
                    k /= m;
                    c[a] = lo[a] + (hi[a] - lo[a]) * i as f64 / (m - 1) as f64;
                }
                PhasePoint::new(c[..n].to_vec(), c[n..].to_vec())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomingGeometry {
    /// `Z₋(R, d, -σ)` that must contain the support of `ω₋`.
    pub minus_region: RegionSpec,
    /// `Z₋(R₁, d₁, -σ₁)` that the support of `ω` must avoid.
    pub omega_region: RegionSpec,
    pub sample: PhaseBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub sampled: usize,
    pub minus_violations: usize,
    pub omega_violations: usize,
}

/// Samples both symbols and checks their supports against the two regions.
pub fn check_incoming_geometry(
    omega_minus: &TestSymbol,
    omega: &TestSymbol,
    geometry: &IncomingGeometry,
) -> GeometryReport {
    let pts = geometry.sample.points();
    let qm: Vec<f64> = pts.iter().map(|w| omega_minus.eval(&w.x, &w.xi).norm()).collect();
    let qo: Vec<f64> = pts.iter().map(|w| omega.eval(&w.x, &w.xi).norm()).collect();
    let cut = |v: &[f64]| 1e-12 * v.iter().copied().fold(0.0, f64::max);
    let (cm, co) = (cut(&qm), cut(&qo));
    let mut rep = GeometryReport { sampled: pts.len(), minus_violations: 0, omega_violations: 0 };
    for (i, w) in pts.iter().enumerate() {
        if qm[i] > cm && !region_membership(w, &geometry.minus_region) {
            rep.minus_violations += 1;
        }
        if qo[i] > co && region_membership(w, &geometry.omega_region) {
            rep.omega_violations += 1;
        }
    }
    rep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomingNorm {
    pub h: f64,
    pub z_re: f64,
    pub z_im: f64,
    pub norm: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// `‖⟨x⟩^β Op_h(ω₋) (H - z)^{-1} Op_h(ω) ⟨x⟩^β‖` with standard quantization.
pub fn incoming_region_norm(
    op: &DiscretizedOperator,
    z: C64,
    omega_minus: &TestSymbol,
    omega: &TestSymbol,
    beta_weight: f64,
    geometry: Option<&IncomingGeometry>,
    qopts: &QuantizeOptions,
) -> Result<IncomingNorm> {
    if let Some(g) = geometry {
        let rep = check_incoming_geometry(omega_minus, omega, g);
        if rep.minus_violations > 0 || rep.omega_violations > 0 {
            return Err(Error::pre(format!(
                "symbol supports violate the region geometry ({} points of ω₋ outside the incoming region, {} points of ω inside the excluded one)",
                rep.minus_violations, rep.omega_violations
            )));
        }
    }
    let mut rec = IncomingNorm { h: op.h, z_re: z.re, z_im: z.im, norm: 0.0, residual: 0.0, iterations: 0 };
    if matches!(omega_minus, TestSymbol::Zero) || matches!(omega, TestSymbol::Zero) {
        return Ok(rec);
    }
    let a_minus = standard_quantize(omega_minus, &op.grid, op.h, qopts)?;
    let a = standard_quantize(omega, &op.grid, op.h, qopts)?;
    let lu = SparseLu::new(&op.matrix.shifted(z))?;
    let w = weights(op, beta_weight);
    let weigh = |u: &[C64]| u.iter().zip(&w).map(|(v, s)| v * *s).collect::<Vec<_>>();
    let apply = |u: &[C64]| weigh(&a_minus.apply(&lu.solve(&a.apply(&weigh(u)))));
    let apply_adjoint = |u: &[C64]| weigh(&a.apply_adjoint(&lu.solve_adjoint(&a_minus.apply_adjoint(&weigh(u)))));
    let est = largest_singular_value(op.len(), &apply, &apply_adjoint, 1e-10, 200)?;
    rec.norm = est.norm;
    rec.residual = est.residual;
    rec.iterations = est.iterations;
    Ok(rec)
}

/// `log(n_i / n_{i+1}) / log(h_i / h_{i+1})` for consecutive ladder points.
pub fn local_exponents(points: &[(f64, f64)]) -> Vec<f64> {
    points.windows(2).map(|p| (p[0].1 / p[1].1).ln() / (p[0].0 / p[1].0).ln()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
}

/// Norm on `N` and `2N` points per axis.
pub fn grid_refinement_check(
    build: &dyn Fn(usize) -> Result<DiscretizedOperator>,
    points_per_axis: usize,
    z: C64,
    delta: f64,
) -> Result<RefinementCheck> {
    let coarse = weighted_resolvent_norm(&build(points_per_axis)?, z, delta)?.norm;
    let fine = weighted_resolvent_norm(&build(2 * points_per_axis)?, z, delta)?.norm;
    Ok(RefinementCheck { coarse, fine, relative_change: (fine - coarse).abs() / fine })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_inverse, dense_norm};
    use crate::operator::{build_hamiltonian, BuildOptions, GridDomain, Variant};
    use crate::potentials::{Field, PotentialModel, Term};
    use faer::Mat;

    fn op(model: &PotentialModel, n: usize, h: f64, cap: f64) -> DiscretizedOperator {
        let g = GridDomain::new(1, 6.0, n, 1.5, cap).unwrap();
        build_hamiltonian(model, None, &g, h, Variant::H, &BuildOptions { xi_max: 1.0, ..Default::default() }).unwrap()
    }

    #[test]
    fn lanczos_matches_dense_on_200_points() {
        let m = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(1.0, vec![0.0], 1.0)]));
        let o = op(&m, 200, 0.3, 1.0);
        let z = C64::new(1.0, 0.003);
        let it = weighted_resolvent_norm(&o, z, 1.0).unwrap();
        let dense = weighted_resolvent_norm_dense(&o, z, 1.0).unwrap();
        assert!(it.converged);
        assert!((it.norm - dense).abs() <= 1e-6 * dense, "{} vs {dense}", it.norm);
    }

    #[test]
    fn hermitian_norm_is_inverse_distance() {
        let o = op(&PotentialModel::free(1), 160, 0.3, 0.0);
        let eps = 1e-3;
        let z = C64::new(0.5, eps);
        let r = weighted_resolvent_norm(&o, z, 0.0).unwrap();
        let ev = o.matrix.to_dense().eigenvalues().unwrap();
        let dist = ev.iter().map(|l| (l - z).norm()).fold(f64::INFINITY, f64::min);
        assert!((r.norm * dist - 1.0).abs() < 1e-8);
        assert!(r.norm <= 1.0 / eps * (1.0 + 1e-12));
    }

    #[test]
    fn dissipative_bound_holds() {
        let m = PotentialModel::free(1).with_v2(Field::new(vec![Term::gaussian(-0.5, vec![0.0], 1.0)]));
        let h = 0.2;
        let o = op(&m, 240, h, 1.0);
        for im in [0.2, 0.5, 1.0] {
            let z = C64::new(1.0, im);
            let b = dissipative_bound(h, m.m_minus(), z).unwrap();
            let r = weighted_resolvent_norm(&o, z, 1.0).unwrap();
            assert!(r.norm <= b * 1.000_001);
        }
        assert!(dissipative_bound(h, 0.5, C64::new(1.0, 0.05)).is_none());
    }

    #[test]
    fn adjoint_symmetry() {
        let m = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(0.7, vec![0.0], 1.0)]));
        let o = op(&m, 160, 0.3, 1.0);
        let z = C64::new(0.9, 0.02);
        let a = weighted_resolvent_norm_dense(&o, z, 1.0).unwrap();
        let b = weighted_resolvent_norm_dense(&o.adjoint(), z.conj(), 1.0).unwrap();
        assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn first_resolvent_identity() {
        let m = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(0.7, vec![0.0], 1.0)]));
        let o = op(&m, 120, 0.4, 1.0);
        let dense = o.matrix.to_dense();
        let n = dense.nrows();
        let (z, zp) = (C64::new(1.0, 0.05), C64::new(0.8, 0.2));
        let shift =
            |s: C64| Mat::<C64>::from_fn(n, n, |i, j| dense[(i, j)] - if i == j { s } else { C64::new(0.0, 0.0) });
        let rz = dense_inverse(&shift(z));
        let rzp = dense_inverse(&shift(zp));
        let prod = &rz * &rzp;
        let defect = Mat::<C64>::from_fn(n, n, |i, j| rz[(i, j)] - rzp[(i, j)] - (z - zp) * prod[(i, j)]);
        assert!(dense_norm(&defect).unwrap() <= 1e-8);
    }

    #[test]
    fn scaling_fit_recovers_power() {
        let records = [0.2, 0.1, 0.05, 0.025]
            .iter()
            .map(|&h: &f64| NormRecord {
                h,
                z_re: 1.0,
                z_im: h,
                norm: 3.0 / h,
                residual: 0.0,
                iterations: 1,
                method: "exact".into(),
                converged: true,
            })
            .collect::<Vec<_>>();
        let scan = ScanResult { region: RegionTag::UpperHalfPlane, records };
        let fit = h_scaling_fit(&scan).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && (fit.intercept - 3f64.ln()).abs() < 1e-12);
        let short = ScanResult { region: RegionTag::UpperHalfPlane, records: scan.records[..3].to_vec() };
        assert!(matches!(h_scaling_fit(&short), Err(Error::Precondition(_))));
    }

    #[test]
    fn hermitian_operator_has_no_upper_eigenvalues() {
        let o = op(&PotentialModel::double_bump(2.0, 2.0), 200, 0.3, 0.0);
        let scan = eigenvalue_free_scan(&o, (0.8, 1.2), 1.0, &EigScanOptions::default()).unwrap();
        assert_eq!(scan.verdict, Verdict::Pass);
        assert!(scan.offenders.is_empty());
    }

    #[test]
    fn zero_symbol_gives_zero_block() {
        let o = op(&PotentialModel::free(1), 160, 0.3, 1.0);
        let r = incoming_region_norm(
            &o,
            C64::new(1.0, 0.003),
            &TestSymbol::Zero,
            &TestSymbol::position(|_| 1.0),
            1.0,
            None,
            &QuantizeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.norm, 0.0);
    }

    #[test]
    fn geometry_violation_is_refused() {
        let o = op(&PotentialModel::free(1), 160, 0.3, 1.0);
        let bump = |c: f64| move |x: &[f64]| crate::cutoff::Plateau::centered(c, 0.3, 0.3).eval(x[0]);
        let outgoing_xi = |xi: &[f64]| crate::cutoff::Plateau::centered(1.0, 0.1, 0.15).eval(xi[0]);
        let geometry = IncomingGeometry {
            minus_region: RegionSpec::incoming(2.0, 0.5, -0.5),
            omega_region: RegionSpec::incoming(2.0, 0.5, -0.5),
            sample: PhaseBox::cube(1, 5.0, 2.0, 81),
        };
        let err = incoming_region_norm(
            &o,
            C64::new(1.0, 0.003),
            &TestSymbol::product(bump(3.0), outgoing_xi),
            &TestSymbol::product(bump(0.0), |_| 1.0),
            1.0,
            Some(&geometry),
            &QuantizeOptions { check_band: false, ..Default::default() },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
