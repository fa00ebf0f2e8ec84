//! End-to-end checks, one line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 4 7`.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scl_core::cutoff::Plateau;
use scl_core::damping::*;
use scl_core::flow::*;
use scl_core::helmholtz::*;
use scl_core::measure::*;
use scl_core::operator::*;
use scl_core::potentials::*;
use scl_core::resolvent::*;
use scl_core::{Result, C64};

const LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn damped_double_bump() -> PotentialModel {
    PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(1.0, vec![0.0], 1.0)]))
}

fn box_operator(
    model: &PotentialModel,
    h: f64,
    l: f64,
    cap_width: f64,
    cap_strength: f64,
    profile: CapProfile,
) -> Result<DiscretizedOperator> {
    let n = required_points(l, h, 1.0);
    let grid = GridDomain::new(1, l, n, cap_width, cap_strength)?.with_cap_profile(profile);
    build_hamiltonian(model, None, &grid, h, Variant::H, &BuildOptions { xi_max: 1.0, ..Default::default() })
}

fn scan_operator(model: &PotentialModel, h: f64) -> Result<DiscretizedOperator> {
    box_operator(model, h, 12.0, 3.0, 1.0, CapProfile::Cubic)
}

fn dist(a: &PhasePoint, b: &PhasePoint) -> f64 {
    a.x.iter().chain(&a.xi).zip(b.x.iter().chain(&b.xi)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn flow_correctness() -> Result<Outcome> {
    let opts = FlowOptions::default();
    let free = PotentialModel::free(2);
    let mut exact_err = 0.0f64;
    for (x, xi) in [([0.3, -1.2], [0.7, 0.4]), ([-2.0, 5.0], [-1.1, 0.05]), ([0.0, 0.0], [0.0, 1.0])] {
        let w = PhasePoint::new(x.to_vec(), xi.to_vec());
        for t in [0.5, 3.0, 10.0, -7.25] {
            let (p, _) = flow_map(&free, &w, t, &opts)?;
            let want = PhasePoint::new(vec![x[0] + 2.0 * t * xi[0], x[1] + 2.0 * t * xi[1]], xi.to_vec());
            exact_err = exact_err.max(dist(&p, &want));
        }
    }

    let bump = PotentialModel::double_bump(2.0, 2.0);
    let trapped = PhasePoint::new(vec![0.0], vec![(1.0 - bump.v1(&[0.0])).sqrt()]);
    let traj = integrate_flow(&bump, &trapped, (0.0, 1000.0), &opts.clone().sampled(1.0))?;
    let bounded = traj.points.iter().all(|p| p.x[0].abs() < 2.0);

    let ring = PotentialModel::ring_bump(1.5, 2.0);
    let starts = [
        (&bump, trapped.clone()),
        (&bump, PhasePoint::new(vec![-4.0], vec![1.6])),
        (&ring, PhasePoint::new(vec![0.5, -0.2], vec![0.6, 0.7])),
        (&ring, PhasePoint::new(vec![3.5, 1.0], vec![-1.0, 0.2])),
    ];
    let mut reversal = 0.0f64;
    let mut semigroup = 0.0f64;
    for (m, w) in starts {
        let (p, _) = flow_map(m, &w, 10.0, &opts)?;
        let (back, _) = flow_map(m, &p, -10.0, &opts)?;
        reversal = reversal.max(dist(&back, &w));
        let (q, _) = flow_map(m, &p.reversed(), 10.0, &opts)?;
        reversal = reversal.max(dist(&q.reversed(), &w));
        let (a, _) = flow_map(m, &w, 3.7, &opts)?;
        let (ab, _) = flow_map(m, &a, 5.2, &opts)?;
        let (direct, _) = flow_map(m, &w, 8.9, &opts)?;
        semigroup = semigroup.max(dist(&ab, &direct));
    }
    let pass = exact_err <= 1e-12 && traj.energy_drift <= 1e-8 && bounded && reversal <= 1e-7 && semigroup <= 1e-7;
    outcome(
        pass,
        format!(
            "free-flow error {exact_err:.1e}, trapped drift over t=1000 {:.1e}, reversal {reversal:.1e}, semigroup {semigroup:.1e}",
            traj.energy_drift
        ),
    )
}

fn trapped_samples(model: &PotentialModel, energies: Vec<f64>, offset: f64, want: usize) -> Result<Vec<PhasePoint>> {
    let j = EnergyInterval::around(1.0);
    let rc = escape_radius(model, j)?;
    let sampling =
        TrappedSampling { energies, half_width: rc + offset, points_per_axis: 240, directions: 2, horizon: 50.0 };
    let all = sample_trapped_set(model, j, rc, &sampling, &FlowOptions::default())?;
    if all.len() < want {
        return Err(scl_core::Error::Precondition(format!("only {} trapped samples", all.len())));
    }
    Ok((0..want).map(|k| all[k * all.len() / want].clone()).collect())
}

fn damping_machinery() -> Result<Outcome> {
    let opts = FlowOptions::default();
    let j = EnergyInterval::around(1.0);
    let shell = trapped_samples(&PotentialModel::double_bump(2.0, 2.0), vec![1.0], 0.0, 40)?;
    let verdict = |m: &PotentialModel| -> Result<bool> {
        Ok(check_damping_assumption(m, 1.0, &shell, 102.4, 0.0, 1e-10, &opts)?.holds)
    };
    let constant = verdict(&PotentialModel::double_bump(2.0, 2.0).with_v2(Field::constant(0.5)))?;
    let zero = verdict(&PotentialModel::double_bump(2.0, 2.0))?;
    let centered = verdict(&damped_double_bump())?;

    let model = damped_double_bump();
    let energies = |base: f64, count: usize| (0..count).map(|k| base + 0.05 * k as f64).collect::<Vec<_>>();
    // The held-out energies interleave the fitted ones.
    let fit_set = trapped_samples(&model, energies(0.75, 11), 0.0, 200)?;
    let check_set = trapped_samples(&model, energies(0.775, 10), 0.37, 200)?;
    let horizon = 1000.0;
    let fit = average_damping_constants(&model, j, &fit_set, horizon, &opts)?;
    let mut violations = 0usize;
    for w in fit_set.iter().chain(&check_set) {
        for d in [Direction::Future, Direction::Past] {
            let (times, ints, _) = damping_profile(&model, w, horizon, 7919, d, &opts)?;
            violations += times.iter().zip(&ints).filter(|(t, i)| **i < fit.c0 * **t - fit.big_c - 1e-9).count();
        }
    }
    let pass = constant && !zero && centered && fit.c0 > 0.0 && violations == 0;
    outcome(
        pass,
        format!(
            "verdicts constant={constant} zero={zero} centred-gaussian={centered}; fitted c0={:.4} C={:.3} on 200 orbits, {violations} violations on 400 orbits over t≤1000",
            fit.c0, fit.big_c
        ),
    )
}

fn escape_samples(model: &PotentialModel, reach: f64, count: usize, seed: u64) -> Vec<PhasePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-reach..reach)).collect();
        let e = rng.random_range(0.55..1.9);
        let k2 = e - model.v1(&x);
        if k2 <= 0.0 {
            continue;
        }
        let xi = if n == 1 {
            vec![if rng.random::<bool>() { k2.sqrt() } else { -k2.sqrt() }]
        } else {
            let a = rng.random_range(0.0..2.0 * PI);
            vec![k2.sqrt() * a.cos(), k2.sqrt() * a.sin()]
        };
        out.push(PhasePoint::new(x, xi));
    }
    out
}

fn escape_function() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, model) in [("free", PotentialModel::free(2)), ("double-bump", PotentialModel::double_bump(2.0, 2.0))] {
        let rc = escape_radius(&model, EnergyInterval::around(1.0))?;
        let f = build_escape_function(&model, 1.0, 1.0, 0.25, rc, EscapeQuadrature::default())?;
        let rep = verify_escape_relation(&f, &escape_samples(&model, rc + 4.0, 500, 17), 1e-2)?;
        pass &= rep.max_residual <= 1e-3 && rep.max_abs_f.is_finite();
        parts.push(format!("{name} (Rc = {rc}): max residual {:.1e} (|f| ≤ {:.2})", rep.max_residual, rep.max_abs_f));
    }
    outcome(pass, format!("500 points each; {}", parts.join(", ")))
}

fn resolvent_scaling() -> Result<Outcome> {
    let model = damped_double_bump();
    let build = |h: f64| scan_operator(&model, h);
    let scan = resolvent_scan(&LADDER, &build, &|h| C64::new(1.0, 1e-2 * h), 1.0, RegionTag::UpperHalfPlane)?;
    let fit = h_scaling_fit(&scan)?;
    let converged = scan.records.iter().all(|r| r.converged);

    let anti = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(-0.5, vec![0.0], 1.0)]));
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (m, im) in [(&model, 1e-2), (&model, 0.5), (&anti, 1.0), (&anti, 2.0)] {
        for &h in &LADDER {
            let z = C64::new(1.0, im * h);
            if let Some(bound) = dissipative_bound(h, m.m_minus(), z) {
                let op = scan_operator(m, h)?;
                worst = worst.max(weighted_resolvent_norm(&op, z, 0.0)?.norm / bound);
                checked += 1;
            }
        }
    }
    let pass = (-1.15..=-0.85).contains(&fit.slope) && converged && worst <= 1.01;
    outcome(
        pass,
        format!(
            "slope {:.3} (norms {}), dissipative bound ratio ≤ {worst:.4} at {checked} points",
            fit.slope,
            scan.records.iter().map(|r| format!("{:.3e}", r.norm)).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn eigenvalue_free_strip() -> Result<Outcome> {
    let opts = EigScanOptions::default();
    let damped = damped_double_bump();
    let anti = PotentialModel::double_bump(2.0, 2.0).with_v2(Field::new(vec![Term::gaussian(-3.0, vec![0.0], 1.0)]));
    let mut clean = true;
    let mut uncovered = 0;
    let mut offenders = 0;
    for &h in &LADDER {
        let s = eigenvalue_free_scan(&scan_operator(&damped, h)?, (0.9, 1.1), 1.0, &opts)?;
        clean &= s.verdict == Verdict::Pass;
        uncovered += s.uncovered_shifts;
        offenders += eigenvalue_free_scan(&scan_operator(&anti, h)?, (0.9, 1.1), 1.0, &opts)?.offenders.len();
    }
    outcome(
        clean && offenders > 0,
        format!("damped: strip clear on the whole ladder ({uncovered} uncovered shifts); anti-damped control: {offenders} offenders"),
    )
}

fn trapped_lower_bound_check() -> Result<Outcome> {
    let model = PotentialModel::double_bump(2.0, 2.0);
    let opts = EigScanOptions::default();
    let mut records = Vec::new();
    for &h in &LADDER {
        records.push(peak_resolvent_norm(&scan_operator(&model, h)?, (0.9, 1.1), 1e-2, 1.0, &opts)?.record);
    }
    let lb = trapped_lower_bound(&ScanResult { region: RegionTag::UpperHalfPlane, records })?;
    outcome(
        lb.constant >= 1.0,
        format!(
            "norm·h/|ln h| = {} (min {:.3})",
            lb.values.iter().map(|v| format!("{:.3}", v.1)).collect::<Vec<_>>().join(", "),
            lb.constant
        ),
    )
}

fn incoming_decay() -> Result<Outcome> {
    let free = PotentialModel::free(1);
    let position = Plateau::new(4.0, 5.5, 6.0, 7.5);
    let momentum = Plateau::new(-2.5, -1.05, -0.95, -0.05);
    let ao = Plateau::new(-1.5, -0.5, 0.5, 1.5);
    let bo = Plateau::new(-3.5, -1.2, 1.2, 3.5);
    let omega = TestSymbol::product(move |x: &[f64]| ao.eval(x[0]), move |xi: &[f64]| bo.eval(xi[0]));
    let incoming = TestSymbol::product(move |x: &[f64]| position.eval(x[0]), move |xi: &[f64]| momentum.eval(xi[0]));
    let outgoing = TestSymbol::product(move |x: &[f64]| position.eval(x[0]), move |xi: &[f64]| momentum.eval(-xi[0]));
    let geometry = IncomingGeometry {
        minus_region: RegionSpec::incoming(4.0, 0.05, -0.5),
        omega_region: RegionSpec::incoming(2.0, 0.0, -0.5),
        sample: PhaseBox::cube(1, 8.0, 3.0, 161),
    };
    let k = 1.0;
    let mut points = Vec::new();
    let mut control = Vec::new();
    for &h in &LADDER {
        let op = box_operator(&free, h, 12.8, 5.0, 1.0, CapProfile::Smooth)?;
        let z = C64::new(1.0, 1e-2 * h);
        let qo = QuantizeOptions::default();
        points.push((h, incoming_region_norm(&op, z, &incoming, &omega, 1.0, Some(&geometry), &qo)?.norm));
        control.push((h, incoming_region_norm(&op, z, &outgoing, &omega, 1.0, None, &qo)?.norm));
    }
    let exps = local_exponents(&points);
    let bounded = points.iter().all(|(h, n)| *n <= k * h.powi(3));
    let increasing = exps.windows(2).all(|e| e[1] > e[0]);
    let control_fails = control.iter().any(|(h, n)| *n > k * h.powi(3));
    outcome(
        bounded && increasing && control_fails,
        format!(
            "norms {} vs h³, local exponents {}; outgoing control {}",
            points.iter().map(|p| format!("{:.2e}", p.1)).collect::<Vec<_>>().join(", "),
            exps.iter().map(|e| format!("{e:.2}")).collect::<Vec<_>>().join(", "),
            control.iter().map(|p| format!("{:.2e}", p.1)).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn point_source(center: Vec<f64>) -> SourceSpec {
    SourceSpec { gamma: Gamma::point(center), amplitude: 1.0, profile: Profile::Gaussian { width: 1.0 } }
}

fn order4(model: &PotentialModel, grid: &GridDomain, h: f64) -> Result<DiscretizedOperator> {
    build_hamiltonian(model, None, grid, h, Variant::H, &BuildOptions { order: 4, ..Default::default() })
}

fn limiting_absorption() -> Result<Outcome> {
    let mut pass = true;

    let model = damped_double_bump();
    let mut min_decay = f64::INFINITY;
    let mut worst_rad = 0.0f64;
    for &h in &LADDER {
        let l = 12.0;
        let grid = GridDomain::new(1, l, (8.0 * l / h).ceil() as usize, 4.0, 1.8)?.with_cap_profile(CapProfile::Smooth);
        let op = order4(&model, &grid, h)?;
        let f = build_source(&point_source(vec![0.3]), &grid, h)?;
        let sol = solve_outgoing(&op, &f, 1.0, &default_eps_ladder(h), 1.0)?;
        let ratios = sol.decay_ratios();
        pass &= !ratios.is_empty() && ratios.iter().all(|r| *r >= 3.0);
        min_decay = ratios.iter().copied().fold(min_decay, f64::min);
        worst_rad = worst_rad.max(radiation_residual(&sol.u, sol.radiation_k(), &grid, 1.0, 6.0)?.ratio);
    }

    let h = 0.1;
    let (l, w) = (3.2, 1.95);
    let grid = GridDomain::new(2, l, (8.0 * l / h).ceil() as usize, w, 0.82)?.with_cap_profile(CapProfile::Smooth);
    let free2 = PotentialModel::free(2);
    let f = build_source(&point_source(vec![0.0, 0.0]), &grid, h)?;
    let sol = solve_outgoing(&order4(&free2, &grid, h)?, &f, 1.0, &default_eps_ladder(h), 1.0)?;
    let rad2 = radiation_residual(&sol.u, sol.radiation_k(), &grid, 1.0, 1.0)?.ratio;
    worst_rad = worst_rad.max(rad2);
    pass &= worst_rad <= 0.05;

    let h = 1.0;
    let grid = GridDomain::new(1, 30.0, 1200, 16.0, 1.8)?.with_cap_profile(CapProfile::Smooth);
    let f = build_source(&point_source(vec![0.0]), &grid, h)?;
    let sol = solve_outgoing(&order4(&PotentialModel::free(1), &grid, h)?, &f, 1.0, &default_eps_ladder(h), 1.0)?;
    let z = C64::new(1.0, *sol.eps.last().expect("ladder"));
    let k = z.sqrt() / h;
    let xs = grid.axis();
    let dx = grid.dx();
    let green: Vec<C64> = xs
        .iter()
        .map(|x| {
            xs.iter()
                .zip(&f)
                .map(|(y, fy)| {
                    C64::new(0.0, 1.0) / (2.0 * h * h * k) * (C64::new(0.0, 1.0) * k * (x - y).abs()).exp() * fy * dx
                })
                .sum()
        })
        .collect();
    let diff: Vec<C64> = green.iter().zip(&sol.u).map(|(a, b)| a - b).collect();
    let green_err = interior_weighted_norm(&grid, &diff, -1.0) / interior_weighted_norm(&grid, &green, -1.0);
    pass &= green_err <= 0.01;

    outcome(
        pass,
        format!("damped ε-gap decay ≥ {min_decay:.1}× per decade, radiation residual ≤ {worst_rad:.3} (2D free {rad2:.3}), 1D Green error {green_err:.1e}"),
    )
}

fn bump_symbol() -> BatterySymbol {
    BatterySymbol {
        name: "source-bump".into(),
        symbol: TestSymbol::product(
            |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 0.25).exp(),
            |xi: &[f64]| (-(xi[0] * xi[0] + xi[1] * xi[1] - 1.0).powi(2)).exp() * (1.0 + 0.3 * xi[0]),
        ),
    }
}

fn measure_agreement() -> Result<Outcome> {
    let free = PotentialModel::free(2);
    let origin = Gamma::point(vec![0.0, 0.0]);
    let profile = Profile::Gaussian { width: 1.0 };

    let ne = sample_negamma(&free, &origin, 1.0, 256)?;
    let fm =
        flow_measure(&free, &ne, &profile, 1.0, &FlowMeasureOptions { horizon: 0.6, dt: 1e-3, ..Default::default() })?;
    let battery = planar_battery(0.3, 0.7, 1.0);
    let qopts = QuantizeOptions { stencil_tol: 1e-10, ..Default::default() };
    let mut gaps = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let w = 16.0 * h;
        let l = 0.75 + w;
        let grid = GridDomain::new(2, l, (8.0 * l / h).ceil() as usize, w, 1.8)?.with_cap_profile(CapProfile::Smooth);
        let f = build_source(&SourceSpec { gamma: origin.clone(), amplitude: 1.0, profile }, &grid, h)?;
        let sol = solve_outgoing(&order4(&free, &grid, h)?, &f, 1.0, &default_eps_ladder(h), 1.0)?;
        let rows = compare_battery(&fm, &battery, &sol.u, &grid, h, 0, &qopts)?;
        gaps.push(rows.iter().map(|r| r.gap).fold(0.0, f64::max));
    }
    let agree = gaps[gaps.len() - 1] <= 0.10 && gaps.windows(2).all(|g| g[1] < g[0]);

    let damped = PotentialModel::free(2).with_v2(Field::new(vec![Term::gaussian(0.5, vec![0.0, 0.0], 1.0)]));
    let ne = sample_negamma(&damped, &origin, 1.0, 128)?;
    let mut checks = battery.clone();
    checks.push(bump_symbol());
    let mut liouville = Vec::new();
    for dt in [2e-3, 1e-3] {
        let m =
            flow_measure(&damped, &ne, &profile, 1.0, &FlowMeasureOptions { horizon: 3.0, dt, ..Default::default() })?;
        liouville.push(liouville_residual(&m, &damped, &checks, 1e-3).max_relative);
    }
    let (coarse, fine) = (liouville[0], liouville[1]);
    let liouville_ok = fine <= 1e-3 && (fine <= coarse || fine <= 1e-6);

    let ne64 = sample_negamma(&damped, &origin, 1.0, 64)?;
    let m = flow_measure(
        &damped,
        &ne64,
        &profile,
        1.0,
        &FlowMeasureOptions { horizon: 3.0, dt: 1e-3, ..Default::default() },
    )?;
    let prop = propagation_check(&m, &damped, 1.0, 0.0, &checks, &FlowOptions::with_tolerance(1e-11))?.max_relative;

    let shifted = PotentialModel::new(
        2,
        Family::GaussianBumps,
        Field::new(vec![Term::gaussian(0.36, vec![0.0, 0.0], 1.0)]),
        Field::zero(),
        1.0,
    )?;
    let totals = [
        sample_negamma(&free, &origin, 1.0, 256)?.total_weight - 2.0 * PI,
        sample_negamma(&free, &Gamma::Circle { center: [0.0, 0.0], radius: 1.0, nodes: 256 }, 1.0, 0)?.total_weight
            - 4.0 * PI,
        sample_negamma(&shifted, &origin, 1.0, 256)?.total_weight - 1.6 * PI,
    ];
    let totals_ok = totals.iter().all(|d| d.abs() <= 1e-6);

    outcome(
        agree && liouville_ok && prop <= 1e-3 && totals_ok,
        format!(
            "battery max gap {} over h = 0.2, 0.1, 0.05; Liouville defect {coarse:.1e} → {fine:.1e}; propagation defect {prop:.1e}; N_EΓ totals off by ≤ {:.1e}",
            gaps.iter().map(|g| format!("{:.2}%", 100.0 * g)).collect::<Vec<_>>().join(" → "),
            totals.iter().map(|d| d.abs()).fold(0.0, f64::max)
        ),
    )
}

fn egorov() -> Result<Outcome> {
    let model = PotentialModel::double_bump(0.5, 1.5);
    let w = Field::new(vec![Term::gaussian(1.0, vec![0.5], 1.0)]);
    let w_tilde = Field::new(vec![Term::gaussian(0.5, vec![-0.5], 1.0)]);
    let a =
        TestSymbol::product(|x: &[f64]| (-x[0] * x[0] / 2.0).exp(), |xi: &[f64]| (-(xi[0] - 1.0).powi(2) / 2.0).exp());
    let states = [(-1.0, 1.0), (0.0, -1.0), (0.5, 0.5)];
    let rep =
        egorov_leading_check(&model, &w, &w_tilde, &a, 1.0, &[0.1, 0.05, 0.025], &states, &EgorovOptions::default())?;
    outcome(
        rep.ratios.iter().all(|r| (1.6..=2.4).contains(r)),
        format!(
            "deviations {} with halving ratios {}",
            rep.records.iter().map(|r| format!("{:.2e}", r.deviation)).collect::<Vec<_>>().join(", "),
            rep.ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("flow correctness", flow_correctness),
        ("damping machinery", damping_machinery),
        ("escape function", escape_function),
        ("resolvent scaling", resolvent_scaling),
        ("eigenvalue-free strip", eigenvalue_free_strip),
        ("trapped lower bound", trapped_lower_bound_check),
        ("incoming-region decay", incoming_decay),
        ("limiting absorption", limiting_absorption),
        ("measure agreement", measure_agreement),
        ("leading-order Egorov", egorov),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {name:<22} {} [{:.0?}] {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
