//! One function per scenario command.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scl_core::damping::{average_damping_constants, build_escape_function, check_damping_assumption, EscapeQuadrature};
use scl_core::flow::{
    classify_trajectory, escape_radius, integrate_flow, sample_trapped_set, EnergyInterval, FlowOptions, PhasePoint,
    RegionSpec, TrappedSampling,
};
use scl_core::helmholtz::{
    build_source, default_eps_ladder, radiation_residual, solve_outgoing, sphere_identity_check,
};
use scl_core::measure::{
    compare_battery, flow_measure, line_battery, liouville_residual, planar_battery, reintersection_fraction,
    sample_negamma, FlowMeasureOptions,
};
use scl_core::operator::{
    build_hamiltonian, required_points, BuildOptions, DiscretizedOperator, GridDomain, QuantizeOptions, TestSymbol,
    Variant,
};
use scl_core::potentials::PotentialModel;
use scl_core::resolvent::{
    eigenvalue_free_scan, h_scaling_fit, incoming_region_norm, local_exponents, resolvent_scan, EigScanOptions,
    IncomingGeometry, PhaseBox, RegionTag, Verdict,
};
use scl_core::{Error, Result, C64};

use crate::bundle::{Bundle, Cell, CommandResult, Status, Table};
use crate::scenario::{plateau, Command, Scenario};

pub struct Context<'a> {
    pub scenario: &'a Scenario,
    pub model: PotentialModel,
    pub seed: u64,
}

impl Context<'_> {
    fn energy(&self) -> f64 {
        self.scenario.energy.e0
    }

    fn window(&self) -> EnergyInterval {
        EnergyInterval::around(self.energy())
    }

    fn flow_options(&self) -> FlowOptions {
        let t = &self.scenario.tolerances;
        FlowOptions { energy_tol: t.energy_tol, ..FlowOptions::with_tolerance(t.flow_rtol) }
    }

    fn escape_radius(&self) -> Result<f64> {
        match self.scenario.regions.r {
            Some(r) => Ok(r),
            None => escape_radius(&self.model, self.window()),
        }
    }

    /// `E₀ + h E₁ + i ε₀ h`.
    fn z(&self, h: f64) -> C64 {
        let s = self.scenario;
        C64::new(s.energy.e0 + h * s.energy.e1[0], h * (s.energy.e1[1] + s.regions.eps0))
    }

    fn grid(&self, h: f64) -> Result<GridDomain> {
        let g = &self.scenario.grid;
        let n = g.points_per_axis.unwrap_or_else(|| required_points(g.half_width, h, g.xi_max));
        Ok(GridDomain::new(self.scenario.dim(), g.half_width, n, g.cap_width, g.cap_strength)?
            .with_cap_profile(g.cap_profile))
    }

    fn operator(&self, grid: &GridDomain, h: f64) -> Result<DiscretizedOperator> {
        let g = &self.scenario.grid;
        let opts = BuildOptions { order: g.order, xi_max: g.xi_max, delta: self.scenario.regions.delta };
        build_hamiltonian(&self.model, None, grid, h, Variant::H, &opts)
    }
}

fn coords(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("{prefix}{k}")).collect()
}

fn header(fixed_front: &[&str], dim: usize, fixed_back: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = fixed_front.iter().map(|s| s.to_string()).collect();
    h.extend(coords("x", dim));
    h.extend(coords("xi", dim));
    h.extend(fixed_back.iter().map(|s| s.to_string()));
    h
}

fn table(name: &str, columns: Vec<String>) -> Table {
    Table { name: name.into(), columns, rows: Vec::new() }
}

fn point_cells(w: &PhasePoint) -> Vec<Cell> {
    w.x.iter().chain(&w.xi).map(|v| Cell::from(*v)).collect()
}

fn flow(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let dim = s.dim();
    let mut starts: Vec<PhasePoint> =
        s.flow.starts.iter().map(|p| PhasePoint::new(p.x.clone(), p.xi.clone())).collect();
    if starts.is_empty() {
        let origin = vec![0.0; dim];
        let k2 = ctx.energy() - ctx.model.v1(&origin);
        if k2 <= 0.0 {
            return Err(Error::Precondition("the origin is classically forbidden; give explicit flow.starts".into()));
        }
        let mut xi = vec![0.0; dim];
        xi[0] = k2.sqrt();
        starts.push(PhasePoint::new(origin, xi));
    }
    let opts = ctx.flow_options();
    let rc = ctx.escape_radius()?;
    let mut res = CommandResult::new(Command::Flow);
    let mut traj_table = table("trajectory", header(&["start", "t"], dim, &["damping"]));
    let mut class_table = table("classification", header(&["start"], dim, &["energy", "forward", "backward", "drift"]));
    let mut worst_drift = 0.0f64;
    for (k, w) in starts.iter().enumerate() {
        let tr = integrate_flow(&ctx.model, w, (0.0, s.flow.horizon), &opts.clone().sampled(s.flow.sample_dt))?;
        worst_drift = worst_drift.max(tr.energy_drift);
        for ((t, p), d) in tr.times.iter().zip(&tr.points).zip(&tr.damping_partials) {
            let mut row = vec![Cell::from(k), Cell::from(*t)];
            row.extend(point_cells(p));
            row.push(Cell::from(*d));
            traj_table.push(row);
        }
        let e = w.energy(&ctx.model);
        let (fwd, bwd) = if ctx.window().contains(e) {
            let c = classify_trajectory(&ctx.model, w, s.flow.horizon, ctx.window(), rc, &opts)?.classifications();
            (format!("{:?}", c[0]), format!("{:?}", c[1]))
        } else {
            ("outside-window".to_string(), "outside-window".to_string())
        };
        let mut row = vec![Cell::from(k)];
        row.extend(point_cells(w));
        row.extend([Cell::from(e), Cell::from(fwd), Cell::from(bwd), Cell::from(tr.energy_drift)]);
        class_table.push(row);
    }
    res.note("escape_radius", rc);
    res.note("max_energy_drift", worst_drift);
    res.check("drift_within_tolerance", worst_drift <= s.tolerances.energy_tol);
    res.tables = vec![traj_table, class_table];
    Ok(res)
}

fn damping(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let d = &s.damping;
    let opts = ctx.flow_options();
    let rc = ctx.escape_radius()?;
    let sampling = TrappedSampling {
        energies: vec![ctx.energy()],
        half_width: rc,
        points_per_axis: d.points_per_axis,
        directions: d.directions,
        horizon: d.classify_horizon,
    };
    let samples = sample_trapped_set(&ctx.model, ctx.window(), rc, &sampling, &opts)?;
    let mut res = CommandResult::new(Command::Damping);
    res.note("escape_radius", rc);
    res.note("trapped_samples", samples.len());
    let mut records = table("assumption", header(&["sample"], s.dim(), &["t_found", "integral"]));
    if samples.is_empty() {
        res.check("assumption_holds", true);
        res.tables.push(records);
        return Ok(res);
    }
    let report =
        check_damping_assumption(&ctx.model, ctx.energy(), &samples, d.t_max, 0.0, s.tolerances.shell_tol, &opts)?;
    for (k, r) in report.records.iter().enumerate() {
        let mut row = vec![Cell::from(k)];
        row.extend(point_cells(&r.w));
        row.push(r.t_found.map_or(Cell::from("none"), Cell::from));
        row.push(Cell::from(r.integral));
        records.push(row);
    }
    res.check("assumption_holds", report.holds);
    let fit = average_damping_constants(&ctx.model, ctx.window(), &samples, d.horizon, &opts)?;
    res.note("c0", fit.c0);
    res.note("big_c", fit.big_c);
    res.note("mean_rate", fit.mean_rate);
    if let Some(flag) = fit.flag {
        res.note("fit_flag", flag);
    }
    res.tables.push(records);
    Ok(res)
}

fn escape(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let rc = ctx.escape_radius()?;
    let f = build_escape_function(
        &ctx.model,
        ctx.energy(),
        s.regions.delta,
        s.regions.escape_sigma,
        rc,
        EscapeQuadrature::default(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let dim = s.dim();
    let reach = rc + 4.0;
    let mut samples = Vec::with_capacity(s.damping.escape_samples);
    while samples.len() < s.damping.escape_samples {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-reach..reach)).collect();
        let e = ctx.energy() * rng.random_range(0.55..1.9);
        let k2 = e - ctx.model.v1(&x);
        if k2 <= 0.0 {
            continue;
        }
        let xi = if dim == 1 {
            vec![if rng.random::<bool>() { k2.sqrt() } else { -k2.sqrt() }]
        } else {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            vec![k2.sqrt() * a.cos(), k2.sqrt() * a.sin()]
        };
        samples.push(PhasePoint::new(x, xi));
    }
    let rows: Vec<Result<(f64, f64, f64, bool)>> = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|w| {
                let v = f.eval(w)?;
                let b = f.poisson_bracket(w, s.tolerances.fd_step)?;
                Ok((v.total(), b, f.target(w), v.truncated))
            })
            .collect()
    };
    let mut t = table("samples", header(&["sample"], dim, &["f", "bracket", "target", "residual", "truncated"]));
    let mut worst = 0.0f64;
    let mut truncated = 0;
    for (k, (w, r)) in samples.iter().zip(rows).enumerate() {
        let (v, b, g, tr) = r?;
        worst = worst.max((b - g).abs());
        truncated += usize::from(tr);
        let mut row = vec![Cell::from(k)];
        row.extend(point_cells(w));
        row.extend([Cell::from(v), Cell::from(b), Cell::from(g), Cell::from((b - g).abs()), Cell::from(tr)]);
        t.push(row);
    }
    let mut res = CommandResult::new(Command::Escape);
    res.note("escape_radius", rc);
    res.note("max_residual", worst);
    res.note("truncated_samples", truncated);
    res.check("relation_holds", worst <= s.tolerances.escape_residual);
    res.tables.push(t);
    Ok(res)
}

fn resolvent(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let build = |h: f64| ctx.operator(&ctx.grid(h)?, h);
    let z_rule = |h: f64| ctx.z(h);
    let scan = resolvent_scan(&s.h_ladder, &build, &z_rule, s.regions.delta, RegionTag::UpperHalfPlane)?;
    let mut t = Table::new("scan", &["h", "re_z", "im_z", "norm", "residual", "converged"]);
    let mut plot = Table::new("loglog", &["log_h", "log_norm"]);
    for r in &scan.records {
        t.push(vec![r.h.into(), r.z_re.into(), r.z_im.into(), r.norm.into(), r.residual.into(), r.converged.into()]);
        plot.push(vec![r.h.ln().into(), r.norm.ln().into()]);
    }
    let mut res = CommandResult::new(Command::ResolventScan);
    if scan.records.len() >= 4 {
        let fit = h_scaling_fit(&scan)?;
        res.note("slope", fit.slope);
        res.note("intercept", fit.intercept);
        res.note("fit_residual", fit.residual);
    }
    res.check("all_converged", scan.records.iter().all(|r| r.converged));
    res.tables = vec![t, plot];
    Ok(res)
}

fn eig_free(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let mut t = Table::new("strip", &["h", "verdict", "offenders", "eigenvalues", "shifts", "uncovered_shifts"]);
    let mut eigs = Table::new("eigenvalues", &["h", "re", "im", "im_over_h", "interior_mass", "residual", "offender"]);
    let mut clear = true;
    for &h in &s.h_ladder {
        let op = ctx.operator(&ctx.grid(h)?, h)?;
        let scan = eigenvalue_free_scan(&op, s.interval(), s.regions.beta, &EigScanOptions::default())?;
        clear &= scan.verdict != Verdict::Fail;
        let verdict = format!("{:?}", scan.verdict).to_lowercase();
        t.push(vec![
            h.into(),
            verdict.into(),
            scan.offenders.len().into(),
            scan.eigenvalues.len().into(),
            scan.shifts.into(),
            scan.uncovered_shifts.into(),
        ]);
        for e in &scan.eigenvalues {
            let offender = scan.offenders.iter().any(|o| o.re == e.re && o.im == e.im);
            eigs.push(vec![
                h.into(),
                e.re.into(),
                e.im.into(),
                (e.im / h).into(),
                e.interior_mass.into(),
                e.residual.into(),
                offender.into(),
            ]);
        }
    }
    let mut res = CommandResult::new(Command::EigFree);
    res.check("strip_clear", clear);
    res.tables = vec![t, eigs];
    Ok(res)
}

fn unit(x: &[f64]) -> Vec<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| v / r).collect()
    }
}

fn incoming(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let c = &s.incoming;
    let (mp, mm, op_, om) = (
        plateau(&c.minus_position),
        plateau(&c.minus_momentum),
        plateau(&c.omega_position),
        plateau(&c.omega_momentum),
    );
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let omega_minus = TestSymbol::general(
        move |x: &[f64], xi: &[f64]| {
            let radial: f64 = unit(x).iter().zip(xi).map(|(a, b)| a * b).sum();
            C64::new(mp.eval(norm(x)) * mm.eval(radial), 0.0)
        },
        true,
    );
    let omega =
        TestSymbol::general(move |x: &[f64], xi: &[f64]| C64::new(op_.eval(norm(x)) * om.eval(norm(xi)), 0.0), true);
    let region_r = s.regions.r.unwrap_or(c.minus_position[0]);
    let dim = s.dim();
    let geometry = IncomingGeometry {
        minus_region: RegionSpec::incoming(region_r, s.regions.d, -s.regions.sigma),
        omega_region: RegionSpec::incoming(c.omega_radius, 0.0, -s.regions.sigma),
        sample: PhaseBox::cube(dim, s.grid.half_width, 3.0 * s.grid.xi_max, if dim == 1 { 161 } else { 17 }),
    };
    let mut t = Table::new("norms", &["h", "re_z", "im_z", "norm", "residual", "iterations"]);
    let mut points = Vec::new();
    for &h in &s.h_ladder {
        let op = ctx.operator(&ctx.grid(h)?, h)?;
        let z = ctx.z(h);
        let r = incoming_region_norm(
            &op,
            z,
            &omega_minus,
            &omega,
            s.regions.beta,
            Some(&geometry),
            &QuantizeOptions::default(),
        )?;
        points.push((h, r.norm));
        t.push(vec![h.into(), z.re.into(), z.im.into(), r.norm.into(), r.residual.into(), r.iterations.into()]);
    }
    let exps = local_exponents(&points);
    let mut e = Table::new("exponents", &["h_coarse", "h_fine", "exponent"]);
    for (k, x) in exps.iter().enumerate() {
        e.push(vec![points[k].0.into(), points[k + 1].0.into(), (*x).into()]);
    }
    let mut res = CommandResult::new(Command::Incoming);
    if exps.len() >= 2 {
        res.check("exponents_increasing", exps.windows(2).all(|w| w[1] > w[0]));
    }
    res.tables = vec![t, e];
    Ok(res)
}

fn helmholtz(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let src = s.source.as_ref().ok_or_else(|| Error::Precondition("helmholtz needs a [source] table".into()))?;
    let mut solves = Table::new(
        "solves",
        &["h", "eps_min", "min_decay", "cauchy_ok", "extrapolation_gap", "radiation_ratio", "max_solver_residual"],
    );
    let mut sphere = Table::new("sphere", &["h", "r", "lhs", "rhs", "defect"]);
    let mut res = CommandResult::new(Command::Helmholtz);
    let mut ok = true;
    let mut worst_rad = 0.0f64;
    let r_min = ctx.escape_radius()?;
    for &h in &s.h_ladder {
        let grid = ctx.grid(h)?;
        let op = ctx.operator(&grid, h)?;
        let f = build_source(&src.spec(), &grid, h)?;
        let sol = solve_outgoing(&op, &f, ctx.energy(), &default_eps_ladder(h), s.regions.delta)?;
        let decay = sol.decay_ratios().into_iter().fold(f64::INFINITY, f64::min);
        let rad = radiation_residual(&sol.u, sol.radiation_k(), &grid, s.regions.delta, r_min)?;
        worst_rad = worst_rad.max(rad.ratio);
        ok &= sol.cauchy_ok;
        let eps_min = *sol.eps.last().expect("nonempty ladder");
        solves.push(vec![
            h.into(),
            eps_min.into(),
            decay.into(),
            sol.cauchy_ok.into(),
            sol.extrapolation_gap.into(),
            rad.ratio.into(),
            sol.solver_residuals.iter().copied().fold(0.0, f64::max).into(),
        ]);
        let limit = grid.interior_limit();
        let radii: Vec<f64> = (1..=8).map(|k| limit * k as f64 / 9.0).collect();
        let id = sphere_identity_check(&op, &sol.u, &f, C64::new(ctx.energy(), eps_min), &radii)?;
        for r in &id.records {
            sphere.push(vec![h.into(), r.r.into(), r.lhs.into(), r.rhs.into(), r.defect.into()]);
        }
    }
    res.note("radiation_r_min", r_min);
    res.note("max_radiation_ratio", worst_rad);
    res.check("cauchy_gaps_decrease", ok);
    res.check("radiation_within_tolerance", worst_rad <= s.tolerances.radiation_ratio);
    res.tables = vec![solves, sphere];
    Ok(res)
}

fn measure_compare(ctx: &Context) -> Result<CommandResult> {
    let s = ctx.scenario;
    let src = s.source.as_ref().ok_or_else(|| Error::Precondition("measure-compare needs a [source] table".into()))?;
    let m = &s.measure;
    let ne = sample_negamma(&ctx.model, &src.gamma, ctx.energy(), m.resolution)?;
    let opts = FlowMeasureOptions {
        horizon: m.horizon,
        dt: m.dt,
        convention: m.convention,
        damping_shift: s.energy.e1[1],
        flow: ctx.flow_options(),
        ..Default::default()
    };
    let fm = flow_measure(&ctx.model, &ne, &src.profile, src.amplitude, &opts)?;
    let battery = if s.dim() == 1 {
        line_battery(m.r_min, m.r_max, ctx.energy())
    } else {
        planar_battery(m.r_min, m.r_max, ctx.energy())
    };
    let liouville = liouville_residual(&fm, &ctx.model, &battery, 1e-3);
    let qopts = QuantizeOptions { stencil_tol: 1e-10, ..Default::default() };
    let mut t = Table::new("comparison", &["symbol", "h", "flow", "empirical", "empirical_im", "gap"]);
    let mut last_gap = f64::NAN;
    for &h in &s.h_ladder {
        let grid = ctx.grid(h)?;
        let op = ctx.operator(&grid, h)?;
        let f = build_source(&src.spec(), &grid, h)?;
        let sol = solve_outgoing(&op, &f, ctx.energy(), &default_eps_ladder(h), s.regions.delta)?;
        let rows = compare_battery(&fm, &battery, &sol.u, &grid, h, src.gamma.dimension(), &qopts)?;
        last_gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
        for r in rows {
            t.push(vec![
                r.symbol.into(),
                r.h.into(),
                r.flow.into(),
                r.empirical.into(),
                r.empirical_im.into(),
                r.gap.into(),
            ]);
        }
    }
    let mut res = CommandResult::new(Command::MeasureCompare);
    res.note("negamma_total_weight", ne.total_weight);
    res.note("liouville_relative_defect", liouville.max_relative);
    res.note("escaped", fm.escaped);
    res.note("reintersection_fraction", reintersection_fraction(&fm, &src.gamma, 0.5 * m.r_min));
    res.note("fourier_convention", format!("{:?}", m.convention).to_lowercase());
    res.note("max_gap_smallest_h", last_gap);
    res.check("gap_within_tolerance", last_gap <= s.tolerances.measure_gap);
    res.tables.push(t);
    Ok(res)
}

fn report(previous: &[CommandResult]) -> CommandResult {
    let mut t = Table::new("status", &["command", "status", "error"]);
    for r in previous {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Error => "error",
        };
        t.push(vec![r.command.name().into(), status.into(), r.error.clone().unwrap_or_default().into()]);
    }
    let mut res = CommandResult::new(Command::Report);
    res.note("commands", previous.len());
    res.check("all_passed", previous.iter().all(|r| r.status == Status::Pass));
    res.tables.push(t);
    res
}

fn run_one(ctx: &Context, command: Command, previous: &[CommandResult]) -> CommandResult {
    let outcome = catch_unwind(AssertUnwindSafe(|| match command {
        Command::Flow => flow(ctx),
        Command::Damping => damping(ctx),
        Command::Escape => escape(ctx),
        Command::ResolventScan => resolvent(ctx),
        Command::EigFree => eig_free(ctx),
        Command::Incoming => incoming(ctx),
        Command::Helmholtz => helmholtz(ctx),
        Command::MeasureCompare => measure_compare(ctx),
        Command::Report => Ok(report(previous)),
    }));
    match outcome {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => CommandResult::failed(command, e.to_string()),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            CommandResult::failed(command, format!("internal error: {msg}"))
        }
    }
}

/// Runs `commands` in dependency order; a failing command does not stop the others.
pub fn run_scenario(scenario: &Scenario, commands: &[Command], seed: u64) -> Bundle {
    let mut ordered: Vec<Command> = commands.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut bundle = Bundle::new(&scenario.name, seed);
    let model = match scenario.model() {
        Ok(m) => m,
        Err(e) => {
            bundle.results = ordered.iter().map(|c| CommandResult::failed(*c, e.to_string())).collect();
            return bundle;
        }
    };
    let ctx = Context { scenario, model, seed };
    for c in ordered {
        let r = run_one(&ctx, c, &bundle.results);
        bundle.results.push(r);
    }
    bundle
}
