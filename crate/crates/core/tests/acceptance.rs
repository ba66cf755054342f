//! Acceptance gate: one test per acceptance criterion, each printing a single
//! `PASS`/`FAIL` line (visible with `--nocapture`) before asserting.
//!
//! The criteria exercise the full stack end to end: exact-solution recovery,
//! derivative consistency, conservation under refinement, the two far-field
//! decay regimes with their optimality certificate, the subsonic sweep with
//! its critical-flux bracket, the slab-average and weighted-slab estimates,
//! and the cross-section Poincare constant.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nozzle_core::assembly::{element_gradient, DiscreteSystem};
use nozzle_core::diagnostics::{
    decay_report, far_state, fit_algebraic_rate, flux_at, optimality_lower_bound,
    poincare_constant, slab_deviation, weighted_slab_check, FitKind,
};
use nozzle_core::gas::{DensityLaw, GasModel, TruncatedDensity};
use nozzle_core::geometry::{NozzleGeometry, NozzleProfile, ObstacleProfile};
use nozzle_core::mesh::{build_mesh, Grading, Mesh, GAUSS_1D};
use nozzle_core::solver::{continuation_sweep, solve, SolveReport, SolverConfig};

const GAMMA: f64 = 1.4;
const EPSILON: f64 = 0.1;
const PI: f64 = std::f64::consts::PI;

fn law() -> DensityLaw {
    DensityLaw::new(GasModel::new(GAMMA).unwrap())
}

fn trunc() -> TruncatedDensity {
    TruncatedDensity::build(law(), EPSILON).unwrap()
}

/// Solver settings shared by the acceptance runs: a generous CG budget (the
/// long domains are badly conditioned under Jacobi preconditioning) and a
/// tight forcing term so Newton keeps its quadratic tail.
fn config(newton_tol: f64) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    cfg.newton_tol = newton_tol;
    cfg.cg_tol = 1e-10;
    cfg.cg_cap_factor = 400.0;
    cfg.max_newton = 80;
    cfg
}

fn straight_geom(obstacle: Option<(f64, f64, f64)>) -> NozzleGeometry {
    let wall = NozzleProfile::straight(1.0).unwrap();
    let obstacle =
        obstacle.map(|(l1, l2, b)| ObstacleProfile::new(l1, l2, b).unwrap());
    NozzleGeometry::new(wall, obstacle).unwrap()
}

fn solve_on(mesh: &Mesh, m0: f64, newton_tol: f64) -> SolveReport {
    let sys = DiscreteSystem::new(mesh, trunc(), m0).unwrap();
    solve(&sys, &config(newton_tol), None).unwrap()
}

/// Largest gradient deviation from the uniform axial state over every
/// quadrature point of the mesh.
fn max_gradient_deviation(mesh: &Mesh, phi: &[f64], q_bar: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for elem in 0..mesh.n_elems() {
        for &gx in &GAUSS_1D {
            for &gy in &GAUSS_1D {
                for &gz in &GAUSS_1D {
                    let g = element_gradient(mesh, elem, [gx, gy, gz], phi);
                    let dev = (g[0] * g[0]
                        + g[1] * g[1]
                        + (g[2] - q_bar) * (g[2] - q_bar))
                        .sqrt();
                    worst = worst.max(dev);
                }
            }
        }
    }
    worst
}

fn check(criterion: usize, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("{status} criterion {criterion}: {detail}");
    assert!(ok, "criterion {criterion}: {detail}");
}

#[test]
fn criterion_01_exact_linear_recovery() {
    let start = Instant::now();
    let q_bar = 0.3;
    let m0 = PI * law().momentum(q_bar).unwrap();
    let geom = straight_geom(None);
    let mesh = build_mesh(&geom, 8.0, 8, 16, 32, Grading::default()).unwrap();
    let report = solve_on(&mesh, m0, 1e-10);

    let grad_dev = max_gradient_deviation(&mesh, &report.phi, q_bar);
    let tr = trunc();
    let mut flux_err: f64 = 0.0;
    for &z in &mesh.z_planes {
        let f = flux_at(&mesh, &tr, &report.phi, z).unwrap();
        flux_err = flux_err.max((f - m0).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        1,
        grad_dev <= 1e-9 && flux_err <= 1e-10 && elapsed <= 10.0,
        &format!(
            "straight cylinder recovers the linear field \
             (max grad dev {grad_dev:.2e} <= 1e-9, max station flux err \
             {flux_err:.2e} <= 1e-10, {elapsed:.1} s <= 10 s)"
        ),
    );
}

#[test]
fn criterion_02_gradient_hessian_consistency() {
    let start = Instant::now();
    let geom = straight_geom(Some((-1.0, 1.0, 0.4)));
    let mesh = build_mesh(&geom, 8.0, 6, 12, 24, Grading::default()).unwrap();
    let sys = DiscreteSystem::new(&mesh, trunc(), 0.4 * PI).unwrap();
    let n = sys.n_dof();

    // A subsonic but non-trivial state: uniform axial flow plus a small
    // nodal perturbation, with the inflow data kept exact.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut phi: Vec<f64> = mesh
        .nodes
        .iter()
        .map(|p| 0.3 * (p[2] + mesh.half_length))
        .collect();
    for (a, v) in phi.iter_mut().enumerate() {
        if sys.dirichlet[a] {
            *v = 0.0;
        } else {
            *v += 0.01 * rng.gen_range(-1.0..1.0);
        }
    }

    let residual = sys.residual(&phi).unwrap();
    let hess = sys.hessian(&phi).unwrap();
    let h = 1e-6;
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for _ in 0..20 {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (a, x) in v.iter_mut().enumerate() {
            if sys.dirichlet[a] {
                *x = 0.0;
            }
        }
        let plus: Vec<f64> = phi.iter().zip(&v).map(|(p, d)| p + h * d).collect();
        let minus: Vec<f64> = phi.iter().zip(&v).map(|(p, d)| p - h * d).collect();

        let fd_grad = (sys.energy(&plus).unwrap() - sys.energy(&minus).unwrap())
            / (2.0 * h);
        let exact_grad: f64 = residual.iter().zip(&v).map(|(r, d)| r * d).sum();
        worst_grad = worst_grad
            .max((fd_grad - exact_grad).abs() / exact_grad.abs().max(1.0));

        let r_plus = sys.residual(&plus).unwrap();
        let r_minus = sys.residual(&minus).unwrap();
        let mut hv = vec![0.0; n];
        hess.matvec(&v, &mut hv);
        let scale = hv.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-30);
        for a in 0..n {
            if sys.dirichlet[a] {
                continue;
            }
            let fd = (r_plus[a] - r_minus[a]) / (2.0 * h);
            worst_hess = worst_hess.max((fd - hv[a]).abs() / scale);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        2,
        worst_grad <= 1e-6 && worst_hess <= 1e-5 && elapsed <= 30.0,
        &format!(
            "20 random directions match finite differences \
             (gradient rel err {worst_grad:.2e} <= 1e-6, Hessian rel err \
             {worst_hess:.2e} <= 1e-5, {elapsed:.1} s <= 30 s)"
        ),
    );
}

#[test]
fn criterion_03_flux_conservation_under_refinement() {
    let geom = straight_geom(Some((-1.0, 1.0, 0.4)));
    let m0 = 0.4 * PI;
    let tr = trunc();
    // Stations sit in the straight part of the nozzle: inside the obstacle
    // span the strongly slanted elements evaluate the pointwise section flux
    // at first order only, which is a property of the diagnostic rather than
    // of the conservation of the scheme.
    let stations = [-4.0, -3.0, -2.0, 2.0, 3.0, 4.0, 6.0];
    let mut errs = Vec::new();
    for (n_r, n_theta, n_z) in [(4, 8, 16), (8, 16, 32), (16, 32, 64)] {
        let mesh = build_mesh(&geom, 8.0, n_r, n_theta, n_z, Grading::default())
            .unwrap();
        let report = solve_on(&mesh, m0, 1e-11);
        let mut worst: f64 = 0.0;
        for &t in &stations {
            let f = flux_at(&mesh, &tr, &report.phi, t).unwrap();
            worst = worst.max((f - m0).abs());
        }
        errs.push(worst);
    }
    let order_a = (errs[0] / errs[1]).log2();
    let order_b = (errs[1] / errs[2]).log2();
    check(
        3,
        order_a >= 1.8 && order_b >= 1.8,
        &format!(
            "max station flux error {:.2e} -> {:.2e} -> {:.2e} under h-halving \
             (orders {order_a:.2}, {order_b:.2} >= 1.8)",
            errs[0], errs[1], errs[2]
        ),
    );
}

/// Shared setup for the exponential-decay study: straight wall, a wide smooth
/// obstacle ending at `x3 = 4` so the measured stations `T = 4..10` carry
/// signal well above the solver noise floor.
fn exponential_decay_rate(n_r: usize, n_theta: usize, n_z: usize) -> (f64, f64) {
    let geom = straight_geom(Some((-4.0, 4.0, 0.4)));
    let m0 = 0.5 * PI;
    let mesh = build_mesh(&geom, 24.0, n_r, n_theta, n_z, Grading::default())
        .unwrap();
    let report = solve_on(&mesh, m0, 1e-12);
    let far = far_state(&law(), 1.0, m0).unwrap();
    let lambda_p = poincare_constant(&mesh, mesh.half_length).unwrap();
    let stations: Vec<f64> = (4..=10).map(|t| t as f64).collect();
    let decay = decay_report(
        &mesh,
        &report.phi,
        &far,
        &trunc(),
        &stations,
        FitKind::Exponential,
        1e-26,
        lambda_p,
    )
    .unwrap();
    let fit = decay.fitted_rate.expect("stations above the noise floor");
    (fit.rate, fit.r_squared)
}

#[test]
fn criterion_04_exponential_far_field_decay() {
    let start = Instant::now();
    let (rate_coarse, r2_coarse) = exponential_decay_rate(8, 8, 192);
    let (rate_fine, r2_fine) = exponential_decay_rate(12, 12, 288);
    let drift = (rate_fine - rate_coarse).abs() / rate_coarse;
    let elapsed = start.elapsed().as_secs_f64();
    check(
        4,
        rate_coarse > 0.0
            && r2_coarse >= 0.98
            && r2_fine >= 0.98
            && drift <= 0.2
            && elapsed <= 600.0,
        &format!(
            "slab energy decays exponentially (rate {rate_coarse:.3} -> \
             {rate_fine:.3} under refinement, drift {:.1}% <= 20%, R^2 \
             {r2_coarse:.4}/{r2_fine:.4} >= 0.98, {elapsed:.0} s <= 600 s)",
            100.0 * drift
        ),
    );
}

/// Solve the algebraically converging nozzle and fit the decay exponent on
/// per-unit-length slab energies. Returns the fit together with the data
/// needed by the optimality criterion.
struct AlgebraicRun {
    mesh: Mesh,
    phi: Vec<f64>,
    stations: Vec<f64>,
    l_fit: f64,
    m0: f64,
}

fn algebraic_run(l: f64) -> AlgebraicRun {
    let wall = NozzleProfile::algebraic(1.0, 0.2, l, 4.0).unwrap();
    let geom = NozzleGeometry::new(wall, None).unwrap();
    let mesh = build_mesh(
        &geom,
        48.0,
        4,
        8,
        96,
        Grading {
            ratio: 1.04,
            center: 0.0,
        },
    )
    .unwrap();
    let m0 = 0.5 * PI;
    let report = solve_on(&mesh, m0, 1e-11);
    let far = far_state(&law(), 1.0, m0).unwrap();

    // The graded lattice has no unit slabs, so snap each target station to
    // the nearest plane and normalise the slab energy by the actual width.
    let mut points = Vec::new();
    let mut stations = Vec::new();
    for target in [6.0, 8.0, 10.0, 13.0, 16.0, 20.0, 25.0, 30.0] {
        let ka = mesh.nearest_plane(target);
        let za = mesh.z_planes[ka];
        let kb = mesh.nearest_plane(za + 1.0).max(ka + 1);
        let zb = mesh.z_planes[kb];
        let (energy, _) =
            slab_deviation(&mesh, &report.phi, far.q_bar, za, zb).unwrap();
        points.push((za, energy / (zb - za)));
        stations.push(za);
    }
    let fit = fit_algebraic_rate(&points, 1e-24).unwrap();
    AlgebraicRun {
        mesh,
        phi: report.phi,
        stations,
        l_fit: fit.rate,
        m0,
    }
}

#[test]
fn criterion_05_algebraic_decay_exponents() {
    let start = Instant::now();
    let run1 = algebraic_run(1.0);
    let mid = start.elapsed().as_secs_f64();
    let run2 = algebraic_run(2.0);
    let elapsed = start.elapsed().as_secs_f64() - mid;
    let ok = (run1.l_fit - 1.0).abs() <= 0.3
        && (run2.l_fit - 2.0).abs() <= 0.6
        && run2.l_fit > run1.l_fit
        && mid.max(elapsed) <= 1200.0;
    check(
        5,
        ok,
        &format!(
            "fitted exponents l_fit(1) = {:.3} (within 30%), l_fit(2) = {:.3} \
             (within 30%), strictly ordered, {:.0}/{:.0} s <= 1200 s per case",
            run1.l_fit, run2.l_fit, mid, elapsed
        ),
    );
}

#[test]
fn criterion_06_optimality_of_the_algebraic_rate() {
    let run = algebraic_run(1.0);
    let far = far_state(&law(), 1.0, run.m0).unwrap();
    // The station flux itself is only first-order accurate where the wall
    // still varies, so the consistency guard is set above that level; the
    // certified deficit is 30-100x larger than the slack at every station.
    let report = optimality_lower_bound(
        &run.mesh,
        &trunc(),
        &run.phi,
        &far,
        &run.stations,
        1e-2,
    )
    .unwrap();
    let p = report.exponent.rate;
    let bounds_hold = report
        .stations
        .iter()
        .all(|s| s.lower_bound <= s.sup_dev);
    check(
        6,
        (p - 1.0).abs() <= 0.3 && bounds_hold,
        &format!(
            "sup-deviation exponent p = {p:.3} within [0.7, 1.3]; certified \
             lower bound below the measured sup at all {} stations: \
             {bounds_hold}",
            report.stations.len()
        ),
    );
}

#[test]
fn criterion_07_subsonic_bound_and_truncation_independence() {
    let geom = straight_geom(Some((-1.0, 1.0, 0.2)));
    let mesh = build_mesh(&geom, 8.0, 6, 12, 24, Grading::default()).unwrap();
    let cfg = config(1e-10);
    let fluxes: Vec<f64> = (1..=8).map(|k| 0.1 * k as f64 * PI).collect();
    let sweep = continuation_sweep(&mesh, trunc(), &fluxes, &cfg, 0.02).unwrap();

    let mut speeds = Vec::new();
    for point in &sweep.points {
        let report = point
            .report
            .as_ref()
            .unwrap_or_else(|| panic!("flux {} failed: {:?}", point.flux, point.error));
        assert!(!report.truncation_active, "truncation at flux {}", point.flux);
        speeds.push(report.max_speed);
    }
    let increasing = speeds.windows(2).all(|w| w[1] > w[0]);
    let subsonic = speeds.iter().all(|&q| q < 1.0);
    let r0 = speeds[0] / fluxes[0];
    let r1 = speeds[1] / fluxes[1];
    let linear_small = (r0 - r1).abs() <= 0.05 * r0;

    // Truncation independence: on an accepted subsonic solution the blended
    // branch of the density is never sampled, so halving epsilon must leave
    // the discrete solution unchanged up to solver tolerance.
    let m0 = 0.4 * PI;
    let sys_a = DiscreteSystem::new(&mesh, trunc(), m0).unwrap();
    let phi_a = solve(&sys_a, &cfg, None).unwrap().phi;
    let half = TruncatedDensity::build(law(), EPSILON / 2.0).unwrap();
    let sys_b = DiscreteSystem::new(&mesh, half, m0).unwrap();
    let phi_b = solve(&sys_b, &cfg, None).unwrap().phi;
    let delta = phi_a
        .iter()
        .zip(&phi_b)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    check(
        7,
        increasing && subsonic && linear_small && delta <= 10.0 * cfg.newton_tol,
        &format!(
            "Q strictly increasing over [0.1, 0.8]*pi: {increasing}; Q < 1: \
             {subsonic}; Q/m0 constant within 5% at the small end \
             ({r0:.4} vs {r1:.4}); epsilon halving moved phi by {delta:.2e} \
             <= {:.0e}",
            10.0 * cfg.newton_tol
        ),
    );
}

#[test]
fn criterion_08_critical_flux_bracket() {
    let geom = straight_geom(None);
    let mesh = build_mesh(&geom, 8.0, 4, 8, 16, Grading::default()).unwrap();
    let cfg = config(1e-10);
    let fluxes: Vec<f64> = (1..=6).map(|k| 0.2 * k as f64 * PI).collect();
    let sweep = continuation_sweep(&mesh, trunc(), &fluxes, &cfg, 0.02).unwrap();
    let (lo, hi) = sweep.bracket.expect("the sweep crosses the critical flux");

    let sys_lo = DiscreteSystem::new(&mesh, trunc(), lo).unwrap();
    let report_lo = solve(&sys_lo, &cfg, None).unwrap();
    let lo_clean = !report_lo.truncation_active
        && report_lo.max_speed * report_lo.max_speed < 1.0 - 2.0 * EPSILON;

    let sys_hi = DiscreteSystem::new(&mesh, trunc(), hi).unwrap();
    let hi_trips = match solve(&sys_hi, &cfg, None) {
        Ok(report) => report.truncation_active,
        Err(_) => true,
    };

    check(
        8,
        lo_clean && hi_trips && hi - lo <= 0.02 * hi,
        &format!(
            "bracket [{lo:.6}, {hi:.6}] (rel width {:.4} <= 0.02); low end \
             subsonic and untruncated: {lo_clean}; high end trips the \
             truncation: {hi_trips}",
            (hi - lo) / hi
        ),
    );
}

/// Largest slab-energy / m0^2 ratio over every unit slab and every sweep
/// flux on the obstacle nozzle of half-length `half_length`.
fn average_estimate_constant(half_length: f64, n_z: usize) -> f64 {
    let geom = straight_geom(Some((-1.0, 1.0, 0.4)));
    let mesh = build_mesh(&geom, half_length, 6, 8, n_z, Grading::default())
        .unwrap();
    let cfg = config(1e-10);
    let fluxes: Vec<f64> = (1..=8).map(|k| 0.1 * k as f64 * PI).collect();
    let sweep = continuation_sweep(&mesh, trunc(), &fluxes, &cfg, 0.02).unwrap();
    let lw = law();
    let mut c: f64 = 0.0;
    let t_max = half_length as isize - 2;
    for point in &sweep.points {
        let report = point.report.as_ref().expect("clean subsonic sweep");
        let far = far_state(&lw, 1.0, point.flux).unwrap();
        for t in (-t_max)..t_max {
            let (energy, _) = slab_deviation(
                &mesh,
                &report.phi,
                far.q_bar,
                t as f64,
                t as f64 + 1.0,
            )
            .unwrap();
            c = c.max(energy / (point.flux * point.flux));
        }
    }
    c
}

#[test]
fn criterion_09_average_estimate_constant() {
    let c_base = average_estimate_constant(8.0, 16);
    let c_long = average_estimate_constant(12.0, 24);
    check(
        9,
        c_long <= 2.0 * c_base,
        &format!(
            "slab-energy / m0^2 bounded by C = {c_base:.4e} over all slabs and \
             fluxes; after stretching the domain 1.5x the constant is \
             {c_long:.4e} <= 2C"
        ),
    );
}

#[test]
fn criterion_10_weighted_slab_inequality() {
    let geom = straight_geom(Some((-4.0, 4.0, 0.4)));
    let m0 = 0.5 * PI;
    let mesh = build_mesh(&geom, 24.0, 8, 8, 192, Grading::default()).unwrap();
    let report = solve_on(&mesh, m0, 1e-12);
    let far = far_state(&law(), 1.0, m0).unwrap();
    let lambda_p = poincare_constant(&mesh, mesh.half_length).unwrap();
    let tr = trunc();
    // Bands in the straight part of the nozzle, inside the range where the
    // deviation still carries signal (it reaches the solver floor near T=9).
    let triples = [
        (5.0, 8.0, 1.0),
        (5.0, 7.0, 2.0),
        (6.0, 9.0, 1.5),
        (-8.0, -5.0, 2.0),
        (4.5, 6.5, 0.5),
    ];
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    for &(t1, t2, h) in &triples {
        let res = weighted_slab_check(
            &mesh, &tr, &report.phi, far.q_bar, t1, t2, h, None, lambda_p,
        )
        .unwrap();
        ok &= res.lhs <= res.rhs * (1.0 + 1e-8);
        worst_ratio = worst_ratio.max(res.lhs / res.rhs);
    }
    check(
        10,
        ok,
        &format!(
            "lhs <= rhs at all {} (t1, t2, h) bands with beta = \
             lambda / Lambda_eff^2 (worst lhs/rhs = {worst_ratio:.3e})",
            triples.len()
        ),
    );
}

/// First positive root of `(d/dr) J_1(k r)` at `r = 1`, by RK4 shooting on
/// the radial equation `u'' + u'/r + (k^2 - 1/r^2) u = 0` with `u ~ r` at
/// the axis, bisecting `k` on the Neumann condition `u'(1) = 0`.
fn disk_mode_frequency_oracle() -> f64 {
    let deriv_at_wall = |k: f64| -> f64 {
        let n = 4000;
        let r0 = 1e-9;
        let dr = (1.0 - r0) / n as f64;
        let rhs = |r: f64, u: f64, v: f64| -> (f64, f64) {
            (v, u / (r * r) - v / r - k * k * u)
        };
        let (mut r, mut u, mut v) = (r0, r0, 1.0);
        for _ in 0..n {
            let (k1u, k1v) = rhs(r, u, v);
            let (k2u, k2v) = rhs(r + 0.5 * dr, u + 0.5 * dr * k1u, v + 0.5 * dr * k1v);
            let (k3u, k3v) = rhs(r + 0.5 * dr, u + 0.5 * dr * k2u, v + 0.5 * dr * k2v);
            let (k4u, k4v) = rhs(r + dr, u + dr * k3u, v + dr * k3v);
            u += dr / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
            v += dr / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            r += dr;
        }
        v
    };
    let (mut lo, mut hi) = (1.2, 2.5);
    assert!(deriv_at_wall(lo) > 0.0 && deriv_at_wall(hi) < 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if deriv_at_wall(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_11_poincare_constant_vs_radial_oracle() {
    let geom = straight_geom(None);
    let mesh = build_mesh(&geom, 8.0, 16, 32, 8, Grading::default()).unwrap();
    let computed = poincare_constant(&mesh, 0.0).unwrap();
    let oracle = 1.0 / disk_mode_frequency_oracle();
    let rel = (computed - oracle).abs() / oracle;
    check(
        11,
        rel <= 0.02,
        &format!(
            "unit-disk Poincare constant {computed:.6} vs radial shooting \
             oracle {oracle:.6} (rel diff {:.2}% <= 2%)",
            100.0 * rel
        ),
    );
}
