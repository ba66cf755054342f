//! Damped Newton solver for the discrete truncated problem, with a
//! Jacobi-preconditioned conjugate-gradient inner solver and a flux
//! continuation sweep.

use thiserror::Error;

use crate::assembly::{AssemblyError, CsrMatrix, DiscreteSystem};
use crate::gas::TruncatedDensity;
use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("conjugate gradient breakdown at iteration {iter} (curvature {curvature})")]
    CgBreakdown { iter: usize, curvature: f64 },
    #[error("conjugate gradient stalled after {iters} iterations (relative residual {residual})")]
    CgStall { iters: usize, residual: f64 },
    #[error("line search failed at Newton iteration {iter} (step {step})")]
    LineSearchFailed { iter: usize, step: f64 },
    #[error("Newton stalled after {iters} iterations (relative residual {residual})")]
    NewtonStall { iters: usize, residual: f64 },
}

/// Solver parameters; the defaults are the pinned production values.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Newton convergence: residual norm relative to the load norm.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Inner CG tolerance, relative to the Newton residual.
    pub cg_tol: f64,
    /// CG iteration cap as a multiple of `sqrt(dof)`.
    pub cg_cap_factor: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Smallest admissible line-search step.
    pub min_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_newton: 50,
            cg_tol: 1e-8,
            cg_cap_factor: 20.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            min_step: (0.5f64).powi(30),
        }
    }
}

/// Outcome of one nonlinear solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub phi: Vec<f64>,
    pub newton_iters: usize,
    pub cg_iters_total: usize,
    /// Final residual norm relative to the load norm.
    pub final_residual: f64,
    /// Energy at every accepted Newton iterate, including the initial guess.
    pub energy_history: Vec<f64>,
    pub energy: f64,
    /// Largest quadrature-point speed `max |grad phi|`.
    pub max_speed: f64,
    /// True when the solution touches the truncation window.
    pub truncation_active: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`, starting from
/// `x0`. Returns the solution and the iteration count.
pub fn cg_solve(
    mat: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), SolverError> {
    let n = mat.n;
    let diag = mat.diagonal();
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        z.extend(r.iter().zip(&diag).map(|(ri, di)| {
            if di.abs() > 0.0 {
                ri / di
            } else {
                *ri
            }
        }));
    };

    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    mat.matvec(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let b_norm = norm(b).max(f64::MIN_POSITIVE);
    if norm(&r) <= tol * b_norm {
        return Ok((x, 0));
    }
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for iter in 1..=max_iter {
        mat.matvec(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(SolverError::CgBreakdown { iter, curvature });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * b_norm {
            return Ok((x, iter));
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::CgStall {
        iters: max_iter,
        residual: norm(&r) / b_norm,
    })
}

/// Initial guess: the linear field `q0 (x3 + L)` whose mean momentum matches
/// the prescribed flux, clamped into the subsonic range.
pub fn initial_guess(sys: &DiscreteSystem<'_>) -> Vec<f64> {
    let mesh = sys.mesh;
    let mean_area = mesh.volume() / (2.0 * mesh.half_length);
    let mean_momentum = sys.flux / mean_area;
    let q0 = sys
        .trunc
        .law
        .invert_momentum_subsonic(mean_momentum.min(0.95))
        .unwrap_or(0.9);
    mesh.nodes
        .iter()
        .map(|p| q0 * (p[2] + mesh.half_length))
        .collect()
}

/// Damped Newton iteration on the discrete energy.
pub fn solve(
    sys: &DiscreteSystem<'_>,
    config: &SolverConfig,
    init: Option<&[f64]>,
) -> Result<SolveReport, SolverError> {
    let mut phi = match init {
        Some(v) => v.to_vec(),
        None => initial_guess(sys),
    };
    // The initial iterate must carry the Dirichlet data exactly.
    for (a, v) in phi.iter_mut().enumerate() {
        if sys.dirichlet[a] {
            *v = 0.0;
        }
    }
    let load_norm = sys.load_norm().max(f64::MIN_POSITIVE);
    let cg_cap = ((sys.n_dof() as f64).sqrt() * config.cg_cap_factor).ceil() as usize;

    let mut energy = sys.energy(&phi)?;
    let mut energy_history = vec![energy];
    let mut cg_total = 0;

    for iter in 0..config.max_newton {
        let r = sys.residual(&phi)?;
        let rel = norm(&r) / load_norm;
        if rel <= config.newton_tol {
            return Ok(self::report(sys, phi, iter, cg_total, rel, energy_history)?);
        }
        let mat = sys.hessian(&phi)?;
        let zero = vec![0.0; sys.n_dof()];
        let (delta, cg_iters) = cg_solve(&mat, &r, &zero, config.cg_tol, cg_cap)?;
        cg_total += cg_iters;

        // Armijo backtracking on the energy along the descent direction
        // -delta; the directional derivative is -(r . delta). Near the
        // minimizer the predicted decrease drops below the rounding noise of
        // the energy itself; accept the full Newton step there.
        let slope = dot(&r, &delta);
        let fuzz = 1e-14 * (1.0 + energy.abs());
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = phi
                .iter()
                .zip(&delta)
                .map(|(p, d)| p - step * d)
                .collect();
            let trial_energy = sys.energy(&trial)?;
            if trial_energy <= energy - config.armijo_c * step * slope + fuzz {
                phi = trial;
                energy = trial_energy;
                energy_history.push(energy);
                break;
            }
            step *= config.backtrack;
            if step < config.min_step {
                return Err(SolverError::LineSearchFailed { iter, step });
            }
        }
    }

    let r = sys.residual(&phi)?;
    let rel = norm(&r) / load_norm;
    if rel <= config.newton_tol {
        return Ok(self::report(
            sys,
            phi,
            config.max_newton,
            cg_total,
            rel,
            energy_history,
        )?);
    }
    Err(SolverError::NewtonStall {
        iters: config.max_newton,
        residual: rel,
    })
}

fn report(
    sys: &DiscreteSystem<'_>,
    phi: Vec<f64>,
    newton_iters: usize,
    cg_iters_total: usize,
    final_residual: f64,
    energy_history: Vec<f64>,
) -> Result<SolveReport, SolverError> {
    let energy = *energy_history.last().unwrap();
    let max_speed = sys.max_speed_sq(&phi)?.sqrt();
    let truncation_active = sys.truncation_active(&phi)?;
    Ok(SolveReport {
        phi,
        newton_iters,
        cg_iters_total,
        final_residual,
        energy_history,
        energy,
        max_speed,
        truncation_active,
    })
}

/// One station of a continuation sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub flux: f64,
    /// `None` when the solver failed at this flux.
    pub report: Option<SolveReport>,
    pub error: Option<String>,
}

/// Result of a continuation sweep in the flux parameter.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Critical-flux bracket `(m_lo, m_hi)`: the largest flux with a clean
    /// subsonic solution and the smallest flux that activated the truncation
    /// or broke the solver.
    pub bracket: Option<(f64, f64)>,
}

fn classify(
    mesh: &Mesh,
    trunc: TruncatedDensity,
    flux: f64,
    config: &SolverConfig,
    warm: Option<(&[f64], f64)>,
) -> Result<SweepPoint, SolverError> {
    let sys = DiscreteSystem::new(mesh, trunc, flux)?;
    let init = warm.map(|(phi, prev_flux)| {
        // Warm start: rescale the previous solution by the flux ratio.
        let ratio = if prev_flux.abs() > 0.0 {
            flux / prev_flux
        } else {
            1.0
        };
        phi.iter().map(|v| v * ratio).collect::<Vec<f64>>()
    });
    match solve(&sys, config, init.as_deref()) {
        Ok(report) => Ok(SweepPoint {
            flux,
            report: Some(report),
            error: None,
        }),
        Err(err @ (SolverError::Assembly(_) | SolverError::CgBreakdown { .. })) => Err(err),
        Err(err) => Ok(SweepPoint {
            flux,
            report: None,
            error: Some(err.to_string()),
        }),
    }
}

/// Solve a flux sweep with warm starts, then bisect the critical-flux
/// bracket until `m_hi - m_lo <= rel_width * m_hi` (when a supercritical
/// station exists in the sweep range).
pub fn continuation_sweep(
    mesh: &Mesh,
    trunc: TruncatedDensity,
    fluxes: &[f64],
    config: &SolverConfig,
    bracket_rel_width: f64,
) -> Result<SweepReport, SolverError> {
    let mut points: Vec<SweepPoint> = Vec::with_capacity(fluxes.len());
    let mut warm: Option<(Vec<f64>, f64)> = None;
    for &flux in fluxes {
        let point = classify(
            mesh,
            trunc,
            flux,
            config,
            warm.as_ref().map(|(phi, f)| (phi.as_slice(), *f)),
        )?;
        if let Some(rep) = &point.report {
            if !rep.truncation_active {
                warm = Some((rep.phi.clone(), flux));
            }
        }
        points.push(point);
    }

    // Bracket from the sweep: last clean subsonic station before the first
    // truncated/failed one.
    let is_clean = |p: &SweepPoint| p.report.as_ref().is_some_and(|r| !r.truncation_active);
    let first_bad = points.iter().position(|p| !is_clean(p));
    let bracket = match first_bad {
        Some(0) | None => None,
        Some(k) => {
            let mut lo = points[k - 1].flux;
            let mut hi = points[k].flux;
            let mut warm_phi = points[k - 1]
                .report
                .as_ref()
                .map(|r| (r.phi.clone(), lo))
                .expect("clean station has a report");
            let mut guard = 0;
            while hi - lo > bracket_rel_width * hi && guard < 60 {
                let mid = 0.5 * (lo + hi);
                let point = classify(
                    mesh,
                    trunc,
                    mid,
                    config,
                    Some((warm_phi.0.as_slice(), warm_phi.1)),
                )?;
                if is_clean(&point) {
                    warm_phi = (point.report.unwrap().phi, mid);
                    lo = mid;
                } else {
                    hi = mid;
                }
                guard += 1;
            }
            Some((lo, hi))
        }
    };
    Ok(SweepReport { points, bracket })
}
