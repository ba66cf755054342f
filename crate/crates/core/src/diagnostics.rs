//! Post-solve verification: flux conservation, the far-field state, decay
//! rates of the velocity deviation, the optimality lower bound, the weighted
//! slab inequality, cross-section Poincaré constants and domain-truncation
//! stability.

use std::fmt::Write as _;

use thiserror::Error;

use crate::assembly::{element_gradient, AssemblyError, CsrMatrix, DiscreteSystem};
use crate::gas::{DensityLaw, GasError, TruncatedDensity};
use crate::geometry::NozzleGeometry;
use crate::mesh::{build_mesh, Grading, Mesh, MeshError, GAUSS_1D};
use crate::solver::{cg_solve, solve, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("only {usable} stations above the noise floor (need {needed})")]
    NoiseFloor { usable: usize, needed: usize },
    #[error("flux identity fails at station {t}: flux {flux}, expected {expected}")]
    InconsistentFlux { t: f64, flux: f64, expected: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Far-field reference state of Theorem-style decay statements.
#[derive(Debug, Clone, Copy)]
pub struct FarField {
    /// Limiting wall radius.
    pub f_bar: f64,
    /// Far-field speed, `rho(q_bar^2) q_bar = m0 / (pi f_bar^2)`.
    pub q_bar: f64,
    /// Far-field density `rho(q_bar^2)`.
    pub rho_bar: f64,
}

/// Solve the far-field state from the prescribed flux.
pub fn far_state(law: &DensityLaw, f_bar: f64, m0: f64) -> Result<FarField, GasError> {
    let momentum = m0 / (std::f64::consts::PI * f_bar * f_bar);
    let q_bar = if momentum == 0.0 {
        0.0
    } else {
        law.invert_momentum_subsonic(momentum)?
    };
    Ok(FarField {
        f_bar,
        q_bar,
        rho_bar: law.density(q_bar * q_bar)?,
    })
}

/// Discrete flux `int_{Sigma_t} H_eps(|grad phi|^2) d3 phi` at a lattice
/// station.
pub fn flux_at(
    mesh: &Mesh,
    trunc: &TruncatedDensity,
    phi: &[f64],
    t: f64,
) -> Result<f64, DiagnosticsError> {
    let layout = mesh.section_layout(t)?;
    let mut flux = 0.0;
    for face in &layout.faces {
        for (pt, w) in face.points {
            let g = element_gradient(mesh, face.elem, [pt[0], pt[1], face.zeta], phi);
            let s_sq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            flux += w * trunc.h_eps(s_sq) * g[2];
        }
    }
    Ok(flux)
}

/// Largest quadrature-point speed `max |grad phi|`.
pub fn max_speed(sys: &DiscreteSystem<'_>, phi: &[f64]) -> Result<f64, DiagnosticsError> {
    Ok(sys.max_speed_sq(phi)?.sqrt())
}

/// Slab energy and sup deviation of `grad phi - (0, 0, q_bar)` over
/// `Omega(T, T+1)` (more generally the slab between lattice stations `t_lo`
/// and `t_hi`).
pub fn slab_deviation(
    mesh: &Mesh,
    phi: &[f64],
    q_bar: f64,
    t_lo: f64,
    t_hi: f64,
) -> Result<(f64, f64), DiagnosticsError> {
    let ka = mesh.plane_at(t_lo)?;
    let kb = mesh.plane_at(t_hi)?;
    if kb <= ka {
        return Err(DiagnosticsError::InvalidInput(format!(
            "empty slab [{t_lo}, {t_hi}]"
        )));
    }
    let mut energy = 0.0;
    let mut sup: f64 = 0.0;
    for elem in 0..mesh.n_elems() {
        let layer = mesh.elem_lattice[elem][2];
        if layer < ka || layer >= kb {
            continue;
        }
        let geom = mesh.elem_geom(elem);
        for &gx in &GAUSS_1D {
            for &gy in &GAUSS_1D {
                for &gz in &GAUSS_1D {
                    let p = [gx, gy, gz];
                    let g = element_gradient(mesh, elem, p, phi);
                    let dev =
                        g[0] * g[0] + g[1] * g[1] + (g[2] - q_bar) * (g[2] - q_bar);
                    energy += geom.jacobian_det(p) * dev;
                    sup = sup.max(dev);
                }
            }
        }
    }
    Ok((energy, sup.sqrt()))
}

/// Result of a least-squares decay fit.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// Fitted decay rate (exponential e-folding rate of the field deviation,
    /// or the algebraic exponent `l`); the slab energy decays at twice this.
    pub rate: f64,
    /// Fitted intercept of the regression (log of the prefactor).
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% confidence half-width on `rate` from the regression residuals.
    pub ci_half_width: f64,
    /// Number of stations used after noise-floor filtering.
    pub n_used: usize,
}

fn least_squares(xy: &[(f64, f64)]) -> RateFit {
    let n = xy.len() as f64;
    let mean_x = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = xy
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xy
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = xy.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    let dof = (xy.len().max(3) - 2) as f64;
    let se_slope = (ss_res / dof / sxx).sqrt();
    RateFit {
        rate: slope,
        intercept,
        r_squared,
        ci_half_width: 1.96 * se_slope,
        n_used: xy.len(),
    }
}

const MIN_FIT_STATIONS: usize = 5;

fn filter_floor(
    points: &[(f64, f64)],
    noise_floor: f64,
) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(_, y)| y > noise_floor && y > 0.0)
        .collect();
    if usable.len() < MIN_FIT_STATIONS {
        return Err(DiagnosticsError::NoiseFloor {
            usable: usable.len(),
            needed: MIN_FIT_STATIONS,
        });
    }
    Ok(usable)
}

/// Fit `energy ~ C exp(-2 d T)` on `(T, energy)` pairs; returns the field
/// rate `d` (half the energy slope).
pub fn fit_exponential_rate(
    points: &[(f64, f64)],
    noise_floor: f64,
) -> Result<RateFit, DiagnosticsError> {
    let usable = filter_floor(points, noise_floor)?;
    let xy: Vec<(f64, f64)> = usable.iter().map(|&(t, e)| (t, e.ln())).collect();
    let mut fit = least_squares(&xy);
    fit.rate = -0.5 * fit.rate;
    fit.ci_half_width *= 0.5;
    Ok(fit)
}

/// Fit `energy ~ C T^{-2 l}` on `(T, energy)` pairs; returns the field
/// exponent `l` (half the log-log slope, negated).
pub fn fit_algebraic_rate(
    points: &[(f64, f64)],
    noise_floor: f64,
) -> Result<RateFit, DiagnosticsError> {
    let usable = filter_floor(points, noise_floor)?;
    let xy: Vec<(f64, f64)> = usable
        .iter()
        .map(|&(t, e)| (t.ln(), e.ln()))
        .collect();
    let mut fit = least_squares(&xy);
    fit.rate = -0.5 * fit.rate;
    fit.ci_half_width *= 0.5;
    Ok(fit)
}

/// Far-field decay summary over a list of stations.
#[derive(Debug, Clone)]
pub struct DecayReport {
    pub stations: Vec<f64>,
    /// `int_{Omega(T, T+1)} |grad phi - (0,0,q_bar)|^2` per station.
    pub slab_energy: Vec<f64>,
    /// Sup over the slab's quadrature points of the deviation.
    pub sup_dev: Vec<f64>,
    /// Fitted rate (exponential or algebraic), absent below the noise floor.
    pub fitted_rate: Option<RateFit>,
    /// Reference rate `beta = lambda / Lambda_eff^2` from the weighted-slab
    /// estimate.
    pub predicted_beta: f64,
}

/// Which decay law a report should fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Exponential,
    Algebraic,
}

/// Measure slab energies at `stations` (each slab is `[T, T+1]` in lattice
/// stations) and fit the requested decay law.
#[allow(clippy::too_many_arguments)]
pub fn decay_report(
    mesh: &Mesh,
    phi: &[f64],
    far: &FarField,
    trunc: &TruncatedDensity,
    stations: &[f64],
    kind: FitKind,
    noise_floor: f64,
    lambda_p: f64,
) -> Result<DecayReport, DiagnosticsError> {
    let mut slab_energy = Vec::with_capacity(stations.len());
    let mut sup_dev = Vec::with_capacity(stations.len());
    for &t in stations {
        let (energy, sup) = slab_deviation(mesh, phi, far.q_bar, t, t + 1.0)?;
        slab_energy.push(energy);
        sup_dev.push(sup);
    }
    let points: Vec<(f64, f64)> = stations
        .iter()
        .copied()
        .zip(slab_energy.iter().copied())
        .collect();
    let fitted_rate = match kind {
        FitKind::Exponential => fit_exponential_rate(&points, noise_floor),
        FitKind::Algebraic => fit_algebraic_rate(&points, noise_floor),
    }
    .ok();
    let lambda_eff = trunc.lambda_cap.max(lambda_p);
    Ok(DecayReport {
        stations: stations.to_vec(),
        slab_energy,
        sup_dev,
        fitted_rate,
        predicted_beta: trunc.lambda / (lambda_eff * lambda_eff),
    })
}

impl DecayReport {
    /// Plain-text table: `T  slab_energy  sup_dev` per row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# T slab_energy sup_dev\n");
        for ((t, e), s) in self
            .stations
            .iter()
            .zip(&self.slab_energy)
            .zip(&self.sup_dev)
        {
            let _ = writeln!(out, "{t:.6} {e:.12e} {s:.12e}");
        }
        out
    }
}

/// One station of the optimality study.
#[derive(Debug, Clone, Copy)]
pub struct OptimalityStation {
    pub t: f64,
    /// Exact geometric flux deficit `|m0 - rho_bar q_bar |Sigma_t||`.
    pub deficit: f64,
    /// Certified lower bound on the sup deviation over `Sigma_t`.
    pub lower_bound: f64,
    /// Measured sup deviation over the section quadrature points.
    pub sup_dev: f64,
}

#[derive(Debug, Clone)]
pub struct OptimalityReport {
    pub stations: Vec<OptimalityStation>,
    /// Algebraic exponent fitted on the measured sup deviations.
    pub exponent: RateFit,
}

/// Certified per-station lower bound on the sup deviation from the flux
/// identity, plus the measured decay exponent of the sup deviation.
///
/// The flux carried by the uniform far state over `Sigma_t` differs from `m0`
/// by `rho_bar q_bar (pi f_bar^2 - |Sigma_t|)`; dividing the deficit by
/// `|Sigma_t|` times the Lipschitz constant of `p -> H_eps(|p|^2) p` (bounded
/// by `Lambda`) certifies a pointwise deviation somewhere on the section.
pub fn optimality_lower_bound(
    mesh: &Mesh,
    trunc: &TruncatedDensity,
    phi: &[f64],
    far: &FarField,
    stations: &[f64],
    flux_tol: f64,
) -> Result<OptimalityReport, DiagnosticsError> {
    let m0 = std::f64::consts::PI * far.f_bar * far.f_bar * far.rho_bar * far.q_bar;
    let mut out = Vec::with_capacity(stations.len());
    for &t in stations {
        let flux = flux_at(mesh, trunc, phi, t)?;
        if (flux - m0).abs() > flux_tol * m0.abs().max(f64::MIN_POSITIVE) {
            return Err(DiagnosticsError::InconsistentFlux {
                t,
                flux,
                expected: m0,
            });
        }
        let layout = mesh.section_layout(t)?;
        let deficit = (m0 - far.rho_bar * far.q_bar * layout.area).abs();
        let lower_bound = deficit / (layout.area * trunc.lambda_cap);
        let mut sup: f64 = 0.0;
        for face in &layout.faces {
            for (pt, _) in face.points {
                let g =
                    element_gradient(mesh, face.elem, [pt[0], pt[1], face.zeta], phi);
                let dev =
                    g[0] * g[0] + g[1] * g[1] + (g[2] - far.q_bar) * (g[2] - far.q_bar);
                sup = sup.max(dev);
            }
        }
        out.push(OptimalityStation {
            t,
            deficit,
            lower_bound,
            sup_dev: sup.sqrt(),
        });
    }
    // Fit the exponent of sup_dev ~ C t^{-l} (square it to reuse the
    // energy-convention fitter).
    let points: Vec<(f64, f64)> = out
        .iter()
        .map(|s| (s.t, s.sup_dev * s.sup_dev))
        .collect();
    let exponent = fit_algebraic_rate(&points, 0.0)?;
    Ok(OptimalityReport {
        stations: out,
        exponent,
    })
}

/// The piecewise-exponential slab weight.
pub fn zeta_weight(x3: f64, t1: f64, t2: f64, beta: f64, h: f64) -> f64 {
    if x3 <= t1 - h {
        1.0
    } else if x3 <= t1 {
        (beta * (x3 - t1 + h)).exp()
    } else if x3 <= t2 {
        (beta * h).exp()
    } else if x3 <= t2 + h {
        (beta * h).exp() * (-beta * (x3 - t2)).exp()
    } else {
        1.0
    }
}

/// Both sides of the weighted slab estimate.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSlabCheck {
    /// `lambda int (zeta - 1) |grad Phi|^2` over the widened slab.
    pub lhs: f64,
    /// `Lambda_eff^2 beta int_{edge slabs} zeta |grad Phi|^2`.
    pub rhs: f64,
    pub beta: f64,
    pub lambda_eff: f64,
}

/// Evaluate the weighted slab inequality for `Phi = phi - q_bar x3` with the
/// default `beta = lambda / Lambda_eff^2` (pass `beta = None`) or an explicit
/// `beta`. A correct solve yields `lhs <= rhs` up to quadrature round-off.
#[allow(clippy::too_many_arguments)]
pub fn weighted_slab_check(
    mesh: &Mesh,
    trunc: &TruncatedDensity,
    phi: &[f64],
    q_bar: f64,
    t1: f64,
    t2: f64,
    h: f64,
    beta: Option<f64>,
    lambda_p: f64,
) -> Result<WeightedSlabCheck, DiagnosticsError> {
    if !(t1 < t2) || !(h > 0.0) {
        return Err(DiagnosticsError::InvalidInput(format!(
            "need t1 < t2 and h > 0 (got t1 = {t1}, t2 = {t2}, h = {h})"
        )));
    }
    let lambda_eff = trunc.lambda_cap.max(lambda_p);
    let beta = beta.unwrap_or(trunc.lambda / (lambda_eff * lambda_eff));
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for elem in 0..mesh.n_elems() {
        let geom = mesh.elem_geom(elem);
        // Skip elements entirely outside the widened slab.
        let z_lo = geom.cyl[0][2].min(geom.cyl[4][2]);
        let z_hi = geom.cyl[0][2].max(geom.cyl[4][2]);
        if z_hi <= t1 - h || z_lo >= t2 + h {
            continue;
        }
        for &gx in &GAUSS_1D {
            for &gy in &GAUSS_1D {
                for &gz in &GAUSS_1D {
                    let p = [gx, gy, gz];
                    let x3 = geom.cyl_at(p)[2];
                    let g = element_gradient(mesh, elem, p, phi);
                    let dev =
                        g[0] * g[0] + g[1] * g[1] + (g[2] - q_bar) * (g[2] - q_bar);
                    let w = geom.jacobian_det(p);
                    let zeta = zeta_weight(x3, t1, t2, beta, h);
                    lhs += w * trunc.lambda * (zeta - 1.0) * dev;
                    let in_edges = (x3 > t1 - h && x3 <= t1) || (x3 > t2 && x3 <= t2 + h);
                    if in_edges {
                        rhs += w * lambda_eff * lambda_eff * beta * zeta * dev;
                    }
                }
            }
        }
    }
    Ok(WeightedSlabCheck {
        lhs,
        rhs,
        beta,
        lambda_eff,
    })
}

// ---------------------------------------------------------------------------
// Cross-section Poincaré constant.
// ---------------------------------------------------------------------------

fn shape2d(p: [f64; 2]) -> ([f64; 4], [[f64; 2]; 4]) {
    const SIGNS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let mut vals = [0.0; 4];
    let mut grads = [[0.0; 2]; 4];
    for a in 0..4 {
        let s = SIGNS[a];
        vals[a] = 0.25 * (1.0 + s[0] * p[0]) * (1.0 + s[1] * p[1]);
        grads[a] = [
            0.25 * s[0] * (1.0 + s[1] * p[1]),
            0.25 * (1.0 + s[0] * p[0]) * s[1],
        ];
    }
    (vals, grads)
}

struct SectionProblem {
    stiffness: CsrMatrix,
    mass: CsrMatrix,
    n: usize,
}

fn section_problem(mesh: &Mesh, t: f64) -> Result<SectionProblem, DiagnosticsError> {
    let layout = mesh.section_layout(t)?;
    // Quads: the constant-zeta faces of the layer elements, in cylindrical
    // corner coordinates; node ids remapped to a compact section numbering.
    let mut global_to_local = std::collections::HashMap::new();
    let mut quads: Vec<([usize; 4], [[f64; 2]; 4])> = Vec::with_capacity(layout.faces.len());
    for face in &layout.faces {
        let conn3 = mesh.hexes[face.elem];
        let cyl3 = &mesh.elem_cyl[face.elem];
        let corners: [usize; 4] = if face.zeta < 0.0 {
            [0, 1, 2, 3]
        } else {
            [4, 5, 6, 7]
        };
        let mut nodes = [0usize; 4];
        let mut cyl = [[0.0; 2]; 4];
        for (slot, &c) in corners.iter().enumerate() {
            let global = conn3[c];
            let next = global_to_local.len();
            nodes[slot] = *global_to_local.entry(global).or_insert(next);
            cyl[slot] = [cyl3[c][0], cyl3[c][1]];
        }
        quads.push((nodes, cyl));
    }
    let n = global_to_local.len();

    // Shared sparsity for stiffness and mass.
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (nodes, _) in &quads {
        for &a in nodes {
            for &b in nodes {
                adjacency[a].push(b);
            }
        }
    }
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
        col_idx.extend_from_slice(list);
        row_ptr.push(col_idx.len());
    }
    let entry = |row_ptr: &[usize], col_idx: &[usize], r: usize, c: usize| -> usize {
        let lo = row_ptr[r];
        let hi = row_ptr[r + 1];
        lo + col_idx[lo..hi].binary_search(&c).expect("pattern entry")
    };
    let mut k_vals = vec![0.0; col_idx.len()];
    let mut m_vals = vec![0.0; col_idx.len()];

    for (nodes, cyl) in &quads {
        for &gx in &GAUSS_1D {
            for &gy in &GAUSS_1D {
                let (vals, g_ref) = shape2d([gx, gy]);
                // d(r, theta)/d(xi, eta) and the polar push-forward.
                let mut d = [[0.0; 2]; 2];
                let mut r = 0.0;
                let mut theta = 0.0;
                for a in 0..4 {
                    r += vals[a] * cyl[a][0];
                    theta += vals[a] * cyl[a][1];
                    for row in 0..2 {
                        for col in 0..2 {
                            d[row][col] += cyl[a][row] * g_ref[a][col];
                        }
                    }
                }
                let (cos_t, sin_t) = (theta.cos(), theta.sin());
                let jac = [
                    [
                        cos_t * d[0][0] - r * sin_t * d[1][0],
                        cos_t * d[0][1] - r * sin_t * d[1][1],
                    ],
                    [
                        sin_t * d[0][0] + r * cos_t * d[1][0],
                        sin_t * d[0][1] + r * cos_t * d[1][1],
                    ],
                ];
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let inv = [
                    [jac[1][1] / det, -jac[0][1] / det],
                    [-jac[1][0] / det, jac[0][0] / det],
                ];
                let mut grads = [[0.0; 2]; 4];
                for a in 0..4 {
                    grads[a] = [
                        inv[0][0] * g_ref[a][0] + inv[1][0] * g_ref[a][1],
                        inv[0][1] * g_ref[a][0] + inv[1][1] * g_ref[a][1],
                    ];
                }
                for a in 0..4 {
                    for b in 0..4 {
                        let idx = entry(&row_ptr, &col_idx, nodes[a], nodes[b]);
                        k_vals[idx] += det
                            * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                        m_vals[idx] += det * vals[a] * vals[b];
                    }
                }
            }
        }
    }
    Ok(SectionProblem {
        stiffness: CsrMatrix {
            n,
            row_ptr: row_ptr.clone(),
            col_idx: col_idx.clone(),
            values: k_vals,
        },
        mass: CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: m_vals,
        },
        n,
    })
}

/// Discrete Poincaré constant of the cross section at station `t`: the
/// inverse square root of the first nonzero Neumann eigenvalue of the
/// section Laplacian, by inverse power iteration with constant deflation.
pub fn poincare_constant(mesh: &Mesh, t: f64) -> Result<f64, DiagnosticsError> {
    let prob = section_problem(mesh, t)?;
    let n = prob.n;
    let ones = vec![1.0; n];
    let mut m_ones = vec![0.0; n];
    prob.mass.matvec(&ones, &mut m_ones);
    let mass_total: f64 = m_ones.iter().sum();

    let project = |z: &mut Vec<f64>, m_ones: &[f64]| {
        let mean: f64 = z.iter().zip(m_ones).map(|(a, b)| a * b).sum::<f64>() / mass_total;
        z.iter_mut().for_each(|v| *v -= mean);
    };

    // Deterministic, non-symmetric seed vector.
    let mut z: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect();
    project(&mut z, &m_ones);

    let mut mu_prev = f64::INFINITY;
    let mut rhs = vec![0.0; n];
    let mut kz = vec![0.0; n];
    for _ in 0..200 {
        prob.mass.matvec(&z, &mut rhs);
        let (mut y, _) = cg_solve(&prob.stiffness, &rhs, &z, 1e-12, 40 * n)?;
        project(&mut y, &m_ones);
        // M-normalize.
        prob.mass.matvec(&y, &mut rhs);
        let norm_sq: f64 = y.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        let scale = norm_sq.sqrt();
        y.iter_mut().for_each(|v| *v /= scale);
        z = y;
        prob.stiffness.matvec(&z, &mut kz);
        let mu: f64 = z.iter().zip(&kz).map(|(a, b)| a * b).sum();
        if (mu - mu_prev).abs() <= 1e-11 * mu.abs() {
            mu_prev = mu;
            break;
        }
        mu_prev = mu;
    }
    Ok(1.0 / mu_prev.sqrt())
}

/// Interior gradient discrepancy between the solve at `half_length` and the
/// solve at `factor * half_length`, compared over `|x3| <= half_length / 2`.
#[allow(clippy::too_many_arguments)]
pub fn domain_convergence(
    geom: &NozzleGeometry,
    trunc: TruncatedDensity,
    m0: f64,
    half_length: f64,
    factor: f64,
    n_r: usize,
    n_theta: usize,
    n_z: usize,
    config: &SolverConfig,
) -> Result<f64, DiagnosticsError> {
    if !(factor > 1.0) {
        return Err(DiagnosticsError::InvalidInput(format!(
            "factor must exceed 1, got {factor}"
        )));
    }
    let n_z_big = (n_z as f64 * factor).round() as usize;
    if ((n_z as f64 * factor) - n_z_big as f64).abs() > 1e-9 {
        return Err(DiagnosticsError::InvalidInput(format!(
            "factor {factor} does not preserve the axial lattice (n_z = {n_z})"
        )));
    }
    let mesh_small = build_mesh(geom, half_length, n_r, n_theta, n_z, Grading::default())?;
    let mesh_big = build_mesh(
        geom,
        factor * half_length,
        n_r,
        n_theta,
        n_z_big,
        Grading::default(),
    )?;
    let sys_small = DiscreteSystem::new(&mesh_small, trunc, m0)?;
    let sys_big = DiscreteSystem::new(&mesh_big, trunc, m0)?;
    let rep_small = solve(&sys_small, config, None)?;
    let rep_big = solve(&sys_big, config, None)?;

    // Both meshes are uniform with the same spacing, so every plane of the
    // small mesh reappears in the big one at a fixed layer offset.
    let offset = mesh_big.plane_at(mesh_small.z_planes[0])?;
    let mut disc_sq = 0.0;
    for elem in 0..mesh_small.n_elems() {
        let [i, j, k] = mesh_small.elem_lattice[elem];
        let z_lo = mesh_small.z_planes[k];
        let z_hi = mesh_small.z_planes[k + 1];
        if z_lo < -0.5 * half_length - 1e-12 || z_hi > 0.5 * half_length + 1e-12 {
            continue;
        }
        let elem_big = ((k + offset) * n_theta + j) * n_r + i;
        let geom_el = mesh_small.elem_geom(elem);
        for &gx in &GAUSS_1D {
            for &gy in &GAUSS_1D {
                for &gz in &GAUSS_1D {
                    let p = [gx, gy, gz];
                    let g1 = element_gradient(&mesh_small, elem, p, &rep_small.phi);
                    let g2 = element_gradient(&mesh_big, elem_big, p, &rep_big.phi);
                    let d = [g1[0] - g2[0], g1[1] - g2[1], g1[2] - g2[2]];
                    disc_sq += geom_el.jacobian_det(p)
                        * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                }
            }
        }
    }
    Ok(disc_sq.sqrt())
}
