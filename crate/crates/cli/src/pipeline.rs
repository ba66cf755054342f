//! Mode pipelines: solve, sweep, decay-study, optimality-study, verify, and
//! the field-dump diff.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use nozzle_core::assembly::{element_gradient, DiscreteSystem};
use nozzle_core::diagnostics::{
    decay_report, far_state, flux_at, optimality_lower_bound, poincare_constant,
    weighted_slab_check, FitKind,
};
use nozzle_core::gas::{DensityLaw, GasModel, TruncatedDensity};
use nozzle_core::geometry::{
    load_tabulated, NozzleGeometry, NozzleProfile, ObstacleProfile,
};
use nozzle_core::mesh::{build_mesh, Grading, Mesh, CORNER_SIGNS};
use nozzle_core::solver::{continuation_sweep, solve, SolveReport, SolverConfig};

use crate::config::{GeometryFamily, RunConfig};

pub struct Pipeline {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    written: Vec<(String, String, u64)>, // (name, sha256, bytes)
}

pub fn build_geometry(cfg: &RunConfig) -> Result<NozzleGeometry> {
    let (wall, table_obstacle) = match &cfg.family {
        GeometryFamily::Straight => (NozzleProfile::straight(cfg.f_bar)?, None),
        GeometryFamily::Algebraic => (
            NozzleProfile::algebraic(cfg.f_bar, cfg.amplitude, cfg.decay_l, cfg.onset_k)?,
            None,
        ),
        GeometryFamily::Tabulated(path) => {
            let (wall, obstacle) = load_tabulated(Path::new(path))?;
            (wall, obstacle)
        }
    };
    let obstacle = if cfg.obstacle_b > 0.0 {
        Some(ObstacleProfile::new(
            cfg.obstacle_l1,
            cfg.obstacle_l2,
            cfg.obstacle_b,
        )?)
    } else {
        table_obstacle
    };
    Ok(NozzleGeometry::new(wall, obstacle)?)
}

pub fn build_trunc(cfg: &RunConfig) -> Result<TruncatedDensity> {
    let law = DensityLaw::new(GasModel::new(cfg.gamma)?);
    Ok(TruncatedDensity::build(law, cfg.epsilon)?)
}

pub fn build_run_mesh(cfg: &RunConfig, geom: &NozzleGeometry) -> Result<Mesh> {
    Ok(build_mesh(
        geom,
        cfg.half_length,
        cfg.n_r,
        cfg.n_theta,
        cfg.n_z,
        Grading {
            ratio: cfg.grading,
            center: cfg.grading_center,
        },
    )?)
}

pub fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        newton_tol: cfg.newton_tol,
        max_newton: cfg.max_newton,
        cg_tol: cfg.cg_tol,
        ..SolverConfig::default()
    }
}

/// Nodal velocity recovery: average the element gradients sampled at the
/// Gauss point nearest each corner (corners of collapsed wedges have
/// singular Jacobians, so corner-point evaluation is not an option).
pub fn nodal_gradients(mesh: &Mesh, phi: &[f64]) -> Vec<[f64; 3]> {
    let g = 1.0 / 3.0f64.sqrt();
    let mut sums = vec![[0.0; 4]; mesh.nodes.len()];
    for elem in 0..mesh.n_elems() {
        let conn = mesh.hexes[elem];
        for a in 0..8 {
            let p = [
                CORNER_SIGNS[a][0] * g,
                CORNER_SIGNS[a][1] * g,
                CORNER_SIGNS[a][2] * g,
            ];
            let grad = element_gradient(mesh, elem, p, phi);
            let s = &mut sums[conn[a]];
            s[0] += grad[0];
            s[1] += grad[1];
            s[2] += grad[2];
            s[3] += 1.0;
        }
    }
    sums.iter()
        .map(|s| [s[0] / s[3], s[1] / s[3], s[2] / s[3]])
        .collect()
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            cfg,
            out_dir: out_dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_file(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)
            .with_context(|| format!("writing {}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(contents.as_bytes());
        self.written.push((
            name.to_string(),
            format!("{:x}", hasher.finalize()),
            contents.len() as u64,
        ));
        Ok(())
    }

    fn field_dump(&self, mesh: &Mesh, trunc: &TruncatedDensity, phi: &[f64]) -> String {
        let grads = nodal_gradients(mesh, phi);
        let mut s = String::from("# x y z phi u1 u2 u3 rho\n");
        for (node, p) in mesh.nodes.iter().enumerate() {
            let g = grads[node];
            let rho = trunc.h_eps(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            let _ = writeln!(
                s,
                "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                p[0], p[1], p[2], phi[node], g[0], g[1], g[2], rho
            );
        }
        s
    }

    fn finish_manifest(&mut self, mode: &str, started: Instant) -> Result<()> {
        let mut s = String::from("# run manifest\n");
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "wall_ms = {}", started.elapsed().as_millis());
        s.push_str("\n[config]\n");
        s.push_str(&self.cfg.echo());
        s.push_str("\n[files]\n");
        for (name, sha, bytes) in &self.written {
            let _ = writeln!(s, "{name} sha256={sha} bytes={bytes}");
        }
        let path = self.out_dir.join("manifest.txt");
        std::fs::write(&path, s)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn solve_once<'m>(
        &self,
        mesh: &'m Mesh,
        trunc: TruncatedDensity,
        m0: f64,
    ) -> Result<(DiscreteSystem<'m>, SolveReport)> {
        let sys = DiscreteSystem::new(mesh, trunc, m0)?;
        let report = solve(&sys, &solver_config(&self.cfg), None)?;
        Ok((sys, report))
    }

    fn station_flux_errors(
        &self,
        mesh: &Mesh,
        trunc: &TruncatedDensity,
        phi: &[f64],
        m0: f64,
    ) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..=mesh.n_z {
            let flux = flux_at(mesh, trunc, phi, mesh.z_planes[k])?;
            worst = worst.max((flux - m0).abs());
        }
        Ok(worst)
    }

    pub fn run_solve(&mut self) -> Result<()> {
        let started = Instant::now();
        let trunc = build_trunc(&self.cfg)?;
        let geom = build_geometry(&self.cfg)?;
        let mesh = build_run_mesh(&self.cfg, &geom)?;
        let (_, report) = self.solve_once(&mesh, trunc, self.cfg.m0)?;
        let flux_err = self.station_flux_errors(&mesh, &trunc, &report.phi, self.cfg.m0)?;
        let far = far_state(&trunc.law, geom.wall.f_bar, self.cfg.m0).ok();

        self.write_file("field.txt", &self.field_dump(&mesh, &trunc, &report.phi))?;
        let mut mesh_dump = Vec::new();
        mesh.write_dump(&mut mesh_dump)?;
        self.write_file("mesh.txt", &String::from_utf8(mesh_dump)?)?;
        if self.cfg.write_vtk {
            let mut vtk = Vec::new();
            mesh.write_vtk(&mut vtk, Some(("phi", &report.phi)))?;
            self.write_file("field.vtk", &String::from_utf8(vtk)?)?;
        }

        let mut rpt = String::from("[solve]\n");
        let _ = writeln!(rpt, "flux.m0 = {:.17e}", self.cfg.m0);
        let _ = writeln!(rpt, "solver.newton_iters = {}", report.newton_iters);
        let _ = writeln!(rpt, "solver.cg_iters_total = {}", report.cg_iters_total);
        let _ = writeln!(rpt, "solver.final_residual = {:.6e}", report.final_residual);
        let _ = writeln!(rpt, "field.energy = {:.17e}", report.energy);
        let _ = writeln!(rpt, "field.max_speed = {:.17e}", report.max_speed);
        let _ = writeln!(
            rpt,
            "field.truncation_active = {}",
            report.truncation_active
        );
        let _ = writeln!(rpt, "flux.max_station_error = {flux_err:.6e}");
        let _ = writeln!(rpt, "\n[gas]");
        let _ = writeln!(rpt, "ellipticity.lambda = {:.17e}", trunc.lambda);
        let _ = writeln!(rpt, "ellipticity.lambda_cap = {:.17e}", trunc.lambda_cap);
        if let Some(far) = far {
            let _ = writeln!(rpt, "\n[farfield]");
            let _ = writeln!(rpt, "farfield.q_bar = {:.17e}", far.q_bar);
            let _ = writeln!(rpt, "farfield.rho_bar = {:.17e}", far.rho_bar);
        }
        self.write_file("report.txt", &rpt)?;
        self.finish_manifest("solve", started)
    }

    pub fn run_sweep(&mut self) -> Result<()> {
        let started = Instant::now();
        if self.cfg.flux_list.is_empty() {
            bail!("sweep mode needs flux.list in the config");
        }
        let trunc = build_trunc(&self.cfg)?;
        let geom = build_geometry(&self.cfg)?;
        let mesh = build_run_mesh(&self.cfg, &geom)?;
        let sweep = continuation_sweep(
            &mesh,
            trunc,
            &self.cfg.flux_list,
            &solver_config(&self.cfg),
            self.cfg.bracket_rel_width,
        )?;

        let mut table =
            String::from("# m0 max_speed energy newton_iters truncation_active status\n");
        for p in &sweep.points {
            match &p.report {
                Some(r) => {
                    let _ = writeln!(
                        table,
                        "{:.12e} {:.12e} {:.12e} {} {} ok",
                        p.flux, r.max_speed, r.energy, r.newton_iters, r.truncation_active
                    );
                }
                None => {
                    let _ = writeln!(
                        table,
                        "{:.12e} nan nan 0 true failed",
                        p.flux
                    );
                }
            }
        }
        self.write_file("sweep.txt", &table)?;

        let mut rpt = String::from("[sweep]\n");
        let _ = writeln!(rpt, "sweep.stations = {}", sweep.points.len());
        match sweep.bracket {
            Some((lo, hi)) => {
                let _ = writeln!(rpt, "critical_flux.m_lo = {lo:.12e}");
                let _ = writeln!(rpt, "critical_flux.m_hi = {hi:.12e}");
                let _ = writeln!(rpt, "critical_flux.rel_width = {:.6e}", (hi - lo) / hi);
            }
            None => {
                let _ = writeln!(rpt, "critical_flux.bracket = none");
            }
        }
        self.write_file("report.txt", &rpt)?;
        self.finish_manifest("sweep", started)
    }

    pub fn run_decay_study(&mut self) -> Result<()> {
        let started = Instant::now();
        let trunc = build_trunc(&self.cfg)?;
        let geom = build_geometry(&self.cfg)?;
        let mesh = build_run_mesh(&self.cfg, &geom)?;
        let (_, report) = self.solve_once(&mesh, trunc, self.cfg.m0)?;
        let far = far_state(&trunc.law, geom.wall.f_bar, self.cfg.m0)?;
        let lambda_p = poincare_constant(&mesh, mesh.z_planes[mesh.n_z])?;
        let stations = self.cfg.decay_stations();
        let kind = if self.cfg.decay_algebraic {
            FitKind::Algebraic
        } else {
            FitKind::Exponential
        };
        let decay = decay_report(
            &mesh,
            &report.phi,
            &far,
            &trunc,
            &stations,
            kind,
            self.cfg.noise_floor,
            lambda_p,
        )?;
        self.write_file("decay.txt", &decay.to_table())?;
        self.write_file("field.txt", &self.field_dump(&mesh, &trunc, &report.phi))?;

        let mut rpt = String::from("[decay]\n");
        let _ = writeln!(
            rpt,
            "decay.kind = {}",
            if self.cfg.decay_algebraic {
                "algebraic"
            } else {
                "exponential"
            }
        );
        let _ = writeln!(rpt, "decay.predicted_beta = {:.12e}", decay.predicted_beta);
        let _ = writeln!(rpt, "decay.poincare_lambda_p = {lambda_p:.12e}");
        match &decay.fitted_rate {
            Some(fit) => {
                let _ = writeln!(rpt, "decay.fitted_rate = {:.12e}", fit.rate);
                let _ = writeln!(rpt, "decay.ci_half_width = {:.6e}", fit.ci_half_width);
                let _ = writeln!(rpt, "decay.r_squared = {:.9}", fit.r_squared);
                let _ = writeln!(rpt, "decay.stations_used = {}", fit.n_used);
            }
            None => {
                let _ = writeln!(rpt, "decay.fitted_rate = below-noise-floor");
            }
        }
        let _ = writeln!(rpt, "field.max_speed = {:.17e}", report.max_speed);
        self.write_file("report.txt", &rpt)?;
        self.finish_manifest("decay-study", started)
    }

    pub fn run_optimality_study(&mut self) -> Result<()> {
        let started = Instant::now();
        let trunc = build_trunc(&self.cfg)?;
        let geom = build_geometry(&self.cfg)?;
        let mesh = build_run_mesh(&self.cfg, &geom)?;
        let (_, report) = self.solve_once(&mesh, trunc, self.cfg.m0)?;
        let far = far_state(&trunc.law, geom.wall.f_bar, self.cfg.m0)?;
        let stations = self.cfg.decay_stations();
        let opt = optimality_lower_bound(
            &mesh,
            &trunc,
            &report.phi,
            &far,
            &stations,
            self.cfg.optimality_flux_tol,
        )?;

        let mut table = String::from("# t deficit lower_bound sup_dev\n");
        let mut certified = true;
        for s in &opt.stations {
            let _ = writeln!(
                table,
                "{:.6} {:.12e} {:.12e} {:.12e}",
                s.t, s.deficit, s.lower_bound, s.sup_dev
            );
            certified &= s.lower_bound <= s.sup_dev * (1.0 + 1e-12) + 1e-300;
        }
        self.write_file("optimality.txt", &table)?;

        let mut rpt = String::from("[optimality]\n");
        let _ = writeln!(rpt, "optimality.exponent = {:.12e}", opt.exponent.rate);
        let _ = writeln!(
            rpt,
            "optimality.exponent_ci = {:.6e}",
            opt.exponent.ci_half_width
        );
        let _ = writeln!(rpt, "optimality.geometric_l = {}", self.cfg.decay_l);
        let _ = writeln!(rpt, "optimality.lower_bound_certified = {certified}");
        self.write_file("report.txt", &rpt)?;
        self.finish_manifest("optimality-study", started)
    }

    /// Property battery over the configured problem. Returns the number of
    /// failed checks; prints one line per check.
    pub fn run_verify(&mut self) -> Result<usize> {
        let started = Instant::now();
        let trunc = build_trunc(&self.cfg)?;
        let geom = build_geometry(&self.cfg)?;
        let mesh = build_run_mesh(&self.cfg, &geom)?;
        let m0 = self.cfg.m0;
        let mut lines: Vec<(String, bool)> = Vec::new();

        let (_, report) = self.solve_once(&mesh, trunc, m0)?;
        lines.push((
            format!(
                "newton converged: residual {:.3e} <= {:.3e}",
                report.final_residual, self.cfg.newton_tol
            ),
            report.final_residual <= self.cfg.newton_tol,
        ));

        let flux_err = self.station_flux_errors(&mesh, &trunc, &report.phi, m0)?;
        let flux_tol = self.cfg.optimality_flux_tol * m0.abs().max(1.0);
        lines.push((
            format!("flux conservation: max station error {flux_err:.3e} <= {flux_tol:.3e}"),
            flux_err <= flux_tol,
        ));

        let q_sq = report.max_speed * report.max_speed;
        let cap = 1.0 - 2.0 * self.cfg.epsilon;
        lines.push((
            format!("subsonic certificate: Q^2 = {q_sq:.6} < {cap:.6}"),
            q_sq < cap,
        ));

        let monotone = report
            .energy_history
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        lines.push(("energy decreases along Newton".to_string(), monotone));

        // Truncation independence: the converged subsonic solve must not
        // depend on epsilon.
        if q_sq < cap {
            let law = DensityLaw::new(GasModel::new(self.cfg.gamma)?);
            let trunc_half = TruncatedDensity::build(law, 0.5 * self.cfg.epsilon)?;
            let sys2 = DiscreteSystem::new(&mesh, trunc_half, m0)?;
            let report2 = solve(&sys2, &solver_config(&self.cfg), None)?;
            let mut max_diff: f64 = 0.0;
            for (a, b) in report.phi.iter().zip(&report2.phi) {
                max_diff = max_diff.max((a - b).abs());
            }
            let tol = 10.0 * self.cfg.newton_tol;
            lines.push((
                format!("truncation independence: max |dphi| {max_diff:.3e} <= {tol:.3e}"),
                max_diff <= tol,
            ));
        }

        // Determinism of the sequential path: bit-identical re-solve.
        let (_, report3) = self.solve_once(&mesh, trunc, m0)?;
        let identical = report
            .phi
            .iter()
            .zip(&report3.phi)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        lines.push(("determinism: re-solve is bit-identical".to_string(), identical));

        // Weighted slab estimate on a representative widened slab.
        if mesh.half_length >= 6.0 {
            let far = far_state(&trunc.law, geom.wall.f_bar, m0)?;
            let lambda_p = poincare_constant(&mesh, mesh.z_planes[mesh.n_z])?;
            let h = (mesh.half_length / 4.0).floor().max(1.0);
            let t1 = -h / 2.0;
            let t2 = h / 2.0;
            let check = weighted_slab_check(
                &mesh, &trunc, &report.phi, far.q_bar, t1, t2, h, None, lambda_p,
            )?;
            lines.push((
                format!(
                    "weighted slab estimate: lhs {:.3e} <= rhs {:.3e}",
                    check.lhs, check.rhs
                ),
                check.lhs <= check.rhs * (1.0 + 1e-8) + 1e-300,
            ));
        }

        let mut out = String::from("[verify]\n");
        let mut failures = 0;
        for (desc, ok) in &lines {
            let status = if *ok { "pass" } else { "FAIL" };
            println!("{status}: {desc}");
            let _ = writeln!(out, "{status}: {desc}");
            if !*ok {
                failures += 1;
            }
        }
        self.write_file("verify.txt", &out)?;
        self.finish_manifest("verify", started)?;
        Ok(failures)
    }
}

/// Parsed field dump: coordinates and the five value columns.
struct FieldDump {
    rows: Vec<[f64; 8]>,
}

fn parse_field_dump(path: &Path) -> Result<FieldDump> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), line_no + 1))?;
        if cols.len() != 8 {
            bail!(
                "{}:{}: expected 8 columns, got {}",
                path.display(),
                line_no + 1,
                cols.len()
            );
        }
        rows.push([
            cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6], cols[7],
        ]);
    }
    Ok(FieldDump { rows })
}

/// Interpolation-free field comparison on shared lattice points.
#[derive(Debug, Clone, Copy)]
pub struct FieldDiff {
    pub phi_max: f64,
    pub phi_l2: f64,
    pub grad_max: f64,
    pub grad_l2: f64,
    pub shared_points: usize,
}

pub fn diff_fields(a: &Path, b: &Path) -> Result<FieldDiff> {
    let fa = parse_field_dump(a)?;
    let fb = parse_field_dump(b)?;
    // Index B by rounded coordinates; compare on the common region only.
    let key = |r: &[f64; 8]| -> (i64, i64, i64) {
        (
            (r[0] * 1e9).round() as i64,
            (r[1] * 1e9).round() as i64,
            (r[2] * 1e9).round() as i64,
        )
    };
    let mut index = std::collections::HashMap::new();
    for row in &fb.rows {
        index.insert(key(row), *row);
    }
    let mut phi_max: f64 = 0.0;
    let mut phi_sq = 0.0;
    let mut grad_max: f64 = 0.0;
    let mut grad_sq = 0.0;
    let mut shared = 0usize;
    for row in &fa.rows {
        let Some(other) = index.get(&key(row)) else {
            continue;
        };
        shared += 1;
        let dphi = (row[3] - other[3]).abs();
        phi_max = phi_max.max(dphi);
        phi_sq += dphi * dphi;
        let dg = ((row[4] - other[4]).powi(2)
            + (row[5] - other[5]).powi(2)
            + (row[6] - other[6]).powi(2))
        .sqrt();
        grad_max = grad_max.max(dg);
        grad_sq += dg * dg;
    }
    if shared == 0 {
        bail!("incompatible meshes: no shared lattice points");
    }
    Ok(FieldDiff {
        phi_max,
        phi_l2: (phi_sq / shared as f64).sqrt(),
        grad_max,
        grad_l2: (grad_sq / shared as f64).sqrt(),
        shared_points: shared,
    })
}
