//! Declarative run configuration: flat `section.key = value` text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// A configuration error naming the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Wall family selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeometryFamily {
    Straight,
    Algebraic,
    Tabulated(String),
}

/// Fully resolved run configuration; every field has a documented default.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `gas.gamma`, default 1.4.
    pub gamma: f64,
    /// `truncation.epsilon`, default 0.1.
    pub epsilon: f64,
    /// `geometry.family` (straight | algebraic | tabulated), default straight.
    pub family: GeometryFamily,
    /// `geometry.f_bar`, default 1.0.
    pub f_bar: f64,
    /// `geometry.a` (perturbation amplitude), default 0.2.
    pub amplitude: f64,
    /// `geometry.l` (algebraic decay exponent), default 1.0.
    pub decay_l: f64,
    /// `geometry.k` (asymptotic onset), default 2.0.
    pub onset_k: f64,
    /// `obstacle.l1` / `obstacle.l2` / `obstacle.b`; no obstacle when
    /// `obstacle.b` is 0 (the default).
    pub obstacle_l1: f64,
    pub obstacle_l2: f64,
    pub obstacle_b: f64,
    /// `mesh.half_length`, default 8.
    pub half_length: f64,
    /// `mesh.n_r` / `mesh.n_theta` / `mesh.n_z`, defaults 8 / 16 / 32.
    pub n_r: usize,
    pub n_theta: usize,
    pub n_z: usize,
    /// `mesh.grading` stretch ratio, default 1.0 (uniform);
    /// `mesh.grading_center`, default 0.0.
    pub grading: f64,
    pub grading_center: f64,
    /// `flux.m0`, default pi * momentum(0.3).
    pub m0: f64,
    /// `flux.list` (comma separated) for sweeps; empty by default.
    pub flux_list: Vec<f64>,
    /// `flux.bracket_rel_width`, default 0.02.
    pub bracket_rel_width: f64,
    /// `solver.newton_tol`, default 1e-10.
    pub newton_tol: f64,
    /// `solver.max_newton`, default 50.
    pub max_newton: usize,
    /// `solver.cg_tol`, default 1e-8.
    pub cg_tol: f64,
    /// `decay.t_min` / `decay.t_max` / `decay.t_step` fit stations;
    /// defaults 2, half_length - 2, 1.
    pub decay_t_min: f64,
    pub decay_t_max: f64,
    pub decay_t_step: f64,
    /// `decay.kind` (exponential | algebraic), default exponential.
    pub decay_algebraic: bool,
    /// `decay.noise_floor`, default 1e-24.
    pub noise_floor: f64,
    /// `optimality.flux_tol`, default 1e-5.
    pub optimality_flux_tol: f64,
    /// `output.vtk`, default false.
    pub write_vtk: bool,
    /// `seed` for randomized property checks, default 0.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: 1.4,
            epsilon: 0.1,
            family: GeometryFamily::Straight,
            f_bar: 1.0,
            amplitude: 0.2,
            decay_l: 1.0,
            onset_k: 2.0,
            obstacle_l1: -1.0,
            obstacle_l2: 1.0,
            obstacle_b: 0.0,
            half_length: 8.0,
            n_r: 8,
            n_theta: 16,
            n_z: 32,
            grading: 1.0,
            grading_center: 0.0,
            m0: 0.0, // resolved after gamma is known
            flux_list: Vec::new(),
            bracket_rel_width: 0.02,
            newton_tol: 1e-10,
            max_newton: 50,
            cg_tol: 1e-8,
            decay_t_min: 2.0,
            decay_t_max: f64::NAN, // resolved from half_length
            decay_t_step: 1.0,
            decay_algebraic: false,
            noise_floor: 1e-24,
            optimality_flux_tol: 1e-5,
            write_vtk: false,
            seed: 0,
        }
    }
}

fn parse_f64(field: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse()
        .map_err(|_| err(field, format!("not a number: `{value}`")))
}

fn parse_usize(field: &str, value: &str) -> Result<usize, ConfigError> {
    value
        .parse()
        .map_err(|_| err(field, format!("not a positive integer: `{value}`")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(err(field, format!("not a boolean: `{other}`"))),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("<config path>", e.to_string()))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                err(
                    &format!("line {}", line_no + 1),
                    format!("expected `section.key = value`, got `{line}`"),
                )
            })?;
            raw.insert(key.trim().to_string(), value.trim().to_string());
        }

        let mut cfg = Self::default();
        let mut family_raw = String::from("straight");
        let mut table_path = None;
        for (key, value) in &raw {
            match key.as_str() {
                "gas.gamma" => cfg.gamma = parse_f64(key, value)?,
                "truncation.epsilon" => cfg.epsilon = parse_f64(key, value)?,
                "geometry.family" => family_raw = value.clone(),
                "geometry.table" => table_path = Some(value.clone()),
                "geometry.f_bar" => cfg.f_bar = parse_f64(key, value)?,
                "geometry.a" => cfg.amplitude = parse_f64(key, value)?,
                "geometry.l" => cfg.decay_l = parse_f64(key, value)?,
                "geometry.k" => cfg.onset_k = parse_f64(key, value)?,
                "obstacle.l1" => cfg.obstacle_l1 = parse_f64(key, value)?,
                "obstacle.l2" => cfg.obstacle_l2 = parse_f64(key, value)?,
                "obstacle.b" => cfg.obstacle_b = parse_f64(key, value)?,
                "mesh.half_length" => cfg.half_length = parse_f64(key, value)?,
                "mesh.n_r" => cfg.n_r = parse_usize(key, value)?,
                "mesh.n_theta" => cfg.n_theta = parse_usize(key, value)?,
                "mesh.n_z" => cfg.n_z = parse_usize(key, value)?,
                "mesh.grading" => cfg.grading = parse_f64(key, value)?,
                "mesh.grading_center" => cfg.grading_center = parse_f64(key, value)?,
                "flux.m0" => cfg.m0 = parse_f64(key, value)?,
                "flux.list" => {
                    cfg.flux_list = value
                        .split(',')
                        .map(|v| parse_f64(key, v.trim()))
                        .collect::<Result<_, _>>()?;
                }
                "flux.bracket_rel_width" => {
                    cfg.bracket_rel_width = parse_f64(key, value)?
                }
                "solver.newton_tol" => cfg.newton_tol = parse_f64(key, value)?,
                "solver.max_newton" => cfg.max_newton = parse_usize(key, value)?,
                "solver.cg_tol" => cfg.cg_tol = parse_f64(key, value)?,
                "decay.t_min" => cfg.decay_t_min = parse_f64(key, value)?,
                "decay.t_max" => cfg.decay_t_max = parse_f64(key, value)?,
                "decay.t_step" => cfg.decay_t_step = parse_f64(key, value)?,
                "decay.kind" => {
                    cfg.decay_algebraic = match value.as_str() {
                        "exponential" => false,
                        "algebraic" => true,
                        other => {
                            return Err(err(
                                key,
                                format!("expected exponential|algebraic, got `{other}`"),
                            ))
                        }
                    }
                }
                "decay.noise_floor" => cfg.noise_floor = parse_f64(key, value)?,
                "optimality.flux_tol" => {
                    cfg.optimality_flux_tol = parse_f64(key, value)?
                }
                "output.vtk" => cfg.write_vtk = parse_bool(key, value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(key, format!("not an integer: `{value}`")))?
                }
                other => return Err(err(other, "unknown configuration key")),
            }
        }
        cfg.family = match family_raw.as_str() {
            "straight" => GeometryFamily::Straight,
            "algebraic" => GeometryFamily::Algebraic,
            "tabulated" => GeometryFamily::Tabulated(table_path.ok_or_else(|| {
                err("geometry.table", "tabulated family needs a table path")
            })?),
            other => {
                return Err(err(
                    "geometry.family",
                    format!("expected straight|algebraic|tabulated, got `{other}`"),
                ))
            }
        };
        if !raw.contains_key("flux.m0") && cfg.flux_list.is_empty() {
            // Default flux: the one carried by a uniform 0.3-speed stream.
            let law = nozzle_core::gas::DensityLaw::new(
                nozzle_core::gas::GasModel::new(cfg.gamma)
                    .map_err(|e| err("gas.gamma", e.to_string()))?,
            );
            let momentum = law
                .momentum(0.3)
                .map_err(|e| err("flux.m0", e.to_string()))?;
            cfg.m0 = std::f64::consts::PI * cfg.f_bar * cfg.f_bar * momentum;
        }
        cfg.resolve_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_defaults(&mut self) {
        if self.decay_t_max.is_nan() {
            self.decay_t_max = self.half_length - 2.0;
        }
        if self.m0 == 0.0 && !self.flux_list.is_empty() {
            self.m0 = self.flux_list[0];
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 1.0) {
            return Err(err("gas.gamma", format!("must exceed 1, got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
            return Err(err(
                "truncation.epsilon",
                format!("must lie in (0, 0.25), got {}", self.epsilon),
            ));
        }
        if !(self.f_bar > 0.0) {
            return Err(err("geometry.f_bar", "must be positive"));
        }
        if self.obstacle_b < 0.0 {
            return Err(err("obstacle.b", "must be nonnegative"));
        }
        if self.obstacle_b > 0.0 {
            if !(self.obstacle_l1 < self.obstacle_l2) {
                return Err(err("obstacle.l1", "needs obstacle.l1 < obstacle.l2"));
            }
            if self.obstacle_l1.abs().max(self.obstacle_l2.abs()) + 2.0
                >= self.half_length
            {
                return Err(err(
                    "mesh.half_length",
                    "domain too short for the obstacle",
                ));
            }
        }
        if !(self.half_length > 0.0) {
            return Err(err("mesh.half_length", "must be positive"));
        }
        if self.n_r < 4 || self.n_theta < 4 || self.n_z < 8 {
            return Err(err(
                "mesh.n_r",
                "need mesh.n_r, mesh.n_theta >= 4 and mesh.n_z >= 8",
            ));
        }
        if !(self.grading >= 1.0) {
            return Err(err("mesh.grading", "must be >= 1"));
        }
        if self.m0 < 0.0 {
            return Err(err("flux.m0", "must be nonnegative"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(err("solver.newton_tol", "must be positive"));
        }
        if self.decay_t_min >= self.decay_t_max {
            return Err(err(
                "decay.t_min",
                format!(
                    "stations [{}, {}] are empty",
                    self.decay_t_min, self.decay_t_max
                ),
            ));
        }
        if self.decay_t_max + 1.0 > self.half_length + 1e-9 {
            return Err(err(
                "decay.t_max",
                "slab [t, t+1] must stay inside the domain",
            ));
        }
        Ok(())
    }

    /// Fit stations resolved from the decay block.
    pub fn decay_stations(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut t = self.decay_t_min;
        while t <= self.decay_t_max + 1e-9 {
            out.push(t);
            t += self.decay_t_step;
        }
        out
    }

    /// Echo the resolved configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        let family = match &self.family {
            GeometryFamily::Straight => "straight".to_string(),
            GeometryFamily::Algebraic => "algebraic".to_string(),
            GeometryFamily::Tabulated(p) => format!("tabulated ({p})"),
        };
        let mut s = String::new();
        use std::fmt::Write;
        let _ = writeln!(s, "gas.gamma = {}", self.gamma);
        let _ = writeln!(s, "truncation.epsilon = {}", self.epsilon);
        let _ = writeln!(s, "geometry.family = {family}");
        let _ = writeln!(s, "geometry.f_bar = {}", self.f_bar);
        if matches!(self.family, GeometryFamily::Algebraic) {
            let _ = writeln!(s, "geometry.a = {}", self.amplitude);
            let _ = writeln!(s, "geometry.l = {}", self.decay_l);
            let _ = writeln!(s, "geometry.k = {}", self.onset_k);
        }
        if self.obstacle_b > 0.0 {
            let _ = writeln!(s, "obstacle.l1 = {}", self.obstacle_l1);
            let _ = writeln!(s, "obstacle.l2 = {}", self.obstacle_l2);
            let _ = writeln!(s, "obstacle.b = {}", self.obstacle_b);
        }
        let _ = writeln!(s, "mesh.half_length = {}", self.half_length);
        let _ = writeln!(s, "mesh.n_r = {}", self.n_r);
        let _ = writeln!(s, "mesh.n_theta = {}", self.n_theta);
        let _ = writeln!(s, "mesh.n_z = {}", self.n_z);
        let _ = writeln!(s, "mesh.grading = {}", self.grading);
        let _ = writeln!(s, "flux.m0 = {}", self.m0);
        if !self.flux_list.is_empty() {
            let list: Vec<String> =
                self.flux_list.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "flux.list = {}", list.join(", "));
        }
        let _ = writeln!(s, "solver.newton_tol = {}", self.newton_tol);
        let _ = writeln!(s, "solver.max_newton = {}", self.max_newton);
        let _ = writeln!(s, "solver.cg_tol = {}", self.cg_tol);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}
