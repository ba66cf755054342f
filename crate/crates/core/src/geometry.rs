//! Nozzle wall and obstacle profiles in cylindrical coordinates.
//!
//! The nozzle is `r < f1(theta, x3)` with an obstacle `r < f2(theta, x3)`
//! supported on a finite axial interval. Two closed-form wall families are
//! provided (straight beyond an onset abscissa, and an algebraically decaying
//! perturbation of the limiting radius) plus a tabulated profile with cubic
//! spline interpolation. Admissibility of a geometry is certified by grid
//! sampling at construction.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("geometry inadmissible at theta = {theta}, x3 = {x3}: {reason}")]
    Inadmissible { theta: f64, x3: f64, reason: String },
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Natural cubic spline through strictly increasing abscissas.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, GeometryError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(GeometryError::InvalidProfile(
                "spline needs at least two samples".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GeometryError::InvalidProfile(
                "abscissas must be strictly increasing".into(),
            ));
        }
        // Tridiagonal solve for natural end conditions.
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut sub = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                sub[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let h0 = x[i + 1] - x[i];
                let w = h0 / diag[i - 1];
                diag[i] -= w * sub[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (1..k).rev() {
                m[i] = (rhs[i - 1] - sub[i - 1] * m[i + 1]) / diag[i - 1];
            }
        }
        Ok(Self { x, y, m })
    }

    /// Evaluate with constant extension outside the sample range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = match self.x.partition_point(|&xk| xk <= t) {
            0 => 0,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }
}

/// Radial wall family.
#[derive(Debug, Clone)]
pub enum WallKind {
    /// `f1 = f_bar` everywhere.
    Straight,
    /// `f1 = f_bar + amplitude * switch(|x3|) * (1 + |x3|)^(-decay_l)`, with a
    /// C^2 switch that vanishes for `|x3| <= K/2` and equals 1 for `|x3| >= K`.
    /// Upstream mirrors downstream by reflection.
    Algebraic { amplitude: f64, decay_l: f64 },
    /// Cubic spline through tabulated `(x3, f1)` samples, constant outside
    /// the tabulated range.
    Tabulated(CubicSpline),
}

/// Nozzle wall profile `f1`.
#[derive(Debug, Clone)]
pub struct NozzleProfile {
    pub kind: WallKind,
    /// Limiting radius at the far fields.
    pub f_bar: f64,
    /// Onset abscissa `K` beyond which the asymptotic form holds.
    pub onset_k: f64,
    /// Optional Fourier modulation of the wall perturbation in theta:
    /// the perturbation is multiplied by `1 + sum a_k cos(k theta) + b_k sin(k theta)`.
    pub theta_modes: Vec<(f64, f64)>,
}

impl NozzleProfile {
    pub fn straight(f_bar: f64) -> Result<Self, GeometryError> {
        if !(f_bar > 0.0) {
            return Err(GeometryError::InvalidProfile(format!(
                "limiting radius must be positive, got {f_bar}"
            )));
        }
        Ok(Self {
            kind: WallKind::Straight,
            f_bar,
            onset_k: 0.0,
            theta_modes: Vec::new(),
        })
    }

    pub fn algebraic(
        f_bar: f64,
        amplitude: f64,
        decay_l: f64,
        onset_k: f64,
    ) -> Result<Self, GeometryError> {
        if !(f_bar > 0.0) || !(decay_l > 0.0) || !(onset_k > 0.0) {
            return Err(GeometryError::InvalidProfile(format!(
                "algebraic wall needs f_bar, l, K > 0 (got {f_bar}, {decay_l}, {onset_k})"
            )));
        }
        Ok(Self {
            kind: WallKind::Algebraic {
                amplitude,
                decay_l,
            },
            f_bar,
            onset_k,
            theta_modes: Vec::new(),
        })
    }

    fn theta_factor(&self, theta: f64) -> f64 {
        let mut m = 1.0;
        for (k, &(a, b)) in self.theta_modes.iter().enumerate() {
            let kk = (k + 1) as f64;
            m += a * (kk * theta).cos() + b * (kk * theta).sin();
        }
        m
    }

    /// Quintic smoothstep in `|x3|` between `K/2` and `K`; C^2 everywhere.
    fn switch(&self, x3: f64) -> f64 {
        let a = 0.5 * self.onset_k;
        let b = self.onset_k;
        let t = x3.abs();
        if t <= a {
            0.0
        } else if t >= b {
            1.0
        } else {
            let s = (t - a) / (b - a);
            s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
        }
    }

    /// Wall radius `f1(theta, x3)`.
    pub fn radius(&self, theta: f64, x3: f64) -> f64 {
        match &self.kind {
            WallKind::Straight => self.f_bar,
            WallKind::Algebraic {
                amplitude,
                decay_l,
            } => {
                let bump =
                    amplitude * self.switch(x3) * (1.0 + x3.abs()).powf(-decay_l);
                self.f_bar + bump * self.theta_factor(theta)
            }
            WallKind::Tabulated(spline) => spline.eval(x3) * self.theta_factor(theta),
        }
    }
}

/// Smooth obstacle bump supported on `[l1, l2]` with C^2 tip closure:
/// `f2 = b sin^4(pi (x3 - l1) / (l2 - l1))`, independent of theta.
#[derive(Debug, Clone)]
pub struct ObstacleProfile {
    pub l1: f64,
    pub l2: f64,
    /// Maximum radius, attained at the axial midpoint.
    pub b: f64,
}

impl ObstacleProfile {
    pub fn new(l1: f64, l2: f64, b: f64) -> Result<Self, GeometryError> {
        if !(l1 < l2) || !(b > 0.0) {
            return Err(GeometryError::InvalidProfile(format!(
                "obstacle needs l1 < l2 and b > 0 (got [{l1}, {l2}], b = {b})"
            )));
        }
        Ok(Self { l1, l2, b })
    }

    pub fn radius(&self, _theta: f64, x3: f64) -> f64 {
        if x3 <= self.l1 || x3 >= self.l2 {
            return 0.0;
        }
        let s = (std::f64::consts::PI * (x3 - self.l1) / (self.l2 - self.l1)).sin();
        self.b * s * s * s * s
    }
}

/// Certificates produced by the admissibility scan.
#[derive(Debug, Clone, Copy)]
pub struct Admissibility {
    /// Smallest constant C found with `1/C <= f1 <= C`, `0 <= f2 <= C` and
    /// `1/C <= f1 - f2 <= C` over the obstacle extent.
    pub gap_constant: f64,
    /// For algebraic walls: grid maximum of
    /// `x3^l * sum_k |x3^k d^k(f1 - f_bar)|` over `x3 > K`.
    pub decay_constant: Option<f64>,
    /// Extremes of the cross-section area over the sampled extent.
    pub area_min: f64,
    pub area_max: f64,
}

/// A complete nozzle-with-obstacle geometry with its certified admissibility.
#[derive(Debug, Clone)]
pub struct NozzleGeometry {
    pub wall: NozzleProfile,
    pub obstacle: Option<ObstacleProfile>,
    pub admissibility: Admissibility,
}

impl NozzleGeometry {
    pub fn new(
        wall: NozzleProfile,
        obstacle: Option<ObstacleProfile>,
    ) -> Result<Self, GeometryError> {
        let admissibility = verify_admissibility(&wall, obstacle.as_ref())?;
        Ok(Self {
            wall,
            obstacle,
            admissibility,
        })
    }

    pub fn wall_radius(&self, theta: f64, x3: f64) -> f64 {
        self.wall.radius(theta, x3)
    }

    pub fn obstacle_radius(&self, theta: f64, x3: f64) -> f64 {
        self.obstacle
            .as_ref()
            .map_or(0.0, |o| o.radius(theta, x3))
    }

    /// Cross-section area `|Sigma_{x3}| = 1/2 integral of (f1^2 - f2^2) d theta`
    /// by composite trapezoid over the full period.
    pub fn cross_section_area(&self, x3: f64) -> f64 {
        let n = 256;
        let mut sum = 0.0;
        for j in 0..n {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let f1 = self.wall_radius(theta, x3);
            let f2 = self.obstacle_radius(theta, x3);
            sum += f1 * f1 - f2 * f2;
        }
        0.5 * sum * 2.0 * std::f64::consts::PI / n as f64
    }
}

/// Grid-certify the admissibility inequalities and (for algebraic walls) the
/// boundary decay bound. Fails loudly with the violating sample point.
pub fn verify_admissibility(
    wall: &NozzleProfile,
    obstacle: Option<&ObstacleProfile>,
) -> Result<Admissibility, GeometryError> {
    let extent = {
        let mut x = 2.0 * wall.onset_k + 10.0;
        if let Some(o) = obstacle {
            x = x.max(o.l1.abs() + 10.0).max(o.l2.abs() + 10.0);
        }
        if let WallKind::Tabulated(s) = &wall.kind {
            let (a, b) = s.range();
            x = x.max(a.abs()).max(b.abs());
        }
        x
    };
    let (n_theta, n_x) = (64, 2001);
    let mut f1_min = f64::INFINITY;
    let mut f1_max: f64 = 0.0;
    let mut area_min = f64::INFINITY;
    let mut area_max: f64 = 0.0;
    let mut gap_min = f64::INFINITY;
    let mut gap_max: f64 = 0.0;
    let mut f2_max: f64 = 0.0;

    for i in 0..n_x {
        let x3 = -extent + 2.0 * extent * i as f64 / (n_x - 1) as f64;
        let mut sect = 0.0;
        for j in 0..n_theta {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
            let f1 = wall.radius(theta, x3);
            let f2 = obstacle.map_or(0.0, |o| o.radius(theta, x3));
            if !(f1 > 0.0) {
                return Err(GeometryError::Inadmissible {
                    theta,
                    x3,
                    reason: format!("wall radius {f1} is not positive"),
                });
            }
            if f2 < 0.0 {
                return Err(GeometryError::Inadmissible {
                    theta,
                    x3,
                    reason: format!("obstacle radius {f2} is negative"),
                });
            }
            if f1 - f2 <= 0.0 {
                return Err(GeometryError::Inadmissible {
                    theta,
                    x3,
                    reason: format!("annular gap pinches: f1 = {f1}, f2 = {f2}"),
                });
            }
            f1_min = f1_min.min(f1);
            f1_max = f1_max.max(f1);
            f2_max = f2_max.max(f2);
            if f2 > 0.0 {
                gap_min = gap_min.min(f1 - f2);
                gap_max = gap_max.max(f1 - f2);
            }
            sect += f1 * f1 - f2 * f2;
        }
        sect *= 0.5 * 2.0 * std::f64::consts::PI / n_theta as f64;
        area_min = area_min.min(sect);
        area_max = area_max.max(sect);
    }

    let mut gap_constant = f1_max.max(1.0 / f1_min).max(f2_max);
    if gap_min.is_finite() {
        gap_constant = gap_constant.max(1.0 / gap_min).max(gap_max);
    }

    let decay_constant = match &wall.kind {
        WallKind::Algebraic { decay_l, .. } => {
            let mut c: f64 = 0.0;
            let d = 1e-4;
            for i in 0..500 {
                let x3 = wall.onset_k + 1e-6 + (extent - wall.onset_k) * i as f64 / 499.0;
                for j in 0..8 {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / 8.0;
                    let g = |x: f64| wall.radius(theta, x) - wall.f_bar;
                    let g0 = g(x3);
                    let g1 = (g(x3 + d) - g(x3 - d)) / (2.0 * d);
                    let g2 = (g(x3 + d) - 2.0 * g0 + g(x3 - d)) / (d * d);
                    let sum = g0.abs() + (x3 * g1).abs() + (x3 * x3 * g2).abs();
                    c = c.max(sum * x3.powf(*decay_l));
                }
            }
            Some(c)
        }
        _ => None,
    };

    Ok(Admissibility {
        gap_constant,
        decay_constant,
        area_min,
        area_max,
    })
}

/// Load a tabulated profile from plain-text rows `x3 f1 [f2]` with strictly
/// increasing `x3`; lines starting with '#' are comments. Returns the wall and,
/// when a third column is present, the obstacle bump as a spline profile.
pub fn load_tabulated(path: &Path) -> Result<(NozzleProfile, Option<ObstacleProfile>), GeometryError> {
    let text = std::fs::read_to_string(path)?;
    parse_tabulated(&text)
}

pub fn parse_tabulated(text: &str) -> Result<(NozzleProfile, Option<ObstacleProfile>), GeometryError> {
    let mut xs = Vec::new();
    let mut f1s = Vec::new();
    let mut f2s: Vec<f64> = Vec::new();
    let mut has_f2 = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 && cols.len() != 3 {
            return Err(GeometryError::Parse {
                line: lineno + 1,
                msg: format!("expected 2 or 3 columns, got {}", cols.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, GeometryError> {
            s.parse().map_err(|_| GeometryError::Parse {
                line: lineno + 1,
                msg: format!("bad number {s:?}"),
            })
        };
        let x = parse(cols[0])?;
        if let Some(&last) = xs.last() {
            if x <= last {
                return Err(GeometryError::Parse {
                    line: lineno + 1,
                    msg: format!("x3 must be strictly increasing, {x} after {last}"),
                });
            }
        }
        match has_f2 {
            None => has_f2 = Some(cols.len() == 3),
            Some(h) if h != (cols.len() == 3) => {
                return Err(GeometryError::Parse {
                    line: lineno + 1,
                    msg: "inconsistent column count".into(),
                })
            }
            _ => {}
        }
        xs.push(x);
        f1s.push(parse(cols[1])?);
        if cols.len() == 3 {
            f2s.push(parse(cols[2])?);
        }
    }
    if xs.len() < 2 {
        return Err(GeometryError::InvalidProfile(
            "tabulated profile needs at least two rows".into(),
        ));
    }
    let f_bar = *f1s.last().unwrap();
    let extent = xs.last().unwrap().abs().max(xs[0].abs());
    let wall = NozzleProfile {
        kind: WallKind::Tabulated(CubicSpline::new(xs.clone(), f1s)?),
        f_bar,
        onset_k: extent,
        theta_modes: Vec::new(),
    };
    // A tabulated third column is reduced to the bump family: extent from the
    // nonzero support, height from the maximum sample.
    let obstacle = if has_f2 == Some(true) {
        let nz: Vec<usize> = (0..xs.len()).filter(|&i| f2s[i] > 0.0).collect();
        if nz.is_empty() {
            None
        } else {
            let l1 = xs[nz[0].saturating_sub(1)];
            let l2 = xs[(nz[nz.len() - 1] + 1).min(xs.len() - 1)];
            let b = f2s.iter().cloned().fold(0.0, f64::max);
            Some(ObstacleProfile::new(l1, l2, b)?)
        }
    } else {
        None
    };
    Ok((wall, obstacle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn straight_unit() -> NozzleGeometry {
        NozzleGeometry::new(NozzleProfile::straight(1.0).unwrap(), None).unwrap()
    }

    #[test]
    fn straight_wall_is_constant() {
        let g = straight_unit();
        assert_eq!(g.wall_radius(0.3, 7.0), 1.0);
        assert_eq!(g.wall_radius(1.0, -200.0), 1.0);
    }

    #[test]
    fn algebraic_zero_amplitude_is_straight_beyond_onset() {
        let wall = NozzleProfile::algebraic(1.0, 0.0, 1.0, 5.0).unwrap();
        for x3 in [6.0, 10.0, 100.0, -40.0] {
            assert_eq!(wall.radius(0.0, x3), 1.0);
        }
    }

    #[test]
    fn algebraic_wall_closed_form() {
        let wall = NozzleProfile::algebraic(1.0, 0.2, 1.0, 5.0).unwrap();
        let r = wall.radius(0.7, 100.0);
        assert!((r - (1.0 + 0.2 / 101.0)).abs() < 1e-14);
        // Upstream mirror.
        let r_up = wall.radius(0.7, -100.0);
        assert!((r_up - r).abs() < 1e-14);
        // Near the obstacle region the perturbation is switched off.
        assert_eq!(wall.radius(0.0, 1.0), 1.0);
    }

    #[test]
    fn obstacle_tips_close_smoothly() {
        let o = ObstacleProfile::new(-1.0, 1.0, 0.4).unwrap();
        assert_eq!(o.radius(0.0, -1.0), 0.0);
        assert_eq!(o.radius(0.0, 1.0), 0.0);
        assert_eq!(o.radius(0.0, 5.0), 0.0);
        assert!((o.radius(0.0, 0.0) - 0.4).abs() < 1e-15);
        // Central differences of the tip slope and curvature.
        let d = 1e-4;
        for tip in [-1.0, 1.0] {
            let g1 = (o.radius(0.0, tip + d) - o.radius(0.0, tip - d)) / (2.0 * d);
            let g2 = (o.radius(0.0, tip + d) - 2.0 * o.radius(0.0, tip) + o.radius(0.0, tip - d))
                / (d * d);
            assert!(g1.abs() < 1e-6, "tip slope {g1}");
            assert!(g2.abs() < 1e-3, "tip curvature {g2}");
        }
    }

    #[test]
    fn cross_section_areas() {
        let g = straight_unit();
        assert!((g.cross_section_area(0.0) - PI).abs() < 1e-12);

        let with_obstacle = NozzleGeometry::new(
            NozzleProfile::straight(1.0).unwrap(),
            Some(ObstacleProfile::new(-1.0, 1.0, 0.4).unwrap()),
        )
        .unwrap();
        let mid = with_obstacle.cross_section_area(0.0);
        assert!((mid - PI * (1.0 - 0.16)).abs() < 1e-12);
    }

    #[test]
    fn cross_section_area_algebraic_far_downstream() {
        let wall = NozzleProfile::algebraic(1.0, 0.2, 1.0, 5.0).unwrap();
        let g = NozzleGeometry::new(wall, None).unwrap();
        let x3 = 50.0;
        let f1 = 1.0 + 0.2 / (1.0 + x3);
        let exact = PI * f1 * f1;
        assert!((g.cross_section_area(x3) - exact).abs() <= 1e-10 * exact);
    }

    #[test]
    fn admissibility_straight_is_tight() {
        let adm = verify_admissibility(&NozzleProfile::straight(1.0).unwrap(), None).unwrap();
        assert!((adm.gap_constant - 1.0).abs() < 1e-12);
        assert!((adm.area_min - PI).abs() < 1e-10);
        assert!((adm.area_max - PI).abs() < 1e-10);
    }

    #[test]
    fn admissibility_rejects_pinched_gap() {
        let wall = NozzleProfile::straight(1.0).unwrap();
        let obstacle = ObstacleProfile::new(-1.0, 1.0, 1.0).unwrap();
        let err = verify_admissibility(&wall, Some(&obstacle));
        assert!(matches!(err, Err(GeometryError::Inadmissible { .. })));
    }

    #[test]
    fn admissibility_decay_bound_algebraic() {
        let wall = NozzleProfile::algebraic(1.0, 0.2, 2.0, 5.0).unwrap();
        let adm = verify_admissibility(&wall, None).unwrap();
        let c = adm.decay_constant.unwrap();
        assert!(c.is_finite() && c > 0.0);
        // For f1 - f_bar = a (1+x)^-l the sum of scaled derivatives is
        // bounded by a (1 + l + l(l+1)) in the limit; allow headroom for the
        // finite-difference evaluation.
        assert!(c < 0.2 * (1.0 + 2.0 + 6.0) * 1.2, "decay constant {c}");
    }

    #[test]
    fn obstacle_vanishes_outside_support() {
        let o = ObstacleProfile::new(-2.0, 3.0, 0.5).unwrap();
        for x3 in [-10.0, -2.0, 3.0, 3.0001, 50.0] {
            assert_eq!(o.radius(1.0, x3), 0.0);
        }
        for k in 1..20 {
            let x3 = -2.0 + 5.0 * k as f64 / 20.0;
            assert!(o.radius(0.0, x3) > 0.0);
        }
    }

    #[test]
    fn algebraic_decay_uniform_bound() {
        let wall = NozzleProfile::algebraic(1.0, 0.2, 1.5, 4.0).unwrap();
        for k in 0..200 {
            let x3 = 4.1 + 100.0 * k as f64 / 200.0;
            let dev = (wall.radius(0.0, x3) - 1.0).abs() * (1.0 + x3).powf(1.5);
            assert!(dev <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn tabulated_round_trip() {
        let text = "# sample profile\n-5 1.0\n-1 1.1 0.0\n";
        assert!(parse_tabulated(text).is_err()); // inconsistent columns

        let text = "# wall only\n-5 1.0\n0 1.2\n5 1.0\n";
        let (wall, obs) = parse_tabulated(text).unwrap();
        assert!(obs.is_none());
        assert!((wall.radius(0.0, 0.0) - 1.2).abs() < 1e-12);
        assert!((wall.radius(0.0, -5.0) - 1.0).abs() < 1e-12);
        // Constant extension outside the range.
        assert!((wall.radius(0.0, 9.0) - 1.0).abs() < 1e-12);

        let text = "-5 1.0 0.0\n-1 1.0 0.0\n0 1.0 0.4\n1 1.0 0.0\n5 1.0 0.0\n";
        let (_, obs) = parse_tabulated(text).unwrap();
        let obs = obs.unwrap();
        assert_eq!(obs.l1, -1.0);
        assert_eq!(obs.l2, 1.0);
        assert_eq!(obs.b, 0.4);
    }

    #[test]
    fn tabulated_rejects_non_monotone() {
        assert!(parse_tabulated("0 1.0\n0 1.1\n").is_err());
        assert!(parse_tabulated("0 1.0\n-1 1.1\n").is_err());
    }

    #[test]
    fn spline_reproduces_linear_data() {
        let s = CubicSpline::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for k in 0..=30 {
            let t = 3.0 * k as f64 / 30.0;
            assert!((s.eval(t) - (1.0 + t)).abs() < 1e-12);
        }
    }
}
