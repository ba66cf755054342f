//! Structured hexahedral mesh of the truncated domain `Omega_L`.
//!
//! The reference lattice `(s, theta, z)` is mapped through the cylindrical
//! coordinates: every element stores its eight corner `(r, theta, z)` triples
//! and the physical geometry is the trilinear interpolation of those triples
//! pushed through `(r, theta) -> (x, y)`. Jacobians therefore carry the exact
//! `r dr dtheta` measure, which makes disk and annulus cross-section areas
//! quadrature-exact for straight walls.
//!
//! On planes where the obstacle radius vanishes the innermost ring collapses
//! to a single axis node, producing wedge-degenerate hexes with positive
//! Jacobians at interior quadrature points.

use std::io::Write;

use thiserror::Error;

use crate::geometry::NozzleGeometry;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("bad resolution: {0}")]
    BadResolution(String),
    #[error("domain pinches at theta = {theta}, x3 = {x3}")]
    PinchedDomain { theta: f64, x3: f64 },
    #[error("degenerate Jacobian {det} in element {elem}")]
    DegenerateJacobian { elem: usize, det: f64 },
    #[error("no lattice z-plane at station {0}")]
    StationOutOfRange(f64),
}

/// Boundary tags; every boundary quad carries exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    /// Inflow section `Sigma_{-L}`.
    Inflow,
    /// Outflow section `Sigma_{L}`.
    Outflow,
    /// Nozzle wall `r = f1`.
    Wall,
    /// Obstacle surface `r = f2`.
    Obstacle,
}

#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub nodes: [usize; 4],
    pub tag: BoundaryTag,
    pub elem: usize,
    /// Reference-coordinate description of the face: index of the frozen
    /// reference axis (0 = radial, 2 = axial) and its value (-1 or +1).
    pub frozen_axis: usize,
    pub frozen_value: f64,
}

/// 2x2x2 Gauss abscissas.
pub const GAUSS_1D: [f64; 2] = [-0.577_350_269_189_625_7, 0.577_350_269_189_625_7];

/// Corner signs of the reference hex, ordered to match the connectivity:
/// bottom face counterclockwise then top face.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Trilinear shape functions at a reference point.
pub fn shape_values(p: [f64; 3]) -> [f64; 8] {
    std::array::from_fn(|a| {
        let s = CORNER_SIGNS[a];
        0.125 * (1.0 + s[0] * p[0]) * (1.0 + s[1] * p[1]) * (1.0 + s[2] * p[2])
    })
}

/// Reference-coordinate gradients of the trilinear shape functions.
pub fn shape_grads_ref(p: [f64; 3]) -> [[f64; 3]; 8] {
    std::array::from_fn(|a| {
        let s = CORNER_SIGNS[a];
        [
            0.125 * s[0] * (1.0 + s[1] * p[1]) * (1.0 + s[2] * p[2]),
            0.125 * (1.0 + s[0] * p[0]) * s[1] * (1.0 + s[2] * p[2]),
            0.125 * (1.0 + s[0] * p[0]) * (1.0 + s[1] * p[1]) * s[2],
        ]
    })
}

fn invert3(m: [[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let inv = [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ];
    (inv, det)
}

/// Exact-geometry evaluation on one element from its cylindrical corners.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeom<'a> {
    pub cyl: &'a [[f64; 3]; 8],
}

impl ElementGeom<'_> {
    /// Cylindrical coordinates at a reference point.
    pub fn cyl_at(&self, p: [f64; 3]) -> [f64; 3] {
        let n = shape_values(p);
        let mut out = [0.0; 3];
        for a in 0..8 {
            for d in 0..3 {
                out[d] += n[a] * self.cyl[a][d];
            }
        }
        out
    }

    /// Cartesian coordinates at a reference point.
    pub fn xyz_at(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.cyl_at(p);
        [c[0] * c[1].cos(), c[0] * c[1].sin(), c[2]]
    }

    /// Jacobian determinant of the full map reference -> Cartesian.
    pub fn jacobian_det(&self, p: [f64; 3]) -> f64 {
        let (_, det) = self.grads_and_det(p);
        det
    }

    /// Cartesian shape-function gradients and the Jacobian determinant.
    pub fn grads_and_det(&self, p: [f64; 3]) -> ([[f64; 3]; 8], f64) {
        let g_ref = shape_grads_ref(p);
        // d(r, theta, z) / d(reference)
        let mut d = [[0.0; 3]; 3];
        for a in 0..8 {
            for row in 0..3 {
                for col in 0..3 {
                    d[row][col] += self.cyl[a][row] * g_ref[a][col];
                }
            }
        }
        let c = self.cyl_at(p);
        let (cos_t, sin_t) = (c[1].cos(), c[1].sin());
        // J = d(x, y, z)/d(reference) via the cylindrical push-forward.
        let mut jac = [[0.0; 3]; 3];
        for col in 0..3 {
            jac[0][col] = cos_t * d[0][col] - c[0] * sin_t * d[1][col];
            jac[1][col] = sin_t * d[0][col] + c[0] * cos_t * d[1][col];
            jac[2][col] = d[2][col];
        }
        let (inv, det) = invert3(jac);
        // grad_xyz N = J^{-T} grad_ref N
        let grads = std::array::from_fn(|a| {
            let g = g_ref[a];
            [
                inv[0][0] * g[0] + inv[1][0] * g[1] + inv[2][0] * g[2],
                inv[0][1] * g[0] + inv[1][1] * g[1] + inv[2][1] * g[2],
                inv[0][2] * g[0] + inv[1][2] * g[1] + inv[2][2] * g[2],
            ]
        });
        (grads, det)
    }

    /// In-plane area Jacobian of a constant-z face (frozen zeta), carrying the
    /// exact `r dr dtheta` measure.
    pub fn face_area_det(&self, p: [f64; 3]) -> f64 {
        let g_ref = shape_grads_ref(p);
        let mut d = [[0.0; 2]; 2]; // d(r, theta) / d(xi, eta)
        for a in 0..8 {
            for row in 0..2 {
                for col in 0..2 {
                    d[row][col] += self.cyl[a][row] * g_ref[a][col];
                }
            }
        }
        let r = self.cyl_at(p)[0];
        r * (d[0][0] * d[1][1] - d[0][1] * d[1][0])
    }
}

/// One face of a cross-section quadrature layout.
#[derive(Debug, Clone)]
pub struct SectionFace {
    pub elem: usize,
    /// Frozen zeta value: -1 evaluates in the element above the plane, +1 in
    /// the element below.
    pub zeta: f64,
    /// 2x2 Gauss points `(xi, eta)` with their area weights.
    pub points: [([f64; 2], f64); 4],
}

/// Quadrature layout of the cross section `Sigma_t` at a lattice z-plane.
#[derive(Debug, Clone)]
pub struct SectionLayout {
    pub t: f64,
    pub plane: usize,
    pub faces: Vec<SectionFace>,
    pub area: f64,
}

/// Structured hexahedral mesh of `Omega_L`.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Cartesian node coordinates.
    pub nodes: Vec<[f64; 3]>,
    /// 8-node connectivity; collapsed axis corners repeat the axis node.
    pub hexes: Vec<[usize; 8]>,
    /// Cylindrical corner coordinates per element (theta unwrapped).
    pub elem_cyl: Vec<[[f64; 3]; 8]>,
    /// Lattice position `(i_radial, j_theta, k_z)` per element.
    pub elem_lattice: Vec<[usize; 3]>,
    pub boundary_faces: Vec<BoundaryFace>,
    pub z_planes: Vec<f64>,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_z: usize,
    pub half_length: f64,
    /// Node ids per plane: `plane_nodes[k][i][j]`; the collapsed axis repeats
    /// one id across the whole innermost ring.
    plane_nodes: Vec<Vec<Vec<usize>>>,
}

/// Geometric z-grading toward the far ends.
#[derive(Debug, Clone, Copy)]
pub struct Grading {
    /// Stretch ratio between consecutive axial intervals (1.0 = uniform).
    pub ratio: f64,
    /// Abscissa the fine region is centered on.
    pub center: f64,
}

impl Default for Grading {
    fn default() -> Self {
        Self {
            ratio: 1.0,
            center: 0.0,
        }
    }
}

fn graded_planes(half_length: f64, n_z: usize, grading: Grading) -> Vec<f64> {
    let g = grading.ratio;
    if (g - 1.0).abs() < 1e-12 {
        return (0..=n_z)
            .map(|k| -half_length + 2.0 * half_length * k as f64 / n_z as f64)
            .collect();
    }
    let c = grading.center.clamp(-0.5 * half_length, 0.5 * half_length);
    let span_lo = c + half_length;
    let span_hi = half_length - c;
    let n_lo = ((n_z as f64 * span_lo / (2.0 * half_length)).round() as usize).clamp(1, n_z - 1);
    let n_hi = n_z - n_lo;
    let side = |span: f64, n: usize| -> Vec<f64> {
        let h0 = span * (g - 1.0) / (g.powi(n as i32) - 1.0);
        let mut acc = vec![0.0];
        let mut h = h0;
        for _ in 0..n {
            acc.push(acc.last().unwrap() + h);
            h *= g;
        }
        // Scale out the accumulated rounding so the span is met exactly.
        let scale = span / *acc.last().unwrap();
        acc.iter_mut().for_each(|z| *z *= scale);
        acc
    };
    let lo = side(span_lo, n_lo);
    let hi = side(span_hi, n_hi);
    let mut planes: Vec<f64> = lo.iter().rev().map(|z| c - z).collect();
    planes.extend(hi.iter().skip(1).map(|z| c + z));
    planes
}

/// Build the mesh. `n_r`, `n_theta`, `n_z` count cells in each lattice
/// direction.
pub fn build_mesh(
    geom: &NozzleGeometry,
    half_length: f64,
    n_r: usize,
    n_theta: usize,
    n_z: usize,
    grading: Grading,
) -> Result<Mesh, MeshError> {
    if n_r < 4 || n_theta < 4 || n_z < 8 {
        return Err(MeshError::BadResolution(format!(
            "need n_r, n_theta >= 4 and n_z >= 8, got ({n_r}, {n_theta}, {n_z})"
        )));
    }
    if let Some(o) = &geom.obstacle {
        if half_length <= o.l1.abs().max(o.l2.abs()) + 2.0 {
            return Err(MeshError::BadResolution(format!(
                "half length {half_length} too short for obstacle [{}, {}]",
                o.l1, o.l2
            )));
        }
    }
    let z_planes = graded_planes(half_length, n_z, grading);

    let mut nodes: Vec<[f64; 3]> = Vec::new();
    let mut plane_nodes: Vec<Vec<Vec<usize>>> = Vec::with_capacity(n_z + 1);
    let theta_of = |j: usize| 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;

    for &z in &z_planes {
        let mut rings: Vec<Vec<usize>> = Vec::with_capacity(n_r + 1);
        let collapsed = geom.obstacle_radius(0.0, z) == 0.0;
        for i in 0..=n_r {
            if i == 0 && collapsed {
                let id = nodes.len();
                nodes.push([0.0, 0.0, z]);
                rings.push(vec![id; n_theta]);
                continue;
            }
            let mut ring = Vec::with_capacity(n_theta);
            for j in 0..n_theta {
                let theta = theta_of(j);
                let f1 = geom.wall_radius(theta, z);
                let f2 = geom.obstacle_radius(theta, z);
                if f1 - f2 <= 0.0 {
                    return Err(MeshError::PinchedDomain { theta, x3: z });
                }
                let r = f2 + (f1 - f2) * i as f64 / n_r as f64;
                ring.push(nodes.len());
                nodes.push([r * theta.cos(), r * theta.sin(), z]);
            }
            rings.push(ring);
        }
        plane_nodes.push(rings);
    }

    let mut hexes = Vec::with_capacity(n_r * n_theta * n_z);
    let mut elem_cyl = Vec::with_capacity(hexes.capacity());
    let mut elem_lattice = Vec::with_capacity(hexes.capacity());
    let mut boundary_faces = Vec::new();

    let cyl_of = |node: usize, nodes: &[[f64; 3]], theta_hint: f64| -> [f64; 3] {
        let p = nodes[node];
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        // The axis node has no well-defined theta; use the lattice value. For
        // ordinary nodes recover theta near the hint to keep it unwrapped.
        if r < 1e-14 {
            [0.0, theta_hint, p[2]]
        } else {
            let mut theta = p[1].atan2(p[0]);
            while theta < theta_hint - std::f64::consts::PI {
                theta += 2.0 * std::f64::consts::PI;
            }
            while theta > theta_hint + std::f64::consts::PI {
                theta -= 2.0 * std::f64::consts::PI;
            }
            [r, theta, p[2]]
        }
    };

    for k in 0..n_z {
        for j in 0..n_theta {
            let jp = (j + 1) % n_theta;
            // theta unwrapped: the + ring uses theta_j + dtheta even on wrap.
            let t0 = theta_of(j);
            let t1 = t0 + 2.0 * std::f64::consts::PI / n_theta as f64;
            for i in 0..n_r {
                let elem = hexes.len();
                let conn = [
                    plane_nodes[k][i][j],
                    plane_nodes[k][i + 1][j],
                    plane_nodes[k][i + 1][jp],
                    plane_nodes[k][i][jp],
                    plane_nodes[k + 1][i][j],
                    plane_nodes[k + 1][i + 1][j],
                    plane_nodes[k + 1][i + 1][jp],
                    plane_nodes[k + 1][i][jp],
                ];
                let thetas = [t0, t1, t1, t0, t0, t1, t1, t0];
                let mut cyl = [[0.0; 3]; 8];
                // Corners 0,1,4,5 sit at theta_j; 2,3,6,7 at theta_j + dtheta.
                let corner_theta = [t0, t0, t1, t1, t0, t0, t1, t1];
                for a in 0..8 {
                    let _ = thetas;
                    cyl[a] = cyl_of(conn[a], &nodes, corner_theta[a]);
                    cyl[a][1] = corner_theta[a];
                }
                hexes.push(conn);
                elem_cyl.push(cyl);
                elem_lattice.push([i, j, k]);

                if k == 0 {
                    boundary_faces.push(BoundaryFace {
                        nodes: [conn[0], conn[1], conn[2], conn[3]],
                        tag: BoundaryTag::Inflow,
                        elem,
                        frozen_axis: 2,
                        frozen_value: -1.0,
                    });
                }
                if k == n_z - 1 {
                    boundary_faces.push(BoundaryFace {
                        nodes: [conn[4], conn[5], conn[6], conn[7]],
                        tag: BoundaryTag::Outflow,
                        elem,
                        frozen_axis: 2,
                        frozen_value: 1.0,
                    });
                }
                if i == n_r - 1 {
                    boundary_faces.push(BoundaryFace {
                        nodes: [conn[1], conn[2], conn[6], conn[5]],
                        tag: BoundaryTag::Wall,
                        elem,
                        frozen_axis: 0,
                        frozen_value: 1.0,
                    });
                }
                if i == 0 {
                    // Inner face is a boundary only where the obstacle is
                    // present on at least one adjacent plane.
                    let on_obstacle = cyl[0][0] > 0.0 || cyl[4][0] > 0.0;
                    if on_obstacle {
                        boundary_faces.push(BoundaryFace {
                            nodes: [conn[0], conn[3], conn[7], conn[4]],
                            tag: BoundaryTag::Obstacle,
                            elem,
                            frozen_axis: 0,
                            frozen_value: -1.0,
                        });
                    }
                }
            }
        }
    }

    let mesh = Mesh {
        nodes,
        hexes,
        elem_cyl,
        elem_lattice,
        boundary_faces,
        z_planes,
        n_r,
        n_theta,
        n_z,
        half_length,
        plane_nodes,
    };
    let report = mesh.quality_report()?;
    debug_assert!(report.min_jacobian > 0.0);
    Ok(mesh)
}

/// Mesh quality summary.
#[derive(Debug, Clone, Copy)]
pub struct QualityReport {
    pub min_jacobian: f64,
    pub max_jacobian: f64,
    pub worst_jacobian_elem: usize,
    pub max_aspect: f64,
    pub worst_aspect_elem: usize,
}

impl Mesh {
    pub fn n_elems(&self) -> usize {
        self.hexes.len()
    }

    pub fn elem_geom(&self, elem: usize) -> ElementGeom<'_> {
        ElementGeom {
            cyl: &self.elem_cyl[elem],
        }
    }

    /// Node id at lattice position (plane k, radial station i, theta index j).
    pub fn lattice_node(&self, k: usize, i: usize, j: usize) -> usize {
        self.plane_nodes[k][i][j % self.n_theta]
    }

    /// Ids of every node on the inflow plane.
    pub fn inflow_nodes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.plane_nodes[0]
            .iter()
            .flat_map(|ring| ring.iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Scan all interior quadrature points; errors on a non-positive Jacobian.
    pub fn quality_report(&self) -> Result<QualityReport, MeshError> {
        let mut min_j = f64::INFINITY;
        let mut max_j = f64::NEG_INFINITY;
        let mut worst_j = 0;
        let mut max_aspect: f64 = 0.0;
        let mut worst_aspect = 0;
        for (elem, cyl) in self.elem_cyl.iter().enumerate() {
            let geom = ElementGeom { cyl };
            for &gx in &GAUSS_1D {
                for &gy in &GAUSS_1D {
                    for &gz in &GAUSS_1D {
                        let det = geom.jacobian_det([gx, gy, gz]);
                        if det <= 0.0 {
                            return Err(MeshError::DegenerateJacobian { elem, det });
                        }
                        if det < min_j {
                            min_j = det;
                            worst_j = elem;
                        }
                        max_j = max_j.max(det);
                    }
                }
            }
            // Aspect from the 12 edges, skipping collapsed ones.
            const EDGES: [[usize; 2]; 12] = [
                [0, 1],
                [1, 2],
                [2, 3],
                [3, 0],
                [4, 5],
                [5, 6],
                [6, 7],
                [7, 4],
                [0, 4],
                [1, 5],
                [2, 6],
                [3, 7],
            ];
            let conn = self.hexes[elem];
            let mut longest: f64 = 0.0;
            let mut shortest = f64::INFINITY;
            for e in EDGES {
                let (a, b) = (self.nodes[conn[e[0]]], self.nodes[conn[e[1]]]);
                let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                    .sqrt();
                if len > 1e-12 {
                    longest = longest.max(len);
                    shortest = shortest.min(len);
                }
            }
            let aspect = longest / shortest;
            if aspect > max_aspect {
                max_aspect = aspect;
                worst_aspect = elem;
            }
        }
        Ok(QualityReport {
            min_jacobian: min_j,
            max_jacobian: max_j,
            worst_jacobian_elem: worst_j,
            max_aspect,
            worst_aspect_elem: worst_aspect,
        })
    }

    /// Total mesh volume by 2x2x2 quadrature.
    pub fn volume(&self) -> f64 {
        let mut v = 0.0;
        for cyl in &self.elem_cyl {
            let geom = ElementGeom { cyl };
            for &gx in &GAUSS_1D {
                for &gy in &GAUSS_1D {
                    for &gz in &GAUSS_1D {
                        v += geom.jacobian_det([gx, gy, gz]);
                    }
                }
            }
        }
        v
    }

    /// Index of the lattice plane at station `t`, if one exists.
    pub fn plane_at(&self, t: f64) -> Result<usize, MeshError> {
        self.z_planes
            .iter()
            .position(|&z| (z - t).abs() <= 1e-9)
            .ok_or(MeshError::StationOutOfRange(t))
    }

    /// Index of the lattice plane closest to `t`.
    pub fn nearest_plane(&self, t: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (k, &z) in self.z_planes.iter().enumerate() {
            if (z - t).abs() < dist {
                dist = (z - t).abs();
                best = k;
            }
        }
        best
    }

    /// Cross-section quadrature layout at the lattice station `t`.
    pub fn section_layout(&self, t: f64) -> Result<SectionLayout, MeshError> {
        let plane = self.plane_at(t)?;
        Ok(self.section_layout_at_plane(plane))
    }

    pub fn section_layout_at_plane(&self, plane: usize) -> SectionLayout {
        // Use the element layer above the plane when one exists, otherwise
        // the layer below (outflow plane).
        let (layer, zeta) = if plane < self.n_z {
            (plane, -1.0)
        } else {
            (self.n_z - 1, 1.0)
        };
        let mut faces = Vec::with_capacity(self.n_r * self.n_theta);
        let mut area = 0.0;
        for elem in 0..self.n_elems() {
            if self.elem_lattice[elem][2] != layer {
                continue;
            }
            let geom = self.elem_geom(elem);
            let mut points = [([0.0; 2], 0.0); 4];
            let mut q = 0;
            for &gx in &GAUSS_1D {
                for &gy in &GAUSS_1D {
                    let w = geom.face_area_det([gx, gy, zeta]);
                    points[q] = ([gx, gy], w);
                    area += w;
                    q += 1;
                }
            }
            faces.push(SectionFace { elem, zeta, points });
        }
        SectionLayout {
            t: self.z_planes[plane],
            plane,
            faces,
            area,
        }
    }

    /// Plain-text dump: nodes / hexes / boundary tags.
    pub fn write_dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# nozzle mesh dump")?;
        writeln!(w, "nodes {}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
        }
        writeln!(w, "hexes {}", self.hexes.len())?;
        for h in &self.hexes {
            writeln!(
                w,
                "{} {} {} {} {} {} {} {}",
                h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]
            )?;
        }
        writeln!(w, "boundary_faces {}", self.boundary_faces.len())?;
        for f in &self.boundary_faces {
            let tag = match f.tag {
                BoundaryTag::Inflow => "inflow",
                BoundaryTag::Outflow => "outflow",
                BoundaryTag::Wall => "wall",
                BoundaryTag::Obstacle => "obstacle",
            };
            writeln!(
                w,
                "{} {} {} {} {}",
                tag, f.nodes[0], f.nodes[1], f.nodes[2], f.nodes[3]
            )?;
        }
        Ok(())
    }

    /// Legacy-ASCII VTK unstructured grid, optionally with nodal scalars.
    pub fn write_vtk<W: Write>(
        &self,
        w: &mut W,
        scalars: Option<(&str, &[f64])>,
    ) -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "nozzle mesh")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        writeln!(w, "CELLS {} {}", self.hexes.len(), self.hexes.len() * 9)?;
        for h in &self.hexes {
            writeln!(
                w,
                "8 {} {} {} {} {} {} {} {}",
                h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]
            )?;
        }
        writeln!(w, "CELL_TYPES {}", self.hexes.len())?;
        for _ in &self.hexes {
            writeln!(w, "12")?;
        }
        if let Some((name, values)) = scalars {
            writeln!(w, "POINT_DATA {}", self.nodes.len())?;
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in values {
                writeln!(w, "{v}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NozzleGeometry, NozzleProfile, ObstacleProfile};
    use std::f64::consts::PI;

    fn straight_unit() -> NozzleGeometry {
        NozzleGeometry::new(NozzleProfile::straight(1.0).unwrap(), None).unwrap()
    }

    fn obstacle_geom(b: f64) -> NozzleGeometry {
        NozzleGeometry::new(
            NozzleProfile::straight(1.0).unwrap(),
            Some(ObstacleProfile::new(-1.0, 1.0, b).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn straight_cylinder_counts() {
        let mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 8, Grading::default()).unwrap();
        // One merged axis node plus n_r rings of n_theta nodes per plane.
        assert_eq!(mesh.nodes.len(), (4 * 8 + 1) * 9);
        assert_eq!(mesh.hexes.len(), 4 * 8 * 8);
    }

    #[test]
    fn boundary_tags_match_geometry() {
        let geom = obstacle_geom(0.4);
        let mesh = build_mesh(&geom, 8.0, 4, 8, 16, Grading::default()).unwrap();
        for f in &mesh.boundary_faces {
            for &n in &f.nodes {
                let p = mesh.nodes[n];
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let theta = p[1].atan2(p[0]);
                match f.tag {
                    BoundaryTag::Inflow => assert!((p[2] + 8.0).abs() < 1e-12),
                    BoundaryTag::Outflow => assert!((p[2] - 8.0).abs() < 1e-12),
                    BoundaryTag::Wall => {
                        assert!((r - geom.wall_radius(theta, p[2])).abs() < 1e-9)
                    }
                    BoundaryTag::Obstacle => {
                        assert!((r - geom.obstacle_radius(theta, p[2])).abs() < 1e-9)
                    }
                }
            }
        }
        let n_wall = mesh
            .boundary_faces
            .iter()
            .filter(|f| f.tag == BoundaryTag::Wall)
            .count();
        assert_eq!(n_wall, 8 * 16);
    }

    #[test]
    fn straight_mesh_volume_is_exact() {
        let mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 8, Grading::default()).unwrap();
        // Exact cylindrical geometry: the quadrature volume of a straight
        // cylinder equals pi r^2 * 2L to round-off.
        assert!((mesh.volume() - PI * 16.0).abs() < 1e-10);
    }

    #[test]
    fn volume_converges_second_order_with_obstacle() {
        // Oracle: axial quadrature of the analytic cross-section area.
        let wall = NozzleProfile::algebraic(1.0, 0.2, 1.0, 2.0).unwrap();
        let geom = NozzleGeometry::new(
            wall,
            Some(ObstacleProfile::new(-1.0, 1.0, 0.4).unwrap()),
        )
        .unwrap();
        let exact = {
            let n = 40_000;
            let mut acc = 0.0;
            for k in 0..n {
                let z = -8.0 + 16.0 * (k as f64 + 0.5) / n as f64;
                acc += geom.cross_section_area(z) * 16.0 / n as f64;
            }
            acc
        };
        // Radial and angular quadrature are exact for axisymmetric profiles,
        // so only the axial direction needs refining.
        let errs: Vec<f64> = [64usize, 128, 256]
            .iter()
            .map(|&n_z| {
                let mesh =
                    build_mesh(&geom, 8.0, 4, 8, n_z, Grading::default()).unwrap();
                (mesh.volume() - exact).abs()
            })
            .collect();
        let rate1 = (errs[0] / errs[1]).log2();
        let rate2 = (errs[1] / errs[2]).log2();
        assert!(rate1 > 1.7, "rates {rate1} {rate2} errs {errs:?}");
        assert!(rate2 > 1.7, "rates {rate1} {rate2} errs {errs:?}");
    }

    #[test]
    fn section_layouts() {
        let mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 16, Grading::default()).unwrap();
        let sect = mesh.section_layout(0.0).unwrap();
        assert!((sect.area - PI).abs() < 1e-12);

        let geom = obstacle_geom(0.4);
        let mesh = build_mesh(&geom, 8.0, 6, 12, 16, Grading::default()).unwrap();
        let sect = mesh.section_layout(0.0).unwrap();
        assert!((sect.area - PI * (1.0 - 0.16)).abs() < 1e-8);
    }

    #[test]
    fn section_weights_sum_and_moment() {
        let mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 16, Grading::default()).unwrap();
        for &t in &[-8.0, -5.0, 0.0, 3.0, 8.0] {
            let sect = mesh.section_layout(t).unwrap();
            let total: f64 = sect
                .faces
                .iter()
                .flat_map(|f| f.points.iter().map(|p| p.1))
                .sum();
            assert!((total - sect.area).abs() < 1e-12);
            // Integrating x3 over the section gives t * |Sigma_t|: every
            // quadrature point of a lattice plane sits at z = t.
            let mut moment = 0.0;
            for f in &sect.faces {
                let geom = mesh.elem_geom(f.elem);
                for (pt, w) in f.points {
                    moment += geom.xyz_at([pt[0], pt[1], f.zeta])[2] * w;
                }
            }
            assert!((moment - t * sect.area).abs() < 1e-10);
        }
        assert!(matches!(
            mesh.section_layout(0.3),
            Err(MeshError::StationOutOfRange(_))
        ));
    }

    #[test]
    fn quality_detects_inverted_element() {
        let mut mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 8, Grading::default()).unwrap();
        assert!(mesh.quality_report().unwrap().min_jacobian > 0.0);
        // Fixture: flip one element in z.
        let victim = 100;
        for a in 0..4 {
            mesh.elem_cyl[victim].swap(a, a + 4);
        }
        match mesh.quality_report() {
            Err(MeshError::DegenerateJacobian { elem, .. }) => assert_eq!(elem, victim),
            other => panic!("expected degenerate Jacobian, got {other:?}"),
        }
    }

    #[test]
    fn rotational_periodicity() {
        let mesh = build_mesh(&obstacle_geom(0.4), 8.0, 4, 8, 16, Grading::default()).unwrap();
        let d_theta = 2.0 * PI / 8.0;
        let key = |p: [f64; 3]| {
            (
                (p[0] * 1e9).round() as i64,
                (p[1] * 1e9).round() as i64,
                (p[2] * 1e9).round() as i64,
            )
        };
        let set: std::collections::HashSet<_> = mesh.nodes.iter().map(|&p| key(p)).collect();
        for &p in &mesh.nodes {
            let rotated = [
                p[0] * d_theta.cos() - p[1] * d_theta.sin(),
                p[0] * d_theta.sin() + p[1] * d_theta.cos(),
                p[2],
            ];
            assert!(set.contains(&key(rotated)), "rotation breaks at {p:?}");
        }
    }

    #[test]
    fn grading_concentrates_planes() {
        let mesh = build_mesh(
            &straight_unit(),
            20.0,
            4,
            8,
            16,
            Grading {
                ratio: 1.3,
                center: 0.0,
            },
        )
        .unwrap();
        assert_eq!(mesh.z_planes.len(), 17);
        assert!((mesh.z_planes[0] + 20.0).abs() < 1e-12);
        assert!((mesh.z_planes[16] - 20.0).abs() < 1e-12);
        let mid_gap = mesh.z_planes[9] - mesh.z_planes[8];
        let end_gap = mesh.z_planes[16] - mesh.z_planes[15];
        assert!(end_gap > 2.0 * mid_gap);
        // Planes strictly increasing.
        assert!(mesh.z_planes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn aspect_ratio_tracks_stretching() {
        let quality = |n_z: usize| {
            build_mesh(&straight_unit(), 16.0, 4, 8, n_z, Grading::default())
                .unwrap()
                .quality_report()
                .unwrap()
                .max_aspect
        };
        let a8 = quality(8);
        let a16 = quality(16);
        let a32 = quality(32);
        // Halving the axial spacing at fixed radial resolution roughly
        // halves the worst aspect until the elements become isotropic.
        assert!(a8 > a16 && a16 > a32, "{a8} {a16} {a32}");
    }

    #[test]
    fn too_short_domain_rejected() {
        let geom = obstacle_geom(0.4);
        assert!(matches!(
            build_mesh(&geom, 2.5, 4, 8, 8, Grading::default()),
            Err(MeshError::BadResolution(_))
        ));
    }

    #[test]
    fn dump_and_vtk_roundtrip_smoke() {
        let mesh = build_mesh(&straight_unit(), 8.0, 4, 8, 8, Grading::default()).unwrap();
        let mut dump = Vec::new();
        mesh.write_dump(&mut dump).unwrap();
        let text = String::from_utf8(dump).unwrap();
        assert!(text.contains(&format!("nodes {}", mesh.nodes.len())));
        assert!(text.contains(&format!("hexes {}", mesh.hexes.len())));
        let mut vtk = Vec::new();
        mesh.write_vtk(&mut vtk, Some(("phi", &vec![0.0; mesh.nodes.len()])))
            .unwrap();
        let text = String::from_utf8(vtk).unwrap();
        assert!(text.starts_with("# vtk DataFile"));
        assert!(text.contains("CELL_TYPES"));
    }
}
