//! Discrete energy, residual and Hessian of the truncated variational
//! problem on a [`Mesh`].
//!
//! The discrete functional is
//!
//! ```text
//! I_L(phi) = sum_qp w F_eps(|grad phi|^2)  -  (m0 / |Sigma_L|) int_{Sigma_L} phi
//! ```
//!
//! with trilinear nodal elements and 2x2x2 Gauss quadrature. The outflow area
//! `|Sigma_L|` is the discrete quadrature area of the outflow section, so the
//! flux identity holds exactly at the discrete level. Homogeneous Dirichlet
//! data on the inflow plane is imposed by row/column elimination with a unit
//! diagonal.

use thiserror::Error;

use crate::gas::{GasError, TruncatedDensity};
use crate::mesh::{Mesh, GAUSS_1D};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("dimension mismatch: expected {expected} dof, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gas(#[from] GasError),
}

/// Sparse symmetric matrix in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// y = A x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (row, y_row) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[idx] * x[self.col_idx[idx]];
            }
            *y_row = acc;
        }
    }

    /// Diagonal entries (for Jacobi preconditioning).
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for row in 0..self.n {
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                if self.col_idx[idx] == row {
                    d[row] = self.values[idx];
                }
            }
        }
        d
    }

    fn entry_index(&self, row: usize, col: usize) -> usize {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        lo + self.col_idx[lo..hi]
            .binary_search(&col)
            .expect("entry in sparsity pattern")
    }
}

/// Per-quadrature-point geometric data, frozen at construction.
#[derive(Debug, Clone, Copy)]
struct QpGeom {
    grads: [[f64; 3]; 8],
    weight: f64,
}

/// The assembled discrete problem for one mesh, truncation and flux value.
#[derive(Debug, Clone)]
pub struct DiscreteSystem<'a> {
    pub mesh: &'a Mesh,
    pub trunc: TruncatedDensity,
    /// Prescribed mass flux `m0`.
    pub flux: f64,
    /// Discrete outflow area (quadrature area of `Sigma_L`).
    pub outflow_area: f64,
    /// Outflow load vector: `load[a] = (m0 / |Sigma_L|) int_{Sigma_L} N_a`.
    pub load: Vec<f64>,
    /// Inflow nodes carrying homogeneous Dirichlet data.
    pub dirichlet: Vec<bool>,
    qp_cache: Vec<[QpGeom; 8]>,
    pattern_row_ptr: Vec<usize>,
    pattern_col_idx: Vec<usize>,
}

/// Shape-function values at the 2x2x2 Gauss points (same ordering as the
/// cached quadrature data).
fn gauss_points() -> [[f64; 3]; 8] {
    let mut pts = [[0.0; 3]; 8];
    let mut q = 0;
    for &gx in &GAUSS_1D {
        for &gy in &GAUSS_1D {
            for &gz in &GAUSS_1D {
                pts[q] = [gx, gy, gz];
                q += 1;
            }
        }
    }
    pts
}

impl<'a> DiscreteSystem<'a> {
    pub fn new(
        mesh: &'a Mesh,
        trunc: TruncatedDensity,
        flux: f64,
    ) -> Result<Self, AssemblyError> {
        // Geometric quadrature cache.
        let pts = gauss_points();
        let mut qp_cache = Vec::with_capacity(mesh.n_elems());
        for elem in 0..mesh.n_elems() {
            let geom = mesh.elem_geom(elem);
            let qps = std::array::from_fn(|q| {
                let (grads, det) = geom.grads_and_det(pts[q]);
                QpGeom { grads, weight: det }
            });
            qp_cache.push(qps);
        }

        // Outflow load with the discrete section area.
        let layout = mesh.section_layout_at_plane(mesh.n_z);
        let outflow_area = layout.area;
        let mut raw = vec![0.0; mesh.nodes.len()];
        for face in &layout.faces {
            let conn = mesh.hexes[face.elem];
            for (pt, w) in face.points {
                let n = crate::mesh::shape_values([pt[0], pt[1], face.zeta]);
                for a in 0..8 {
                    raw[conn[a]] += w * n[a];
                }
            }
        }
        let scale = flux / outflow_area;
        let load: Vec<f64> = raw.iter().map(|v| scale * v).collect();

        let mut dirichlet = vec![false; mesh.nodes.len()];
        for id in mesh.inflow_nodes() {
            dirichlet[id] = true;
        }

        // Symbolic CSR pattern from element adjacency.
        let n = mesh.nodes.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        for conn in &mesh.hexes {
            for &a in conn {
                for &b in conn {
                    adjacency[a].push(b);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
            col_idx.extend_from_slice(list);
            row_ptr.push(col_idx.len());
        }

        Ok(Self {
            mesh,
            trunc,
            flux,
            outflow_area,
            load,
            dirichlet,
            qp_cache,
            pattern_row_ptr: row_ptr,
            pattern_col_idx: col_idx,
        })
    }

    pub fn n_dof(&self) -> usize {
        self.mesh.nodes.len()
    }

    fn check_dim(&self, phi: &[f64]) -> Result<(), AssemblyError> {
        if phi.len() != self.n_dof() {
            return Err(AssemblyError::DimensionMismatch {
                expected: self.n_dof(),
                got: phi.len(),
            });
        }
        Ok(())
    }

    /// Gradient of the nodal field at one cached quadrature point.
    fn qp_gradient(&self, elem: usize, q: usize, phi: &[f64]) -> [f64; 3] {
        let conn = self.mesh.hexes[elem];
        let grads = &self.qp_cache[elem][q].grads;
        let mut p = [0.0; 3];
        for a in 0..8 {
            let v = phi[conn[a]];
            p[0] += v * grads[a][0];
            p[1] += v * grads[a][1];
            p[2] += v * grads[a][2];
        }
        p
    }

    /// Discrete energy `I_L(phi)`.
    pub fn energy(&self, phi: &[f64]) -> Result<f64, AssemblyError> {
        self.check_dim(phi)?;
        let mut bulk = 0.0;
        for elem in 0..self.mesh.n_elems() {
            for q in 0..8 {
                let p = self.qp_gradient(elem, q, phi);
                let s_sq = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                bulk += self.qp_cache[elem][q].weight * self.trunc.f_eps(s_sq)?;
            }
        }
        let boundary: f64 = self
            .load
            .iter()
            .zip(phi)
            .map(|(l, v)| l * v)
            .sum();
        Ok(bulk - boundary)
    }

    /// Residual (discrete gradient of `I_L`); Dirichlet rows read `phi[a]`
    /// so the residual of an admissible iterate vanishes there.
    pub fn residual(&self, phi: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        self.check_dim(phi)?;
        let mut r = vec![0.0; self.n_dof()];
        for elem in 0..self.mesh.n_elems() {
            let conn = self.mesh.hexes[elem];
            for q in 0..8 {
                let p = self.qp_gradient(elem, q, phi);
                let s_sq = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                let h = self.trunc.h_eps(s_sq);
                let qp = &self.qp_cache[elem][q];
                let w_h = qp.weight * h;
                for a in 0..8 {
                    let g = qp.grads[a];
                    r[conn[a]] += w_h * (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]);
                }
            }
        }
        for a in 0..self.n_dof() {
            if self.dirichlet[a] {
                r[a] = phi[a];
            } else {
                r[a] -= self.load[a];
            }
        }
        Ok(r)
    }

    /// Newton Hessian at `phi` with Dirichlet rows/columns eliminated
    /// (unit diagonal).
    pub fn hessian(&self, phi: &[f64]) -> Result<CsrMatrix, AssemblyError> {
        self.check_dim(phi)?;
        let mut mat = CsrMatrix {
            n: self.n_dof(),
            row_ptr: self.pattern_row_ptr.clone(),
            col_idx: self.pattern_col_idx.clone(),
            values: vec![0.0; self.pattern_col_idx.len()],
        };
        for elem in 0..self.mesh.n_elems() {
            let conn = self.mesh.hexes[elem];
            for q in 0..8 {
                let p = self.qp_gradient(elem, q, phi);
                let s_sq = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                let coeff = self.trunc.coefficient_matrix(p);
                let _ = s_sq;
                let qp = &self.qp_cache[elem][q];
                // A-weighted gradients.
                let mut ag = [[0.0; 3]; 8];
                for a in 0..8 {
                    let g = qp.grads[a];
                    for row in 0..3 {
                        ag[a][row] = coeff[row][0] * g[0]
                            + coeff[row][1] * g[1]
                            + coeff[row][2] * g[2];
                    }
                }
                for a in 0..8 {
                    let ra = conn[a];
                    if self.dirichlet[ra] {
                        continue;
                    }
                    let g = qp.grads[a];
                    for b in 0..8 {
                        let cb = conn[b];
                        if self.dirichlet[cb] {
                            continue;
                        }
                        let val = qp.weight
                            * (g[0] * ag[b][0] + g[1] * ag[b][1] + g[2] * ag[b][2]);
                        let idx = mat.entry_index(ra, cb);
                        mat.values[idx] += val;
                    }
                }
            }
        }
        for a in 0..self.n_dof() {
            if self.dirichlet[a] {
                let idx = mat.entry_index(a, a);
                mat.values[idx] = 1.0;
            }
        }
        Ok(mat)
    }

    /// Largest quadrature-point speed squared `|grad phi|^2`.
    pub fn max_speed_sq(&self, phi: &[f64]) -> Result<f64, AssemblyError> {
        self.check_dim(phi)?;
        let mut max = 0.0f64;
        for elem in 0..self.mesh.n_elems() {
            for q in 0..8 {
                let p = self.qp_gradient(elem, q, phi);
                max = max.max(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
            }
        }
        Ok(max)
    }

    /// True when any quadrature point enters the truncation window,
    /// `|grad phi|^2 >= 1 - 2 eps`.
    pub fn truncation_active(&self, phi: &[f64]) -> Result<bool, AssemblyError> {
        Ok(self.max_speed_sq(phi)? >= 1.0 - 2.0 * self.trunc.epsilon)
    }

    /// Euclidean norm of the load vector; the solver normalizes residuals
    /// against it.
    pub fn load_norm(&self) -> f64 {
        self.load.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradient of a nodal field at an arbitrary reference point of one element.
pub fn element_gradient(mesh: &Mesh, elem: usize, p: [f64; 3], phi: &[f64]) -> [f64; 3] {
    let (grads, _) = mesh.elem_geom(elem).grads_and_det(p);
    let conn = mesh.hexes[elem];
    let mut g = [0.0; 3];
    for a in 0..8 {
        let v = phi[conn[a]];
        g[0] += v * grads[a][0];
        g[1] += v * grads[a][1];
        g[2] += v * grads[a][2];
    }
    g
}

/// Value of a nodal field at a reference point of one element.
pub fn element_value(mesh: &Mesh, elem: usize, p: [f64; 3], phi: &[f64]) -> f64 {
    let n = crate::mesh::shape_values(p);
    let conn = mesh.hexes[elem];
    (0..8).map(|a| n[a] * phi[conn[a]]).sum()
}
