//! Q1 stiffness assembly for piecewise-constant a = s + k on a triadic cube.

use faer::sparse::{SparseRowMat, Triplet};
use faer::{Col, ColRef};

use crate::error::{HomError, Result};
use crate::fields::CoefficientField;
use crate::linalg::{self, Mat};
use crate::triadic::{grid_points, CellArray, TriadicCube};

/// Exact integrals of Q1 shape functions on one element of side `h`.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub dim: usize,
    pub h: f64,
    /// `stiff[α][β][i][j] = ∫ ∂_α φ_i ∂_β φ_j`.
    pub stiff: Vec<Vec<Vec<Vec<f64>>>>,
    /// `grad[β][j] = ∫ ∂_β φ_j`.
    pub grad: Vec<Vec<f64>>,
    /// `∫ φ_j`, identical for every corner.
    pub mass: f64,
}

fn corner_bit(local: usize, axis: usize) -> usize {
    (local >> axis) & 1
}

fn sign(bit: usize) -> f64 {
    if bit == 1 {
        1.0
    } else {
        -1.0
    }
}

impl ReferenceElement {
    pub fn new(dim: usize, h: f64) -> Self {
        let nn = 1 << dim;
        // 1D integrals on [0, h] with ψ_0 = 1 − x/h, ψ_1 = x/h.
        let mm = |a: usize, b: usize| if a == b { h / 3.0 } else { h / 6.0 };
        let dd = |a: usize, b: usize| sign(a) * sign(b) / h;
        let dm = |a: usize, _b: usize| sign(a) * 0.5;
        let md = |_a: usize, b: usize| sign(b) * 0.5;
        let mut stiff = vec![vec![vec![vec![0.0; nn]; nn]; dim]; dim];
        for (alpha, row) in stiff.iter_mut().enumerate() {
            for (beta, mat) in row.iter_mut().enumerate() {
                for (i, mrow) in mat.iter_mut().enumerate() {
                    for (j, entry) in mrow.iter_mut().enumerate() {
                        let mut v = 1.0;
                        for g in 0..dim {
                            let (a, b) = (corner_bit(i, g), corner_bit(j, g));
                            v *= match (g == alpha, g == beta) {
                                (true, true) => dd(a, b),
                                (true, false) => dm(a, b),
                                (false, true) => md(a, b),
                                (false, false) => mm(a, b),
                            };
                        }
                        *entry = v;
                    }
                }
            }
        }
        let face = (h / 2.0).powi(dim as i32 - 1);
        let grad = (0..dim)
            .map(|beta| (0..nn).map(|j| sign(corner_bit(j, beta)) * face).collect())
            .collect();
        Self { dim, h, stiff, grad, mass: (h / 2.0).powi(dim as i32) }
    }

    /// Element matrix ∫ ∇φ_i · M ∇φ_j for a constant d×d matrix M.
    pub fn element_matrix(&self, m: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim;
        let nn = 1 << d;
        let mut out = vec![vec![0.0; nn]; nn];
        for alpha in 0..d {
            for beta in 0..d {
                let c = m[alpha * d + beta];
                if c == 0.0 {
                    continue;
                }
                for (i, row) in out.iter_mut().enumerate() {
                    for (j, e) in row.iter_mut().enumerate() {
                        *e += c * self.stiff[alpha][beta][i][j];
                    }
                }
            }
        }
        out
    }
}

/// Discrete operator on a cube: stiffness from a and from s, average functionals,
/// node classification.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub dim: usize,
    pub cube: TriadicCube,
    pub resolution: usize,
    pub nodes_per_axis: usize,
    /// K_ij = ∫ ∇φ_i · a ∇φ_j.
    pub stiffness: SparseRowMat<usize, f64>,
    /// S_ij = ∫ ∇φ_i · s ∇φ_j.
    pub sym_stiffness: SparseRowMat<usize, f64>,
    /// d rows with G·u = ∫_U ∇u.
    pub grad_rows: Vec<Vec<f64>>,
    /// d rows with B·u = ∫_U a∇u.
    pub flux_rows: Vec<Vec<f64>>,
    /// m_j = ∫_U φ_j.
    pub mass: Vec<f64>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    /// |U| in unit cells.
    pub volume: f64,
    /// Upper bound on the coefficient magnitudes, used to scale tolerances.
    pub coef_scale: f64,
    pub reference: ReferenceElement,
    /// Per cell of the cube (first axis fastest): a and s, row-major.
    pub cell_a: Vec<f64>,
    pub cell_s: Vec<f64>,
}

impl AssembledOperator {
    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    pub fn elements_per_axis(&self) -> usize {
        self.nodes_per_axis - 1
    }

    /// Node multi-index → flat index, first axis fastest.
    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &i| acc * self.nodes_per_axis + i)
    }

    pub fn node_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for slot in idx.iter_mut() {
            *slot = flat % self.nodes_per_axis;
            flat /= self.nodes_per_axis;
        }
        idx
    }

    /// Global coordinates (unit-cell lengths) of node `flat`.
    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let h = self.reference.h;
        self.node_multi_index(flat)
            .iter()
            .zip(&self.cube.offset)
            .map(|(&i, &o)| o as f64 + i as f64 * h)
            .collect()
    }

    /// Flat node indices of the corners of element `e`, in local corner order.
    pub fn element_nodes(&self, e: &[usize]) -> Vec<usize> {
        (0..1usize << self.dim)
            .map(|local| {
                let idx: Vec<usize> = (0..self.dim).map(|a| e[a] + corner_bit(local, a)).collect();
                self.node_index(&idx)
            })
            .collect()
    }

    /// Index of the cube-local cell containing element `e`.
    pub fn element_cell(&self, e: &[usize]) -> usize {
        let side = self.cube.side() as usize;
        e.iter().rev().fold(0, |acc, &i| acc * side + i / self.resolution)
    }

    pub fn cell_a_slice(&self, cell: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.cell_a[cell * dd..(cell + 1) * dd]
    }

    pub fn cell_s_slice(&self, cell: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.cell_s[cell * dd..(cell + 1) * dd]
    }

    pub fn apply_stiffness(&self, u: &[f64]) -> Vec<f64> {
        spmv(&self.stiffness, u)
    }

    pub fn apply_sym(&self, u: &[f64]) -> Vec<f64> {
        spmv(&self.sym_stiffness, u)
    }

    /// uᵀ S u = ∫ ∇u · s ∇u.
    pub fn energy(&self, u: &[f64]) -> f64 {
        linalg::dot(u, &self.apply_sym(u))
    }

    /// ∫_U ∇u.
    pub fn grad_integral(&self, u: &[f64]) -> Vec<f64> {
        self.grad_rows.iter().map(|r| linalg::dot(r, u)).collect()
    }

    /// ∫_U a∇u.
    pub fn flux_integral(&self, u: &[f64]) -> Vec<f64> {
        self.flux_rows.iter().map(|r| linalg::dot(r, u)).collect()
    }

    /// Per-cell integrals of ∇u (d components per cell of the cube).
    pub fn cell_gradients(&self, u: &[f64]) -> CellArray {
        let d = self.dim;
        let side = self.cube.side() as usize;
        let mut out = CellArray::zeros(d, side, d);
        for e in grid_points(d, self.elements_per_axis()) {
            let nodes = self.element_nodes(&e);
            let cell = self.element_cell(&e);
            for beta in 0..d {
                let g: f64 = nodes
                    .iter()
                    .enumerate()
                    .map(|(j, &n)| self.reference.grad[beta][j] * u[n])
                    .sum();
                out.data[cell * d + beta] += g;
            }
        }
        out
    }

    /// Per-cell integrals of a∇u.
    pub fn cell_fluxes(&self, u: &[f64]) -> CellArray {
        let d = self.dim;
        let grads = self.cell_gradients(u);
        let mut out = grads.clone();
        for cell in 0..grads.cell_count() {
            let a = self.cell_a_slice(cell);
            for alpha in 0..d {
                out.data[cell * d + alpha] =
                    (0..d).map(|beta| a[alpha * d + beta] * grads.data[cell * d + beta]).sum();
            }
        }
        out
    }

    /// Weak divergence load F_i = ∫ f · ∇φ_i for a per-cell constant vector field f.
    pub fn divergence_load(&self, f: &CellArray) -> Result<Vec<f64>> {
        let d = self.dim;
        if f.ncomp != d || f.side != self.cube.side() as usize || f.dim != d {
            return Err(HomError::invalid("flux data must have d components on every cell of the cube"));
        }
        let mut load = vec![0.0; self.node_count()];
        for e in grid_points(d, self.elements_per_axis()) {
            let nodes = self.element_nodes(&e);
            let fv = f.value(self.element_cell(&e));
            for (i, &n) in nodes.iter().enumerate() {
                load[n] += (0..d).map(|a| fv[a] * self.reference.grad[a][i]).sum::<f64>();
            }
        }
        Ok(load)
    }

    /// Nodal interpolant of a function given in global coordinates.
    pub fn interpolate(&self, mut g: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..self.node_count()).map(|n| g(&self.node_coords(n))).collect()
    }
}

pub(crate) fn spmv(m: &SparseRowMat<usize, f64>, u: &[f64]) -> Vec<f64> {
    let y: Col<f64> = m * ColRef::from_slice(u);
    y.iter().copied().collect()
}

/// Assembles the operator of `field` on `cube` with `resolution` elements per cell per axis.
pub fn assemble(field: &CoefficientField, cube: &TriadicCube, resolution: usize) -> Result<AssembledOperator> {
    if resolution == 0 {
        return Err(HomError::invalid("resolution must be at least 1"));
    }
    field.require_cover(cube)?;
    let d = field.dim();
    let side = cube.side() as usize;
    let ne = side * resolution;
    let np = ne + 1;
    let nnode = np.pow(d as u32);
    let reference = ReferenceElement::new(d, 1.0 / resolution as f64);
    let dd = d * d;

    let mut cell_a = Vec::with_capacity(side.pow(d as u32) * dd);
    let mut cell_s = Vec::with_capacity(side.pow(d as u32) * dd);
    let mut cell_k_mats = Vec::new();
    let mut coef_scale = 0.0f64;
    let mut cell_s_mats = Vec::new();
    for (ci, cell) in cube.cells().enumerate() {
        let idx = field.index(&cell).expect("cover checked");
        let s = field.s_slice(idx);
        let k = field.k_slice(idx);
        let sm = field.s_matrix(idx);
        let ev = linalg::sym_eigenvalues(&sm);
        if !(ev[0] > 0.0) {
            return Err(HomError::NotSpd { cell: ci, reason: format!("eigenvalue {:e}", ev[0]) });
        }
        let kn = linalg::spectral_norm(&field.k_matrix(idx));
        coef_scale = coef_scale.max(ev[d - 1] + kn).max(1.0 / ev[0]);
        cell_s.extend_from_slice(s);
        cell_a.extend(s.iter().zip(k).map(|(x, y)| x + y));
        cell_s_mats.push(reference.element_matrix(s));
        cell_k_mats.push(reference.element_matrix(&cell_a[ci * dd..(ci + 1) * dd]));
    }

    let nn = 1usize << d;
    let mut trip_k = Vec::with_capacity(ne.pow(d as u32) * nn * nn);
    let mut trip_s = Vec::with_capacity(ne.pow(d as u32) * nn * nn);
    let mut grad_rows = vec![vec![0.0; nnode]; d];
    let mut flux_rows = vec![vec![0.0; nnode]; d];
    let mut mass = vec![0.0; nnode];

    let node_index = |idx: &[usize]| idx.iter().rev().fold(0, |acc, &i| acc * np + i);
    for e in grid_points(d, ne) {
        let nodes: Vec<usize> = (0..nn)
            .map(|local| {
                let idx: Vec<usize> = (0..d).map(|a| e[a] + corner_bit(local, a)).collect();
                node_index(&idx)
            })
            .collect();
        let cell = e.iter().rev().fold(0, |acc, &i| acc * side + i / resolution);
        let km = &cell_k_mats[cell];
        let sm = &cell_s_mats[cell];
        let a = &cell_a[cell * dd..(cell + 1) * dd];
        for i in 0..nn {
            for j in 0..nn {
                trip_k.push(Triplet::new(nodes[i], nodes[j], km[i][j]));
                trip_s.push(Triplet::new(nodes[i], nodes[j], sm[i][j]));
            }
        }
        for (j, &n) in nodes.iter().enumerate() {
            mass[n] += reference.mass;
            for beta in 0..d {
                let g = reference.grad[beta][j];
                grad_rows[beta][n] += g;
                for alpha in 0..d {
                    flux_rows[alpha][n] += a[alpha * d + beta] * g;
                }
            }
        }
    }
    let stiffness = SparseRowMat::try_new_from_triplets(nnode, nnode, &trip_k)
        .map_err(|e| HomError::Factorization(format!("stiffness assembly: {e:?}")))?;
    let sym_stiffness = SparseRowMat::try_new_from_triplets(nnode, nnode, &trip_s)
        .map_err(|e| HomError::Factorization(format!("stiffness assembly: {e:?}")))?;

    let (mut interior, mut boundary) = (Vec::new(), Vec::new());
    for (flat, idx) in grid_points(d, np).enumerate() {
        if idx.iter().any(|&i| i == 0 || i == ne) {
            boundary.push(flat);
        } else {
            interior.push(flat);
        }
    }
    Ok(AssembledOperator {
        dim: d,
        cube: cube.clone(),
        resolution,
        nodes_per_axis: np,
        stiffness,
        sym_stiffness,
        grad_rows,
        flux_rows,
        mass,
        interior,
        boundary,
        volume: cube.volume(),
        coef_scale,
        reference,
        cell_a,
        cell_s,
    })
}

/// Dense copy of a sparse matrix, for small oracles.
pub fn to_dense(m: &SparseRowMat<usize, f64>) -> Mat {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Mat::zeros(r, c);
    let rp = m.symbolic().row_ptr();
    let ci = m.symbolic().col_idx();
    let v = m.val();
    for i in 0..r {
        for p in rp[i]..rp[i + 1] {
            out[(i, ci[p])] += v[p];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldKind, FieldSpec};
    use proptest::prelude::*;

    fn constant(a: Vec<Vec<f64>>, level: u32) -> CoefficientField {
        FieldSpec::new(a.len(), level, 0, FieldKind::Constant { matrix: a }).generate().unwrap()
    }

    #[test]
    fn laplace_element_matrix() {
        let r = ReferenceElement::new(2, 1.0);
        let k = r.element_matrix(&[1.0, 0.0, 0.0, 1.0]);
        let expected = [
            [2.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0],
            [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 6.0, -1.0 / 3.0, 2.0 / 3.0, -1.0 / 6.0],
            [-1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 2.0 / 3.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    /// Tensor Gauss quadrature of ∇φ_i·M∇φ_j with explicit shape functions.
    fn quadrature_element(d: usize, h: f64, m: &[f64]) -> Vec<Vec<f64>> {
        let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let nn = 1 << d;
        let grad = |local: usize, x: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|a| {
                    let mut g = 1.0;
                    for b in 0..d {
                        let bit = (local >> b) & 1;
                        let t = x[b] / h;
                        g *= if a == b {
                            if bit == 1 { 1.0 / h } else { -1.0 / h }
                        } else if bit == 1 {
                            t
                        } else {
                            1.0 - t
                        };
                    }
                    g
                })
                .collect()
        };
        let mut out = vec![vec![0.0; nn]; nn];
        let w = (h / 2.0).powi(d as i32);
        for q in grid_points(d, 2) {
            let x: Vec<f64> = q.iter().map(|&i| gp[i] * h).collect();
            for i in 0..nn {
                for j in 0..nn {
                    let (gi, gj) = (grad(i, &x), grad(j, &x));
                    let mut v = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            v += gi[a] * m[a * d + b] * gj[b];
                        }
                    }
                    out[i][j] += w * v;
                }
            }
        }
        out
    }

    #[test]
    fn element_matrix_matches_quadrature_oracle() {
        let m2 = [1.3, 0.4, -0.2, 2.1];
        let m3 = [1.0, 0.3, -0.1, 0.5, 2.0, 0.2, 0.7, -0.4, 1.5];
        for (d, m, h) in [(2usize, &m2[..], 0.5), (3, &m3[..], 1.0 / 3.0)] {
            let exact = ReferenceElement::new(d, h).element_matrix(m);
            let quad = quadrature_element(d, h, m);
            for i in 0..(1 << d) {
                for j in 0..(1 << d) {
                    assert!((exact[i][j] - quad[i][j]).abs() < 1e-14, "d={d} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn affine_functionals_are_exact() {
        let a = vec![vec![2.0, 0.5], vec![-0.5, 3.0]];
        let f = constant(a.clone(), 1);
        let op = assemble(&f, &f.domain(), 2).unwrap();
        let p = [0.7, -1.2];
        let u = op.interpolate(|x| p[0] * x[0] + p[1] * x[1]);
        let g = op.grad_integral(&u);
        let b = op.flux_integral(&u);
        for i in 0..2 {
            assert!((g[i] - 9.0 * p[i]).abs() < 1e-12);
            let ap = a[i][0] * p[0] + a[i][1] * p[1];
            assert!((b[i] - 9.0 * ap).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_field_has_equal_stiffnesses_and_skew_difference_is_skew() {
        let spec = FieldSpec::new(2, 1, 4, FieldKind::SkewLognormal { sigma: 0.5, skew: 0.6 });
        let f = spec.generate().unwrap();
        let op = assemble(&f, &f.domain(), 2).unwrap();
        let k = to_dense(&op.stiffness);
        let s = to_dense(&op.sym_stiffness);
        assert_eq!(&s, &s.transpose());
        let diff = &k - &s;
        assert!((&diff + diff.transpose()).abs().max() < 1e-14);
        for i in 0..diff.nrows() {
            assert!(diff[(i, i)].abs() < 1e-14);
        }
        let g = FieldSpec::new(2, 1, 4, FieldKind::LognormalIso { sigma: 0.5 }).generate().unwrap();
        let op = assemble(&g, &g.domain(), 1).unwrap();
        assert_eq!(to_dense(&op.stiffness), to_dense(&op.sym_stiffness));
    }

    proptest! {
        #[test]
        fn constants_in_kernel_and_psd(seed in 0u64..1000, r in 1usize..3) {
            let spec = FieldSpec::new(2, 1, seed, FieldKind::SkewLognormal { sigma: 1.0, skew: 0.9 });
            let f = spec.generate().unwrap();
            let op = assemble(&f, &f.domain(), r).unwrap();
            let ones = vec![1.0; op.node_count()];
            let k1 = op.apply_stiffness(&ones);
            let s1 = op.apply_sym(&ones);
            let scale = op.coef_scale;
            prop_assert!(k1.iter().chain(&s1).all(|v| v.abs() < 1e-12 * scale));
            let u: Vec<f64> = (0..op.node_count()).map(|i| ((i * 37 + seed as usize) % 11) as f64 - 5.0).collect();
            prop_assert!(op.energy(&u) >= -1e-12);
        }
    }
}
