//! Independent oracles shared by the integration suites: dense Q1 assembly with
//! explicit nullspace maximization, and nested-loop triadic norms.

#![allow(dead_code)]

use homlab::fields::{CoefficientField, FieldKind, FieldSpec};
use homlab::triadic::{CellArray, TriadicCube};
use nalgebra::{DMatrix, DVector};

/// Enumerates the multi-indices of {0..side}^dim, first axis fastest.
pub fn multi_indices(dim: usize, side: usize) -> Vec<Vec<usize>> {
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut flat| {
            (0..dim)
                .map(|_| {
                    let i = flat % side;
                    flat /= side;
                    i
                })
                .collect()
        })
        .collect()
}

/// Dense Q1 matrices of one cube at one element per cell.
pub struct DenseOperator {
    pub dim: usize,
    pub side: usize,
    /// ∫∇φ_i·a∇φ_j.
    pub k: DMatrix<f64>,
    /// ∫∇φ_i·s∇φ_j.
    pub s: DMatrix<f64>,
    /// ∫∂_α φ_j and ∫(a∇φ_j)_α, one row per α.
    pub grad: Vec<DVector<f64>>,
    pub flux: Vec<DVector<f64>>,
    pub interior: Vec<usize>,
}

impl DenseOperator {
    pub fn new(field: &CoefficientField, cube: &TriadicCube) -> Self {
        let d = field.dim();
        let side = cube.side() as usize;
        let np = side + 1;
        let n = np.pow(d as u32);
        let node = |idx: &[usize]| idx.iter().rev().fold(0, |acc, i| acc * np + i);
        let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
        let mut k = DMatrix::zeros(n, n);
        let mut s = DMatrix::zeros(n, n);
        let mut grad = vec![DVector::zeros(n); d];
        let mut flux = vec![DVector::zeros(n); d];
        for cell in multi_indices(d, side) {
            let global: Vec<i64> = cell.iter().zip(&cube.offset).map(|(c, o)| *c as i64 + o).collect();
            let idx = field.index(&global).expect("cube inside the field");
            let sm = field.s_matrix(idx);
            let am = &sm + field.k_matrix(idx);
            let corners = multi_indices(d, 2);
            let nodes: Vec<usize> =
                corners.iter().map(|c| node(&c.iter().zip(&cell).map(|(a, b)| a + b).collect::<Vec<_>>())).collect();
            for qp in multi_indices(d, 2) {
                let xi: Vec<f64> = qp.iter().map(|&i| gauss[i]).collect();
                let w = 0.5f64.powi(d as i32);
                let grads: Vec<DVector<f64>> = corners
                    .iter()
                    .map(|c| {
                        DVector::from_fn(d, |a, _| {
                            let mut g = if c[a] == 1 { 1.0 } else { -1.0 };
                            for b in 0..d {
                                if b != a {
                                    g *= if c[b] == 1 { xi[b] } else { 1.0 - xi[b] };
                                }
                            }
                            g
                        })
                    })
                    .collect();
                for (i, gi) in grads.iter().enumerate() {
                    for (j, gj) in grads.iter().enumerate() {
                        k[(nodes[i], nodes[j])] += w * gi.dot(&(&am * gj));
                        s[(nodes[i], nodes[j])] += w * gi.dot(&(&sm * gj));
                    }
                    let agi = &am * gi;
                    for a in 0..d {
                        grad[a][nodes[i]] += w * gi[a];
                        flux[a][nodes[i]] += w * agi[a];
                    }
                }
            }
        }
        let interior = multi_indices(d, np)
            .into_iter()
            .filter(|idx| idx.iter().all(|&i| i > 0 && i < side))
            .map(|idx| node(&idx))
            .collect();
        Self { dim: d, side, k, s, grad, flux, interior }
    }

    pub fn volume(&self) -> f64 {
        (self.side as f64).powi(self.dim as i32)
    }

    /// Orthonormal basis of {v : K_{I,:}v = 0, Σv = 0}.
    pub fn harmonic_basis(&self) -> DMatrix<f64> {
        let n = self.k.nrows();
        let mut c = DMatrix::zeros(n, n);
        for (r, &i) in self.interior.iter().enumerate() {
            c.set_row(r, &self.k.row(i));
        }
        c.set_row(self.interior.len(), &DVector::from_element(n, 1.0).transpose());
        let svd = c.svd(false, true);
        let vt = svd.v_t.expect("right singular vectors");
        let scale = svd.singular_values.max();
        let null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] < 1e-11 * scale).collect();
        DMatrix::from_fn(n, null.len(), |i, j| vt[(null[j], i)])
    }

    /// J(U,p,q) = max over the harmonic subspace of ⨍(−½∇v·s∇v − p·a∇v + q·∇v).
    pub fn j(&self, basis: &DMatrix<f64>, p: &[f64], q: &[f64]) -> f64 {
        let mut l = DVector::zeros(self.k.nrows());
        for a in 0..self.dim {
            l += &self.flux[a] * (-p[a]) + &self.grad[a] * q[a];
        }
        let h = basis.transpose() * &self.s * basis;
        let g = basis.transpose() * &l;
        let y = h.cholesky().expect("energy is positive on the harmonic subspace").solve(&g);
        0.5 * g.dot(&y) / self.volume()
    }

    /// A(U) from J by polarization: J + p·q = ½ξ·Aξ with ξ = (−p, q).
    pub fn double_matrix(&self) -> DMatrix<f64> {
        let d = self.dim;
        let basis = self.harmonic_basis();
        let quad = |xi: &DVector<f64>| {
            let p: Vec<f64> = (0..d).map(|a| -xi[a]).collect();
            let q: Vec<f64> = (0..d).map(|a| xi[d + a]).collect();
            self.j(&basis, &p, &q) + p.iter().zip(&q).map(|(x, y)| x * y).sum::<f64>()
        };
        let e = |i: usize| DVector::from_fn(2 * d, |r, _| if r == i { 1.0 } else { 0.0 });
        DMatrix::from_fn(2 * d, 2 * d, |i, j| {
            if i == j {
                2.0 * quad(&e(i))
            } else {
                quad(&(e(i) + e(j))) - quad(&e(i)) - quad(&e(j))
            }
        })
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Σ_k w_k max_z |f(z+□_k)| over every partition cube, with the k < 0 tail, for the block `f` of A.
pub fn weighted_block_sum(field: &CoefficientField, e: f64, block: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> f64 {
    let d = field.dim();
    let n = field.level();
    let mut total = 0.0;
    let mut max0 = 0.0;
    for k in 0..=n {
        let len = 3usize.pow(k);
        let per = 3usize.pow(n) / len;
        let mut m = 0.0f64;
        for z in multi_indices(d, per) {
            let cube = TriadicCube::new(k, z.iter().map(|i| (i * len) as i64).collect()).unwrap();
            let a = DenseOperator::new(field, &cube).double_matrix();
            m = m.max(spectral_norm(&block(&a)));
        }
        if k == 0 {
            max0 = m;
        }
        total += 3f64.powf(2.0 * e * (k as f64 - n as f64)) * m;
    }
    let r = 3f64.powf(-2.0 * e);
    total + max0 * 3f64.powf(-2.0 * e * n as f64) * r / (1.0 - r)
}

/// Average of a per-cell array over an axis-aligned box with real corner `lo` and side `len`.
pub fn box_average(values: &CellArray, lo: &[f64], len: f64) -> Vec<f64> {
    let d = values.dim;
    let mut acc = vec![0.0; values.ncomp];
    for idx in multi_indices(d, values.side) {
        let mut w = 1.0;
        for a in 0..d {
            let c = idx[a] as f64;
            w *= ((c + 1.0).min(lo[a] + len) - c.max(lo[a])).max(0.0);
        }
        if w > 0.0 {
            let i = values.index(&idx.iter().map(|x| *x as i64).collect::<Vec<_>>()).unwrap();
            for (x, v) in acc.iter_mut().zip(values.value(i)) {
                *x += w * v;
            }
        }
    }
    acc.iter().map(|x| x / len.powi(d as i32)).collect()
}

/// (Σ_{k=floor}^{n} 3^{2sk} mean_z |(f)_{z+□_k}|²)^{1/2}, z on the half lattice 3^{k−1}ℤ^d.
pub fn ring_oracle(values: &CellArray, s: f64, n: u32, floor: i32) -> f64 {
    let d = values.dim;
    let side = 3f64.powi(n as i32);
    let mut total = 0.0;
    for k in floor..=n as i32 {
        let len = 3f64.powi(k);
        let step = 3f64.powi(k - 1);
        let per_axis = ((side - len) / step).round() as usize + 1;
        let mut acc = 0.0;
        for idx in multi_indices(d, per_axis) {
            let lo: Vec<f64> = idx.iter().map(|i| *i as f64 * step).collect();
            acc += box_average(values, &lo, len).iter().map(|x| x * x).sum::<f64>();
        }
        total += 3f64.powf(2.0 * s * k as f64) * acc / per_axis.pow(d as u32) as f64;
    }
    total.sqrt()
}

fn magnitude(dim: usize, v: &[f64]) -> f64 {
    if v.len() == dim * dim {
        spectral_norm(&DMatrix::from_row_slice(dim, dim, v))
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Σ_{k=0}^{n} 3^{2t(k−n)} max over partition cubes of |average|, plus the k < 0 tail.
pub fn bnorm_oracle(values: &CellArray, t: f64, n: u32) -> f64 {
    let d = values.dim;
    let mut total = 0.0;
    let mut max0 = 0.0;
    for k in 0..=n {
        let len = 3usize.pow(k);
        let mut m = 0.0f64;
        for z in multi_indices(d, values.side / len) {
            let lo: Vec<f64> = z.iter().map(|i| (i * len) as f64).collect();
            m = m.max(magnitude(d, &box_average(values, &lo, len as f64)));
        }
        if k == 0 {
            max0 = m;
        }
        total += 3f64.powf(2.0 * t * (k as f64 - n as f64)) * m;
    }
    let r = 3f64.powf(-2.0 * t);
    total + max0 * 3f64.powf(-2.0 * t * n as f64) * r / (1.0 - r)
}

/// 3^{−sn}‖g‖_{L̲²} + (Σ_{k=1}^{n} 3^{−2sk} mean_z ⨍|g − (g)_{z+□_k}|²)^{1/2}.
pub fn hs_oracle(values: &CellArray, s: f64, n: u32) -> f64 {
    let d = values.dim;
    let side = values.side;
    let cells: Vec<Vec<f64>> = (0..values.cell_count()).map(|i| values.value(i).to_vec()).collect();
    let at = |x: &[usize]| &cells[values.index(&x.iter().map(|v| *v as i64).collect::<Vec<_>>()).unwrap()];
    let l2 = (cells.iter().flatten().map(|x| x * x).sum::<f64>() / cells.len() as f64).sqrt();
    let mut semi = 0.0;
    for k in 1..=n {
        let len = 3usize.pow(k);
        let step = 3usize.pow(k - 1);
        let per = (side - len) / step + 1;
        let mut acc = 0.0;
        for z in multi_indices(d, per) {
            let members: Vec<&Vec<f64>> = multi_indices(d, len)
                .iter()
                .map(|c| at(&c.iter().zip(&z).map(|(a, b)| a + b * step).collect::<Vec<_>>()))
                .collect();
            let m = members.len() as f64;
            let mean: Vec<f64> = (0..values.ncomp).map(|a| members.iter().map(|v| v[a]).sum::<f64>() / m).collect();
            acc += members.iter().map(|v| v.iter().zip(&mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sum::<f64>() / m;
        }
        semi += 3f64.powf(-2.0 * s * k as f64) * acc / per.pow(d as u32) as f64;
    }
    3f64.powf(-s * n as f64) * l2 + semi.sqrt()
}

/// (⨍|f|^p)^{1/p}.
pub fn lp_oracle(values: &CellArray, p: f64) -> f64 {
    let n = values.cell_count();
    ((0..n).map(|i| magnitude(values.dim, values.value(i)).powf(p)).sum::<f64>() / n as f64).powf(1.0 / p)
}

/// Field families used by the random suites, indexed by `which`.
pub fn random_spec(which: u64, level: u32, seed: u64) -> FieldSpec {
    let kind = match which % 4 {
        0 => FieldKind::Checkerboard { low: 0.2, high: 5.0, prob: 0.5, periodic: false },
        1 => FieldKind::LognormalIso { sigma: 1.0 },
        2 => FieldKind::SkewLognormal { sigma: 0.7, skew: 0.9 },
        _ => FieldKind::CascadeIso { sigma: 0.6, m_max: None, cap: None },
    };
    FieldSpec::new(2, level, seed, kind)
}
