//! Triadic cubes, their sub-cube lattices and per-cell arrays.
//!
//! Cubes are addressed by the integer corner of their lowest cell: the centred
//! cube (−3^n/2, 3^n/2)^d maps to [0, 3^n)^d. A cube at level k centred on a
//! point of 3^{k−1}ℤ^d (relative to the centre of a containing □_n) has its
//! corner on 3^{k−1}ℤ^d as well, so both lattices used by the norms are
//! integer lattices in corner coordinates for k ≥ 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

pub fn pow3(k: u32) -> i64 {
    3_i64.pow(k)
}

/// Which family of sub-cubes to enumerate at a given scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lattice {
    /// Disjoint tiles, corners on 3^k ℤ^d.
    Partition,
    /// Overlapping cubes with corners on 3^{k−1} ℤ^d contained in the domain.
    HalfOverlap,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriadicCube {
    pub level: u32,
    pub offset: Vec<i64>,
}

impl fmt::Display for TriadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}@(", self.level)?;
        for (i, z) in self.offset.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{z}")?;
        }
        write!(f, ")")
    }
}

impl TriadicCube {
    pub fn new(level: u32, offset: Vec<i64>) -> Result<Self> {
        if !(2..=3).contains(&offset.len()) {
            return Err(HomError::invalid(format!(
                "dimension must be 2 or 3, got {}",
                offset.len()
            )));
        }
        Ok(Self { level, offset })
    }

    /// The top domain □_n with corner at the origin.
    pub fn domain(dim: usize, level: u32) -> Self {
        Self { level, offset: vec![0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn side(&self) -> i64 {
        pow3(self.level)
    }

    /// Number of unit cells, 3^{d·level}.
    pub fn volume(&self) -> f64 {
        (self.side() as f64).powi(self.dim() as i32)
    }

    pub fn contains(&self, other: &TriadicCube) -> bool {
        let (s, o) = (self.side(), other.side());
        self.offset
            .iter()
            .zip(&other.offset)
            .all(|(a, b)| *b >= *a && b + o <= a + s)
    }

    pub fn contains_cell(&self, cell: &[i64]) -> bool {
        let s = self.side();
        self.offset.iter().zip(cell).all(|(a, c)| *c >= *a && *c < a + s)
    }

    pub fn children(&self) -> Result<Vec<TriadicCube>> {
        if self.level == 0 {
            return Err(HomError::NoChildren);
        }
        Ok(self.partition_at(self.level - 1))
    }

    /// All sub-cubes at scale `k` on the requested lattice.
    pub fn subcubes(&self, k: u32, lattice: Lattice) -> Result<Vec<TriadicCube>> {
        if k > self.level {
            return Err(HomError::invalid(format!(
                "scale {k} exceeds domain level {}",
                self.level
            )));
        }
        match lattice {
            Lattice::Partition => Ok(self.partition_at(k)),
            Lattice::HalfOverlap => {
                if k == 0 {
                    return Err(HomError::invalid(
                        "half-lattice at unit scale has sub-cell offsets; evaluate it through the norms module",
                    ));
                }
                let step = pow3(k - 1);
                let per_axis = ((self.side() - pow3(k)) / step + 1) as usize;
                Ok(grid_points(self.dim(), per_axis)
                    .map(|idx| TriadicCube {
                        level: k,
                        offset: self
                            .offset
                            .iter()
                            .zip(&idx)
                            .map(|(o, i)| o + *i as i64 * step)
                            .collect(),
                    })
                    .collect())
            }
        }
    }

    fn partition_at(&self, k: u32) -> Vec<TriadicCube> {
        let step = pow3(k);
        let per_axis = (self.side() / step) as usize;
        grid_points(self.dim(), per_axis)
            .map(|idx| TriadicCube {
                level: k,
                offset: self
                    .offset
                    .iter()
                    .zip(&idx)
                    .map(|(o, i)| o + *i as i64 * step)
                    .collect(),
            })
            .collect()
    }

    /// Unit-cell coordinates inside the cube, first axis fastest.
    pub fn cells(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        grid_points(self.dim(), self.side() as usize).map(move |idx| {
            self.offset
                .iter()
                .zip(&idx)
                .map(|(o, i)| o + *i as i64)
                .collect()
        })
    }
}

/// Multi-indices of a `per_axis^dim` grid, first axis fastest.
pub fn grid_points(dim: usize, per_axis: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = per_axis.pow(dim as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; dim];
        for slot in idx.iter_mut() {
            *slot = flat % per_axis;
            flat /= per_axis;
        }
        idx
    })
}

/// Uniform element grid laid over □_n: `resolution` Q1 elements per unit cell per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub top_level: u32,
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(dim: usize, top_level: u32, resolution: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) || resolution == 0 {
            return Err(HomError::invalid("grid needs d ∈ {2,3} and resolution ≥ 1"));
        }
        Ok(Self { dim, top_level, resolution })
    }

    pub fn elements_per_axis(&self) -> usize {
        self.resolution * pow3(self.top_level) as usize
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.elements_per_axis() + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn element_count(&self) -> usize {
        self.elements_per_axis().pow(self.dim as u32)
    }
}

/// Values attached to unit cells of a window [0, side)^d, `ncomp` numbers per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellArray {
    pub dim: usize,
    pub side: usize,
    pub ncomp: usize,
    pub data: Vec<f64>,
}

impl CellArray {
    pub fn zeros(dim: usize, side: usize, ncomp: usize) -> Self {
        Self { dim, side, ncomp, data: vec![0.0; side.pow(dim as u32) * ncomp] }
    }

    pub fn from_fn(dim: usize, side: usize, ncomp: usize, mut f: impl FnMut(&[usize]) -> Vec<f64>) -> Self {
        let mut out = Self::zeros(dim, side, ncomp);
        for (i, idx) in grid_points(dim, side).enumerate() {
            let v = f(&idx);
            out.data[i * ncomp..(i + 1) * ncomp].copy_from_slice(&v[..ncomp]);
        }
        out
    }

    pub fn cell_count(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn index(&self, cell: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for axis in (0..self.dim).rev() {
            let c = cell[axis];
            if c < 0 || c as usize >= self.side {
                return None;
            }
            flat = flat * self.side + c as usize;
        }
        Some(flat)
    }

    pub fn value(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.ncomp..(flat + 1) * self.ncomp]
    }

    pub fn window(&self) -> Result<TriadicCube> {
        let mut level = 0;
        while (pow3(level) as usize) < self.side {
            level += 1;
        }
        if pow3(level) as usize != self.side {
            return Err(HomError::invalid("window side is not a power of three"));
        }
        Ok(TriadicCube::domain(self.dim, level))
    }

    fn check_inside(&self, cube: &TriadicCube) -> Result<()> {
        let side = cube.side();
        if cube.dim() != self.dim
            || cube.offset.iter().any(|&o| o < 0 || (o + side) as usize > self.side)
        {
            return Err(HomError::OutOfBounds(format!(
                "cube {cube} outside window of side {}",
                self.side
            )));
        }
        Ok(())
    }

    /// Arithmetic mean over the unit cells of `cube`.
    pub fn cell_average(&self, cube: &TriadicCube) -> Result<Vec<f64>> {
        self.check_inside(cube)?;
        let mut acc = vec![0.0; self.ncomp];
        for cell in cube.cells() {
            let i = self.index(&cell).expect("checked");
            for (a, v) in acc.iter_mut().zip(self.value(i)) {
                *a += v;
            }
        }
        let vol = cube.volume();
        acc.iter_mut().for_each(|a| *a /= vol);
        Ok(acc)
    }

    /// Partition averages of `domain` at every scale 0..=domain.level.
    pub fn pyramid(&self, domain: &TriadicCube) -> Result<Pyramid> {
        self.check_inside(domain)?;
        let d = self.dim;
        let nc = self.ncomp;
        let n0 = domain.side() as usize;
        let mut base = vec![0.0; n0.pow(d as u32) * nc];
        for (i, idx) in grid_points(d, n0).enumerate() {
            let cell: Vec<i64> = idx.iter().zip(&domain.offset).map(|(a, o)| *a as i64 + o).collect();
            let src = self.index(&cell).expect("checked");
            base[i * nc..(i + 1) * nc].copy_from_slice(self.value(src));
        }
        let mut levels = vec![base];
        let mut per_axis = n0;
        while per_axis > 1 {
            let coarse_axis = per_axis / 3;
            let fine = levels.last().unwrap();
            let mut coarse = vec![0.0; coarse_axis.pow(d as u32) * nc];
            for (fi, idx) in grid_points(d, per_axis).enumerate() {
                let mut ci = 0usize;
                for axis in (0..d).rev() {
                    ci = ci * coarse_axis + idx[axis] / 3;
                }
                for c in 0..nc {
                    coarse[ci * nc + c] += fine[fi * nc + c];
                }
            }
            let w = 1.0 / 3f64.powi(d as i32);
            coarse.iter_mut().for_each(|x| *x *= w);
            levels.push(coarse);
            per_axis = coarse_axis;
        }
        Ok(Pyramid { dim: d, ncomp: nc, top_level: domain.level, levels })
    }
}

/// Cube averages on the partition lattice at every scale of a domain.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub dim: usize,
    pub ncomp: usize,
    pub top_level: u32,
    /// `levels[k]` holds 3^{d(n−k)} averages, first axis fastest.
    pub levels: Vec<Vec<f64>>,
}

impl Pyramid {
    pub fn per_axis(&self, k: u32) -> usize {
        pow3(self.top_level - k) as usize
    }

    pub fn averages(&self, k: u32) -> impl Iterator<Item = &[f64]> {
        self.levels[k as usize].chunks(self.ncomp)
    }
}
