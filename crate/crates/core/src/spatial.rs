//! Spatial-inertia algebra, consistency predicates and the reverse Cholesky
//! factorizations.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{DMat, Mat3, SymMat3, Vec3};
use crate::math::sqrt;
use crate::topology::{sparsity_pattern, RobotTopology, BASE_DOF};
use crate::{Error, Result};

/// Matrix of the cross product: `skew(v) · w = v × w`.
pub fn skew(v: Vec3) -> Mat3 {
    Mat3([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    let a = &m.0;
    Vec3([0.5 * (a[2][1] - a[1][2]), 0.5 * (a[0][2] - a[2][0]), 0.5 * (a[1][0] - a[0][1])])
}

/// `Tr(I)/2 − λ_max(I)`; nonnegative iff the principal moments obey the
/// triangle inequality.
pub fn triangle_margin(inertia: &SymMat3) -> f64 {
    0.5 * inertia.trace() - inertia.lambda_max()
}

pub fn triangle_inequality_satisfied(inertia: &SymMat3, tol: f64) -> bool {
    triangle_margin(inertia) >= -tol
}

/// Rotational inertia of a mass distribution with second moment `Σ`.
pub fn inertia_from_covariance(sigma: &SymMat3) -> Result<SymMat3> {
    let lo = sigma.lambda_min();
    if lo < -1e-10 {
        return Err(Error::NotPsd(lo));
    }
    Ok(SymMat3::new(Mat3::IDENTITY.scale(sigma.trace()) - *sigma.mat()))
}

/// Mass, first mass moment and rotational inertia of a body or composite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    pub first_moment: Vec3,
    pub rot_inertia: SymMat3,
}

impl SpatialInertia {
    /// 6×6 matrix ordered `[linear, angular]`: `[[m·1, skew(h)ᵀ], [skew(h), I]]`.
    pub fn to_matrix(&self) -> DMat {
        let mut m = DMat::zeros(6, 6);
        m.set_block3(0, 0, &Mat3::IDENTITY.scale(self.mass));
        let s = skew(self.first_moment);
        m.set_block3(0, 3, &s.transpose());
        m.set_block3(3, 0, &s);
        m.set_block3(3, 3, self.rot_inertia.mat());
        m
    }

    pub fn is_positive_definite(&self) -> bool {
        self.mass > 0.0 && self.to_matrix().cholesky().is_ok()
    }

    pub fn satisfies_triangle_inequality(&self, tol: f64) -> bool {
        triangle_inequality_satisfied(&self.rot_inertia, tol)
    }
}

/// Packed lower-triangular matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    entries: Vec<f64>,
}

impl LowerTriangular {
    pub fn zeros(n: usize) -> LowerTriangular {
        LowerTriangular { n, entries: vec![0.0; n * (n + 1) / 2] }
    }

    /// Takes the lower triangle of `m`; the strict upper part is ignored.
    pub fn from_dense_lower(m: &DMat) -> LowerTriangular {
        let n = m.rows();
        let mut l = LowerTriangular::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                l.set(i, j, m[(i, j)]);
            }
        }
        l
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.entries[i * (i + 1) / 2 + j]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "strict upper entries are structurally zero");
        self.entries[i * (i + 1) / 2 + j] = v;
    }

    pub fn to_dense(&self) -> DMat {
        DMat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `Lᵀ · L`.
    pub fn gram(&self) -> DMat {
        let n = self.n;
        let mut h = DMat::zeros(n, n);
        for k in 0..n {
            for i in 0..=k {
                let lki = self.get(k, i);
                if lki == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    h[(i, j)] += lki * self.get(k, j);
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        h
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|x| **x != 0.0).count()
    }
}

/// Factor `L` with `Lᵀ L = A`, eliminating from the last row backward.
pub fn reverse_cholesky(a: &DMat) -> Result<LowerTriangular> {
    crate::error::dim_check(a.rows(), a.cols())?;
    let n = a.rows();
    let mut w = a.symmetrized();
    let mut l = LowerTriangular::zeros(n);
    for k in (0..n).rev() {
        let pivot = w[(k, k)];
        if !(pivot > 0.0) {
            return Err(Error::NotSpd { index: k, pivot });
        }
        let d = sqrt(pivot);
        l.set(k, k, d);
        for j in 0..k {
            l.set(k, j, w[(k, j)] / d);
        }
        for i in 0..k {
            let lki = l.get(k, i);
            for j in 0..=i {
                w[(i, j)] -= lki * l.get(k, j);
                w[(j, i)] = w[(i, j)];
            }
        }
    }
    Ok(l)
}

/// Per-branch blocks of the structured factor.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchBlocks {
    /// Coupling of the branch joints to the base linear coordinates, `n_k × 3`.
    pub k: DMat,
    /// Coupling to the base rotational coordinates, `n_k × 3`.
    pub w: DMat,
    /// Joint block, lower triangular with ancestor-only support.
    pub l: DMat,
}

/// Sparse lower-triangular factor with `Lᵀ L = H`, stored by blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredFactor {
    pub lf: Mat3,
    pub lfr: Mat3,
    pub lr: Mat3,
    pub branches: Vec<BranchBlocks>,
}

impl StructuredFactor {
    pub fn from_dense(l: &DMat, topology: &RobotTopology) -> Result<StructuredFactor> {
        crate::error::dim_check(topology.dim(), l.rows())?;
        let branches = (0..topology.n_branches())
            .map(|k| {
                let r = topology.branch_joints(k);
                let (s, n) = (BASE_DOF + r.start, r.len());
                BranchBlocks { k: l.block(s, 0, n, 3), w: l.block(s, 3, n, 3), l: l.block(s, s, n, n) }
            })
            .collect();
        Ok(StructuredFactor { lf: l.block3(0, 0), lfr: l.block3(3, 0), lr: l.block3(3, 3), branches })
    }

    pub fn dim(&self) -> usize {
        BASE_DOF + self.branches.iter().map(|b| b.l.rows()).sum::<usize>()
    }

    pub fn to_dense(&self) -> DMat {
        let mut l = DMat::zeros(self.dim(), self.dim());
        l.set_block3(0, 0, &self.lf);
        l.set_block3(3, 0, &self.lfr);
        l.set_block3(3, 3, &self.lr);
        let mut s = BASE_DOF;
        for b in &self.branches {
            l.set_block(s, 0, &b.k);
            l.set_block(s, 3, &b.w);
            l.set_block(s, s, &b.l);
            s += b.l.rows();
        }
        l
    }

    pub fn gram(&self) -> DMat {
        LowerTriangular::from_dense_lower(&self.to_dense()).gram()
    }

    /// Whether every nonzero lies inside the topology's pattern.
    pub fn respects(&self, topology: &RobotTopology) -> bool {
        let mask = sparsity_pattern(topology);
        let l = self.to_dense();
        (0..l.rows()).all(|i| (0..l.cols()).all(|j| mask.get(i, j) || l[(i, j)] == 0.0))
    }
}

/// Reverse Cholesky restricted to the branch pattern: eliminates each coordinate
/// into its ancestors only, so the factor has no fill-in.
pub fn branch_sparse_factor(h: &DMat, topology: &RobotTopology) -> Result<StructuredFactor> {
    let n = topology.dim();
    crate::error::dim_check(n, h.rows())?;
    crate::error::dim_check(n, h.cols())?;
    let mask = sparsity_pattern(topology);
    let tol = 1e-9 * h.max_abs();
    for i in 0..n {
        for j in 0..i {
            if !mask.get(i, j) {
                let value = h[(i, j)].abs().max(h[(j, i)].abs());
                if value > tol {
                    return Err(Error::SparsityViolation { row: i, col: j, value });
                }
            }
        }
    }
    let mut a = DMat::from_fn(n, n, |i, j| if mask.get(i, j) { 0.5 * (h[(i, j)] + h[(j, i)]) } else { 0.0 });
    for k in (0..n).rev() {
        let pivot = a[(k, k)];
        if !(pivot > 0.0) {
            return Err(Error::NotSpd { index: k, pivot });
        }
        let d = sqrt(pivot);
        a[(k, k)] = d;
        let mut i = topology.coordinate_parent(k);
        while let Some(ii) = i {
            a[(k, ii)] /= d;
            i = topology.coordinate_parent(ii);
        }
        let mut i = topology.coordinate_parent(k);
        while let Some(ii) = i {
            let mut j = Some(ii);
            while let Some(jj) = j {
                a[(ii, jj)] -= a[(k, ii)] * a[(k, jj)];
                j = topology.coordinate_parent(jj);
            }
            i = topology.coordinate_parent(ii);
        }
    }
    StructuredFactor::from_dense(&a, topology)
}
