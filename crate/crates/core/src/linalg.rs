//! Small fixed-size and dense matrix types.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn unit(axis: usize) -> Self {
        let mut v = [0.0; 3];
        v[axis] = 1.0;
        Vec3(v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [x, y, z] = o.0;
        Vec3([b * z - c * y, c * x - a * z, a * y - b * x])
    }

    pub fn norm(self) -> f64 {
        sqrt(self.dot(self))
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3([self.0[0] * k, self.0[1] * k, self.0[2] * k])
    }

    pub fn normalized(self) -> Vec3 {
        self.scale(1.0 / self.norm())
    }

    pub fn outer(self, o: Vec3) -> Mat3 {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i] * o.0[j];
            }
        }
        m
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.scale(-1.0)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(d: [f64; 3]) -> Mat3 {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn from_cols(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
        Mat3([[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]])
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = self.0[j][i];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn scale(&self, k: f64) -> Mat3 {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|x| *x *= k);
        m
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn frobenius(&self) -> f64 {
        sqrt(self.0.iter().flatten().map(|x| x * x).sum())
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(o.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn to_dmat(&self) -> DMat {
        DMat::from_fn(3, 3, |i, j| self.0[i][j])
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] -= o.0[i][j];
            }
        }
        m
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        m
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self.scale(-1.0)
    }
}

/// Symmetric 3×3 matrix; construction symmetrizes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat3(Mat3);

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3(Mat3::ZERO);
    pub const IDENTITY: SymMat3 = SymMat3(Mat3::IDENTITY);

    pub fn new(m: Mat3) -> SymMat3 {
        let mut s = m;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let v = 0.5 * (m.0[i][j] + m.0[j][i]);
                s.0[i][j] = v;
                s.0[j][i] = v;
            }
        }
        SymMat3(s)
    }

    pub fn diag(d: [f64; 3]) -> SymMat3 {
        SymMat3(Mat3::diag(d))
    }

    /// From the six independent entries `[xx, xy, xz, yy, yz, zz]`.
    pub fn from_upper(p: [f64; 6]) -> SymMat3 {
        SymMat3(Mat3([[p[0], p[1], p[2]], [p[1], p[3], p[4]], [p[2], p[4], p[5]]]))
    }

    pub fn upper(&self) -> [f64; 6] {
        let m = &self.0 .0;
        [m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]]
    }

    pub fn mat(&self) -> &Mat3 {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0 .0[i][j]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigen(&self) -> SymEigen3 {
        sym_eigen3(&self.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen().values[2]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigen().values[0]
    }
}

impl Add for SymMat3 {
    type Output = SymMat3;
    fn add(self, o: SymMat3) -> SymMat3 {
        SymMat3(self.0 + o.0)
    }
}

impl Sub for SymMat3 {
    type Output = SymMat3;
    fn sub(self, o: SymMat3) -> SymMat3 {
        SymMat3(self.0 - o.0)
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix, eigenvalues ascending.
/// `vectors` holds the unit eigenvectors as columns.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen3 {
    pub values: [f64; 3],
    pub vectors: Mat3,
}

/// Cyclic Jacobi on the symmetrized input. Eigenvector signs are fixed so the
/// largest-magnitude component is positive (ties go to the lowest index).
pub fn sym_eigen3(m: &Mat3) -> SymEigen3 {
    let mut a = SymMat3::new(*m).0 .0;
    let mut v = Mat3::IDENTITY.0;
    let scale = a.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
    if scale > 0.0 {
        for _ in 0..64 {
            let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            if off <= (1e-17 * scale) * (1e-17 * scale) {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(core::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut values = [0.0; 3];
    let mut vectors = Mat3::ZERO;
    for (slot, &src) in order.iter().enumerate() {
        values[slot] = a[src][src];
        let mut col = [v[0][src], v[1][src], v[2][src]];
        let mut big = 0;
        for k in 1..3 {
            if col[k].abs() > col[big].abs() + 1e-12 {
                big = k;
            }
        }
        if col[big] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for k in 0..3 {
            vectors.0[k][slot] = col[k];
        }
    }
    SymEigen3 { values, vectors }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DMat {
    pub fn zeros(rows: usize, cols: usize) -> DMat {
        DMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> DMat {
        DMat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DMat { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<DMat> {
        crate::error::dim_check(rows * cols, data.len())?;
        Ok(DMat { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> DMat {
        DMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &DMat) -> DMat {
        assert_eq!(self.cols, o.rows, "matmul shape mismatch");
        let mut out = DMat::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..o.cols {
                    out.data[i * o.cols + j] += a * o.data[k * o.cols + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "matvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add(&self, o: &DMat) -> DMat {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        DMat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &DMat) -> DMat {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        DMat { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, k: f64) -> DMat {
        DMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * k).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, o: &DMat) -> f64 {
        self.sub(o).max_abs()
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> DMat {
        DMat::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn block3(&self, r0: usize, c0: usize) -> Mat3 {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self[(r0 + i, c0 + j)];
            }
        }
        m
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &DMat) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn set_block3(&mut self, r0: usize, c0: usize, b: &Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self[(r0 + i, c0 + j)] = b.0[i][j];
            }
        }
    }

    pub fn symmetrized(&self) -> DMat {
        DMat::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Standard lower Cholesky factor `C` with `C Cᵀ = self`.
    pub fn cholesky(&self) -> Result<DMat> {
        let n = self.rows;
        let mut c = DMat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= c[(j, k)] * c[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotSpd { index: j, pivot: d });
            }
            let djj = sqrt(d);
            c[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= c[(i, k)] * c[(j, k)];
                }
                c[(i, j)] = s / djj;
            }
        }
        Ok(c)
    }

    /// Solves `self · x = b` for SPD `self`.
    pub fn solve_spd(&self, b: &[f64]) -> Result<Vec<f64>> {
        let c = self.cholesky()?;
        let n = self.rows;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= c[(i, k)] * y[k];
            }
            y[i] /= c[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= c[(k, i)] * y[k];
            }
            y[i] /= c[(i, i)];
        }
        Ok(y)
    }

    /// Smallest eigenvalue of a symmetric matrix, by Cholesky bisection on shifts.
    /// Used for positivity checks where exact eigenvectors are not needed.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.rows;
        let bound: f64 = (0..n).map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        let (mut lo, mut hi) = (-bound - 1.0, bound + 1.0);
        let mut shifted = self.symmetrized();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            for i in 0..n {
                shifted[(i, i)] = self[(i, i)] - mid;
            }
            if shifted.cholesky().is_ok() {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * bound.max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Index<(usize, usize)> for DMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng) -> Mat3 {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = rng.gen_range(-2.0..2.0);
            }
        }
        *SymMat3::new(m).mat()
    }

    #[test]
    fn eigen_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let m = random_sym(&mut rng);
            let e = sym_eigen3(&m);
            let na = nalgebra::Matrix3::from_fn(|i, j| m.0[i][j]);
            let mut reference: std::vec::Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for k in 0..3 {
                assert!((e.values[k] - reference[k]).abs() < 1e-12, "{:?} vs {:?}", e.values, reference);
                let v = e.vectors.col(k);
                let r = m.mul_vec(v) - v.scale(e.values[k]);
                assert!(r.norm() < 1e-12);
                assert!((v.norm() - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn eigen_of_repeated_and_diagonal() {
        let e = sym_eigen3(&Mat3::diag([3.0, 1.0, 2.0]));
        assert_eq!(e.values, [1.0, 2.0, 3.0]);
        assert_eq!(e.vectors.col(0), Vec3::unit(1));
        let e = sym_eigen3(&Mat3::IDENTITY.scale(2.0));
        assert_eq!(e.values, [2.0; 3]);
        let e = sym_eigen3(&Mat3::ZERO);
        assert_eq!(e.values, [0.0; 3]);
    }

    #[test]
    fn cholesky_solve_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMat::from_fn(5, 5, |_, _| rng.gen_range(-1.0..1.0));
        let spd = a.matmul(&a.transpose()).add(&DMat::identity(5));
        let b: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let x = spd.solve_spd(&b).unwrap();
        let back = spd.mul_vec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let lo = spd.min_eigenvalue();
        let na = nalgebra::DMatrix::from_fn(5, 5, |i, j| spd[(i, j)]);
        let reference = na.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((lo - reference).abs() < 1e-10);
    }
}
