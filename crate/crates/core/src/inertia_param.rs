//! Inertia matrices from unconstrained network outputs.
//!
//! Three parameterizations share the output conventions defined here:
//! the structured factor with full physical consistency, the same factor with
//! only sparsity and positive definiteness, and a dense Cholesky factor.
//! Each has an `f64` assembly and a tape assembly that also carries tangents
//! along the joint coordinates.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::autodiff::{Extreme, Jet, LinearMap, Tape, Tensor, Var};
use crate::linalg::{DMat, Mat3, SymMat3, Vec3};
use crate::math::softplus;
use crate::spatial::{reverse_cholesky, skew, BranchBlocks, StructuredFactor};
use crate::topology::{RobotTopology, BASE_DOF};
use crate::{Error, Result};

/// Positivity offsets of the factor diagonal, the mass shift and the rotational shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offsets {
    pub eps_l: f64,
    pub eps_m: f64,
    pub eps_d: f64,
}

impl Default for Offsets {
    fn default() -> Self {
        Offsets { eps_l: 0.01, eps_m: 0.1, eps_d: 0.01 }
    }
}

/// Entries of a lower-triangular 3×3 block in packed order.
pub const LOWER3: [(usize, usize); 6] = [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)];

pub fn positive_diagonal(x: f64, eps_l: f64) -> f64 {
    softplus(x) + eps_l
}

/// `β = ε_D + softplus(−μ_D)`, `D̂ = D + β·1`. Returns `(D̂, β, μ_D)`.
pub fn shift_rotational(d: &SymMat3, eps_d: f64) -> (SymMat3, f64, f64) {
    let mu = d.lambda_min();
    let beta = eps_d + softplus(-mu);
    (*d + SymMat3::new(Mat3::IDENTITY.scale(beta)), beta, mu)
}

/// `λ_U = λ_max(UᵀU)`, `m̂ = softplus(m − λ_U) + ε_m + λ_U`, `T = m̂·1 − UᵀU`.
/// Returns `(m̂, T, λ_U)`; `u` has three columns.
pub fn shift_mass(m: f64, u: &DMat, eps_m: f64) -> Result<(f64, SymMat3, f64)> {
    crate::error::dim_check(3, u.cols())?;
    let utu = SymMat3::new(u.transpose().matmul(u).block3(0, 0));
    let lambda = utu.lambda_max();
    let m_hat = softplus(m - lambda) + eps_m + lambda;
    Ok((m_hat, SymMat3::new(Mat3::IDENTITY.scale(m_hat) - *utu.mat()), lambda))
}

/// Lower-triangular inverse by forward substitution.
pub fn lower_inverse3(l: &Mat3) -> Result<Mat3> {
    let mut y = Mat3::ZERO;
    for j in 0..3 {
        if l.0[j][j] == 0.0 {
            return Err(Error::NumericalFailure("singular triangular block".into()));
        }
        y.0[j][j] = 1.0 / l.0[j][j];
        for i in j + 1..3 {
            let s: f64 = (j..i).map(|k| l.0[i][k] * y.0[k][j]).sum();
            y.0[i][j] = -s / l.0[i][i];
        }
    }
    Ok(y)
}

/// `L_FR = ((S(h)ᵀ − KᵀW) L_R⁻¹)ᵀ`, so that `L_FRᵀ L_R + KᵀW = S(h)ᵀ`.
pub fn resolve_lfr(h: Vec3, k: &DMat, w: &DMat, l_r: &Mat3) -> Result<Mat3> {
    crate::error::dim_check(k.rows(), w.rows())?;
    let ktw = k.transpose().matmul(w).block3(0, 0);
    Ok(((skew(h).transpose() - ktw) * lower_inverse3(l_r)?).transpose())
}

/// Activated outputs of the structured parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFactorOutputs {
    pub theta_m: f64,
    pub h: Vec3,
    /// Lower triangular with positive diagonal.
    pub l_sigma: Mat3,
    pub branches: Vec<BranchBlocks>,
}

/// Quantities used by the shifts, reported for the loss and inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub mu_d: f64,
    pub lambda_u: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledInertia {
    pub m_hat: f64,
    pub h: Vec3,
    pub h_mat: DMat,
    pub factor: StructuredFactor,
    pub diagnostics: Diagnostics,
}

fn stack_rows(blocks: impl Iterator<Item = DMat>, cols: usize) -> DMat {
    let blocks: Vec<DMat> = blocks.collect();
    let rows = blocks.iter().map(DMat::rows).sum();
    let mut out = DMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.set_block(at, 0, &b);
        at += b.rows();
    }
    out
}

fn check_branches(branches: &[BranchBlocks], topology: &RobotTopology) -> Result<()> {
    crate::error::dim_check(topology.n_branches(), branches.len())?;
    for (k, b) in branches.iter().enumerate() {
        let n = topology.branch_joints(k).len();
        for m in [&b.k, &b.w] {
            crate::error::dim_check(n, m.rows())?;
            crate::error::dim_check(3, m.cols())?;
        }
        crate::error::dim_check(n, b.l.rows())?;
        crate::error::dim_check(n, b.l.cols())?;
    }
    Ok(())
}

/// Structured assembly: rotational block from a covariance-like factor,
/// shifted to stay positive; coupling solved from `h`; isotropic mass block
/// shifted above the couplings.
pub fn assemble_felan(raw: &RawFactorOutputs, topology: &RobotTopology, offsets: &Offsets) -> Result<AssembledInertia> {
    check_branches(&raw.branches, topology)?;
    let sigma = raw.l_sigma.transpose() * raw.l_sigma;
    let k = stack_rows(raw.branches.iter().map(|b| b.k.clone()), 3);
    let w = stack_rows(raw.branches.iter().map(|b| b.w.clone()), 3);
    let wtw = w.transpose().matmul(&w).block3(0, 0);
    let d = SymMat3::new(Mat3::IDENTITY.scale(sigma.trace()) - sigma - wtw);
    let (d_hat, beta, mu_d) = shift_rotational(&d, offsets.eps_d);
    let l_r = internal_chol3(d_hat.mat())?;
    let l_fr = resolve_lfr(raw.h, &k, &w, &l_r)?;
    let mut u = DMat::zeros(3 + k.rows(), 3);
    u.set_block3(0, 0, &l_fr);
    u.set_block(3, 0, &k);
    let (m_hat, t, lambda_u) = shift_mass(raw.theta_m * raw.theta_m, &u, offsets.eps_m)?;
    let l_f = internal_chol3(t.mat())?;
    let factor = StructuredFactor { lf: l_f, lfr: l_fr, lr: l_r, branches: raw.branches.clone() };
    let mut h_mat = factor.gram();
    // the base blocks equal m̂·1 and S(h) by construction; store them exactly
    h_mat.set_block3(0, 0, &Mat3::IDENTITY.scale(m_hat));
    h_mat.set_block3(3, 0, &skew(raw.h));
    h_mat.set_block3(0, 3, &skew(raw.h).transpose());
    Ok(AssembledInertia { m_hat, h: raw.h, h_mat, factor, diagnostics: Diagnostics { mu_d, lambda_u, beta } })
}

fn internal_chol3(a: &Mat3) -> Result<Mat3> {
    let l = reverse_cholesky(&a.to_dmat())
        .map_err(|e| Error::NumericalFailure(format!("shifted block lost definiteness: {e}")))?;
    Ok(l.to_dense().block3(0, 0))
}

/// Activated outputs when the base blocks of the factor are predicted directly.
#[derive(Debug, Clone, PartialEq)]
pub struct BsRawOutputs {
    pub lf: Mat3,
    pub lfr: Mat3,
    pub lr: Mat3,
    pub branches: Vec<BranchBlocks>,
}

/// Sparsity-only assembly with the mass and first moment read back from `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsAssembled {
    pub h_mat: DMat,
    pub factor: StructuredFactor,
    /// `Tr(H_lin)/3`.
    pub mass: f64,
    /// `vee` of the antisymmetric part of `H[3:6, 0:3]`.
    pub h: Vec3,
}

pub fn assemble_felan_bs(raw: &BsRawOutputs, topology: &RobotTopology) -> Result<BsAssembled> {
    check_branches(&raw.branches, topology)?;
    for (name, m) in [("L_F", &raw.lf), ("L_R", &raw.lr)] {
        if (0..3).any(|i| !(m.0[i][i] > 0.0)) {
            return Err(Error::InvalidData(format!("{name} needs a positive diagonal")));
        }
    }
    let factor = StructuredFactor { lf: raw.lf, lfr: raw.lfr, lr: raw.lr, branches: raw.branches.clone() };
    let h_mat = factor.gram();
    let (mass, h) = mass_and_moment(&h_mat);
    Ok(BsAssembled { h_mat, factor, mass, h })
}

/// `Tr(H_lin)/3` and `vee(½(B − Bᵀ))` for `B = H[3:6, 0:3]`.
pub fn mass_and_moment(h: &DMat) -> (f64, Vec3) {
    let mass = h.block3(0, 0).trace() / 3.0;
    let b = h.block3(3, 0);
    (mass, crate::spatial::vee(&(b - b.transpose()).scale(0.5)))
}

/// `H = C Cᵀ` for a dense lower-triangular `C` with positive diagonal.
pub fn assemble_delan_dense(c: &DMat) -> Result<DMat> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch { expected: c.rows(), got: c.cols() });
    }
    for i in 0..c.rows() {
        if !(c[(i, i)] > 0.0) {
            return Err(Error::InvalidData(format!("diagonal entry {i} of C is not positive")));
        }
        if (i + 1..c.cols()).any(|j| c[(i, j)] != 0.0) {
            return Err(Error::InvalidData("C is not lower triangular".into()));
        }
    }
    Ok(c.matmul(&c.transpose()))
}

/// Reads entries of a network output column into matrix positions, passing
/// flagged entries through [`positive_diagonal`].
#[derive(Debug, Clone)]
pub struct PackedBlock {
    out: (usize, usize),
    entries: Vec<(usize, (usize, usize), bool)>,
    linear: Arc<LinearMap>,
    pick: Option<Arc<LinearMap>>,
    place: Option<Arc<LinearMap>>,
}

impl PackedBlock {
    /// `entries`: (source row, target position, positive).
    pub fn new(input_len: usize, out: (usize, usize), entries: Vec<(usize, (usize, usize), bool)>) -> PackedBlock {
        let mut linear = LinearMap::new((input_len, 1), out);
        let n_pos = entries.iter().filter(|e| e.2).count();
        let mut pick = LinearMap::new((input_len, 1), (n_pos.max(1), 1));
        let mut place = LinearMap::new((n_pos.max(1), 1), out);
        let mut p = 0;
        for &(src, at, positive) in &entries {
            if positive {
                pick.push((p, 0), (src, 0), 1.0);
                place.push(at, (p, 0), 1.0);
                p += 1;
            } else {
                linear.push(at, (src, 0), 1.0);
            }
        }
        let (pick, place) = if n_pos > 0 { (Some(Arc::new(pick)), Some(Arc::new(place))) } else { (None, None) };
        PackedBlock { out, entries, linear: Arc::new(linear), pick, place }
    }

    /// Lower-triangular 3×3 from six packed values at `at`, placed at `offset`
    /// of an `out`-shaped matrix.
    pub fn lower3(input_len: usize, at: usize, out: (usize, usize), offset: (usize, usize), positive: bool) -> PackedBlock {
        let entries =
            LOWER3.iter().enumerate().map(|(e, &(i, j))| (at + e, (offset.0 + i, offset.1 + j), positive && i == j)).collect();
        PackedBlock::new(input_len, out, entries)
    }

    /// Dense `rows × cols` block from row-major values at `at`.
    pub fn dense(input_len: usize, at: usize, rows: usize, cols: usize, out: (usize, usize), offset: (usize, usize)) -> PackedBlock {
        let entries =
            (0..rows * cols).map(|e| (at + e, (offset.0 + e / cols, offset.1 + e % cols), false)).collect();
        PackedBlock::new(input_len, out, entries)
    }

    pub fn decode(&self, x: &[f64], eps_l: f64) -> DMat {
        let mut m = DMat::zeros(self.out.0, self.out.1);
        for &(src, at, positive) in &self.entries {
            m[at] = if positive { positive_diagonal(x[src], eps_l) } else { x[src] };
        }
        m
    }

    pub fn decode_tape(&self, tape: &mut Tape, x: &Jet, eps_l: f64) -> Jet {
        let lin = tape.j_linear(x, &self.linear);
        match (&self.pick, &self.place) {
            (Some(pick), Some(place)) => {
                let d = tape.j_linear(x, pick);
                let d = tape.j_softplus(&d);
                let eps = tape.scalar(eps_l);
                let d = tape.j_add_const(&d, eps);
                let d = tape.j_linear(&d, place);
                tape.j_add(&lin, &d)
            }
            _ => lin,
        }
    }
}

/// Output ordering of one branch network: `K` (row-major `n_k × 3`), `W`
/// (same), then the joint block entries in the branch's pattern order.
#[derive(Debug, Clone)]
pub struct BranchLayout {
    pub outputs: usize,
    /// Everything placed into the full `n × n` factor.
    pub into_factor: PackedBlock,
    /// `K` and `W` of this branch inside the stacked `n_q × 3` matrices.
    pub k_rows: PackedBlock,
    pub w_rows: PackedBlock,
}

impl BranchLayout {
    fn new(topology: &RobotTopology, k: usize) -> BranchLayout {
        let n = topology.dim();
        let r = topology.branch_joints(k);
        let nk = r.len();
        let pattern = topology.branch_pattern(k);
        let outputs = 6 * nk + pattern.len();
        let s = BASE_DOF + r.start;
        let mut entries = Vec::with_capacity(outputs);
        for e in 0..3 * nk {
            entries.push((e, (s + e / 3, e % 3), false));
            entries.push((3 * nk + e, (s + e / 3, 3 + e % 3), false));
        }
        for (e, &(i, j)) in pattern.iter().enumerate() {
            entries.push((6 * nk + e, (s + i, s + j), i == j));
        }
        BranchLayout {
            outputs,
            into_factor: PackedBlock::new(outputs, (n, n), entries),
            k_rows: PackedBlock::dense(outputs, 0, nk, 3, (topology.n_q(), 3), (r.start, 0)),
            w_rows: PackedBlock::dense(outputs, 3 * nk, nk, 3, (topology.n_q(), 3), (r.start, 0)),
        }
    }

    pub fn blocks(&self, topology: &RobotTopology, k: usize, out: &[f64], eps_l: f64) -> BranchBlocks {
        let r = topology.branch_joints(k);
        let full = self.into_factor.decode(out, eps_l);
        let (s, nk) = (BASE_DOF + r.start, r.len());
        BranchBlocks { k: full.block(s, 0, nk, 3), w: full.block(s, 3, nk, 3), l: full.block(s, s, nk, nk) }
    }
}

/// Precomputed output layouts and constant maps for one topology.
#[derive(Debug, Clone)]
pub struct FactorLayout {
    topology: RobotTopology,
    pub branches: Vec<BranchLayout>,
    /// Root outputs of the structured parameterization: `h` then six `L_Σ` entries.
    pub felan_root_outputs: usize,
    felan_h: Arc<LinearMap>,
    felan_sigma: PackedBlock,
    /// Root outputs when the base blocks are predicted directly: `L_F` (6), `L_FR` (9), `L_R` (6).
    pub bs_root_outputs: usize,
    bs_base: [PackedBlock; 3],
    /// Packed dense lower-triangular factor.
    pub dense_outputs: usize,
    dense: PackedBlock,
    place_f: Arc<LinearMap>,
    place_fr: Arc<LinearMap>,
    place_r: Arc<LinearMap>,
    trace_minus: Arc<LinearMap>,
    skew_t: Arc<LinearMap>,
}

impl FactorLayout {
    pub fn new(topology: &RobotTopology) -> FactorLayout {
        let n = topology.dim();
        let branches = (0..topology.n_branches()).map(|k| BranchLayout::new(topology, k)).collect();
        let mut dense_entries = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                dense_entries.push((dense_entries.len(), (i, j), i == j));
            }
        }
        let mut trace_minus = LinearMap::new((3, 3), (3, 3));
        for i in 0..3 {
            for j in 0..3 {
                trace_minus.push((i, j), (i, j), -1.0);
            }
            for k in 0..3 {
                trace_minus.push((i, i), (k, k), 1.0);
            }
        }
        // S(h)ᵀ = −S(h)
        let skew_t = LinearMap::new((3, 1), (3, 3))
            .term((0, 1), (2, 0), 1.0)
            .term((0, 2), (1, 0), -1.0)
            .term((1, 0), (2, 0), -1.0)
            .term((1, 2), (0, 0), 1.0)
            .term((2, 0), (1, 0), 1.0)
            .term((2, 1), (0, 0), -1.0);
        FactorLayout {
            topology: topology.clone(),
            branches,
            felan_root_outputs: 9,
            felan_h: Arc::new(LinearMap::block((9, 1), (0, 0), (3, 1))),
            felan_sigma: PackedBlock::lower3(9, 3, (3, 3), (0, 0), true),
            bs_root_outputs: 21,
            bs_base: [
                PackedBlock::lower3(21, 0, (n, n), (0, 0), true),
                PackedBlock::dense(21, 6, 3, 3, (n, n), (3, 0)),
                PackedBlock::lower3(21, 15, (n, n), (3, 3), true),
            ],
            dense_outputs: dense_entries.len(),
            dense: PackedBlock::new(dense_entries.len(), (n, n), dense_entries),
            place_f: Arc::new(LinearMap::embed((3, 3), (n, n), (0, 0))),
            place_fr: Arc::new(LinearMap::embed((3, 3), (n, n), (3, 0))),
            place_r: Arc::new(LinearMap::embed((3, 3), (n, n), (3, 3))),
            trace_minus: Arc::new(trace_minus),
            skew_t: Arc::new(skew_t),
        }
    }

    pub fn topology(&self) -> &RobotTopology {
        &self.topology
    }

    pub fn branch_outputs(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.outputs).collect()
    }

    fn check_outputs(&self, root: &[f64], root_len: usize, branches: &[Vec<f64>]) -> Result<()> {
        crate::error::dim_check(root_len, root.len())?;
        crate::error::dim_check(self.branches.len(), branches.len())?;
        for (b, out) in self.branches.iter().zip(branches) {
            crate::error::dim_check(b.outputs, out.len())?;
        }
        Ok(())
    }

    fn decode_branches(&self, branches: &[Vec<f64>], eps_l: f64) -> Vec<BranchBlocks> {
        self.branches.iter().enumerate().map(|(k, b)| b.blocks(&self.topology, k, &branches[k], eps_l)).collect()
    }

    pub fn decode_felan(&self, theta_m: f64, root: &[f64], branches: &[Vec<f64>], eps_l: f64) -> Result<RawFactorOutputs> {
        self.check_outputs(root, self.felan_root_outputs, branches)?;
        Ok(RawFactorOutputs {
            theta_m,
            h: Vec3::new(root[0], root[1], root[2]),
            l_sigma: self.felan_sigma.decode(root, eps_l).block3(0, 0),
            branches: self.decode_branches(branches, eps_l),
        })
    }

    pub fn decode_bs(&self, root: &[f64], branches: &[Vec<f64>], eps_l: f64) -> Result<BsRawOutputs> {
        self.check_outputs(root, self.bs_root_outputs, branches)?;
        let full: Vec<DMat> = self.bs_base.iter().map(|p| p.decode(root, eps_l)).collect();
        Ok(BsRawOutputs {
            lf: full[0].block3(0, 0),
            lfr: full[1].block3(3, 0),
            lr: full[2].block3(3, 3),
            branches: self.decode_branches(branches, eps_l),
        })
    }

    pub fn decode_dense(&self, out: &[f64], eps_l: f64) -> Result<DMat> {
        crate::error::dim_check(self.dense_outputs, out.len())?;
        Ok(self.dense.decode(out, eps_l))
    }

    /// Tape version of [`assemble_felan`]. The factor satisfies `H = LᵀL`.
    pub fn felan_tape(
        &self,
        tape: &mut Tape,
        theta_m: Var,
        root: &Jet,
        branches: &[Jet],
        offsets: &Offsets,
    ) -> Result<FelanTape> {
        let d = root.dims();
        let h = tape.j_linear(root, &self.felan_h);
        let l_sigma = self.felan_sigma.decode_tape(tape, root, offsets.eps_l);
        let mut factor: Option<Jet> = None;
        let mut k_all: Option<Jet> = None;
        let mut w_all: Option<Jet> = None;
        let add = |tape: &mut Tape, acc: Option<Jet>, x: Jet| Some(match acc { Some(a) => tape.j_add(&a, &x), None => x });
        for (layout, out) in self.branches.iter().zip(branches) {
            let f = layout.into_factor.decode_tape(tape, out, offsets.eps_l);
            factor = add(tape, factor, f);
            let k = layout.k_rows.decode_tape(tape, out, offsets.eps_l);
            k_all = add(tape, k_all, k);
            let w = layout.w_rows.decode_tape(tape, out, offsets.eps_l);
            w_all = add(tape, w_all, w);
        }
        let (k_all, w_all) = (k_all.expect("at least one branch"), w_all.expect("at least one branch"));
        let eye = tape.constant(Tensor::new(1, 3, 3, Mat3::IDENTITY.0.concat()));

        let lst = tape.j_transpose(&l_sigma);
        let sigma = tape.j_matmul(&lst, &l_sigma);
        let wt = tape.j_transpose(&w_all);
        let wtw = tape.j_matmul(&wt, &w_all);
        let kt = tape.j_transpose(&k_all);
        let ktw = tape.j_matmul(&kt, &w_all);
        let ktk = tape.j_matmul(&kt, &k_all);
        let tm = tape.j_linear(&sigma, &self.trace_minus);
        let dmat = tape.j_sub(&tm, &wtw);
        let (mu_d, _) = tape.j_eig_extreme(&dmat, Extreme::Min);
        let neg_mu = tape.j_scale(&mu_d, -1.0);
        let sp = tape.j_softplus(&neg_mu);
        let eps_d = tape.scalar(offsets.eps_d);
        let beta = tape.j_add_const(&sp, eps_d);
        let beta_eye = tape.j_mul_const(&beta, eye);
        let d_hat = tape.j_add(&dmat, &beta_eye);
        let (l_r, l_r_inv) = tape.j_chol_rev(&d_hat)?;
        let sht = tape.j_linear(&h, &self.skew_t);
        let x = tape.j_sub(&sht, &ktw);
        let xy = tape.j_matmul(&x, &l_r_inv);
        let l_fr = tape.j_transpose(&xy);
        let xyt = tape.j_transpose(&l_fr);
        let frf = tape.j_matmul(&xyt, &l_fr);
        let utu = tape.j_add(&frf, &ktk);
        let (lambda_u, _) = tape.j_eig_extreme(&utu, Extreme::Max);
        let mass = tape.mul(theta_m, theta_m);
        let m = Jet::constant(mass, d);
        let gap = tape.j_sub(&m, &lambda_u);
        let sp = tape.j_softplus(&gap);
        let eps_m = tape.scalar(offsets.eps_m);
        let shifted = tape.j_add_const(&sp, eps_m);
        let m_hat = tape.j_add(&shifted, &lambda_u);
        let m_eye = tape.j_mul_const(&m_hat, eye);
        let t = tape.j_sub(&m_eye, &utu);
        let (l_f, _) = tape.j_chol_rev(&t)?;
        let mut full = factor.expect("at least one branch");
        for (block, map) in [(&l_f, &self.place_f), (&l_fr, &self.place_fr), (&l_r, &self.place_r)] {
            let placed = tape.j_linear(block, map);
            full = tape.j_add(&full, &placed);
        }
        Ok(FelanTape { factor: full, m_hat, mass, h, mu_d: mu_d.val, lambda_u: lambda_u.val, beta: beta.val })
    }

    /// Tape version of [`assemble_felan_bs`]; returns the factor with `H = LᵀL`.
    pub fn bs_tape(&self, tape: &mut Tape, root: &Jet, branches: &[Jet], eps_l: f64) -> Jet {
        let mut full = self.bs_base[0].decode_tape(tape, root, eps_l);
        for p in &self.bs_base[1..] {
            let x = p.decode_tape(tape, root, eps_l);
            full = tape.j_add(&full, &x);
        }
        for (layout, out) in self.branches.iter().zip(branches) {
            let f = layout.into_factor.decode_tape(tape, out, eps_l);
            full = tape.j_add(&full, &f);
        }
        full
    }

    /// Dense Cholesky factor `C` on the tape (`H = C Cᵀ`).
    pub fn dense_tape(&self, tape: &mut Tape, out: &Jet, eps_l: f64) -> Jet {
        self.dense.decode_tape(tape, out, eps_l)
    }
}

/// Tape outputs of the structured assembly; all per-sample `[B, ·, ·]` except `mass`.
#[derive(Debug, Clone)]
pub struct FelanTape {
    pub factor: Jet,
    pub m_hat: Jet,
    /// `θ_m²`, `[1, 1, 1]`.
    pub mass: Var,
    pub h: Jet,
    pub mu_d: Var,
    pub lambda_u: Var,
    pub beta: Var,
}
