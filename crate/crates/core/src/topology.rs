//! Branch structure of a floating-base tree, factor sparsity and parameter counts.
//!
//! Coordinates are ordered `[linear(3), rotational(3), joints]` where joints
//! follow the canonical order: branches as declared, segments parent-first,
//! joints in chain order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::{Error, Result};

/// Number of base coordinates (translation then rotation).
pub const BASE_DOF: usize = 6;

/// A serial run of joints hanging off the floating base or off the last joint
/// of another segment of the same branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub joint_count: usize,
    /// Index of the parent segment within the branch; `None` roots at the base.
    pub parent: Option<usize>,
}

impl Segment {
    pub const fn root(joint_count: usize) -> Segment {
        Segment { joint_count, parent: None }
    }

    pub const fn child_of(parent: usize, joint_count: usize) -> Segment {
        Segment { joint_count, parent: Some(parent) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub segments: Vec<Segment>,
}

impl Branch {
    /// A branch made of a single serial chain.
    pub fn chain(joints: usize) -> Branch {
        Branch { segments: vec![Segment::root(joints)] }
    }

    pub fn joint_count(&self) -> usize {
        self.segments.iter().map(|s| s.joint_count).sum()
    }
}

/// Validated floating-base tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobotTopology {
    branches: Vec<Branch>,
    /// Parent joint of every joint (`None` for joints attached to the base).
    joint_parent: Vec<Option<usize>>,
    joint_branch: Vec<usize>,
    branch_ranges: Vec<Range<usize>>,
}

impl RobotTopology {
    pub fn new(branches: Vec<Branch>) -> Result<RobotTopology> {
        if branches.is_empty() {
            return Err(Error::InvalidTopology("at least one branch is required".into()));
        }
        let mut joint_parent = Vec::new();
        let mut joint_branch = Vec::new();
        let mut branch_ranges = Vec::new();
        for (b, branch) in branches.iter().enumerate() {
            if branch.segments.is_empty() {
                return Err(Error::InvalidTopology(format!("branch {b} has no segments")));
            }
            let start = joint_parent.len();
            // Last joint index of every segment seen so far.
            let mut seg_last: Vec<usize> = Vec::with_capacity(branch.segments.len());
            for (s, seg) in branch.segments.iter().enumerate() {
                if seg.joint_count == 0 {
                    return Err(Error::InvalidTopology(format!("branch {b} segment {s} has no joints")));
                }
                let mut parent = match (s, seg.parent) {
                    (0, None) => None,
                    (0, Some(_)) => {
                        return Err(Error::InvalidTopology(format!("branch {b}: the first segment must root at the base")))
                    }
                    (_, None) => {
                        return Err(Error::InvalidTopology(format!(
                            "branch {b} segment {s}: only the first segment may root at the base"
                        )))
                    }
                    (_, Some(p)) if p >= s => {
                        return Err(Error::InvalidTopology(format!(
                            "branch {b} segment {s}: parent {p} must be declared earlier"
                        )))
                    }
                    (_, Some(p)) => Some(seg_last[p]),
                };
                for _ in 0..seg.joint_count {
                    let j = joint_parent.len();
                    joint_parent.push(parent);
                    joint_branch.push(b);
                    parent = Some(j);
                }
                seg_last.push(joint_parent.len() - 1);
            }
            branch_ranges.push(start..joint_parent.len());
        }
        Ok(RobotTopology { branches, joint_parent, joint_branch, branch_ranges })
    }

    /// One serial chain per entry of `joints`.
    pub fn chains(joints: &[usize]) -> Result<RobotTopology> {
        RobotTopology::new(joints.iter().map(|&n| Branch::chain(n)).collect())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_q(&self) -> usize {
        self.joint_parent.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Size of the generalized coordinate vector, `6 + n_q`.
    pub fn dim(&self) -> usize {
        BASE_DOF + self.n_q()
    }

    /// Joint indices (into q) of branch `k`; contiguous by the canonical order.
    pub fn branch_joints(&self, k: usize) -> Range<usize> {
        self.branch_ranges[k].clone()
    }

    pub fn joint_branch(&self, j: usize) -> usize {
        self.joint_branch[j]
    }

    pub fn joint_parent(&self, j: usize) -> Option<usize> {
        self.joint_parent[j]
    }

    /// Parent of a generalized coordinate in the elimination tree. The six base
    /// coordinates form a chain, and base-rooted joints hang off the last one.
    pub fn coordinate_parent(&self, i: usize) -> Option<usize> {
        if i == 0 {
            None
        } else if i < BASE_DOF {
            Some(i - 1)
        } else {
            Some(match self.joint_parent[i - BASE_DOF] {
                Some(p) => p + BASE_DOF,
                None => BASE_DOF - 1,
            })
        }
    }

    /// True when joint `a` is a strict ancestor of joint `j`.
    pub fn is_joint_ancestor(&self, a: usize, j: usize) -> bool {
        let mut cur = self.joint_parent[j];
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.joint_parent[p];
        }
        false
    }

    /// Joints whose motion moves body `j` (its ancestors and itself), root first.
    pub fn joint_chain(&self, j: usize) -> Vec<usize> {
        let mut chain = vec![j];
        let mut cur = self.joint_parent[j];
        while let Some(p) = cur {
            chain.push(p);
            cur = self.joint_parent[p];
        }
        chain.reverse();
        chain
    }

    /// Children of each joint in canonical order.
    pub fn joint_children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.n_q()];
        for (j, p) in self.joint_parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        children
    }

    /// Within-branch pattern of the joint block `L_k`: local `(i, j)` allowed
    /// iff `j` is `i` or one of its ancestors.
    pub fn branch_pattern(&self, k: usize) -> Vec<(usize, usize)> {
        let r = self.branch_joints(k);
        let mut out = Vec::new();
        for i in r.clone() {
            for j in r.start..=i {
                if j == i || self.is_joint_ancestor(j, i) {
                    out.push((i - r.start, j - r.start));
                }
            }
        }
        out
    }
}

/// Boolean lower-triangular mask for the factor `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    n: usize,
    bits: Vec<bool>,
}

impl SparsityMask {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Whether `H` may be nonzero at `(i, j)`: the symmetric closure of the mask.
    pub fn allows_symmetric(&self, i: usize, j: usize) -> bool {
        self.get(i, j) || self.get(j, i)
    }
}

pub fn sparsity_pattern(topology: &RobotTopology) -> SparsityMask {
    let n = topology.dim();
    let mut bits = vec![false; n * n];
    for i in 0..n {
        bits[i * n + i] = true;
        let mut cur = topology.coordinate_parent(i);
        while let Some(p) = cur {
            bits[i * n + p] = true;
            cur = topology.coordinate_parent(p);
        }
    }
    SparsityMask { n, bits }
}

/// Parameterizations compared in the parameter-count table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScheme {
    DenseH,
    StandardCholesky,
    ReorderedL,
    Proposed,
    Body16,
}

impl ParamScheme {
    pub const ALL: [ParamScheme; 5] =
        [ParamScheme::DenseH, ParamScheme::StandardCholesky, ParamScheme::ReorderedL, ParamScheme::Proposed, ParamScheme::Body16];

    pub fn name(self) -> &'static str {
        match self {
            ParamScheme::DenseH => "dense_h",
            ParamScheme::StandardCholesky => "standard_cholesky",
            ParamScheme::ReorderedL => "reordered_l",
            ParamScheme::Proposed => "proposed",
            ParamScheme::Body16 => "body16",
        }
    }
}

/// Entries replaced by the structured parameterization: `L_F` (6) and `L_FR` (9)
/// give way to mass (1) and first moment (3); `L_Σ` takes the place of `L_R`.
const STRUCTURED_SAVINGS: usize = 6 + 9 - 1 - 3;

pub fn count_parameters(topology: &RobotTopology, scheme: ParamScheme) -> usize {
    let n = topology.dim();
    match scheme {
        ParamScheme::DenseH => n * n,
        ParamScheme::StandardCholesky => n * (n + 1) / 2,
        ParamScheme::ReorderedL => sparsity_pattern(topology).nnz(),
        ParamScheme::Proposed => sparsity_pattern(topology).nnz() - STRUCTURED_SAVINGS,
        ParamScheme::Body16 => 16 * (topology.n_q() + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(t: &RobotTopology) -> [usize; 5] {
        ParamScheme::ALL.map(|s| count_parameters(t, s))
    }

    /// Block formula: 21 base entries plus, per joint, 6 base couplings and its
    /// ancestor chain inside the branch.
    fn block_formula(t: &RobotTopology) -> usize {
        21 + (0..t.n_q()).map(|j| 6 + t.joint_chain(j).len()).sum::<usize>()
    }

    #[test]
    fn table_counts() {
        let go2 = RobotTopology::chains(&[3, 3, 3, 3]).unwrap();
        assert_eq!(counts(&go2), [324, 171, 117, 106, 208]);
        let spot = RobotTopology::chains(&[3, 3, 3, 3, 5]).unwrap();
        assert_eq!(counts(&spot), [529, 276, 162, 151, 288]);
        let one = RobotTopology::chains(&[1]).unwrap();
        assert_eq!(counts(&one), [49, 28, 28, 17, 32]);
    }

    #[test]
    fn mask_matches_block_formula() {
        for t in [
            RobotTopology::chains(&[1]).unwrap(),
            RobotTopology::chains(&[2, 3]).unwrap(),
            RobotTopology::new(vec![
                Branch { segments: vec![Segment::root(2), Segment::child_of(0, 2), Segment::child_of(0, 3)] },
                Branch::chain(1),
            ])
            .unwrap(),
        ] {
            assert_eq!(sparsity_pattern(&t).nnz(), block_formula(&t));
        }
    }

    #[test]
    fn sibling_sub_chains_do_not_couple() {
        let t = RobotTopology::new(vec![Branch {
            segments: vec![Segment::root(1), Segment::child_of(0, 1), Segment::child_of(0, 1)],
        }])
        .unwrap();
        let m = sparsity_pattern(&t);
        // joints 1 and 2 are siblings under joint 0
        assert!(m.get(6 + 1, 6));
        assert!(m.get(6 + 2, 6));
        assert!(!m.get(6 + 2, 6 + 1));
        assert_eq!(t.branch_pattern(0), vec![(0, 0), (1, 0), (1, 1), (2, 0), (2, 2)]);
    }

    #[test]
    fn invalid_topologies() {
        assert!(RobotTopology::new(vec![]).is_err());
        assert!(RobotTopology::chains(&[0]).is_err());
        assert!(RobotTopology::new(vec![Branch { segments: vec![] }]).is_err());
        assert!(RobotTopology::new(vec![Branch { segments: vec![Segment::root(1), Segment::child_of(1, 1)] }]).is_err());
        assert!(RobotTopology::new(vec![Branch { segments: vec![Segment::child_of(0, 1)] }]).is_err());
        assert!(RobotTopology::new(vec![Branch { segments: vec![Segment::root(1), Segment::root(1)] }]).is_err());
    }

    #[test]
    fn single_chain_has_no_sparsity() {
        for n in 1..8 {
            let t = RobotTopology::chains(&[n]).unwrap();
            assert_eq!(count_parameters(&t, ParamScheme::ReorderedL), count_parameters(&t, ParamScheme::StandardCholesky));
        }
    }
}
