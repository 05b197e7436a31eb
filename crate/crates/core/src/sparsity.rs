//! Communication topologies and sparsity-invariant patterns.
//!
//! A gain row `K` may only use the states of vehicles the CAV can see. With
//! `Z` restricted to the gain pattern `T` and `X` to the pattern `S`, the
//! recovered gain `K = Z X^-1` keeps the pattern whenever `S` is built by
//! [`invariant_support`].

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::SynthesisError;

/// Which vehicles the CAV receives state from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Full,
    /// The CAV plus `ahead` vehicles in front and `behind` vehicles behind.
    AheadBehind { ahead: usize, behind: usize },
    /// 1-based vehicle indices; must include 1.
    Explicit(Vec<usize>),
}

impl Topology {
    /// 1-based visible vehicle set on a ring of `n`.
    pub fn visible(&self, n: usize) -> BTreeSet<usize> {
        match self {
            Topology::Full => (1..=n).collect(),
            Topology::AheadBehind { ahead, behind } => {
                let mut set = BTreeSet::from([1]);
                // vehicle n is directly ahead of vehicle 1
                for k in 0..(*ahead).min(n - 1) {
                    set.insert(n - k);
                }
                for k in 0..(*behind).min(n - 1) {
                    set.insert(2 + k);
                }
                set
            }
            Topology::Explicit(v) => v.iter().copied().collect(),
        }
    }
}

/// Binary patterns for a single-row gain over `2n` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityPattern {
    pub n: usize,
    /// 1-based visible vehicles.
    pub visible: BTreeSet<usize>,
    /// Allowed nonzeros of `K`.
    pub mask: Vec<bool>,
    /// Allowed nonzeros of `Z`.
    pub t: Vec<bool>,
    /// Allowed nonzeros of `X`, row-major `2n x 2n`.
    pub s_star: Vec<Vec<bool>>,
}

impl SparsityPattern {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn is_full(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn visible_states(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.mask[k]).collect()
    }

    pub fn hidden_states(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| !self.mask[k]).collect()
    }

    /// Number of nonzero 1x2 vehicle blocks allowed in `K`.
    pub fn block_count(&self) -> usize {
        self.visible.len()
    }

    pub fn respects(&self, k: &[f64]) -> bool {
        k.iter().zip(&self.mask).all(|(&v, &m)| m || v == 0.0)
    }
}

/// Largest symmetric support `S` such that `Z` in `Sparse(T)` and invertible
/// `X` in `Sparse(S)` imply `Z X^-1` in `Sparse(T)`:
/// `S_ij = 0` when some row `k` has `T_kj = 0` and `T_ki = 1`, then
/// `S = S AND S'`.
pub fn invariant_support(t: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let cols = t.first().map_or(0, |r| r.len());
    let mut s = vec![vec![true; cols]; cols];
    for row in t {
        for i in 0..cols {
            for j in 0..cols {
                if !row[j] && row[i] {
                    s[i][j] = false;
                }
            }
        }
    }
    let mut sym = s.clone();
    for i in 0..cols {
        for j in 0..cols {
            sym[i][j] = s[i][j] && s[j][i];
        }
    }
    sym
}

/// Pattern for the vehicles in `ecf` (1-based, must contain 1).
pub fn topology_to_pattern(ecf: &BTreeSet<usize>, n: usize) -> Result<SparsityPattern, SynthesisError> {
    if n < 2 {
        return Err(SynthesisError::Topology(format!("ring of {n} vehicles")));
    }
    if !ecf.contains(&1) {
        return Err(SynthesisError::Topology("the CAV (vehicle 1) must see its own state".into()));
    }
    if let Some(&bad) = ecf.iter().find(|&&i| i == 0 || i > n) {
        return Err(SynthesisError::Topology(format!("vehicle index {bad} outside 1..={n}")));
    }
    let mask: Vec<bool> = (0..2 * n).map(|k| ecf.contains(&(k / 2 + 1))).collect();
    let s_star = invariant_support(std::slice::from_ref(&mask));
    Ok(SparsityPattern { n, visible: ecf.clone(), t: mask.clone(), mask, s_star })
}

/// Largest entry of `Z X^-1` outside the pattern `T`; `None` if `X` is singular.
pub fn invariance_violation(t: &[Vec<bool>], z: &DMatrix<f64>, x: &DMatrix<f64>) -> Option<f64> {
    let k = x.clone().lu().solve(&z.transpose())?.transpose();
    let mut worst = 0.0f64;
    for (r, row) in t.iter().enumerate() {
        for (c, &allowed) in row.iter().enumerate() {
            if !allowed {
                worst = worst.max(k[(r, c)].abs());
            }
        }
    }
    Some(worst)
}
