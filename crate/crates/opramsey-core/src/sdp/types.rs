//! Problem and solution types for the Hermitian block SDP
//!
//!   minimize    Σ_b ⟨C_b, X_b⟩
//!   subject to  Σ_b ⟨A_{i,b}, X_b⟩ = c_i   (i = 1..m)
//!               X_b ⪰ 0,
//!
//! where every block is a complex Hermitian matrix and ⟨A, X⟩ is the real
//! trace pairing Re tr(A X).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ComplexMatrix, TOL_HERM};

/// Default duality-gap tolerance.
pub const DEFAULT_SDP_TOL: f64 = 1e-8;
/// Default cap on the summed block dimensions.
pub const DEFAULT_DIM_LIMIT: usize = 400;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 200;

/// One constraint row: sparse Hermitian coefficients per block plus a real
/// right-hand side. Only nonzero entries are stored; both triangles must
/// be present so the trace pairing is a plain sum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpConstraint {
    /// (block index, row, col, coefficient) with the full Hermitian
    /// entry pattern spelled out.
    pub entries: Vec<(usize, usize, usize, C64)>,
    pub rhs: f64,
}

impl SdpConstraint {
    pub fn new(rhs: f64) -> Self {
        SdpConstraint {
            entries: Vec::new(),
            rhs,
        }
    }

    /// Add a Hermitian pair of entries: v at (r,c) and conj(v) at (c,r)
    /// (just v on the diagonal).
    pub fn push_herm(&mut self, block: usize, r: usize, c: usize, v: C64) {
        if r == c {
            self.entries.push((block, r, c, C64::new(v.re, 0.0)));
        } else {
            self.entries.push((block, r, c, v));
            self.entries.push((block, c, r, v.conj()));
        }
    }

    /// Dense coefficient matrix for one block.
    pub fn block_matrix(&self, block: usize, dim: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(dim, dim);
        for &(b, r, c, v) in &self.entries {
            if b == block {
                let cur = m.at(r, c);
                m.set(r, c, cur + v);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    /// One Hermitian objective matrix per block.
    pub objective: Vec<ComplexMatrix>,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    pub fn new(block_dims: Vec<usize>) -> Self {
        let objective = block_dims
            .iter()
            .map(|&d| ComplexMatrix::zeros(d, d))
            .collect();
        SdpProblem {
            block_dims,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn total_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn validate(&self, dim_limit: usize) -> Result<()> {
        if self.block_dims.is_empty() || self.block_dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension("blocks must be nonempty".into()));
        }
        if self.total_dim() > dim_limit {
            return Err(Error::Budget(format!(
                "total dimension {} exceeds limit {}",
                self.total_dim(),
                dim_limit
            )));
        }
        if self.objective.len() != self.block_dims.len() {
            return Err(Error::Dimension(
                "objective must have one matrix per block".into(),
            ));
        }
        for (b, (m, &d)) in self.objective.iter().zip(&self.block_dims).enumerate() {
            if m.rows != d || m.cols != d {
                return Err(Error::Dimension(format!(
                    "objective block {b} is {}x{}, expected {d}x{d}",
                    m.rows, m.cols
                )));
            }
            if !m.is_hermitian(TOL_HERM) {
                return Err(Error::Symmetry(format!("objective block {b} not Hermitian")));
            }
        }
        for (i, con) in self.constraints.iter().enumerate() {
            for &(b, r, c, _) in &con.entries {
                if b >= self.block_dims.len() {
                    return Err(Error::Dimension(format!(
                        "constraint {i} references block {b}"
                    )));
                }
                let d = self.block_dims[b];
                if r >= d || c >= d {
                    return Err(Error::Dimension(format!(
                        "constraint {i} entry ({r},{c}) outside block {b} of dim {d}"
                    )));
                }
            }
            let dense: Vec<ComplexMatrix> = (0..self.block_dims.len())
                .map(|b| con.block_matrix(b, self.block_dims[b]))
                .collect();
            for (b, m) in dense.iter().enumerate() {
                if !m.is_hermitian(TOL_HERM) {
                    return Err(Error::Symmetry(format!(
                        "constraint {i} block {b} not Hermitian"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_blocks: Vec<ComplexMatrix>,
    pub dual_vector: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl SdpSolution {
    /// Max constraint violation ‖Σ⟨A_i, X⟩ − c_i‖_∞ of the primal blocks.
    pub fn primal_residual(&self, p: &SdpProblem) -> f64 {
        p.constraints
            .iter()
            .map(|con| {
                let mut v = -con.rhs;
                for &(b, r, c, a) in &con.entries {
                    v += (a * self.primal_blocks[b].at(c, r)).re;
                }
                v.abs()
            })
            .fold(0.0, f64::max)
    }
}
