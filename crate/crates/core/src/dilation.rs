//! The maps `j_k: H → H_k(𝔹, 𝒟)`, `j_k x = Σ ρ_k(α) (C T^{*α} x) z^α`,
//! truncated at total degree `N`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{fro, op_norm, solve, subspace_basis, CMat, CVec, LinalgError, Tolerances};
use crate::modelspace::{ModelError, TruncatedModelSpace};
use crate::optuple::{DefectData, OperatorTuple, TupleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DilationError {
    #[error("order k = {k} outside 0..={m}")]
    Order { k: u32, m: u32 },
    #[error(transparent)]
    Tuple(#[from] TupleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `max(2m + 4, L)` where `L` is the nilpotency length, if any.
pub fn default_degree(t: &OperatorTuple, m: u32) -> u32 {
    let base = 2 * m + 4;
    match t.nilpotency_length(64) {
        Some(l) => base.max(l),
        None => base,
    }
}

#[derive(Debug, Clone)]
pub struct DilationMap {
    order: u32,
    space: TruncatedModelSpace,
    /// Raw coefficient blocks, `dim × d`.
    matrix: CMat,
    /// The same in hat coordinates.
    matrix_hat: CMat,
    /// `‖e_j‖² − ‖j e_j‖²` per standard basis vector of `H`.
    truncation_residual: Vec<f64>,
    operator_norm: f64,
}

impl DilationMap {
    pub fn build(
        t: &OperatorTuple,
        data: &DefectData,
        k: u32,
        degree: u32,
    ) -> Result<Self, DilationError> {
        if k > data.m {
            return Err(DilationError::Order { k, m: data.m });
        }
        let space = TruncatedModelSpace::new(t.n(), k, data.p(), degree)?;
        let d = t.dim();
        let p = data.p();
        let powers = t.powers(space.degree())?;
        let mut matrix = CMat::zeros(space.dim(), d);
        for pos in 0..space.blocks() {
            let w = space.weights().rho(pos);
            if w == 0.0 {
                continue;
            }
            let block = &data.c_out * powers.get(pos).adjoint() * Complex64::new(w, 0.0);
            matrix.view_mut((pos * p, 0), (p, d)).copy_from(&block);
        }
        let matrix_hat = space.to_hat(&matrix);
        let gram = matrix_hat.adjoint() * &matrix_hat;
        let truncation_residual = (0..d).map(|j| 1.0 - gram[(j, j)].re).collect();
        let operator_norm = op_norm(&matrix_hat);
        Ok(DilationMap {
            order: k,
            space,
            matrix,
            matrix_hat,
            truncation_residual,
            operator_norm,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn space(&self) -> &TruncatedModelSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn matrix_hat(&self) -> &CMat {
        &self.matrix_hat
    }

    pub fn truncation_residual(&self) -> &[f64] {
        &self.truncation_residual
    }

    pub fn operator_norm(&self) -> f64 {
        self.operator_norm
    }

    pub fn is_contractive(&self, tol: &Tolerances) -> bool {
        self.operator_norm <= 1.0 + tol.residual
    }

    pub fn apply(&self, x: &CVec) -> CVec {
        &self.matrix * x
    }

    /// `j* g` for a raw coefficient vector `g`.
    pub fn adjoint_apply(&self, g: &CVec) -> CVec {
        let gm = CMat::from_column_slice(g.len(), 1, g.as_slice());
        (self.matrix_hat.adjoint() * self.space.to_hat(&gm))
            .column(0)
            .into_owned()
    }

    /// `j* j`.
    pub fn gram(&self) -> CMat {
        self.matrix_hat.adjoint() * &self.matrix_hat
    }

    /// `‖j T*ᵢ − M*_{zᵢ} j‖` restricted to degrees `≤ N − 1`, the range on
    /// which the truncated identity is exact.
    pub fn intertwining_residual(&self, t: &OperatorTuple) -> f64 {
        if self.space.degree() == 0 {
            // constants only: the identity is vacuous after truncation
            return 0.0;
        }
        let top = self.space.grade_coords(self.space.degree());
        let mut worst = 0.0f64;
        for i in 0..t.n() {
            let lhs = &self.matrix_hat * t.mat(i).adjoint();
            let rhs = self.space.mz_adjoint_hat_columns(i, &self.matrix_hat);
            let diff = (lhs - rhs).rows(0, top.start).clone_owned();
            worst = worst.max(op_norm(&diff));
        }
        worst
    }

    /// `j* K_k(·, z) x` compared with `(1 − TZ*)^{−k} C x`; returns the
    /// largest discrepancy over the columns of `xs` (given in `𝒟`-coordinates).
    pub fn kernel_section_residual(
        &self,
        t: &OperatorTuple,
        data: &DefectData,
        z: &[Complex64],
        xs: &CMat,
    ) -> Result<f64, DilationError> {
        let d = t.dim();
        let resolvent = solve(
            &(CMat::identity(d, d) - t.t_w_star(z)),
            &CMat::identity(d, d),
        )?;
        let mut power = CMat::identity(d, d);
        for _ in 0..self.order {
            power = &power * &resolvent;
        }
        let mut worst = 0.0f64;
        for c in 0..xs.ncols() {
            let x = xs.column(c).into_owned();
            let section = self.space.eval_adjoint(z, &x)?;
            let lhs = self.adjoint_apply(&section);
            let rhs = &power * (data.c_out.adjoint() * &x);
            worst = worst.max((lhs - rhs).norm());
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSubspaceReport {
    pub dimension: usize,
    /// `max ‖P_{Im j} M_{zᵢ} P_M‖`, caused only by truncation.
    pub invariance_residual: f64,
}

/// Hat orthonormal basis of `M = (Im j)^⊥` in the truncated space.
pub fn model_subspace(j: &DilationMap, tol: &Tolerances) -> (CMat, ModelSubspaceReport) {
    let sb = subspace_basis(j.matrix_hat(), tol, true);
    let image = sb.basis;
    let complement = sb.complement.expect("complement requested");
    let mut worst = 0.0f64;
    for i in 0..j.space().n() {
        let shifted = j.space().mz_hat_columns(i, &complement);
        worst = worst.max(op_norm(&(image.adjoint() * shifted)));
    }
    let report = ModelSubspaceReport {
        dimension: complement.ncols(),
        invariance_residual: worst,
    };
    (complement, report)
}

/// `‖Δ⁽ᵏ⁾ − j*_{m−k} j_{m−k}‖` for `k = 0..=m`.
pub fn defect_identity_check(
    t: &OperatorTuple,
    data: &DefectData,
    degree: u32,
) -> Result<Vec<f64>, DilationError> {
    (0..=data.m)
        .map(|k| {
            let j = DilationMap::build(t, data, data.m - k, degree)?;
            Ok(fro(&(data.delta(k) - j.gram())))
        })
        .collect()
}
