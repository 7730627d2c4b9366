//! The `H̃` machinery, the input space `𝒟̃`, the `K_m`-inner function `W_T`
//! and the characterizations of the wandering subspace `W(M)`.
//!
//! `H̃` is `H` with the inner product `⟨Gx, y⟩`, `G = Σ_{k<m} Δ⁽ᵏ⁾`. Every
//! `H̃`-computation is done in congruated coordinates `x̂ = G^{1/2}x`, where
//! the `H̃` inner product is Euclidean. In these coordinates the row
//! operator `T̃ = T ∘ (⊕G)` becomes `R = [T₁G^{1/2} … TₙG^{1/2}]`.

use serde::Serialize;
use thiserror::Error;

use crate::dilation::{model_subspace, DilationError, DilationMap};
use crate::linalg::{
    block_diag_repeat, fro, isometry_residual, metric_congruence, null_space, op_norm, psd_sqrt,
    subspace_basis, CMat, CVec, LinalgError, Tolerances,
};
use crate::modelspace::{ModelError, TruncatedModelSpace, GUARD_FLOOR};
use crate::optuple::{DefectData, OperatorTuple, TupleError};
use crate::realization::{koszul_matrix, PolyOperatorFunction, Realization, RealizationError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WanderingError {
    #[error("tuple is not a pure {m}-hypercontraction: {verdict}")]
    NotPure { m: u32, verdict: String },
    #[error(transparent)]
    Tuple(#[from] TupleError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Realization(#[from] Box<RealizationError>),
}

impl From<RealizationError> for WanderingError {
    fn from(e: RealizationError) -> Self {
        WanderingError::Realization(Box::new(e))
    }
}

/// Singular values of the Koszul constraint matrix below this (absolute)
/// level count as zero.
pub const KOSZUL_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TildeStructures {
    pub g: CMat,
    pub g_half: CMat,
    pub g_inv_half: CMat,
    /// `T̃` in congruated coordinates (`d × nd`).
    pub row_hat: CMat,
    /// `D_T̃` in congruated coordinates (`nd × nd`).
    pub defect_hat: CMat,
    /// Orthonormal basis of `𝒟_T̃` (congruated).
    pub defect_basis: CMat,
    /// Orthonormal basis of `𝒟̃` (congruated, hence `H̃ⁿ`-orthonormal).
    pub dtilde: CMat,
    /// `(⊕G^{−1})D_T̃` on the `𝒟̃` basis: the plain `Hⁿ` tuples `(xᵢ)`.
    pub input_map: CMat,
    /// `‖T̃T̃* − (1 − Δ⁽ᵐ⁾)‖`.
    pub contraction_residual: f64,
    /// Unitarity defect of `[[T̃, D_{T̃*}], [D_T̃, −T̃*]]`.
    pub unitary_residual: f64,
}

impl TildeStructures {
    pub fn dtilde_dim(&self) -> usize {
        self.dtilde.ncols()
    }

    /// `⊕G^{1/2}` on `Hⁿ`.
    pub fn stacked_half(&self) -> CMat {
        block_diag_repeat(&self.g_half, self.row_hat.ncols() / self.g.nrows().max(1))
    }
}

pub fn tilde_structures(
    t: &OperatorTuple,
    data: &DefectData,
    tol: &Tolerances,
) -> Result<TildeStructures, WanderingError> {
    let n = t.n();
    let d = t.dim();
    let (g_half, g_inv_half) = metric_congruence(&data.g, tol)?;
    let half_stack = block_diag_repeat(&g_half, n);
    let inv_half_stack = block_diag_repeat(&g_inv_half, n);
    let row_hat = t.row() * &half_stack;
    let contraction_residual =
        fro(&(&row_hat * row_hat.adjoint() - (CMat::identity(d, d) - data.delta(data.m))));
    let defect_hat = psd_sqrt(
        &(CMat::identity(n * d, n * d) - row_hat.adjoint() * &row_hat),
        tol,
    )?;
    let defect_basis = subspace_basis(&defect_hat, tol, false).basis;
    let r = defect_basis.ncols();
    let p = data.p();

    let unitary = {
        let mut u = CMat::zeros(d + r, n * d + p);
        u.view_mut((0, 0), (d, n * d)).copy_from(&row_hat);
        u.view_mut((0, n * d), (d, p))
            .copy_from(&(&data.c * &data.d_basis));
        u.view_mut((d, 0), (r, n * d))
            .copy_from(&(defect_basis.adjoint() * &defect_hat));
        u.view_mut((d, n * d), (r, p))
            .copy_from(&(-(defect_basis.adjoint() * row_hat.adjoint() * &data.d_basis)));
        u
    };
    let unitary_residual = if d + r == n * d + p {
        isometry_residual(&unitary).max(isometry_residual(&unitary.adjoint()))
    } else {
        f64::INFINITY
    };

    // 𝒟̃: y ∈ 𝒟_T̃ with (⊕G^{−1/2})D̂y in the kernel of the Koszul map
    let to_plain = &inv_half_stack * &defect_hat * &defect_basis;
    let constraints = koszul_matrix(t) * &to_plain;
    let coeffs = null_space(&constraints, KOSZUL_CUTOFF, 1.0);
    let dtilde = &defect_basis * &coeffs;
    let input_map = &to_plain * &coeffs;
    Ok(TildeStructures {
        g: data.g.clone(),
        g_half,
        g_inv_half,
        row_hat,
        defect_hat,
        defect_basis,
        dtilde,
        input_map,
        contraction_residual,
        unitary_residual,
    })
}

/// `W_T` together with everything it was built from.
#[derive(Debug, Clone)]
pub struct KmInnerFunction {
    pub data: DefectData,
    pub tilde: TildeStructures,
    pub realization: Realization,
    pub taylor: PolyOperatorFunction,
    /// Distance of `T̃(𝒟̃)` from `𝒟`; `W_T(0)` must take values in `𝒟`.
    pub feedthrough_range_residual: f64,
}

fn require_pure(t: &OperatorTuple, m: u32, tol: &Tolerances) -> Result<(), WanderingError> {
    let report = t.classify(m, tol)?;
    if !report.is_pure_hypercontraction() {
        return Err(WanderingError::NotPure {
            m,
            verdict: report.verdict,
        });
    }
    Ok(())
}

/// `W_T(z) = D + C Σ_{k=1}^m (1 − ZT*)^{−k} Z B` on `𝒟̃` with
/// `B = (⊕G^{−1})D_T̃`, `D = −T̃|_𝒟̃`, `C: H → 𝒟`; Taylor coefficients up to
/// `degree`.
pub fn wt_build(
    t: &OperatorTuple,
    m: u32,
    degree: u32,
    tol: &Tolerances,
) -> Result<KmInnerFunction, WanderingError> {
    require_pure(t, m, tol)?;
    let data = t.defect_data(m, tol)?;
    let tilde = tilde_structures(t, &data, tol)?;
    let feed = -(&tilde.row_hat * &tilde.dtilde);
    let d_out = data.d_basis.adjoint() * &feed;
    let feedthrough_range_residual = fro(&(&feed - &data.d_basis * &d_out));
    let realization = Realization::new(
        m,
        t.clone(),
        tilde.input_map.clone(),
        data.c_out.clone(),
        d_out,
    )?;
    let taylor = realization.taylor(degree)?;
    Ok(KmInnerFunction {
        data,
        tilde,
        realization,
        taylor,
        feedthrough_range_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    /// `f₀` in `𝒟`-coordinates.
    pub f0: Vec<[f64; 2]>,
    /// `max ‖j xᵢ − M*_{zᵢ} f‖`.
    pub range_residual: f64,
    /// `‖C f₀ + Σ TᵢG xᵢ‖`.
    pub zero_residual: f64,
}

/// Witness `(f₀, x₁…xₙ)` of a membership test.
#[derive(Debug, Clone)]
pub struct Witness {
    pub f0: CVec,
    pub xs: Vec<CVec>,
}

/// Decides `f ∈ W(M)` for `f` given by raw coefficients in the space of `j`.
pub fn membership_test(
    f: &CVec,
    t: &OperatorTuple,
    data: &DefectData,
    j: &DilationMap,
    tol: &Tolerances,
) -> Result<(MembershipReport, Witness), WanderingError> {
    let space = j.space();
    let limit = space.interior_degree();
    if let Some(deg) = space.degree_of(f, GUARD_FLOOR * f.norm()) {
        if deg as i64 > limit {
            return Err(ModelError::Guard {
                degree: deg,
                limit: limit.max(0) as u32,
            }
            .into());
        }
    }
    let p = data.p();
    let f0 = f.rows(0, p).into_owned();
    let mut xs = Vec::with_capacity(t.n());
    let mut range_residual = 0.0f64;
    let mut sum = data.c_out.adjoint() * &f0;
    for i in 0..t.n() {
        let back = space.mz_adjoint_apply(i, f);
        let x = j.adjoint_apply(&back);
        range_residual = range_residual.max(space.norm(&(j.apply(&x) - &back)));
        sum += t.mat(i) * (&data.g * &x);
        xs.push(x);
    }
    let zero_residual = sum.norm();
    let scale = space.norm(f).max(1.0);
    let member = range_residual <= tol.residual * scale && zero_residual <= tol.residual * scale;
    let report = MembershipReport {
        member,
        f0: f0.iter().map(|c| [c.re, c.im]).collect(),
        range_residual,
        zero_residual,
    };
    Ok((report, Witness { f0, xs }))
}

#[derive(Debug, Clone, Serialize)]
pub struct NormFormulaReport {
    pub norm_sqr: f64,
    /// `‖f₀‖² + Σⱼ(−1)ʲ binom(m,j+1) Σ_{|α|=j} γ_α Σᵢ‖T^{*α}xᵢ‖²`.
    pub alternating_formula: f64,
    /// `‖f₀‖² + Σᵢ⟨Gxᵢ, xᵢ⟩`.
    pub metric_formula: f64,
    pub residual: f64,
}

pub fn norm_formula_check(
    f: &CVec,
    witness: &Witness,
    t: &OperatorTuple,
    data: &DefectData,
    space: &TruncatedModelSpace,
) -> Result<NormFormulaReport, WanderingError> {
    let norm_sqr = space.norm_sqr(f);
    let base = witness.f0.norm_squared();
    let alt = t.alternating_defect_sum(data.m)?;
    let mut alternating = base;
    let mut metric = base;
    for x in &witness.xs {
        alternating += x.dotc(&(&alt * x)).re;
        metric += x.dotc(&(&data.g * x)).re;
    }
    Ok(NormFormulaReport {
        norm_sqr,
        alternating_formula: alternating,
        metric_formula: metric,
        residual: (norm_sqr - alternating)
            .abs()
            .max((norm_sqr - metric).abs()),
    })
}

/// `|‖W_T y‖² − ‖y‖²_{H̃ⁿ}|` for `y` given in `𝒟̃`-coordinates.
pub fn parameter_norm_residual(w: &KmInnerFunction, y: &CVec, space: &TruncatedModelSpace) -> f64 {
    let cols = w.taylor.columns(space);
    let f = &cols * y;
    (space.norm_sqr(&f) - y.norm_squared()).abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct WanderingMatch {
    pub degree: u32,
    pub wandering_dim: usize,
    pub image_dim: usize,
    /// Largest angle between a vector of `span{W_T x}` and `W(M)`.
    pub containment_angle: f64,
    /// Largest principal angle, `π/2` if the dimensions differ.
    pub max_principal_angle: f64,
    pub nilpotent: bool,
}

/// Compares `W(M)` (from the model subspace) with `span{W_T x : x ∈ 𝒟̃}`
/// inside `H_m(𝔹, 𝒟)` truncated at `degree`.
pub fn wandering_match(
    t: &OperatorTuple,
    m: u32,
    degree: u32,
    tol: &Tolerances,
) -> Result<WanderingMatch, WanderingError> {
    let w = wt_build(t, m, degree, tol)?;
    let j = DilationMap::build(t, &w.data, m, degree)?;
    let (model, _) = model_subspace(&j, tol);
    let wandering = j.space().wandering_of(&model, tol)?;
    let image = j.space().to_hat(&w.taylor.columns(j.space()));
    let image_basis = subspace_basis(&image, tol, false).basis;
    let outside = &image_basis - &wandering * (wandering.adjoint() * &image_basis);
    let containment_angle = op_norm(&outside).min(1.0).asin();
    Ok(WanderingMatch {
        degree,
        wandering_dim: wandering.ncols(),
        image_dim: image_basis.ncols(),
        containment_angle,
        max_principal_angle: crate::linalg::subspace_distance(&wandering, &image_basis),
        nilpotent: t.nilpotency_length(degree as usize).is_some(),
    })
}
