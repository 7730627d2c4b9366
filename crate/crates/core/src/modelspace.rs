//! Degree-truncated coefficient model of `H_ℓ(𝔹, ℂᵖ)`.
//!
//! A vector is the list of its Taylor coefficient blocks `f_α ∈ ℂᵖ` for
//! `|α| ≤ N`, stored contiguously in graded-lex order (block `k` occupies
//! entries `k·p .. (k+1)·p`). The inner product is
//! `⟨f, h⟩ = Σ ⟨f_α, h_α⟩ / ρ_ℓ(α)`.
//!
//! Subspace computations use "hat" coordinates `f̂_α = f_α / √ρ_ℓ(α)`, in
//! which the inner product is the Euclidean one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cr, subspace_basis, CMat, CVec, Tolerances};
use crate::multiindex::{binomial, IndexSet, MultiIndex, MultiIndexError, WeightTable};
use crate::serial::{pairs_vector, vector_pairs, FormatError, Pair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("vector has degree {degree} outside the guard band (≤ {limit})")]
    Guard { degree: u32, limit: u32 },
    #[error("point outside the open unit ball (‖z‖ = {norm})")]
    Domain { norm: f64 },
    #[error("constants projection formula disagrees with the direct projection by {residual:e}")]
    ProjectionMismatch { residual: f64 },
    #[error(transparent)]
    MultiIndex(#[from] MultiIndexError),
}

/// Blocks smaller than this fraction of the vector norm are ignored when
/// checking that a vector stays inside the guard band.
pub const GUARD_FLOOR: f64 = 1e-13;

/// `‖z‖` for a point of `ℂⁿ`.
pub fn point_norm(z: &[Complex64]) -> f64 {
    z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨z, w⟩ = Σ zᵢ w̄ᵢ`.
pub fn point_inner(z: &[Complex64], w: &[Complex64]) -> Complex64 {
    z.iter().zip(w).map(|(a, b)| a * b.conj()).sum()
}

pub fn check_point(z: &[Complex64]) -> Result<(), ModelError> {
    let norm = point_norm(z);
    if !(norm < 1.0) {
        return Err(ModelError::Domain { norm });
    }
    Ok(())
}

/// `K_ℓ(z, w) = (1 − ⟨z, w⟩)^{−ℓ}`.
pub fn kernel(l: u32, z: &[Complex64], w: &[Complex64]) -> Result<Complex64, ModelError> {
    check_point(z)?;
    check_point(w)?;
    Ok((cr(1.0) - point_inner(z, w)).powi(-(l as i32)))
}

#[derive(Debug, Clone)]
pub struct TruncatedModelSpace {
    n: usize,
    l: u32,
    p: usize,
    degree: u32,
    guard: u32,
    weights: WeightTable,
    /// `shift[i][k]`: position of `α_k + eᵢ`, if it is inside the truncation.
    shift: Vec<Vec<Option<usize>>>,
}

impl TruncatedModelSpace {
    /// `ℓ = 0` gives the constants-only space `H_0(𝔹, ℂᵖ) = ℂᵖ`; the
    /// truncation degree is then forced to 0.
    pub fn new(n: usize, l: u32, p: usize, degree: u32) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::Argument("n must be ≥ 1".into()));
        }
        let degree = if l == 0 { 0 } else { degree };
        let weights = WeightTable::new(n, l, degree)?;
        let index = weights.index();
        let mut shift = vec![vec![None; index.len()]; n];
        for (k, alpha) in index.iter().enumerate() {
            for i in 0..n {
                if alpha.order() < degree {
                    shift[i][k] = index.offset(&alpha.raised(i));
                }
            }
        }
        Ok(TruncatedModelSpace {
            n,
            l,
            p,
            degree,
            guard: l,
            weights,
            shift,
        })
    }

    pub fn with_guard(mut self, guard: u32) -> Self {
        self.guard = guard;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn guard(&self) -> u32 {
        self.guard
    }

    /// Largest degree on which the shift identities are checked.
    pub fn interior_degree(&self) -> i64 {
        self.degree as i64 - self.guard as i64
    }

    pub fn index(&self) -> &IndexSet {
        self.weights.index()
    }

    pub fn weights(&self) -> &WeightTable {
        &self.weights
    }

    pub fn blocks(&self) -> usize {
        self.index().len()
    }

    pub fn dim(&self) -> usize {
        self.p * self.blocks()
    }

    pub fn zero(&self) -> CVec {
        CVec::zeros(self.dim())
    }

    /// Coordinate range of the block of `α`.
    pub fn block_range(&self, alpha: &MultiIndex) -> Option<std::ops::Range<usize>> {
        self.index()
            .offset(alpha)
            .map(|k| k * self.p..(k + 1) * self.p)
    }

    /// Coordinate range of all blocks of total degree `k`.
    pub fn grade_coords(&self, k: u32) -> std::ops::Range<usize> {
        let r = self.index().grade_range(k);
        r.start * self.p..r.end * self.p
    }

    /// `ρ_ℓ(α)` for the block containing coordinate `c`.
    pub fn coord_weight(&self, c: usize) -> f64 {
        self.weights.rho(c / self.p)
    }

    /// `ρ_ℓ(α)` per coordinate.
    pub fn weight_vector(&self) -> Vec<f64> {
        (0..self.dim()).map(|c| self.coord_weight(c)).collect()
    }

    /// `⟨f, h⟩` (linear in `f`).
    pub fn inner(&self, f: &CVec, h: &CVec) -> Complex64 {
        f.iter()
            .zip(h.iter())
            .enumerate()
            .map(|(c, (a, b))| a * b.conj() / self.coord_weight(c))
            .sum()
    }

    pub fn norm_sqr(&self, f: &CVec) -> f64 {
        f.iter()
            .enumerate()
            .map(|(c, a)| a.norm_sqr() / self.coord_weight(c))
            .sum()
    }

    pub fn norm(&self, f: &CVec) -> f64 {
        self.norm_sqr(f).sqrt()
    }

    /// Gram matrix `⟨f_j, f_i⟩` of the columns of `fs`.
    pub fn gram(&self, fs: &CMat) -> CMat {
        let h = self.to_hat(fs);
        h.adjoint() * h
    }

    /// `f̂ = f / √ρ` column-wise.
    pub fn to_hat(&self, fs: &CMat) -> CMat {
        let mut out = fs.clone();
        for c in 0..out.nrows() {
            let s = 1.0 / self.coord_weight(c).sqrt();
            out.row_mut(c).scale_mut(s);
        }
        out
    }

    pub fn from_hat(&self, fs: &CMat) -> CMat {
        let mut out = fs.clone();
        for c in 0..out.nrows() {
            let s = self.coord_weight(c).sqrt();
            out.row_mut(c).scale_mut(s);
        }
        out
    }

    /// Highest degree with a block above `floor` in norm, `None` for zero.
    pub fn degree_of(&self, f: &CVec, floor: f64) -> Option<u32> {
        (0..=self.degree).rev().find(|&k| {
            let r = self.grade_coords(k);
            f.rows(r.start, r.len()).norm() > floor
        })
    }

    /// Like [`Self::degree_of`] for the columns of a matrix.
    pub fn degree_of_columns(&self, fs: &CMat, floor: f64) -> Option<u32> {
        (0..=self.degree).rev().find(|&k| {
            let r = self.grade_coords(k);
            fs.rows(r.start, r.len()).norm() > floor
        })
    }

    fn check_guard(&self, f: &CVec) -> Result<(), ModelError> {
        let limit = self.interior_degree();
        if let Some(deg) = self.degree_of(f, GUARD_FLOOR * f.norm()) {
            if (deg as i64) > limit {
                return Err(ModelError::Guard {
                    degree: deg,
                    limit: limit.max(0) as u32,
                });
            }
        }
        Ok(())
    }

    fn check_axis(&self, i: usize) {
        assert!(i < self.n, "axis {i} out of range for n = {}", self.n);
    }

    /// `M_{zᵢ}f`; the part pushed to degree `N+1` is dropped and its
    /// `H_ℓ`-norm (in the untruncated space) returned.
    pub fn mz_apply(&self, i: usize, f: &CVec) -> (CVec, f64) {
        self.check_axis(i);
        let p = self.p;
        let mut out = self.zero();
        let mut dropped = 0.0;
        for k in 0..self.blocks() {
            let src = f.rows(k * p, p);
            match self.shift[i][k] {
                Some(t) => out.rows_mut(t * p, p).copy_from(&src),
                None => {
                    let sq = src.norm_squared();
                    if sq > 0.0 {
                        let raised = self.index().get(k).raised(i);
                        let w = crate::multiindex::rho(self.l as i64, &raised)
                            .map(|r| r as f64)
                            .unwrap_or(f64::INFINITY);
                        dropped += sq / w;
                    }
                }
            }
        }
        (out, dropped.sqrt())
    }

    /// `M*_{zᵢ}g`, `(M*_{zᵢ}g)_α = (αᵢ+1)/(ℓ+|α|)·g_{α+eᵢ}`.
    pub fn mz_adjoint_apply(&self, i: usize, g: &CVec) -> CVec {
        self.check_axis(i);
        let p = self.p;
        let mut out = self.zero();
        for k in 0..self.blocks() {
            if let Some(t) = self.shift[i][k] {
                let alpha = self.index().get(k);
                let factor =
                    (alpha.entries()[i] as f64 + 1.0) / (self.l as f64 + alpha.order() as f64);
                let src = g.rows(t * p, p) * cr(factor);
                out.rows_mut(k * p, p).copy_from(&src);
            }
        }
        out
    }

    /// `M_{zᵢ}` column-wise, dropping overflow.
    pub fn mz_columns(&self, i: usize, fs: &CMat) -> CMat {
        self.check_axis(i);
        let p = self.p;
        let mut out = CMat::zeros(self.dim(), fs.ncols());
        for k in 0..self.blocks() {
            if let Some(t) = self.shift[i][k] {
                out.rows_mut(t * p, p).copy_from(&fs.rows(k * p, p));
            }
        }
        out
    }

    /// `M*_{zᵢ}` column-wise.
    pub fn mz_adjoint_columns(&self, i: usize, gs: &CMat) -> CMat {
        self.check_axis(i);
        let p = self.p;
        let mut out = CMat::zeros(self.dim(), gs.ncols());
        for k in 0..self.blocks() {
            if let Some(t) = self.shift[i][k] {
                let alpha = self.index().get(k);
                let factor =
                    (alpha.entries()[i] as f64 + 1.0) / (self.l as f64 + alpha.order() as f64);
                out.rows_mut(k * p, p)
                    .copy_from(&(gs.rows(t * p, p) * cr(factor)));
            }
        }
        out
    }

    /// `M_{zᵢ}` in hat coordinates (truncated), column-wise.
    pub fn mz_hat_columns(&self, i: usize, fs: &CMat) -> CMat {
        self.check_axis(i);
        let p = self.p;
        let mut out = CMat::zeros(self.dim(), fs.ncols());
        for k in 0..self.blocks() {
            if let Some(t) = self.shift[i][k] {
                let s = (self.weights.rho(k) / self.weights.rho(t)).sqrt();
                out.rows_mut(t * p, p)
                    .copy_from(&(fs.rows(k * p, p) * cr(s)));
            }
        }
        out
    }

    /// `M*_{zᵢ}` in hat coordinates: the conjugate transpose of
    /// [`Self::mz_hat_columns`].
    pub fn mz_adjoint_hat_columns(&self, i: usize, gs: &CMat) -> CMat {
        self.check_axis(i);
        let p = self.p;
        let mut out = CMat::zeros(self.dim(), gs.ncols());
        for k in 0..self.blocks() {
            if let Some(t) = self.shift[i][k] {
                let s = (self.weights.rho(k) / self.weights.rho(t)).sqrt();
                out.rows_mut(k * p, p)
                    .copy_from(&(gs.rows(t * p, p) * cr(s)));
            }
        }
        out
    }

    /// `M_z^α f` (truncated).
    pub fn shift_by(&self, alpha: &MultiIndex, f: &CVec) -> CVec {
        let mut out = f.clone();
        for (i, &a) in alpha.entries().iter().enumerate() {
            for _ in 0..a {
                out = self.mz_apply(i, &out).0;
            }
        }
        out
    }

    /// `M_z^{*α} f`.
    pub fn shift_adjoint_by(&self, alpha: &MultiIndex, f: &CVec) -> CVec {
        let mut out = f.clone();
        for (i, &a) in alpha.entries().iter().enumerate() {
            for _ in 0..a {
                out = self.mz_adjoint_apply(i, &out);
            }
        }
        out
    }

    /// Scales the degree-`k` part by `(ℓ+k−1)/k` for `k ≥ 1`.
    pub fn delta_apply(&self, f: &CVec) -> CVec {
        let mut out = f.clone();
        for k in 1..=self.degree {
            let r = self.grade_coords(k);
            let s = (self.l as f64 + k as f64 - 1.0) / k as f64;
            out.rows_mut(r.start, r.len()).scale_mut(s);
        }
        out
    }

    /// `Σ_{j<ℓ} (−1)ʲ binom(ℓ,j+1) Σ_{|α|=j} γ_α M_z^α M_z^{*α} f`.
    pub fn alternating_shift_sum(&self, f: &CVec, shift_offset: u32) -> CVec {
        let l = self.l;
        let mut out = self.zero();
        for j in 0..l {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let coeff = sign * binomial(l as u64, j as u64 + 1).unwrap() as f64;
            let grade = j + shift_offset;
            if grade > self.degree {
                continue;
            }
            for pos in self.index().grade_range(grade) {
                let alpha = self.index().get(pos);
                let g = self.weights.gamma(pos);
                let term = self.shift_by(alpha, &self.shift_adjoint_by(alpha, f));
                out += term * cr(coeff * g);
            }
        }
        out
    }

    /// Orthogonal projection onto the constants, computed from the shift
    /// formula `1 − Σ_{j<ℓ} (−1)ʲ binom(ℓ,j+1) Σ_{|α|=j+1} γ_α M_z^α M_z^{*α}`
    /// and checked against zeroing all non-constant blocks (the returned
    /// value).
    pub fn project_constants(&self, f: &CVec, tol: &Tolerances) -> Result<CVec, ModelError> {
        self.check_guard(f)?;
        let direct = self.project_constants_direct(f);
        let formula = f - self.alternating_shift_sum(f, 1);
        let residual = (&formula - &direct).norm();
        if residual > tol.residual * f.norm().max(1.0) {
            return Err(ModelError::ProjectionMismatch { residual });
        }
        Ok(direct)
    }

    pub fn project_constants_direct(&self, f: &CVec) -> CVec {
        let mut out = self.zero();
        out.rows_mut(0, self.p).copy_from(&f.rows(0, self.p));
        out
    }

    pub fn kernel_eval(&self, z: &[Complex64], w: &[Complex64]) -> Result<Complex64, ModelError> {
        self.check_dim(z)?;
        self.check_dim(w)?;
        kernel(self.l, z, w)
    }

    fn check_dim(&self, z: &[Complex64]) -> Result<(), ModelError> {
        if z.len() != self.n {
            return Err(ModelError::Argument(format!(
                "point has {} coordinates, expected {}",
                z.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// `z^α` for every `α` in the truncation.
    pub fn monomials(&self, z: &[Complex64]) -> Vec<Complex64> {
        let index = self.index();
        let mut out = Vec::with_capacity(index.len());
        for (k, alpha) in index.iter().enumerate() {
            if k == 0 {
                out.push(cr(1.0));
                continue;
            }
            let i = alpha.entries().iter().position(|&a| a > 0).unwrap();
            let prev = index.offset(&alpha.lowered(i).unwrap()).unwrap();
            out.push(out[prev] * z[i]);
        }
        out
    }

    /// Truncated Taylor sum `ε_z f = Σ f_α z^α`.
    pub fn eval(&self, f: &CVec, z: &[Complex64]) -> Result<CVec, ModelError> {
        self.check_dim(z)?;
        check_point(z)?;
        let mono = self.monomials(z);
        let mut out = CVec::zeros(self.p);
        for (k, &zk) in mono.iter().enumerate() {
            out += f.rows(k * self.p, self.p) * zk;
        }
        Ok(out)
    }

    /// `ε_z` as a `p × dim` matrix.
    pub fn eval_matrix(&self, z: &[Complex64]) -> Result<CMat, ModelError> {
        self.check_dim(z)?;
        check_point(z)?;
        let mono = self.monomials(z);
        let mut out = CMat::zeros(self.p, self.dim());
        for (k, &zk) in mono.iter().enumerate() {
            for r in 0..self.p {
                out[(r, k * self.p + r)] = zk;
            }
        }
        Ok(out)
    }

    /// `ε*_w x`: the truncated kernel section with coefficients
    /// `ρ_ℓ(α) w̄^α x`.
    pub fn eval_adjoint(&self, w: &[Complex64], x: &CVec) -> Result<CVec, ModelError> {
        self.check_dim(w)?;
        check_point(w)?;
        let mono = self.monomials(w);
        let mut out = self.zero();
        for (k, &wk) in mono.iter().enumerate() {
            let c = wk.conj() * self.weights.rho(k);
            out.rows_mut(k * self.p, self.p).copy_from(&(x * c));
        }
        Ok(out)
    }

    /// Wandering subspace `M ⊖ Σ M_{zᵢ}M` of a subspace given by a hat
    /// orthonormal basis.
    ///
    /// Only the part of `M` of degree `≤ N−1` can be shifted without
    /// leaving the truncation, so the subtracted span is
    /// `P_M M_{zᵢ}(M ∩ V_{N−1})`. For subspaces of the form
    /// `(polynomials of degree ≤ N) ∩ M∞` with `M∞` invariant this
    /// recovers `W(M∞)` exactly once `M∞` is spanned by its low-degree
    /// part and its shifts.
    pub fn wandering_of(&self, basis_hat: &CMat, tol: &Tolerances) -> Result<CMat, ModelError> {
        let dim = self.dim();
        if basis_hat.nrows() != dim {
            return Err(ModelError::Argument(format!(
                "basis has {} rows, space dimension is {dim}",
                basis_hat.nrows()
            )));
        }
        let r = basis_hat.ncols();
        if r == 0 {
            return Ok(CMat::zeros(dim, 0));
        }
        if self.degree == 0 {
            return Err(ModelError::Guard {
                degree: 0,
                limit: 0,
            });
        }
        // coefficients c with (basis·c) free of degree-N terms
        let top = self.grade_coords(self.degree);
        let top_rows = basis_hat.rows(top.start, top.len()).clone_owned();
        let low = crate::linalg::null_space(&top_rows, tol.rank_cutoff, 1.0);
        let low_part = crate::linalg::matmul(basis_hat, &low);
        let mut shifted = CMat::zeros(r, low_part.ncols() * self.n);
        for i in 0..self.n {
            let s = crate::linalg::adjoint_matmul(basis_hat, &self.mz_hat_columns(i, &low_part));
            shifted
                .view_mut((0, i * low_part.ncols()), (r, low_part.ncols()))
                .copy_from(&s);
        }
        let sb = subspace_basis(&shifted, tol, true);
        let complement = sb.complement.expect("complement requested");
        Ok(crate::linalg::matmul(basis_hat, &complement))
    }

    /// Hat orthonormal basis of the whole truncated space.
    pub fn full_basis_hat(&self) -> CMat {
        CMat::identity(self.dim(), self.dim())
    }

    pub fn vector(&self, coeffs: CVec) -> Result<ModelVector, ModelError> {
        if coeffs.len() != self.dim() {
            return Err(ModelError::Argument(format!(
                "{} coefficients given, space dimension is {}",
                coeffs.len(),
                self.dim()
            )));
        }
        Ok(ModelVector {
            n: self.n,
            l: self.l,
            p: self.p,
            degree: self.degree,
            coeffs,
        })
    }
}

/// A vector tagged with the parameters of its space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    pub n: usize,
    pub l: u32,
    pub p: usize,
    pub degree: u32,
    pub coeffs: CVec,
}

#[derive(Serialize, Deserialize)]
struct ModelVectorFile {
    n: usize,
    l: u32,
    p: usize,
    #[serde(rename = "N")]
    degree: u32,
    coeffs: Vec<Pair>,
}

impl ModelVector {
    pub fn space(&self) -> Result<TruncatedModelSpace, ModelError> {
        TruncatedModelSpace::new(self.n, self.l, self.p, self.degree)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelVectorFile {
            n: self.n,
            l: self.l,
            p: self.p,
            degree: self.degree,
            coeffs: vector_pairs(&self.coeffs),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let file: ModelVectorFile = serde_json::from_str(text)?;
        let coeffs = pairs_vector("coeffs", &file.coeffs)?;
        let space = TruncatedModelSpace::new(file.n, file.l, file.p, file.degree).map_err(|e| {
            FormatError::Field {
                field: "n/l/p/N".into(),
                message: e.to_string(),
            }
        })?;
        space.vector(coeffs).map_err(|e| FormatError::Field {
            field: "coeffs".into(),
            message: e.to_string(),
        })
    }
}
