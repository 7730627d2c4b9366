//! Transfer-function realizations
//! `W(z) = D + C Σ_{k=1}^m (1 − ZT*)^{−k} Z B` and the operator functions
//! they produce.
//!
//! Shapes: `B` is `nd × q` (the blocks `Bᵢ` stacked), `C` is `p × d`,
//! `D` is `p × q`, where `q = dim ℰ*` and `p = dim ℰ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    block_diag_repeat, cr, fro, hermitian_eigen, isometry_residual, op_norm, pinv, solve,
    subspace_basis, CMat, LinalgError, Tolerances,
};
use crate::modelspace::{check_point, kernel, ModelError, TruncatedModelSpace};
use crate::multiindex::{rho_univariate, IndexSet, WeightTable};
use crate::optuple::{OperatorTuple, TupleError};
use crate::serial::{matrix_rows, rows_matrix, FormatError, Pair, TupleFile};
use crate::wandering_inner::{self, WanderingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RealizationError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("1 − ZT* is singular at this point (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("extraction failed at step {step}: {message}")]
    Extraction { step: &'static str, message: String },
    #[error("K_m-inner check is inconclusive: {0}")]
    Inconclusive(String),
    #[error(transparent)]
    Tuple(#[from] TupleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Wandering(#[from] Box<WanderingError>),
}

impl From<WanderingError> for RealizationError {
    fn from(e: WanderingError) -> Self {
        RealizationError::Wandering(Box::new(e))
    }
}

fn extraction(step: &'static str, message: impl Into<String>) -> RealizationError {
    RealizationError::Extraction {
        step,
        message: message.into(),
    }
}

#[derive(Debug, Clone)]
pub struct Realization {
    m: u32,
    state: OperatorTuple,
    b: CMat,
    c: CMat,
    d: CMat,
}

impl Realization {
    pub fn new(
        m: u32,
        state: OperatorTuple,
        b: CMat,
        c: CMat,
        d: CMat,
    ) -> Result<Self, RealizationError> {
        if m == 0 {
            return Err(RealizationError::Argument("order m must be ≥ 1".into()));
        }
        let dim = state.dim();
        let nd = state.n() * dim;
        let (p, q) = d.shape();
        if b.nrows() != nd || b.ncols() != q {
            return Err(RealizationError::Argument(format!(
                "B is {}×{}, expected {nd}×{q}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.nrows() != p || c.ncols() != dim {
            return Err(RealizationError::Argument(format!(
                "C is {}×{}, expected {p}×{dim}",
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Realization { m, state, b, c, d })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> usize {
        self.state.n()
    }

    pub fn state(&self) -> &OperatorTuple {
        &self.state
    }

    pub fn b(&self) -> &CMat {
        &self.b
    }

    pub fn c(&self) -> &CMat {
        &self.c
    }

    pub fn d(&self) -> &CMat {
        &self.d
    }

    pub fn input_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.d.nrows()
    }

    /// Block `Bᵢ` (`d × q`).
    pub fn b_block(&self, i: usize) -> CMat {
        let d = self.state.dim();
        self.b.rows(i * d, d).clone_owned()
    }

    /// `ZB = Σ zᵢBᵢ`.
    fn zb(&self, z: &[Complex64]) -> CMat {
        let mut out = CMat::zeros(self.state.dim(), self.input_dim());
        for (i, &zi) in z.iter().enumerate() {
            out += self.b_block(i) * zi;
        }
        out
    }

    pub fn evaluate(&self, z: &[Complex64]) -> Result<CMat, RealizationError> {
        if z.len() != self.n() {
            return Err(RealizationError::Argument(format!(
                "point has {} coordinates, expected {}",
                z.len(),
                self.n()
            )));
        }
        check_point(z)?;
        let dim = self.state.dim();
        if dim == 0 {
            return Ok(self.d.clone());
        }
        let a = CMat::identity(dim, dim) - self.state.z_t_star(z);
        let mut x = self.zb(z);
        let mut acc = CMat::zeros(dim, self.input_dim());
        for _ in 0..self.m {
            x = solve(&a, &x).map_err(|e| match e {
                LinalgError::Singular { condition } => RealizationError::Singular { condition },
                other => other.into(),
            })?;
            acc += &x;
        }
        Ok(&self.d + &self.c * acc)
    }

    /// Taylor coefficients up to total degree `degree`:
    /// `Ŵ₀ = D`, `Ŵ_β = Σ_{βᵢ≥1} ρ_m(|β|) γ_{β−eᵢ} C T^{*(β−eᵢ)} Bᵢ`.
    pub fn taylor(&self, degree: u32) -> Result<PolyOperatorFunction, RealizationError> {
        let n = self.n();
        let index = IndexSet::new(n, degree).map_err(TupleError::from)?;
        let dim = self.state.dim();
        let (p, q) = self.d.shape();
        let mut coeffs = vec![CMat::zeros(p, q); index.len()];
        coeffs[0] = self.d.clone();
        let exact = if dim == 0 {
            true
        } else {
            matches!(self.state.nilpotency_length(degree as usize + 1), Some(l) if l <= degree)
        };
        if dim > 0 && degree > 0 {
            let powers = self.state.powers(degree - 1)?;
            // C T^{*α} for |α| < degree
            let c_words: Vec<CMat> = (0..powers.index().len())
                .map(|k| &self.c * powers.get(k).adjoint())
                .collect();
            let blocks: Vec<CMat> = (0..n).map(|i| self.b_block(i)).collect();
            for (pos, beta) in index.iter().enumerate().skip(1) {
                let weight = rho_univariate(self.m, beta.order()).map_err(TupleError::from)? as f64;
                let mut acc = CMat::zeros(p, q);
                for (i, block) in blocks.iter().enumerate() {
                    if let Some(lower) = beta.lowered(i) {
                        let k = powers.index().offset(&lower).unwrap();
                        let g = crate::multiindex::gamma(&lower).map_err(TupleError::from)? as f64;
                        acc += &c_words[k] * block * cr(g);
                    }
                }
                coeffs[pos] = acc * cr(weight);
            }
        }
        Ok(PolyOperatorFunction {
            m: self.m,
            n,
            degree,
            coeffs,
            exact,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RealizationFile {
            m: self.m,
            state: TupleFile::from_tuple(&self.state),
            b: matrix_rows(&self.b),
            c: matrix_rows(&self.c),
            d: matrix_rows(&self.d),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str, tol: &Tolerances) -> Result<Self, FormatError> {
        let file: RealizationFile = serde_json::from_str(text)?;
        let state = file.state.to_tuple(tol)?;
        let d = rows_matrix("D", &file.d, None)?;
        let b = rows_matrix("B", &file.b, Some(d.ncols()))?;
        let c = rows_matrix("C", &file.c, Some(state.dim()))?;
        Realization::new(file.m, state, b, c, d).map_err(|e| FormatError::Field {
            field: "B/C/D".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RealizationFile {
    m: u32,
    state: TupleFile,
    #[serde(rename = "B")]
    b: Vec<Vec<Pair>>,
    #[serde(rename = "C")]
    c: Vec<Vec<Pair>>,
    #[serde(rename = "D")]
    d: Vec<Vec<Pair>>,
}

/// Taylor coefficients `Ŵ_β`, `|β| ≤ N`, in graded-lex order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyOperatorFunction {
    pub m: u32,
    pub n: usize,
    pub degree: u32,
    pub coeffs: Vec<CMat>,
    /// The series terminates within the stored degree.
    pub exact: bool,
}

#[derive(Serialize, Deserialize)]
struct PolyFile {
    m: u32,
    n: usize,
    #[serde(rename = "N")]
    degree: u32,
    coeffs: Vec<Vec<Vec<Pair>>>,
    exact: bool,
}

impl PolyOperatorFunction {
    pub fn new(
        m: u32,
        n: usize,
        degree: u32,
        coeffs: Vec<CMat>,
        exact: bool,
    ) -> Result<Self, RealizationError> {
        let index = IndexSet::new(n, degree).map_err(TupleError::from)?;
        if coeffs.len() != index.len() {
            return Err(RealizationError::Argument(format!(
                "{} coefficients given, {} expected for n = {n}, N = {degree}",
                coeffs.len(),
                index.len()
            )));
        }
        let shape = coeffs[0].shape();
        if coeffs.iter().any(|c| c.shape() != shape) {
            return Err(RealizationError::Argument(
                "coefficient shapes differ".into(),
            ));
        }
        if m == 0 {
            return Err(RealizationError::Argument("order m must be ≥ 1".into()));
        }
        Ok(PolyOperatorFunction {
            m,
            n,
            degree,
            coeffs,
            exact,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn index(&self) -> IndexSet {
        IndexSet::new(self.n, self.degree).expect("validated on construction")
    }

    /// Highest grade with a coefficient above `floor`.
    pub fn effective_degree(&self, floor: f64) -> u32 {
        let index = self.index();
        (0..=self.degree)
            .rev()
            .find(|&k| {
                index
                    .grade_range(k)
                    .any(|pos| fro(&self.coeffs[pos]) > floor)
            })
            .unwrap_or(0)
    }

    pub fn evaluate(&self, z: &[Complex64]) -> Result<CMat, RealizationError> {
        if z.len() != self.n {
            return Err(RealizationError::Argument(format!(
                "point has {} coordinates, expected {}",
                z.len(),
                self.n
            )));
        }
        check_point(z)?;
        let index = self.index();
        let mut out = CMat::zeros(self.output_dim(), self.input_dim());
        for (pos, alpha) in index.iter().enumerate() {
            out += &self.coeffs[pos] * alpha.monomial(z);
        }
        Ok(out)
    }

    /// The functions `W e_j` as raw coefficient columns of `H_m(𝔹, ℂᵖ)`
    /// truncated at `space.degree()`.
    pub fn columns(&self, space: &TruncatedModelSpace) -> CMat {
        let p = self.output_dim();
        let mut out = CMat::zeros(space.dim(), self.input_dim());
        let index = self.index();
        for (pos, alpha) in index.iter().enumerate() {
            if let Some(r) = space.block_range(alpha) {
                out.view_mut((r.start, 0), (p, self.input_dim()))
                    .copy_from(&self.coeffs[pos]);
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> PolyOperatorFunction {
        PolyOperatorFunction {
            coeffs: self.coeffs.iter().map(|c| c * cr(s)).collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PolyFile {
            m: self.m,
            n: self.n,
            degree: self.degree,
            coeffs: self.coeffs.iter().map(matrix_rows).collect(),
            exact: self.exact,
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let file: PolyFile = serde_json::from_str(text)?;
        let coeffs = file
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, rows)| rows_matrix(&format!("coeffs[{k}]"), rows, None))
            .collect::<Result<Vec<_>, _>>()?;
        if coeffs.is_empty() {
            return Err(FormatError::Field {
                field: "coeffs".into(),
                message: "no coefficients".into(),
            });
        }
        PolyOperatorFunction::new(file.m, file.n, file.degree, coeffs, file.exact).map_err(|e| {
            FormatError::Field {
                field: "coeffs".into(),
                message: e.to_string(),
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KiReport {
    /// `‖C*C − Δ⁽ᵐ⁾‖`.
    pub ki1: f64,
    /// `‖D*C + B*(⊕G)T*‖`.
    pub ki2: f64,
    /// `‖D*D + B*(⊕G)B − 1‖`.
    pub ki3: f64,
    /// Koszul compatibility of the columns of `B`, standing in for the
    /// range condition on `(⊕j_C)B`.
    pub ki4_koszul: f64,
    pub ki4_is_surrogate: bool,
    pub passed: bool,
}

/// Stacked Koszul constraints `x ↦ (T*ₖxᵢ − T*ᵢxₖ)_{i<k}` on `Hⁿ`.
pub fn koszul_matrix(t: &OperatorTuple) -> CMat {
    let n = t.n();
    let d = t.dim();
    let pairs = n * n.saturating_sub(1) / 2;
    let mut out = CMat::zeros(pairs * d, n * d);
    let mut row = 0;
    for i in 0..n {
        for k in i + 1..n {
            out.view_mut((row, i * d), (d, d))
                .copy_from(&t.mat(k).adjoint());
            out.view_mut((row, k * d), (d, d))
                .copy_from(&(-t.mat(i).adjoint()));
            row += d;
        }
    }
    out
}

pub fn ki_check(r: &Realization, tol: &Tolerances) -> KiReport {
    let t = r.state();
    let m = r.m();
    let dim = t.dim();
    let q = r.input_dim();
    let delta = t.defect(m);
    let g = block_diag_repeat(&t.defect_sum(m), t.n());
    let ki1 = fro(&(r.c().adjoint() * r.c() - delta));
    let ki2 = fro(&(r.d().adjoint() * r.c() + r.b().adjoint() * &g * t.column_adjoint()));
    let ki3 = fro(&(r.d().adjoint() * r.d() + r.b().adjoint() * &g * r.b() - CMat::identity(q, q)));
    let ki4 = if dim == 0 {
        0.0
    } else {
        fro(&(koszul_matrix(t) * r.b()))
    };
    let passed = [ki1, ki2, ki3, ki4].iter().all(|&v| v <= tol.residual);
    KiReport {
        ki1,
        ki2,
        ki3,
        ki4_koszul: ki4,
        ki4_is_surrogate: true,
        passed,
    }
}

/// Distance of the columns of `(⊕j_C)B` from the range of
/// `M*_z: H_m → H_mⁿ`, compared on degrees `≤ N − 1` of a truncation at
/// `degree` (the range condition that the Koszul test stands in for).
pub fn ki4_range_residual(r: &Realization, degree: u32) -> Result<f64, RealizationError> {
    let t = r.state();
    let n = t.n();
    let dim = t.dim();
    if dim == 0 || r.input_dim() == 0 {
        return Ok(0.0);
    }
    let p = r.output_dim();
    let space = TruncatedModelSpace::new(n, r.m(), p, degree.max(1))?;
    let powers = t.powers(space.degree())?;
    let mut j_c = CMat::zeros(space.dim(), dim);
    for pos in 0..space.blocks() {
        let block = r.c() * powers.get(pos).adjoint() * cr(space.weights().rho(pos));
        j_c.view_mut((pos * p, 0), (p, dim)).copy_from(&block);
    }
    let j_hat = space.to_hat(&j_c);
    let keep = space.grade_coords(space.degree()).start;
    let identity = CMat::identity(space.dim(), space.dim());
    let mut adjoint_stack = CMat::zeros(n * keep, space.dim());
    let mut image_stack = CMat::zeros(n * keep, r.input_dim());
    for i in 0..n {
        let a = space.mz_adjoint_hat_columns(i, &identity);
        adjoint_stack
            .view_mut((i * keep, 0), (keep, space.dim()))
            .copy_from(&a.rows(0, keep));
        let x = &j_hat * r.b_block(i);
        image_stack
            .view_mut((i * keep, 0), (keep, r.input_dim()))
            .copy_from(&x.rows(0, keep));
    }
    let range = subspace_basis(&adjoint_stack, &Tolerances::default(), false).basis;
    let outside = &image_stack - &range * (range.adjoint() * &image_stack);
    Ok(fro(&outside))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerVerdict {
    Inner,
    NotInner,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct KmInnerReport {
    pub verdict: InnerVerdict,
    /// `‖Σ_β Ŵ_β*Ŵ_β/ρ_m(β) − 1‖`.
    pub gram_residual: f64,
    /// Largest `‖Σ_β Ŵ_β*Ŵ_{β+α}/ρ_m(β+α)‖` over the checked shifts.
    pub orthogonality_residual: f64,
    pub max_shift_order: u32,
    pub exact: bool,
}

/// Isometry and shift-orthogonality of `x ↦ Wx` into `H_m(𝔹, ℰ)`.
///
/// Truncated (non-terminating) input only ever yields `NotInner` (when the
/// partial Gram sum already exceeds the identity, which more terms cannot
/// repair) or `Inconclusive`.
pub fn km_inner_check(
    w: &PolyOperatorFunction,
    m: u32,
    tol: f64,
) -> Result<KmInnerReport, RealizationError> {
    let weights = WeightTable::new(w.n, m, w.degree).map_err(TupleError::from)?;
    let index = weights.index();
    let q = w.input_dim();
    let mut gram = CMat::zeros(q, q);
    for (pos, c) in w.coeffs.iter().enumerate() {
        gram += c.adjoint() * c / cr(weights.rho(pos));
    }
    let gram_residual = fro(&(&gram - CMat::identity(q, q)));
    let max_shift_order = w.degree;
    let mut orth = 0.0f64;
    for a_pos in 1..index.len() {
        let alpha = index.get(a_pos);
        let mut acc = CMat::zeros(q, q);
        for (b_pos, beta) in index.iter().enumerate() {
            if alpha.order() + beta.order() > w.degree {
                break;
            }
            let sum = beta.add(alpha);
            let s_pos = index.offset(&sum).unwrap();
            acc += w.coeffs[b_pos].adjoint() * &w.coeffs[s_pos] / cr(weights.rho(s_pos));
        }
        orth = orth.max(fro(&acc));
    }
    let verdict = if w.exact {
        if gram_residual <= tol && orth <= tol {
            InnerVerdict::Inner
        } else {
            InnerVerdict::NotInner
        }
    } else {
        let excess = hermitian_eigen(&(&gram - CMat::identity(q, q)))
            .0
            .first()
            .copied()
            .unwrap_or(0.0);
        if excess > tol {
            InnerVerdict::NotInner
        } else {
            InnerVerdict::Inconclusive
        }
    };
    Ok(KmInnerReport {
        verdict,
        gram_residual,
        orthogonality_residual: orth,
        max_shift_order,
        exact: w.exact,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GramCheck {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub psd: bool,
}

/// PSD test of `[K_m(zᵢ,zⱼ)·1 − K₁(zᵢ,zⱼ) W(zᵢ)W(zⱼ)*]ᵢⱼ`; `slack` is
/// relative to the largest eigenvalue magnitude.
pub fn multiplier_gram_check<F>(
    points: &[Vec<Complex64>],
    m: u32,
    slack: f64,
    eval: F,
) -> Result<GramCheck, RealizationError>
where
    F: Fn(&[Complex64]) -> Result<CMat, RealizationError>,
{
    let values = points
        .iter()
        .map(|z| eval(z))
        .collect::<Result<Vec<_>, _>>()?;
    let p = values.first().map(|v| v.nrows()).unwrap_or(0);
    let s = points.len();
    let mut block = CMat::zeros(s * p, s * p);
    for i in 0..s {
        for j in 0..s {
            let km = kernel(m, &points[i], &points[j])?;
            let k1 = kernel(1, &points[i], &points[j])?;
            let entry = CMat::identity(p, p) * km - &values[i] * values[j].adjoint() * k1;
            block.view_mut((i * p, j * p), (p, p)).copy_from(&entry);
        }
    }
    let eig = hermitian_eigen(&crate::linalg::hermitian_part(&block)).0;
    let max = eig.first().copied().unwrap_or(0.0);
    let min = eig.last().copied().unwrap_or(0.0);
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    Ok(GramCheck {
        min_eigenvalue: min,
        max_eigenvalue: max,
        psd: min >= -slack * scale,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractionReport {
    pub ambient_degree: u32,
    pub state_dim: usize,
    /// `dim(ℛ ∩ ℰ)` and `dim Ê`.
    pub range_dim: usize,
    pub complement_dim: usize,
    pub u_isometry_residual: f64,
    /// `‖(U₁, U₂)*(U₁, U₂) − 1‖` with `U₂` measured in `𝒟̃`.
    pub parameter_isometry_residual: f64,
    pub u2_solve_residual: f64,
    pub max_match_error: f64,
    pub grid_size: usize,
}

/// Points `z` with `‖z‖ ≤ radius` used for pointwise comparisons.
pub fn sample_grid(n: usize, count: usize, radius: f64) -> Vec<Vec<Complex64>> {
    // deterministic spiral so that reports do not depend on an RNG
    (0..count)
        .map(|k| {
            let t = (k as f64 + 0.5) / count as f64;
            let r = radius * t.sqrt();
            let z: Vec<Complex64> = (0..n)
                .map(|i| {
                    let angle = 2.399_963 * (k * (i + 1)) as f64 + i as f64;
                    Complex64::from_polar(1.0, angle)
                })
                .collect();
            let norm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            z.into_iter().map(|c| c * (r / norm)).collect()
        })
        .collect()
}

/// Rebuilds a realization from a terminating `K_m`-inner function.
pub fn extract(
    w: &PolyOperatorFunction,
    tol: &Tolerances,
) -> Result<(Realization, ExtractionReport), RealizationError> {
    if !w.exact {
        return Err(RealizationError::Inconclusive(
            "extraction needs a terminating Taylor series".into(),
        ));
    }
    let m = w.m;
    let n = w.n;
    let p = w.output_dim();
    let q = w.input_dim();
    let floor = 1e-13 * w.coeffs.iter().map(fro).fold(0.0, f64::max).max(1.0);
    let w_degree = w.effective_degree(floor);

    // H ∩ V_N = V_N ⊖ span{P_N z^α W x}; grow N until H has no top-degree part
    let mut ambient = w_degree + 1;
    let (space, h_basis) = loop {
        let space = TruncatedModelSpace::new(n, m, p, ambient)?;
        let cols = w.columns(&space);
        let mut span = CMat::zeros(space.dim(), q * space.blocks());
        for (pos, alpha) in space.index().iter().enumerate() {
            let mut shifted = cols.clone();
            for (i, &a) in alpha.entries().iter().enumerate() {
                for _ in 0..a {
                    shifted = space.mz_columns(i, &shifted);
                }
            }
            span.view_mut((0, pos * q), (space.dim(), q))
                .copy_from(&space.to_hat(&shifted));
        }
        // high shifts are short in H_m; equal column lengths keep the SVD
        // from mistaking scale for near-dependence
        for mut col in span.column_iter_mut() {
            let len = col.norm();
            if len > 0.0 {
                col /= cr(len);
            }
        }
        let sb = subspace_basis(&span, tol, true);
        let h = sb.complement.expect("complement requested");
        let top = space.grade_coords(ambient);
        let top_mass = if h.ncols() == 0 {
            0.0
        } else {
            op_norm(&h.rows(top.start, top.len()).clone_owned())
        };
        if top_mass <= 1e-8 {
            // the leftover top mass is truncation noise; recompute H orthogonal
            // to the top grade too, otherwise it leaks into the state tuple
            if h.ncols() == 0 {
                break (space, h);
            }
            let mut augmented = CMat::zeros(space.dim(), span.ncols() + top.len());
            augmented.columns_mut(0, span.ncols()).copy_from(&span);
            for (c, row) in top.clone().enumerate() {
                augmented[(row, span.ncols() + c)] = cr(1.0);
            }
            let h = subspace_basis(&augmented, tol, true)
                .complement
                .expect("complement requested");
            break (space, h);
        }
        ambient += 1;
        if ambient > w_degree + 2 + 4 * m + 16 {
            return Err(extraction(
                "complement",
                "the co-invariant part does not stabilize; the input is not a finite realization",
            ));
        }
    };
    let dim = h_basis.ncols();

    if dim == 0 {
        let state = OperatorTuple::new(vec![CMat::zeros(0, 0); n], tol)?;
        let r = Realization::new(
            m,
            state,
            CMat::zeros(0, q),
            CMat::zeros(p, 0),
            w.coeffs[0].clone(),
        )?;
        let report = match_report(w, &r, ambient, 0, p, 0.0, 0.0, 0.0)?;
        return Ok((r, report));
    }

    // state tuple: compression of the backward shifts to H
    let mats: Vec<CMat> = (0..n)
        .map(|i| (h_basis.adjoint() * space.mz_adjoint_hat_columns(i, &h_basis)).adjoint())
        .collect();
    let state = OperatorTuple::new(
        mats,
        &Tolerances {
            residual: 1e-6,
            ..*tol
        },
    )
    .map_err(|e| extraction("state", e.to_string()))?;

    // ℛ ∩ ℰ: span of all coefficient blocks of elements of H
    let h_raw = space.from_hat(&h_basis);
    let mut blocks = CMat::zeros(p, space.blocks() * dim);
    for k in 0..space.blocks() {
        blocks
            .view_mut((0, k * dim), (p, dim))
            .copy_from(&h_raw.rows(k * p, p));
    }
    let rb = subspace_basis(&blocks, tol, true);
    let range = rb.basis;
    let complement = rb.complement.expect("complement requested");

    // U: 𝒟 → ℛ∩ℰ with U(Cx) = x₀
    let data = state
        .defect_data(m, tol)
        .map_err(|e| extraction("defect", e.to_string()))?;
    let eval0 = h_raw.rows(0, p).clone_owned();
    let u = &eval0 * pinv(&data.c_out, tol.rank_cutoff);
    let u_residual = isometry_residual(&u);
    let consistency = fro(&(&u * &data.c_out - &eval0));
    if u_residual > 1e-6 || consistency > 1e-6 {
        return Err(extraction(
            "U",
            format!("U(Cx) = x₀ is not isometric (residual {u_residual:e}, consistency {consistency:e})"),
        ));
    }

    let inner = wandering_inner::wt_build(&state, m, ambient, tol)?;
    let wt = &inner.realization;

    // U₁ = Ê-part of Ŵ₀; U₂ from (1⊗U) W_T U₂ = P_{ℛ∩ℰ} W
    let u1 = &complement * complement.adjoint() * &w.coeffs[0];
    let wt_taylor = wt.taylor(ambient)?;
    let weights = space.weights();
    let qt = wt.input_dim();
    let rows = space.blocks() * p;
    let mut a = CMat::zeros(rows, qt);
    let mut b = CMat::zeros(rows, q);
    let w_index = w.index();
    let proj = &range * range.adjoint();
    for (pos, alpha) in space.index().iter().enumerate() {
        let s = 1.0 / weights.rho(pos).sqrt();
        a.view_mut((pos * p, 0), (p, qt))
            .copy_from(&(&u * &wt_taylor.coeffs[pos] * cr(s)));
        if let Some(wp) = w_index.offset(alpha) {
            b.view_mut((pos * p, 0), (p, q))
                .copy_from(&(&proj * &w.coeffs[wp] * cr(s)));
        }
    }
    let u2 = pinv(&a, tol.rank_cutoff) * &b;
    let u2_residual = fro(&(&a * &u2 - &b));
    if u2_residual > 1e-6 {
        return Err(extraction(
            "U2",
            format!("P₂W is not in the range of W_T (residual {u2_residual:e})"),
        ));
    }
    let param = u1.adjoint() * &u1 + u2.adjoint() * &u2;
    let param_residual = fro(&(param - CMat::identity(q, q)));

    let b_out = wt.b() * &u2;
    let c_out = &u * wt.c();
    let d_out = &u1 + &u * wt.d() * &u2;
    let r = Realization::new(m, state, b_out, c_out, d_out)?;
    let report = match_report(
        w,
        &r,
        ambient,
        range.ncols(),
        complement.ncols(),
        u_residual,
        param_residual,
        u2_residual,
    )?;
    Ok((r, report))
}

#[allow(clippy::too_many_arguments)]
fn match_report(
    w: &PolyOperatorFunction,
    r: &Realization,
    ambient: u32,
    range_dim: usize,
    complement_dim: usize,
    u_residual: f64,
    param_residual: f64,
    u2_residual: f64,
) -> Result<ExtractionReport, RealizationError> {
    let grid = sample_grid(w.n, 20, 0.9);
    let mut worst = 0.0f64;
    for z in &grid {
        worst = worst.max(op_norm(&(w.evaluate(z)? - r.evaluate(z)?)));
    }
    Ok(ExtractionReport {
        ambient_degree: ambient,
        state_dim: r.state().dim(),
        range_dim,
        complement_dim,
        u_isometry_residual: u_residual,
        parameter_isometry_residual: param_residual,
        u2_solve_residual: u2_residual,
        max_match_error: worst,
        grid_size: grid.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optuple::fixtures;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, cr(v))
    }

    /// `T = 0` on `ℂ`, `B = C = 1`, `D = 0`, `m = 1`: `W(z) = z`.
    fn fix1_realization() -> Realization {
        let t = fixtures::fix1().tuple;
        Realization::new(1, t, scalar(1.0), scalar(1.0), scalar(0.0)).unwrap()
    }

    fn poly_z(m: u32, s: f64) -> PolyOperatorFunction {
        PolyOperatorFunction::new(m, 1, 1, vec![scalar(0.0), scalar(s)], true).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let r = fix1_realization();
        assert_eq!(r.evaluate(&[cr(0.0)]).unwrap(), scalar(0.0));
        assert!((r.evaluate(&[cr(0.5)]).unwrap() - scalar(0.5)).norm() < 1e-15);
        assert!(matches!(
            r.evaluate(&[cr(1.0)]),
            Err(RealizationError::Model(ModelError::Domain { .. }))
        ));
    }

    #[test]
    fn singular_resolvent_is_reported() {
        let t = OperatorTuple::new(vec![scalar(2.0)], &tol()).unwrap();
        let r = Realization::new(1, t, scalar(1.0), scalar(1.0), scalar(0.0)).unwrap();
        assert!(matches!(
            r.evaluate(&[cr(0.5)]),
            Err(RealizationError::Singular { .. })
        ));
    }

    #[test]
    fn taylor_of_fix1_realization() {
        let w = fix1_realization().taylor(4).unwrap();
        assert!(w.exact);
        assert_eq!(w.coeffs[0], scalar(0.0));
        assert_eq!(w.coeffs[1], scalar(1.0));
        assert!(w.coeffs[2..].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn taylor_matches_evaluation_for_contractive_state() {
        // T = 1/2 on ℂ, m = 2: W(z) = Σ_k (1 − z/2)^{−k} z
        let t = OperatorTuple::new(vec![scalar(0.5)], &tol()).unwrap();
        let r = Realization::new(2, t, scalar(1.0), scalar(1.0), scalar(0.3)).unwrap();
        let w = r.taylor(60).unwrap();
        assert!(!w.exact);
        let z = [Complex64::new(0.3, 0.4)];
        assert!((w.evaluate(&z).unwrap() - r.evaluate(&z).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn ki_examples() {
        let r = fix1_realization();
        let rep = ki_check(&r, &tol());
        assert!(rep.passed);
        assert_eq!((rep.ki1, rep.ki2, rep.ki3), (0.0, 0.0, 0.0));
        let bad = Realization::new(
            1,
            fixtures::fix1().tuple,
            scalar(1.0),
            scalar(1.0),
            scalar(0.5),
        )
        .unwrap();
        let rep = ki_check(&bad, &tol());
        assert!(!rep.passed);
        assert!((rep.ki3 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn km_inner_examples() {
        let r = km_inner_check(&poly_z(1, 1.0), 1, 1e-8).unwrap();
        assert_eq!(r.verdict, InnerVerdict::Inner);
        let r = km_inner_check(&poly_z(2, 1.0), 2, 1e-8).unwrap();
        assert_eq!(r.verdict, InnerVerdict::NotInner);
        assert!((r.gram_residual - 0.5).abs() < 1e-15);
        let r = km_inner_check(&poly_z(2, 2f64.sqrt()), 2, 1e-8).unwrap();
        assert_eq!(r.verdict, InnerVerdict::Inner);
        // z + z² is not inner: ⟨z + z², z(z + z²)⟩ ≠ 0
        let w = PolyOperatorFunction::new(
            1,
            1,
            2,
            vec![scalar(0.0), scalar(0.5f64.sqrt()), scalar(0.5f64.sqrt())],
            true,
        )
        .unwrap();
        assert_eq!(
            km_inner_check(&w, 1, 1e-8).unwrap().verdict,
            InnerVerdict::NotInner
        );
        let truncated = PolyOperatorFunction {
            exact: false,
            ..poly_z(1, 1.0)
        };
        assert_eq!(
            km_inner_check(&truncated, 1, 1e-8).unwrap().verdict,
            InnerVerdict::Inconclusive
        );
    }

    #[test]
    fn gram_check_examples() {
        let pts = sample_grid(2, 10, 0.8);
        let w = CMat::from_row_slice(2, 1, &[cr(0.6), cr(0.8)]).adjoint();
        for m in 1..4 {
            let g = multiplier_gram_check(&pts, m, 1e-8, |_| Ok(w.clone())).unwrap();
            assert!(g.psd, "m = {m}: {g:?}");
        }
        let g = multiplier_gram_check(&pts, 1, 1e-8, |_| Ok(&w * cr(2.0))).unwrap();
        assert!(!g.psd);
    }

    #[test]
    fn extract_shift() {
        let (r, rep) = extract(&poly_z(1, 1.0), &tol()).unwrap();
        assert_eq!(rep.state_dim, 1);
        assert_eq!(rep.complement_dim, 0);
        assert!(rep.max_match_error < 1e-10);
        assert!(r.state().mat(0).norm() < 1e-12);
        assert!(ki_check(&r, &tol()).passed);
    }

    #[test]
    fn extract_constant_isometry() {
        let d = CMat::from_row_slice(
            2,
            2,
            &[
                cr(0.6),
                Complex64::new(0.0, 0.8),
                Complex64::new(0.0, 0.8),
                cr(0.6),
            ],
        );
        let w = PolyOperatorFunction::new(2, 2, 0, vec![d.clone()], true).unwrap();
        let (r, rep) = extract(&w, &tol()).unwrap();
        assert_eq!(rep.state_dim, 0);
        assert_eq!(r.d(), &d);
        assert!(rep.max_match_error < 1e-14);
    }

    #[test]
    fn extract_refuses_truncated_input() {
        let w = PolyOperatorFunction {
            exact: false,
            ..poly_z(1, 1.0)
        };
        assert!(matches!(
            extract(&w, &tol()),
            Err(RealizationError::Inconclusive(_))
        ));
    }

    #[test]
    fn serialization_roundtrip() {
        let r = fix1_realization();
        let back = Realization::from_json(&r.to_json(), &tol()).unwrap();
        assert_eq!(back.b(), r.b());
        let w = poly_z(2, 2f64.sqrt());
        assert_eq!(PolyOperatorFunction::from_json(&w.to_json()).unwrap(), w);
        let bad = r#"{"m":1,"n":1,"N":1,"coeffs":[[[[0,0]]]],"exact":true}"#;
        assert!(PolyOperatorFunction::from_json(bad).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::optuple::random;
    use crate::wandering_inner::wt_build;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn ki_implies_inner_and_taylor_terminates_exactly(
            seed in any::<u64>(), n in 1usize..=3, dim in 1usize..=4, m in 1u32..=3, scale in 0.8f64..1.2
        ) {
            let tol = Tolerances::default();
            let t = random::pure_hypercontraction(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, m, true, &tol);
            let degree = t.nilpotency_length(64).unwrap() + m + 1;
            let w = wt_build(&t, m, degree, &tol).unwrap();
            let r = &w.realization;
            // rescaled feedthroughs pass KI only when D = 0 or the scale is 1
            let r = Realization::new(m, r.state().clone(), r.b().clone(), r.c().clone(), r.d() * cr(scale)).unwrap();
            let taylor = r.taylor(degree).unwrap();
            prop_assert!(taylor.exact);
            for z in sample_grid(n, 6, 0.9) {
                let err = fro(&(taylor.evaluate(&z).unwrap() - r.evaluate(&z).unwrap()));
                prop_assert!(err <= 1e-10, "taylor vs resolvent {err:e}");
            }
            if ki_check(&r, &tol).passed {
                let rep = km_inner_check(&taylor, m, 1e-8).unwrap();
                prop_assert_eq!(rep.verdict, InnerVerdict::Inner);
            }
        }

        #[test]
        fn json_roundtrip_preserves_functions(
            seed in any::<u64>(), n in 1usize..=2, dim in 1usize..=3, m in 1u32..=2
        ) {
            let tol = Tolerances::default();
            let t = random::pure_hypercontraction(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, m, false, &tol);
            let w = wt_build(&t, m, 4, &tol).unwrap();
            let back = PolyOperatorFunction::from_json(&w.taylor.to_json()).unwrap();
            prop_assert_eq!(back.exact, w.taylor.exact);
            for (a, b) in back.coeffs.iter().zip(&w.taylor.coeffs) {
                prop_assert!(fro(&(a - b)) <= 1e-15 * (1.0 + fro(b)));
            }
            let r = Realization::from_json(&w.realization.to_json(), &tol).unwrap();
            prop_assert!(fro(&(r.d() - w.realization.d())) <= 1e-15);
        }
    }
}
