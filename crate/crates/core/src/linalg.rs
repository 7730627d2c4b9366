//! Dense complex linear algebra used throughout the crate.
//!
//! All spectral work goes through Hermitian eigendecompositions and SVDs.
//! Matrices are `nalgebra::DMatrix<Complex64>`; the decompositions
//! themselves are delegated to `faer`, whose complex SVD stays accurate
//! for clustered singular values.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian (‖A − A*‖ = {residual:e})")]
    NotHermitian { residual: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below slack")]
    NotPsd { eigenvalue: f64 },
    #[error("metric is not bounded below by the identity: smallest eigenvalue {eigenvalue}")]
    MetricBelowIdentity { eigenvalue: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("decomposition did not converge")]
    NoConvergence,
    #[error("singular system (condition estimate {condition:e})")]
    Singular { condition: f64 },
}

/// Named numerical thresholds shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed negative eigenvalue, relative to the largest eigenvalue magnitude.
    pub psd_slack: f64,
    pub residual: f64,
    /// Relative singular-value cutoff for numerical rank.
    pub rank_cutoff: f64,
    pub purity_decay: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            psd_slack: 1e-10,
            residual: 1e-8,
            rank_cutoff: 1e-10,
            purity_decay: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("psd_slack", self.psd_slack),
            ("residual", self.residual),
            ("rank_cutoff", self.rank_cutoff),
            ("purity_decay", self.purity_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!(
                    "tolerance {name} must be strictly positive, got {v}"
                ));
            }
        }
        Ok(())
    }

    /// Override one tolerance by name.
    pub fn set(&mut self, key: &str, value: f64) -> Result<(), String> {
        match key {
            "psd_slack" => self.psd_slack = value,
            "residual" => self.residual = value,
            "rank_cutoff" => self.rank_cutoff = value,
            "purity_decay" => self.purity_decay = value,
            _ => return Err(format!("unknown tolerance '{key}'")),
        }
        self.validate()
    }
}

pub fn check_finite(a: &CMat) -> Result<(), LinalgError> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Frobenius norm. Used for residuals since it bounds the operator norm.
pub fn fro(a: &CMat) -> f64 {
    // fold from +0.0: an empty float sum is −0.0
    a.iter().fold(0.0, |acc, z| acc + z.norm_sqr()).sqrt()
}

fn to_faer(a: &CMat) -> faer::Mat<Complex64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)])
}

fn from_faer(a: faer::MatRef<'_, Complex64>) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)])
}

// below this many multiply-adds nalgebra is fine
const FAER_MATMUL_WORK: usize = 1 << 20;

/// `A B`; large products go through faer, whose kernels are far faster
/// than nalgebra's generic complex gemm.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    if a.nrows() * a.ncols() * b.ncols() < FAER_MATMUL_WORK {
        return a * b;
    }
    let prod = to_faer(a) * to_faer(b);
    from_faer(prod.as_ref())
}

/// `A* B`.
pub fn adjoint_matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_matmul: row counts differ");
    if a.nrows() * a.ncols() * b.ncols() < FAER_MATMUL_WORK {
        return a.adjoint() * b;
    }
    let fa = to_faer(a);
    let prod = fa.as_ref().adjoint() * to_faer(b);
    from_faer(prod.as_ref())
}

/// `A = U diag(s) V*` with `s` descending. With `full`, `U` and `V` are
/// square; otherwise they have `min(rows, cols)` columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn svd(a: &CMat, full: bool) -> Result<Svd, LinalgError> {
    let (h, w) = a.shape();
    if h == 0 || w == 0 {
        let (ku, kv) = if full { (h, w) } else { (0, 0) };
        return Ok(Svd {
            u: CMat::identity(h, ku),
            s: Vec::new(),
            v: CMat::identity(w, kv),
        });
    }
    check_finite(a)?;
    let m = to_faer(a);
    let (u, s, v) = if full {
        let d = m.svd().map_err(|_| LinalgError::NoConvergence)?;
        let s: Vec<f64> = (0..h.min(w)).map(|i| d.S().column_vector()[i].re).collect();
        (from_faer(d.U()), s, from_faer(d.V()))
    } else {
        let d = m.thin_svd().map_err(|_| LinalgError::NoConvergence)?;
        let s: Vec<f64> = (0..h.min(w)).map(|i| d.S().column_vector()[i].re).collect();
        (from_faer(d.U()), s, from_faer(d.V()))
    };
    Ok(Svd { u, s, v })
}

fn svd_or_panic(a: &CMat, full: bool) -> Svd {
    // inputs are finite everywhere this is used; non-convergence is a bug
    svd(a, full).expect("SVD of a finite matrix")
}

/// Spectral norm (largest singular value).
pub fn op_norm(a: &CMat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return vec![f64::NAN; a.nrows().min(a.ncols())];
    }
    let values = to_faer(a)
        .singular_values()
        .expect("SVD of a finite matrix");
    let mut s: Vec<f64> = values.into_iter().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn hermitian_residual(a: &CMat) -> f64 {
    fro(&(a - a.adjoint()))
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * cr(0.5)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = to_faer(&hermitian_part(a))
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("Hermitian eigendecomposition of a finite matrix");
    let raw: Vec<f64> = (0..n).map(|i| eig.S().column_vector()[i].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));
    let values = order.iter().map(|&i| raw[i]).collect();
    let u = eig.U();
    let vectors = CMat::from_fn(n, n, |r, c| u[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigen(a).0.last().copied().unwrap_or(0.0)
}

fn spectral_function(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = values.len();
    let scaled = CMat::from_fn(n, n, |r, c| vectors[(r, c)] * cr(f(values[c])));
    &scaled * vectors.adjoint()
}

fn check_hermitian(a: &CMat, tol: &Tolerances) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::Shape(format!(
            "expected a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    check_finite(a)?;
    let res = hermitian_residual(a);
    if res > tol.residual * fro(a).max(1.0) {
        return Err(LinalgError::NotHermitian { residual: res });
    }
    Ok(())
}

/// PSD square root; negative eigenvalues within `psd_slack·‖A‖` are clipped.
pub fn psd_sqrt(a: &CMat, tol: &Tolerances) -> Result<CMat, LinalgError> {
    check_hermitian(a, tol)?;
    let (values, vectors) = hermitian_eigen(a);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&lowest) = values.last() {
        if lowest < -tol.psd_slack * scale {
            return Err(LinalgError::NotPsd { eigenvalue: lowest });
        }
    }
    Ok(spectral_function(&values, &vectors, |v| v.max(0.0).sqrt()))
}

/// Whether `A ⪰ −psd_slack·‖A‖`, together with the smallest eigenvalue.
pub fn is_psd(a: &CMat, tol: &Tolerances) -> (bool, f64) {
    let (values, _) = hermitian_eigen(a);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lowest = values.last().copied().unwrap_or(0.0);
    (lowest >= -tol.psd_slack * scale.max(1e-300), lowest)
}

/// Orthonormal basis of a column span, with optional complement.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub basis: CMat,
    pub rank: usize,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    pub complement: Option<CMat>,
}

/// Span of the columns of `vectors`, rank cut relative to `σ_max`.
pub fn subspace_basis(vectors: &CMat, tol: &Tolerances, with_complement: bool) -> SubspaceBasis {
    subspace_basis_scaled(vectors, tol.rank_cutoff, None, with_complement)
}

/// Like [`subspace_basis`], but singular values are cut at `cutoff·scale`
/// where `scale` defaults to `σ_max`. A fixed scale is what null-space
/// computations need: an all-noise constraint matrix must have rank 0.
pub fn subspace_basis_scaled(
    vectors: &CMat,
    cutoff: f64,
    scale: Option<f64>,
    with_complement: bool,
) -> SubspaceBasis {
    let h = vectors.nrows();
    let k = vectors.ncols();
    if h == 0 || k == 0 {
        return SubspaceBasis {
            basis: CMat::zeros(h, 0),
            rank: 0,
            singular_values: Vec::new(),
            complement: with_complement.then(|| CMat::identity(h, h)),
        };
    }
    let d = svd_or_panic(vectors, with_complement);
    let sigma_max = d.s.first().copied().unwrap_or(0.0);
    let threshold = cutoff * scale.unwrap_or(sigma_max);
    let rank = d.s.iter().filter(|&&s| s > threshold && s > 0.0).count();
    let basis = d.u.columns(0, rank).into_owned();
    let complement = with_complement.then(|| d.u.columns(rank, h - rank).into_owned());
    SubspaceBasis {
        basis,
        rank,
        singular_values: d.s.into_iter().take(k.min(h)).collect(),
        complement,
    }
}

/// Orthonormal basis of `ker A`, using a fixed scale for the rank cutoff.
pub fn null_space(a: &CMat, cutoff: f64, scale: f64) -> CMat {
    let n = a.ncols();
    if a.nrows() == 0 {
        return CMat::identity(n, n);
    }
    subspace_basis_scaled(&a.adjoint(), cutoff, Some(scale), true)
        .complement
        .expect("complement requested")
}

/// `(G^{1/2}, G^{−1/2})` for a metric `G ⪰ I`.
pub fn metric_congruence(g: &CMat, tol: &Tolerances) -> Result<(CMat, CMat), LinalgError> {
    check_hermitian(g, tol)?;
    let (values, vectors) = hermitian_eigen(g);
    if let Some(&lowest) = values.last() {
        if lowest < 1.0 - 1e-6 {
            return Err(LinalgError::MetricBelowIdentity { eigenvalue: lowest });
        }
    }
    let half = spectral_function(&values, &vectors, f64::sqrt);
    let inv_half = spectral_function(&values, &vectors, |v| 1.0 / v.sqrt());
    Ok((half, inv_half))
}

/// Principal angles (ascending, radians) between the spans of two
/// orthonormal column sets. Returns `min(dim)` angles.
pub fn principal_angles(a: &CMat, b: &CMat) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Vec::new();
    }
    let (a, b) = if a.ncols() >= b.ncols() {
        (a, b)
    } else {
        (b, a)
    };
    let k = b.ncols();
    // acos alone is inaccurate near 0, so pair cosines with sines
    let projected = a.adjoint() * b;
    let mut cosines = singular_values(&projected);
    cosines.resize(k, 0.0);
    let mut sines = singular_values(&(b - a * &projected));
    sines.resize(k, 0.0);
    sines.reverse();
    let mut angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| s.atan2(c))
        .collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Largest principal angle, or `π/2` if the dimensions differ.
pub fn subspace_distance(a: &CMat, b: &CMat) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    principal_angles(a, b).last().copied().unwrap_or(0.0)
}

/// Solve `A X = B` by LU; singular systems report an SVD condition estimate.
pub fn solve(a: &CMat, b: &CMat) -> Result<CMat, LinalgError> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(LinalgError::Shape(format!(
            "solve: A is {}×{}, B is {}×{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(b.clone());
    }
    check_finite(a)?;
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if condition > 1e14 {
        return Err(LinalgError::Singular { condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(LinalgError::Singular { condition })
}

/// Moore–Penrose pseudo-inverse with relative cutoff.
pub fn pinv(a: &CMat, cutoff: f64) -> CMat {
    if a.is_empty() {
        return CMat::zeros(a.ncols(), a.nrows());
    }
    let d = svd_or_panic(a, false);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(a.ncols(), a.nrows());
    for (i, &s) in d.s.iter().enumerate() {
        if s > cutoff * smax && s > 0.0 {
            out += d.v.column(i) * cr(1.0 / s) * d.u.column(i).adjoint();
        }
    }
    out
}

/// Block diagonal `A ⊕ A ⊕ … ⊕ A` (`copies` times).
pub fn block_diag_repeat(a: &CMat, copies: usize) -> CMat {
    let (r, c) = a.shape();
    let mut out = CMat::zeros(r * copies, c * copies);
    for k in 0..copies {
        out.view_mut((k * r, k * c), (r, c)).copy_from(a);
    }
    out
}

/// `‖A*A − I‖_F`.
pub fn isometry_residual(a: &CMat) -> f64 {
    let k = a.ncols();
    fro(&(a.adjoint() * a - CMat::identity(k, k)))
}
