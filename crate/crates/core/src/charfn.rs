//! Characteristic functions of pure `m`-hypercontractions.
//!
//! `π = j_{m−1}: H → H_{m−1}(𝔹, 𝒟)` is computed in a truncation of degree
//! `N`; all model-space quantities (`π`, `U`, `V`, the basis of `M`) live in
//! hat coordinates of that truncation. The domain `L = 𝒟_T ⊕ M` of `θ` is
//! coordinatized by the orthonormal basis of `𝒟_T` followed by the basis
//! of `M`; the target `𝒟` by the basis of `Im C`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::dilation::{DilationError, DilationMap};
use crate::linalg::{
    cr, fro, hermitian_eigen, isometry_residual, op_norm, singular_values, solve, subspace_basis,
    subspace_distance, svd, CMat, CVec, LinalgError, Tolerances,
};
use crate::modelspace::{kernel, ModelError, TruncatedModelSpace};
use crate::multiindex::{gamma, rho_univariate, IndexSet};
use crate::optuple::{DefectData, OperatorTuple, TupleError};
use crate::realization::{
    multiplier_gram_check, GramCheck, PolyOperatorFunction, RealizationError,
};
use crate::wandering_inner::KmInnerFunction;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CharFnError {
    #[error("tuple is not a pure {m}-hypercontraction: {verdict}")]
    NotPure { m: u32, verdict: String },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Tuple(#[from] TupleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Realization(#[from] Box<RealizationError>),
}

impl From<RealizationError> for CharFnError {
    fn from(e: RealizationError) -> Self {
        CharFnError::Realization(Box::new(e))
    }
}

/// `σ_max θ(0)` above this is reported as needing a finer truncation.
pub const NEAR_ONE: f64 = 1e-3;

/// Residuals of the identities that hold by construction.
#[derive(Debug, Clone, Serialize)]
pub struct CharDataReport {
    pub degree: u32,
    /// `dim H_{m−1}`-truncation, `dim 𝒟_{T*}`, `dim M`, `dim 𝒟_T`.
    pub model_dim: usize,
    pub dts_dim: usize,
    pub m_dim: usize,
    pub dt_dim: usize,
    /// `‖π*π − D²_{T*}‖`.
    pub pi_norm_residual: f64,
    /// `‖U*U − 1‖`.
    pub u_isometry_residual: f64,
    /// `‖V*V − 1‖` and `‖VV* − 1‖`.
    pub v_isometry_residual: f64,
    pub v_coisometry_residual: f64,
    /// `‖Δ₀D_{T*} − C‖`.
    pub delta0_residual: f64,
    /// `‖TT* + π*π − 1‖`: the column `(T*, π)` is an isometry.
    pub column_isometry_residual: f64,
    /// Isometry and co-isometry defects of `[[T*, B], [π, D]]`.
    pub colligation_isometry_residual: f64,
    pub colligation_coisometry_residual: f64,
}

#[derive(Debug, Clone)]
pub struct CharacteristicData {
    pub tuple: OperatorTuple,
    pub defect: DefectData,
    /// Truncated `H_{m−1}(𝔹, 𝒟)`.
    pub space: TruncatedModelSpace,
    /// `π` in hat coordinates, `s × d`.
    pub pi_hat: CMat,
    /// Orthonormal basis of `Im π` (`𝒦`).
    pub k_basis: CMat,
    /// `Q*_{T*} D_{T*}`: `D_{T*}` with values in `𝒟_{T*}`-coordinates.
    pub dts_coords: CMat,
    /// `U: 𝒟_{T*} → 𝒦 ⊂ H_{m−1}`, `s × q`.
    pub u: CMat,
    /// Orthonormal basis of `M`, `s × μ`.
    pub m_basis: CMat,
    /// `V = (U, i_M)`.
    pub v: CMat,
    /// `Δ₀ = ε₀U`, `p × q`.
    pub delta0: CMat,
    /// `T ⊕ 1_M: 𝒟_T ⊕ M → 𝒟_{T*} ⊕ M`.
    pub t_plus: CMat,
    /// `B = (D_T, 0): L → Hⁿ`.
    pub b: CMat,
    /// `D = −V(T ⊕ 1_M): L → H_{m−1}`, hat coordinates.
    pub d: CMat,
    pub report: CharDataReport,
}

fn require_pure(t: &OperatorTuple, m: u32, tol: &Tolerances) -> Result<(), CharFnError> {
    let report = t.classify(m, tol)?;
    if !report.is_pure_hypercontraction() {
        return Err(CharFnError::NotPure {
            m,
            verdict: report.verdict,
        });
    }
    Ok(())
}

fn coisometry_residual(a: &CMat) -> f64 {
    isometry_residual(&a.adjoint())
}

/// `Z = [z₁ 1 … zₙ 1]: Hⁿ → H`.
fn z_row(z: &[Complex64], d: usize) -> CMat {
    let mut out = CMat::zeros(d, d * z.len());
    for (i, &zi) in z.iter().enumerate() {
        for r in 0..d {
            out[(r, i * d + r)] = zi;
        }
    }
    out
}

pub fn char_data(
    t: &OperatorTuple,
    m: u32,
    degree: u32,
    tol: &Tolerances,
) -> Result<CharacteristicData, CharFnError> {
    if m == 0 {
        return Err(CharFnError::Argument("order m must be ≥ 1".into()));
    }
    require_pure(t, m, tol)?;
    let defect = t.defect_data(m, tol)?;
    let pi = DilationMap::build(t, &defect, m - 1, degree)?;
    let space = pi.space().clone();
    let pi_hat = pi.matrix_hat().clone();
    let s = space.dim();
    let d = t.dim();
    let n = t.n();

    let q_star = &defect.d_t_star_basis;
    let q_t = &defect.d_t_basis;
    let dts_coords = q_star.adjoint() * &defect.d_t_star;
    // π*π = D²_{T*}, so the polar factor of π restricted to 𝒟_{T*} is U;
    // dividing by D_{T*} instead loses accuracy on its small singular values
    let u = polar_factor(&pi_hat, tol.rank_cutoff)? * q_star;
    let range = subspace_basis(&u, tol, true);
    let k_basis = range.basis;
    let m_basis = range.complement.expect("complement requested");
    let qd = u.ncols();
    let mu = m_basis.ncols();
    let mut v = CMat::zeros(s, qd + mu);
    v.view_mut((0, 0), (s, qd)).copy_from(&u);
    v.view_mut((0, qd), (s, mu)).copy_from(&m_basis);

    let eps0 = eval_hat(&space, &vec![Complex64::new(0.0, 0.0); n])?;
    let delta0 = &eps0 * &u;

    let r = q_t.ncols();
    let mut t_plus = CMat::zeros(qd + mu, r + mu);
    t_plus
        .view_mut((0, 0), (qd, r))
        .copy_from(&(q_star.adjoint() * t.row() * q_t));
    t_plus
        .view_mut((qd, r), (mu, mu))
        .copy_from(&CMat::identity(mu, mu));
    let mut b = CMat::zeros(n * d, r + mu);
    b.view_mut((0, 0), (n * d, r))
        .copy_from(&(&defect.d_t * q_t));
    let d_op = -(&v * &t_plus);

    let column = stack(&t.column_adjoint(), &pi_hat);
    let second = stack(&b, &d_op);
    let colligation = hstack(&column, &second);

    let report = CharDataReport {
        degree: space.degree(),
        model_dim: s,
        dts_dim: qd,
        m_dim: mu,
        dt_dim: r,
        pi_norm_residual: fro(&(pi_hat.adjoint() * &pi_hat - &defect.d_t_star * &defect.d_t_star)),
        u_isometry_residual: isometry_residual(&u),
        v_isometry_residual: isometry_residual(&v),
        v_coisometry_residual: coisometry_residual(&v),
        delta0_residual: fro(&(&delta0 * &dts_coords - &defect.c_out)),
        column_isometry_residual: isometry_residual(&column),
        colligation_isometry_residual: isometry_residual(&colligation),
        colligation_coisometry_residual: coisometry_residual(&colligation),
    };
    Ok(CharacteristicData {
        tuple: t.clone(),
        defect,
        space,
        pi_hat,
        k_basis,
        dts_coords,
        u,
        m_basis,
        v,
        delta0,
        t_plus,
        b,
        d: d_op,
        report,
    })
}

/// `XY*` from the SVD `A = XΣY*`, keeping singular values above
/// `cutoff·σ_max`.
fn polar_factor(a: &CMat, cutoff: f64) -> Result<CMat, LinalgError> {
    let d = svd(a, false)?;
    let smax = d.s.first().copied().unwrap_or(0.0);
    let mut out = CMat::zeros(a.nrows(), a.ncols());
    for (i, &s) in d.s.iter().enumerate() {
        if s > cutoff * smax && s > 0.0 {
            out += d.u.column(i) * d.v.column(i).adjoint();
        }
    }
    Ok(out)
}

fn stack(top: &CMat, bottom: &CMat) -> CMat {
    let mut out = CMat::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

fn hstack(left: &CMat, right: &CMat) -> CMat {
    let mut out = CMat::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

/// `ε_z` acting on hat coordinates.
pub fn eval_hat(space: &TruncatedModelSpace, z: &[Complex64]) -> Result<CMat, ModelError> {
    let mut e = space.eval_matrix(z)?;
    for c in 0..e.ncols() {
        let w = space.coord_weight(c).sqrt();
        e.column_mut(c).scale_mut(w);
    }
    Ok(e)
}

/// `θ(z)` by both formulas.
#[derive(Debug, Clone)]
pub struct ThetaValue {
    /// `ε_z(D + π(1 − ZT*)^{−1}ZB)`.
    pub value: CMat,
    /// `−Δ₁(z)(T ⊕ 1_M) + Δ₀D_{T*}(1 − ZT*)^{−m}Z(D_T, 0)`.
    pub delta_form: CMat,
    pub cross_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ThetaFunction {
    pub data: CharacteristicData,
}

impl ThetaFunction {
    pub fn new(data: CharacteristicData) -> Self {
        ThetaFunction { data }
    }

    pub fn build(
        t: &OperatorTuple,
        m: u32,
        degree: u32,
        tol: &Tolerances,
    ) -> Result<Self, CharFnError> {
        Ok(ThetaFunction::new(char_data(t, m, degree, tol)?))
    }

    pub fn m(&self) -> u32 {
        self.data.defect.m
    }

    pub fn n(&self) -> usize {
        self.data.tuple.n()
    }

    pub fn input_dim(&self) -> usize {
        self.data.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.data.defect.p()
    }

    fn resolvent(&self, z: &[Complex64]) -> Result<CMat, CharFnError> {
        let t = &self.data.tuple;
        let d = t.dim();
        Ok(solve(
            &(CMat::identity(d, d) - t.z_t_star(z)),
            &CMat::identity(d, d),
        )?)
    }

    fn check(&self, z: &[Complex64]) -> Result<(), CharFnError> {
        if z.len() != self.n() {
            return Err(CharFnError::Argument(format!(
                "point has {} coordinates, expected {}",
                z.len(),
                self.n()
            )));
        }
        crate::modelspace::check_point(z)?;
        Ok(())
    }

    pub fn eval(&self, z: &[Complex64]) -> Result<ThetaValue, CharFnError> {
        self.check(z)?;
        let data = &self.data;
        let d = data.tuple.dim();
        let res = self.resolvent(z)?;
        let zb = z_row(z, d) * &data.b;
        let eps = eval_hat(&data.space, z)?;
        let value = &eps * (&data.d + &data.pi_hat * &res * &zb);
        let delta1 = &eps * &data.v;
        let res_m = (1..self.m()).fold(res.clone(), |acc, _| acc * &res);
        let delta_form = -(delta1 * &data.t_plus) + &data.delta0 * &data.dts_coords * res_m * zb;
        let cross_residual = fro(&(&value - &delta_form));
        Ok(ThetaValue {
            value,
            delta_form,
            cross_residual,
        })
    }

    /// `(1 − TZ*)^{−m} C` restricted to `𝒟`, i.e. `j* K_m(·, z)` on `𝒟`.
    pub fn kernel_image(&self, z: &[Complex64]) -> Result<CMat, CharFnError> {
        let res = self.resolvent(z)?.adjoint();
        let res_m = (1..self.m()).fold(res.clone(), |acc, _| acc * &res);
        Ok(res_m * self.data.defect.c_out.adjoint())
    }

    /// `φ(z) = D + π(1 − ZT*)^{−1}ZB: L → H_{m−1}` (hat coordinates).
    pub fn colligation_value(&self, z: &[Complex64]) -> Result<CMat, CharFnError> {
        self.check(z)?;
        let data = &self.data;
        let res = self.resolvent(z)?;
        Ok(&data.d + &data.pi_hat * res * z_row(z, data.tuple.dim()) * &data.b)
    }

    /// Taylor coefficients of `θ` up to `degree`.
    pub fn taylor(&self, degree: u32) -> Result<PolyOperatorFunction, CharFnError> {
        let data = &self.data;
        let t = &data.tuple;
        let n = t.n();
        let d = t.dim();
        let m = self.m();
        let index = IndexSet::new(n, degree).map_err(TupleError::from)?;
        let (p, q) = (self.output_dim(), self.input_dim());
        let raw_d = data.space.from_hat(&data.d);
        let mut coeffs = vec![CMat::zeros(p, q); index.len()];
        for (pos, alpha) in index.iter().enumerate() {
            if let Some(r) = data.space.block_range(alpha) {
                coeffs[pos] = raw_d.rows(r.start, p).into_owned();
            }
        }
        if degree > 0 && d > 0 {
            let powers = t.powers(degree - 1)?;
            let c_words: Vec<CMat> = (0..powers.index().len())
                .map(|k| &data.defect.c_out * powers.get(k).adjoint())
                .collect();
            let blocks: Vec<CMat> = (0..n).map(|i| data.b.rows(i * d, d).into_owned()).collect();
            for (pos, beta) in index.iter().enumerate().skip(1) {
                let weight = rho_univariate(m, beta.order() - 1).map_err(TupleError::from)? as f64;
                let mut acc = CMat::zeros(p, q);
                for (i, block) in blocks.iter().enumerate() {
                    if let Some(lower) = beta.lowered(i) {
                        let k = powers.index().offset(&lower).unwrap();
                        let g = gamma(&lower).map_err(TupleError::from)? as f64;
                        acc += &c_words[k] * block * cr(g);
                    }
                }
                coeffs[pos] += acc * cr(weight);
            }
        }
        let exact = data.space.degree() <= degree
            && matches!(t.nilpotency_length(degree as usize + 1), Some(l) if l <= degree);
        Ok(PolyOperatorFunction::new(m, n, degree, coeffs, exact)?)
    }
}

pub fn theta_eval(theta: &ThetaFunction, z: &[Complex64]) -> Result<CMat, CharFnError> {
    Ok(theta.eval(z)?.value)
}

/// One `(z, w, x, y)` sample of the kernel identity.
#[derive(Debug, Clone)]
pub struct KernelSample {
    pub z: Vec<Complex64>,
    pub w: Vec<Complex64>,
    pub x: CVec,
    pub y: CVec,
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, len: usize) -> CVec {
    let v = CVec::from_fn(len, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let norm = v.norm();
    if norm > 0.0 {
        v / cr(norm)
    } else {
        v
    }
}

/// Uniform-direction point with radius drawn from `[0, radius)`.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Vec<Complex64> {
    let dir = random_unit(rng, n);
    let r = radius * rng.random::<f64>();
    dir.iter().map(|c| c * r).collect()
}

pub fn random_kernel_samples<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
    count: usize,
    radius: f64,
) -> Vec<KernelSample> {
    (0..count)
        .map(|_| KernelSample {
            z: random_point(rng, n, radius),
            w: random_point(rng, n, radius),
            x: random_unit(rng, p),
            y: random_unit(rng, p),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSampleResidual {
    /// `|K₁⟨θ(w)*x, θ(z)*y⟩ + ⟨(1−TW*)^{−m}Cx, (1−TZ*)^{−m}Cy⟩ − K_m⟨x, y⟩|`.
    pub vector: f64,
    /// The same identity as an operator on `𝒟`, Frobenius norm.
    pub operator: f64,
    /// `‖K₁(z,w)(1 − φ(z)φ(w)*) − π(1−ZT*)^{−1}(1−TW*)^{−1}π*‖`.
    pub factorization: f64,
    /// Cross residual of the two `θ` formulas at `z` and `w`.
    pub theta_cross: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartialIsometryReport {
    pub degree: u32,
    pub samples: Vec<KernelSampleResidual>,
    pub max_residual: f64,
    pub max_operator_residual: f64,
    pub max_factorization_residual: f64,
}

/// Kernel form of `M_θM*_θ + jj* = 1` at the given samples.
pub fn partial_isometry_check(
    theta: &ThetaFunction,
    samples: &[KernelSample],
) -> Result<PartialIsometryReport, CharFnError> {
    let m = theta.m();
    let data = &theta.data;
    let p = theta.output_dim();
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let tz = theta.eval(&s.z)?;
        let tw = theta.eval(&s.w)?;
        let k1 = kernel(1, &s.z, &s.w)?;
        let km = kernel(m, &s.z, &s.w)?;
        let jz = theta.kernel_image(&s.z)?;
        let jw = theta.kernel_image(&s.w)?;
        // ⟨Ax, By⟩ = y* B* A x
        let op =
            &tz.value * tw.value.adjoint() * k1 + jz.adjoint() * &jw - CMat::identity(p, p) * km;
        let vector = (s.y.adjoint() * &op * &s.x)[(0, 0)].norm();

        let phi_z = theta.colligation_value(&s.z)?;
        let phi_w = theta.colligation_value(&s.w)?;
        let sdim = data.space.dim();
        let lhs = (CMat::identity(sdim, sdim) - &phi_z * phi_w.adjoint()) * k1;
        let rz = theta.resolvent(&s.z)?;
        let rw = theta.resolvent(&s.w)?;
        let rhs = &data.pi_hat * rz * rw.adjoint() * data.pi_hat.adjoint();
        out.push(KernelSampleResidual {
            vector,
            operator: fro(&op),
            factorization: fro(&(lhs - rhs)),
            theta_cross: tz.cross_residual.max(tw.cross_residual),
        });
    }
    let max = |f: fn(&KernelSampleResidual) -> f64| out.iter().map(f).fold(0.0, f64::max);
    Ok(PartialIsometryReport {
        degree: data.space.degree(),
        max_residual: max(|r| r.vector),
        max_operator_residual: max(|r| r.operator),
        max_factorization_residual: max(|r| r.factorization),
        samples: out,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendPoint {
    pub degree: u32,
    pub max_residual: f64,
    pub m_dim: usize,
}

/// Kernel-identity residuals along a sequence of truncation degrees.
pub fn degree_trend(
    t: &OperatorTuple,
    m: u32,
    degrees: &[u32],
    samples: &[KernelSample],
    tol: &Tolerances,
) -> Result<Vec<TrendPoint>, CharFnError> {
    degrees
        .iter()
        .map(|&deg| {
            let theta = ThetaFunction::build(t, m, deg, tol)?;
            let report = partial_isometry_check(&theta, samples)?;
            Ok(TrendPoint {
                degree: deg,
                max_residual: report.max_residual,
                m_dim: theta.data.report.m_dim,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PhiVariant {
    /// Orthonormal basis of `K = (Im (T*, π))^⊥` in `Hⁿ ⊕ H_{m−1}`.
    pub k_basis: CMat,
    /// `ρ: L → K` in `K`-coordinates.
    pub rho: CMat,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiReport {
    pub k_dim: usize,
    pub rho_isometry_residual: f64,
    pub rho_coisometry_residual: f64,
    /// Part of `ρ(L)` outside `K`.
    pub rho_range_residual: f64,
    /// `max ‖φ(z)ρ − θ(z)‖` over the points.
    pub agreement_residual: f64,
}

impl PhiVariant {
    /// `φ(z) = ε_z∘𝒟 + C(1 − ZT*)^{−m}Z∘ℬ` in `K`-coordinates.
    pub fn phi(&self, theta: &ThetaFunction, z: &[Complex64]) -> Result<CMat, CharFnError> {
        theta.check(z)?;
        let data = &theta.data;
        let d = data.tuple.dim();
        let nd = data.tuple.n() * d;
        let res = theta.resolvent(z)?;
        let res_m = (1..theta.m()).fold(res.clone(), |acc, _| acc * &res);
        let first = &data.defect.c_out * res_m * z_row(z, d);
        let second = eval_hat(&data.space, z)?;
        let row = hstack(&first, &second);
        debug_assert_eq!(row.ncols(), nd + data.space.dim());
        Ok(row * &self.k_basis)
    }
}

/// `ρ(x, f) = (D_T x, −UTx − f)` and `φ`, checked at `points`.
pub fn phi_variant(
    theta: &ThetaFunction,
    points: &[Vec<Complex64>],
    tol: &Tolerances,
) -> Result<(PhiVariant, PhiReport), CharFnError> {
    let data = &theta.data;
    let column = stack(&data.tuple.column_adjoint(), &data.pi_hat);
    let k_basis = subspace_basis(&column, tol, true)
        .complement
        .expect("complement requested");
    let second = stack(&data.b, &data.d);
    let rho = k_basis.adjoint() * &second;
    let rho_range_residual = fro(&(&second - &k_basis * &rho));
    let variant = PhiVariant { k_basis, rho };
    let mut agreement = 0.0f64;
    for z in points {
        let lhs = variant.phi(theta, z)? * &variant.rho;
        agreement = agreement.max(fro(&(lhs - theta.eval(z)?.value)));
    }
    let report = PhiReport {
        k_dim: variant.k_basis.ncols(),
        rho_isometry_residual: isometry_residual(&variant.rho),
        rho_coisometry_residual: coisometry_residual(&variant.rho),
        rho_range_residual,
        agreement_residual: agreement,
    };
    Ok((variant, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct PureContractionReport {
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    pub purely_contractive: bool,
    /// `σ_max` within [`NEAR_ONE`] of 1: refine the truncation before trusting the verdict.
    pub needs_refinement: bool,
}

pub fn purely_contractive_check(
    theta: &ThetaFunction,
    tol: &Tolerances,
) -> Result<PureContractionReport, CharFnError> {
    let zero = vec![Complex64::new(0.0, 0.0); theta.n()];
    let value = theta.eval(&zero)?.value;
    let singular_values = singular_values(&value);
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    Ok(PureContractionReport {
        purely_contractive: sigma_max <= 1.0 - tol.rank_cutoff,
        needs_refinement: sigma_max > 1.0 - NEAR_ONE,
        sigma_max,
        singular_values,
    })
}

/// PSD check of `[K_m(zᵢ,zⱼ) − K₁(zᵢ,zⱼ)θ(zᵢ)θ(zⱼ)*]`.
pub fn theta_gram_check(
    theta: &ThetaFunction,
    points: &[Vec<Complex64>],
    slack: f64,
) -> Result<GramCheck, CharFnError> {
    let m = theta.m();
    Ok(multiplier_gram_check(points, m, slack, |z| {
        theta.eval(z).map(|v| v.value).map_err(|e| match e {
            CharFnError::Realization(r) => *r,
            other => RealizationError::Argument(other.to_string()),
        })
    })?)
}

/// `−T + D_{T*}(1 − ZT*)^{−1}ZD_T` from `𝒟_T` to `𝒟 = 𝒟_{T*}` (`m = 1`).
pub fn classical_theta(
    data: &DefectData,
    t: &OperatorTuple,
    z: &[Complex64],
) -> Result<CMat, CharFnError> {
    let d = t.dim();
    let res = solve(
        &(CMat::identity(d, d) - t.z_t_star(z)),
        &CMat::identity(d, d),
    )?;
    let full = -t.row() + &data.d_t_star * res * z_row(z, d) * &data.d_t;
    Ok(data.d_basis.adjoint() * full * &data.d_t_basis)
}

#[derive(Debug, Clone, Serialize)]
pub struct RowContractionReport {
    /// `max ‖θ(z) − classical θ(z)‖` over the grid.
    pub classical_residual: f64,
    /// `max ‖W_T(z) − θ(z)|_𝒟̃‖` over the grid.
    pub restriction_residual: f64,
    /// Largest principal angle between `𝒟̃` and the eigenvalue-1 space of
    /// `M*_θM_θ` on constants.
    pub isometric_part_angle: f64,
    pub isometric_part_dim: usize,
    pub dtilde_dim: usize,
    /// The Taylor series of `θ` terminates within `taylor_degree`; otherwise
    /// the isometric part is only a truncated estimate.
    pub series_exact: bool,
}

/// `m = 1` checks: the classical formula, `W_T = θ|_𝒟̃` and
/// `𝒟̃ = {x ∈ 𝒟_T : ‖M_θx‖ = ‖x‖}`. `taylor_degree` truncates `M_θx`.
pub fn row_contraction_check(
    theta: &ThetaFunction,
    inner: &KmInnerFunction,
    points: &[Vec<Complex64>],
    taylor_degree: u32,
    tol: &Tolerances,
) -> Result<RowContractionReport, CharFnError> {
    if theta.m() != 1 || inner.data.m != 1 {
        return Err(CharFnError::Argument(
            "row contraction checks need m = 1".into(),
        ));
    }
    let data = &theta.data;
    let t = &data.tuple;
    // 𝒟̃ in 𝒟_T-coordinates; G = 1 for m = 1
    let embed = data.defect.d_t_basis.adjoint() * &inner.tilde.dtilde;
    let mut classical = 0.0f64;
    let mut restriction = 0.0f64;
    for z in points {
        let value = theta.eval(z)?.value;
        classical = classical.max(fro(&(&value - classical_theta(&data.defect, t, z)?)));
        let w = inner.realization.evaluate(z)?;
        restriction = restriction.max(fro(&(w - value * &embed)));
    }
    let series = theta.taylor(taylor_degree)?;
    let space = TruncatedModelSpace::new(t.n(), 1, theta.output_dim(), taylor_degree)?;
    let gram = space.gram(&series.columns(&space));
    let (values, vectors) = hermitian_eigen(&gram);
    let keep = values.iter().filter(|&&v| v > 1.0 - tol.residual).count();
    let isometric = vectors.columns(0, keep).into_owned();
    Ok(RowContractionReport {
        classical_residual: classical,
        restriction_residual: restriction,
        isometric_part_angle: subspace_distance(&isometric, &embed),
        isometric_part_dim: keep,
        dtilde_dim: embed.ncols(),
        series_exact: series.exact,
    })
}

/// `‖θ(0)‖` as an operator norm, for reports.
pub fn theta_zero_norm(theta: &ThetaFunction) -> Result<f64, CharFnError> {
    let zero = vec![Complex64::new(0.0, 0.0); theta.n()];
    Ok(op_norm(&theta.eval(&zero)?.value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optuple::{fixtures, random};
    use crate::realization::sample_grid;
    use crate::wandering_inner::wt_build;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn fix1_theta_is_the_coordinate() {
        let f = fixtures::fix1();
        let theta = ThetaFunction::build(&f.tuple, 1, 4, &tol()).unwrap();
        assert_eq!(theta.data.report.m_dim, 0);
        assert!((theta.data.delta0[(0, 0)].norm() - 1.0).abs() < 1e-14);
        for z in sample_grid(1, 7, 0.9) {
            let v = theta.eval(&z).unwrap();
            assert_eq!(v.value.shape(), (1, 1));
            // basis signs may differ between 𝒟 and 𝒟_T
            assert!((v.value[(0, 0)].norm() - z[0].norm()).abs() < 1e-14);
            assert!(v.cross_residual < 1e-14);
        }
    }

    #[test]
    fn fix1_kernel_identity_is_algebraic() {
        let f = fixtures::fix1();
        let theta = ThetaFunction::build(&f.tuple, 1, 4, &tol()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = random_kernel_samples(&mut rng, 1, 1, 10, 0.95);
        let report = partial_isometry_check(&theta, &samples).unwrap();
        assert!(report.max_residual < 1e-12, "{report:?}");
        // independent: zw̄/(1−zw̄) + 1 = 1/(1−zw̄)
        for s in &samples {
            let zw = s.z[0] * s.w[0].conj();
            let lhs = zw / (c(1.0, 0.0) - zw) + 1.0;
            assert!((lhs - c(1.0, 0.0) / (c(1.0, 0.0) - zw)).norm() < 1e-12);
        }
    }

    #[test]
    fn fix2_structure() {
        let f = fixtures::fix2();
        let deg = 6;
        let theta = ThetaFunction::build(&f.tuple, 2, deg, &tol()).unwrap();
        let data = &theta.data;
        // π*π = Δ⁽¹⁾ = diag(3/4, 1)
        let gram = data.pi_hat.adjoint() * &data.pi_hat;
        assert!((gram[(0, 0)].re - 0.75).abs() < 1e-12);
        assert!((gram[(1, 1)].re - 1.0).abs() < 1e-12);
        assert!(gram[(0, 1)].norm() < 1e-12);
        assert_eq!(data.report.m_dim, data.report.model_dim - 2);
        assert_eq!(data.report.model_dim, 2 * (deg as usize + 1));
        let r = &data.report;
        for v in [
            r.pi_norm_residual,
            r.u_isometry_residual,
            r.v_isometry_residual,
            r.v_coisometry_residual,
            r.delta0_residual,
            r.column_isometry_residual,
            r.colligation_isometry_residual,
            r.colligation_coisometry_residual,
        ] {
            assert!(v < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn fix2_trend_decreases() {
        let f = fixtures::fix2();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = random_kernel_samples(&mut rng, 1, 2, 10, 0.7);
        let trend = degree_trend(&f.tuple, 2, &[4, 6, 8, 10], &samples, &tol()).unwrap();
        for pair in trend.windows(2) {
            assert!(
                pair[1].max_residual <= pair[0].max_residual * 1.1,
                "{trend:?}"
            );
        }
        assert!(trend[3].max_residual < 1e-2, "{trend:?}");
    }

    #[test]
    fn fix3_values() {
        let f = fixtures::fix3();
        let theta = ThetaFunction::build(&f.tuple, 1, 4, &tol()).unwrap();
        assert_eq!(theta.data.report.m_dim, 0);
        assert_eq!(theta.input_dim(), 2);
        let pc = purely_contractive_check(&theta, &tol()).unwrap();
        assert!((pc.sigma_max - 0.5f64.sqrt()).abs() < 1e-12, "{pc:?}");
        assert!(pc.purely_contractive && !pc.needs_refinement);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = random_kernel_samples(&mut rng, 2, 1, 25, 0.95);
        let report = partial_isometry_check(&theta, &samples).unwrap();
        assert!(report.max_residual < 1e-10, "{report:?}");
        assert!(report.max_factorization_residual < 1e-10, "{report:?}");
        let (_, phi) = phi_variant(&theta, &sample_grid(2, 10, 0.9), &tol()).unwrap();
        assert!(phi.rho_isometry_residual < 1e-10, "{phi:?}");
        assert!(phi.agreement_residual < 1e-10, "{phi:?}");
    }

    #[test]
    fn fix1_phi_is_the_coordinate() {
        let f = fixtures::fix1();
        let theta = ThetaFunction::build(&f.tuple, 1, 0, &tol()).unwrap();
        let z = vec![c(0.3, -0.4)];
        let (variant, report) = phi_variant(&theta, std::slice::from_ref(&z), &tol()).unwrap();
        assert_eq!(report.k_dim, 1);
        let phi = variant.phi(&theta, &z).unwrap();
        assert!((phi[(0, 0)].norm() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn theta_zero_on_m_part_is_minus_evaluation() {
        let f = fixtures::fix2();
        let theta = ThetaFunction::build(&f.tuple, 2, 5, &tol()).unwrap();
        let zero = vec![c(0.0, 0.0)];
        let value = theta.eval(&zero).unwrap().value;
        let r = theta.data.report.dt_dim;
        let e0 = eval_hat(&theta.data.space, &zero).unwrap();
        let expected = -(e0 * &theta.data.m_basis);
        let got = value.columns(r, theta.data.report.m_dim).into_owned();
        assert!(fro(&(got - expected)) < 1e-13);
    }

    #[test]
    fn classical_formula_and_restriction_for_fix3() {
        let f = fixtures::fix3();
        let theta = ThetaFunction::build(&f.tuple, 1, 0, &tol()).unwrap();
        let inner = wt_build(&f.tuple, 1, 30, &tol()).unwrap();
        let report =
            row_contraction_check(&theta, &inner, &sample_grid(2, 20, 0.9), 40, &tol()).unwrap();
        assert!(report.classical_residual < 1e-12, "{report:?}");
        assert!(report.restriction_residual < 1e-12, "{report:?}");
        assert_eq!(report.isometric_part_dim, report.dtilde_dim);
        assert!(report.isometric_part_angle < 1e-6, "{report:?}");
    }

    #[test]
    fn random_row_contractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.random_range(1..=3);
            let dim = rng.random_range(1..=4);
            let t = random::pure_hypercontraction(&mut rng, n, dim, 1, true, &tol());
            let len = t.nilpotency_length(64).unwrap();
            let theta = ThetaFunction::build(&t, 1, 0, &tol()).unwrap();
            let inner = wt_build(&t, 1, len + 2, &tol()).unwrap();
            let report =
                row_contraction_check(&theta, &inner, &sample_grid(n, 10, 0.9), len + 2, &tol())
                    .unwrap();
            assert!(report.classical_residual < 1e-10, "{report:?}");
            assert!(report.restriction_residual < 1e-10, "{report:?}");
            assert_eq!(report.isometric_part_dim, report.dtilde_dim, "{report:?}");
            assert!(report.isometric_part_angle < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn random_nilpotent_kernel_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..4 {
            let n = rng.random_range(1..=2);
            let dim = rng.random_range(1..=3);
            let m = rng.random_range(1..=3);
            let t = random::pure_hypercontraction(&mut rng, n, dim, m, true, &tol());
            let len = t.nilpotency_length(64).unwrap();
            let theta = ThetaFunction::build(&t, m, len + 2, &tol()).unwrap();
            let r = &theta.data.report;
            assert!(r.colligation_isometry_residual < 1e-10, "{r:?}");
            assert!(r.colligation_coisometry_residual < 1e-10, "{r:?}");
            let samples = random_kernel_samples(&mut rng, n, theta.output_dim(), 5, 0.5);
            let report = partial_isometry_check(&theta, &samples).unwrap();
            assert!(report.max_factorization_residual < 1e-10, "{report:?}");
            for s in &report.samples {
                assert!(
                    s.theta_cross < 1e-10,
                    "m={m} n={n} dim={dim} len={len} {r:?} {s:?}"
                );
            }
            let pc = purely_contractive_check(&theta, &tol()).unwrap();
            assert!(pc.sigma_max < 1.0, "{pc:?}");
            let gram = theta_gram_check(&theta, &sample_grid(n, 6, 0.8), 1e-8).unwrap();
            assert!(gram.psd, "{gram:?}");
        }
    }

    #[test]
    fn taylor_matches_evaluation() {
        let f = fixtures::fix2();
        let theta = ThetaFunction::build(&f.tuple, 2, 6, &tol()).unwrap();
        let series = theta.taylor(6).unwrap();
        for z in sample_grid(1, 5, 0.8) {
            let direct = theta.eval(&z).unwrap().value;
            assert!(fro(&(series.evaluate(&z).unwrap() - direct)) < 1e-12);
        }
    }

    #[test]
    fn non_pure_tuples_are_refused() {
        let t = OperatorTuple::new(vec![CMat::identity(1, 1)], &tol()).unwrap();
        assert!(matches!(
            ThetaFunction::build(&t, 1, 2, &tol()),
            Err(CharFnError::NotPure { .. })
        ));
    }
}
