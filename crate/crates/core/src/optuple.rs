//! Commuting operator tuples and their defect operators.
//!
//! For `T = (T₁,…,Tₙ)` acting on `H = ℂ^d` we use the completely positive
//! map `σ_T(X) = Σ TᵢXTᵢ*` and the defects `Δ⁽ᵏ⁾ = (1 − σ_T)ᵏ(1)`. The row
//! operator `T: Hⁿ → H` is the `d × nd` matrix `[T₁ … Tₙ]`; the column
//! operator `T*: H → Hⁿ` is its adjoint.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{
    self, cr, fro, hermitian_eigen, is_psd, op_norm, psd_sqrt, subspace_basis, CMat, LinalgError,
    Tolerances,
};
use crate::multiindex::{binomial, IndexSet, MultiIndexError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TupleError {
    #[error("tuple is not commuting: max ‖TᵢTⱼ − TⱼTᵢ‖ = {residual:e}")]
    NonCommuting { residual: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("tuple is not an {m}-hypercontraction: Δ^({k}) has eigenvalue {eigenvalue:e}")]
    NotHypercontraction { m: u32, k: u32, eigenvalue: f64 },
    #[error("tuple is not numerically pure: ‖σ^K(1)‖ = {last_decay:e} after K = {steps}")]
    NotPure { steps: usize, last_decay: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    MultiIndex(#[from] MultiIndexError),
}

/// `σ^K(1)` counts as zero (all words of length `K` vanish) when its norm is
/// at roundoff level and it collapsed from the previous step by more than
/// [`NILPOTENT_DROP`]; geometric decay never drops that fast in one step.
pub const NILPOTENT_FLOOR: f64 = 1e-13;
pub const NILPOTENT_DROP: f64 = 1e-6;

fn collapsed(prev: f64, v: f64) -> bool {
    v <= NILPOTENT_FLOOR && v <= NILPOTENT_DROP * prev
}

/// Default cap on the number of `σ_T` iterations used to certify purity.
pub const DEFAULT_PURITY_STEPS: usize = 200;

/// A commuting tuple of `d × d` complex matrices.
#[derive(Debug, Clone)]
pub struct OperatorTuple {
    mats: Vec<CMat>,
    dim: usize,
    commutator_residual: f64,
}

impl OperatorTuple {
    pub fn new(mats: Vec<CMat>, tol: &Tolerances) -> Result<Self, TupleError> {
        if mats.is_empty() {
            return Err(TupleError::Argument(
                "a tuple needs at least one operator".into(),
            ));
        }
        let dim = mats[0].nrows();
        for (i, t) in mats.iter().enumerate() {
            if t.nrows() != dim || t.ncols() != dim {
                return Err(TupleError::Argument(format!(
                    "operator {i} is {}×{}, expected {dim}×{dim}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            linalg::check_finite(t)?;
        }
        let mut residual = 0.0f64;
        for i in 0..mats.len() {
            for j in i + 1..mats.len() {
                residual = residual.max(fro(&(&mats[i] * &mats[j] - &mats[j] * &mats[i])));
            }
        }
        if residual > tol.residual {
            return Err(TupleError::NonCommuting { residual });
        }
        Ok(OperatorTuple {
            mats,
            dim,
            commutator_residual: residual,
        })
    }

    pub fn n(&self) -> usize {
        self.mats.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mat(&self, i: usize) -> &CMat {
        &self.mats[i]
    }

    pub fn mats(&self) -> &[CMat] {
        &self.mats
    }

    pub fn commutator_residual(&self) -> f64 {
        self.commutator_residual
    }

    pub fn scaled(&self, s: f64) -> OperatorTuple {
        OperatorTuple {
            mats: self.mats.iter().map(|t| t * cr(s)).collect(),
            dim: self.dim,
            commutator_residual: self.commutator_residual * s * s,
        }
    }

    /// Row operator `[T₁ … Tₙ]: Hⁿ → H`.
    pub fn row(&self) -> CMat {
        let d = self.dim;
        let mut out = CMat::zeros(d, d * self.n());
        for (i, t) in self.mats.iter().enumerate() {
            out.view_mut((0, i * d), (d, d)).copy_from(t);
        }
        out
    }

    /// Column operator `T*: H → Hⁿ`, `h ↦ (Tᵢ*h)ᵢ`.
    pub fn column_adjoint(&self) -> CMat {
        self.row().adjoint()
    }

    /// Norm of the row operator.
    pub fn row_norm(&self) -> f64 {
        op_norm(&self.row())
    }

    /// `ZT* = Σ zᵢTᵢ*`.
    pub fn z_t_star(&self, z: &[Complex64]) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for (t, &zi) in self.mats.iter().zip(z) {
            out += t.adjoint() * zi;
        }
        out
    }

    /// `TW* = Σ w̄ᵢTᵢ`.
    pub fn t_w_star(&self, w: &[Complex64]) -> CMat {
        let mut out = CMat::zeros(self.dim, self.dim);
        for (t, &wi) in self.mats.iter().zip(w) {
            out += t * wi.conj();
        }
        out
    }

    /// `σ_T(X) = Σ TᵢXTᵢ*`.
    pub fn sigma_apply(&self, x: &CMat) -> Result<CMat, TupleError> {
        if x.nrows() != self.dim || x.ncols() != self.dim {
            return Err(TupleError::Argument(format!(
                "σ_T expects a {d}×{d} matrix, got {}×{}",
                x.nrows(),
                x.ncols(),
                d = self.dim
            )));
        }
        let mut out = CMat::zeros(self.dim, self.dim);
        for t in &self.mats {
            out += t * x * t.adjoint();
        }
        Ok(out)
    }

    /// The words `T^α` for every `|α| ≤ max_order`.
    pub fn powers(&self, max_order: u32) -> Result<TuplePowers, TupleError> {
        let index = IndexSet::new(self.n(), max_order)?;
        let mut mats: Vec<CMat> = Vec::with_capacity(index.len());
        for alpha in index.iter() {
            if alpha.is_zero() {
                mats.push(CMat::identity(self.dim, self.dim));
                continue;
            }
            let i = alpha.entries().iter().position(|&a| a > 0).unwrap();
            let prev = index.offset(&alpha.lowered(i).unwrap()).unwrap();
            let next = &self.mats[i] * &mats[prev];
            mats.push(next);
        }
        Ok(TuplePowers { index, mats })
    }

    /// `Δ⁽ᵏ⁾` by iterating `X ↦ X − σ_T(X)` from `X = 1`.
    pub fn defect(&self, k: u32) -> CMat {
        let mut x = CMat::identity(self.dim, self.dim);
        for _ in 0..k {
            let s = self.sigma_apply(&x).expect("shape is fixed");
            x -= s;
        }
        x
    }

    /// `Δ⁽ᵏ⁾` from the alternating multinomial sum
    /// `Σⱼ (−1)ʲ binom(k,j) Σ_{|α|=j} γ_α T^α T^{*α}`.
    pub fn defect_multinomial(&self, k: u32) -> Result<CMat, TupleError> {
        let powers = self.powers(k)?;
        let mut out = CMat::zeros(self.dim, self.dim);
        for j in 0..=k {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let coeff = sign * binomial(k as u64, j as u64).unwrap() as f64;
            out += powers.gamma_sum(j)? * cr(coeff);
        }
        Ok(out)
    }

    /// `Δ⁽ᵏ⁾` computed both ways; returns the iterate and the disagreement.
    pub fn defect_checked(&self, k: u32) -> Result<(CMat, f64), TupleError> {
        let iterate = self.defect(k);
        let sum = self.defect_multinomial(k)?;
        let residual = fro(&(&iterate - &sum));
        Ok((iterate, residual))
    }

    /// `Σ_{k<m} Δ⁽ᵏ⁾` (the metric `G` of `H̃`).
    pub fn defect_sum(&self, m: u32) -> CMat {
        let mut g = CMat::zeros(self.dim, self.dim);
        let mut x = CMat::identity(self.dim, self.dim);
        for _ in 0..m {
            g += &x;
            let s = self.sigma_apply(&x).expect("shape is fixed");
            x -= s;
        }
        g
    }

    /// `Σ_{j<m} (−1)ʲ binom(m,j+1) Σ_{|α|=j} γ_α T^αT^{*α}`.
    pub fn alternating_defect_sum(&self, m: u32) -> Result<CMat, TupleError> {
        let powers = self.powers(m.saturating_sub(1))?;
        let mut out = CMat::zeros(self.dim, self.dim);
        for j in 0..m {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let coeff = sign * binomial(m as u64, j as u64 + 1).unwrap() as f64;
            out += powers.gamma_sum(j)? * cr(coeff);
        }
        Ok(out)
    }

    /// Decay series `‖σ^K(1)‖` for `K = 1..` until it drops below
    /// `purity_decay` or `max_steps` is reached.
    pub fn purity(&self, tol: &Tolerances, max_steps: usize) -> PurityReport {
        let mut x = CMat::identity(self.dim, self.dim);
        let mut decay = Vec::new();
        let mut certified_at = None;
        let mut nilpotency_length = None;
        for k in 1..=max_steps {
            x = self.sigma_apply(&x).expect("shape is fixed");
            x = linalg::hermitian_part(&x);
            let v = hermitian_eigen(&x)
                .0
                .first()
                .copied()
                .unwrap_or(0.0)
                .max(0.0);
            let prev = decay.last().copied().unwrap_or(1.0);
            decay.push(v);
            if collapsed(prev, v) {
                nilpotency_length = Some(k as u32);
            }
            if v <= tol.purity_decay {
                certified_at = Some(k);
                break;
            }
        }
        PurityReport {
            pure: certified_at.is_some(),
            certified_at,
            nilpotency_length,
            decay,
        }
    }

    /// Smallest `K ≤ max_steps` with `σ^K(1) = 0`, i.e. every word of
    /// length `K` vanishes.
    pub fn nilpotency_length(&self, max_steps: usize) -> Option<u32> {
        let mut x = CMat::identity(self.dim, self.dim);
        let mut prev = 1.0;
        for k in 1..=max_steps {
            x = self.sigma_apply(&x).expect("shape is fixed");
            let v = op_norm(&x);
            if collapsed(prev, v) {
                return Some(k as u32);
            }
            prev = v;
        }
        None
    }

    /// Positivity of every defect up to order `m`, and purity.
    pub fn classify(&self, m: u32, tol: &Tolerances) -> Result<ClassificationReport, TupleError> {
        if m == 0 {
            return Err(TupleError::Argument("order m must be ≥ 1".into()));
        }
        let mut defects = Vec::with_capacity(m as usize + 1);
        let mut mats = Vec::with_capacity(m as usize + 1);
        for k in 0..=m {
            let (delta, route_residual) = self.defect_checked(k)?;
            let (psd, min_eig) = is_psd(&delta, tol);
            let eigenvalues = hermitian_eigen(&delta).0;
            defects.push(DefectOrderReport {
                k,
                eigenvalues,
                min_eigenvalue: min_eig,
                psd,
                route_residual,
            });
            mats.push(delta);
        }
        let all_orders = defects.iter().all(|d| d.psd);
        let endpoint_orders = defects[1].psd && defects[m as usize].psd;
        // 0 ⪯ Δ⁽ᵐ⁾ ⪯ … ⪯ Δ⁽¹⁾ ⪯ Δ⁽⁰⁾ = 1
        let mut chain_monotone = true;
        for k in 1..=m as usize {
            let gap = &mats[k - 1] - &mats[k];
            chain_monotone &= is_psd(&gap, tol).0;
        }
        let purity = self.purity(tol, DEFAULT_PURITY_STEPS);
        let verdict = if !all_orders {
            if endpoint_orders {
                format!("Δ^(1) and Δ^({m}) are PSD but an intermediate defect is not")
            } else {
                format!("not an {m}-hypercontraction")
            }
        } else {
            let kind = if m == 1 {
                "row contraction".to_string()
            } else {
                format!("{m}-hypercontraction")
            };
            match (purity.nilpotency_length, purity.certified_at) {
                (Some(l), _) => format!("{kind}, pure (nilpotent, K={l})"),
                (None, Some(k)) => format!("{kind}, numerically pure up to K={k}"),
                _ => format!("{kind}, not certified pure"),
            }
        };
        Ok(ClassificationReport {
            m,
            n: self.n(),
            dim: self.dim,
            commutator_residual: self.commutator_residual,
            defects,
            hypercontraction: all_orders,
            endpoint_definition: endpoint_orders,
            orders_disagree: all_orders != endpoint_orders,
            chain_monotone,
            purity,
            verdict,
        })
    }

    /// Defect data of order `m`: `Δ⁽⁰⁾…Δ⁽ᵐ⁾`, `C`, `𝒟`, `D_T`, `D_{T*}`, `G`.
    pub fn defect_data(&self, m: u32, tol: &Tolerances) -> Result<DefectData, TupleError> {
        if m == 0 {
            return Err(TupleError::Argument("order m must be ≥ 1".into()));
        }
        let d = self.dim;
        let n = self.n();
        let defects: Vec<CMat> = (0..=m).map(|k| self.defect(k)).collect();
        for (k, delta) in defects.iter().enumerate() {
            let (ok, lowest) = is_psd(delta, tol);
            if !ok {
                return Err(TupleError::NotHypercontraction {
                    m,
                    k: k as u32,
                    eigenvalue: lowest,
                });
            }
        }
        let c = psd_sqrt(&defects[m as usize], tol)?;
        let d_basis = subspace_basis(&c, tol, false).basis;
        let c_out = d_basis.adjoint() * &c;
        let row = self.row();
        let d_t = psd_sqrt(&(CMat::identity(n * d, n * d) - row.adjoint() * &row), tol)?;
        let d_t_star = psd_sqrt(&(CMat::identity(d, d) - &row * row.adjoint()), tol)?;
        let d_t_basis = subspace_basis(&d_t, tol, false).basis;
        let d_t_star_basis = subspace_basis(&d_t_star, tol, false).basis;
        let g = defects[..m as usize]
            .iter()
            .fold(CMat::zeros(d, d), |acc, x| acc + x);
        Ok(DefectData {
            m,
            defects,
            c,
            d_basis,
            c_out,
            d_t,
            d_t_basis,
            d_t_star,
            d_t_star_basis,
            g,
        })
    }
}

/// The words `T^α`, indexed by graded-lex position.
#[derive(Debug, Clone)]
pub struct TuplePowers {
    index: IndexSet,
    mats: Vec<CMat>,
}

impl TuplePowers {
    pub fn index(&self) -> &IndexSet {
        &self.index
    }

    pub fn get(&self, k: usize) -> &CMat {
        &self.mats[k]
    }

    /// `Σ_{|α|=j} γ_α T^α T^{*α}` (which equals `σ_T^j(1)`).
    pub fn gamma_sum(&self, j: u32) -> Result<CMat, TupleError> {
        let d = self.mats[0].nrows();
        let mut out = CMat::zeros(d, d);
        for pos in self.index.grade_range(j) {
            let g = crate::multiindex::gamma(self.index.get(pos))? as f64;
            let w = &self.mats[pos];
            out += w * w.adjoint() * cr(g);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DefectOrderReport {
    pub k: u32,
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub psd: bool,
    /// Disagreement between the iterated and the multinomial computation.
    pub route_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PurityReport {
    pub pure: bool,
    pub certified_at: Option<usize>,
    pub nilpotency_length: Option<u32>,
    pub decay: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub m: u32,
    pub n: usize,
    pub dim: usize,
    pub commutator_residual: f64,
    pub defects: Vec<DefectOrderReport>,
    /// All `Δ⁽ᵏ⁾`, `k ≤ m`, are PSD.
    pub hypercontraction: bool,
    /// Only `Δ⁽¹⁾` and `Δ⁽ᵐ⁾` are PSD-checked.
    pub endpoint_definition: bool,
    pub orders_disagree: bool,
    pub chain_monotone: bool,
    pub purity: PurityReport,
    pub verdict: String,
}

impl ClassificationReport {
    pub fn is_pure_hypercontraction(&self) -> bool {
        self.hypercontraction && self.purity.pure
    }
}

/// Defect data of an `m`-hypercontraction.
///
/// `𝒟 = range C` is represented through the orthonormal basis `d_basis`
/// (`d × p`); `c_out = d_basisᴴ·C` is `C` viewed as a map `H → 𝒟`.
#[derive(Debug, Clone)]
pub struct DefectData {
    pub m: u32,
    pub defects: Vec<CMat>,
    pub c: CMat,
    pub d_basis: CMat,
    pub c_out: CMat,
    pub d_t: CMat,
    pub d_t_basis: CMat,
    pub d_t_star: CMat,
    pub d_t_star_basis: CMat,
    pub g: CMat,
}

impl DefectData {
    pub fn p(&self) -> usize {
        self.d_basis.ncols()
    }

    pub fn delta(&self, k: u32) -> &CMat {
        &self.defects[k as usize]
    }
}

/// Reference tuples shared by the test suites.
pub mod fixtures {
    use super::*;

    #[derive(Debug, Clone)]
    pub struct Fixture {
        pub name: &'static str,
        pub tuple: OperatorTuple,
        pub m: u32,
    }

    fn build(name: &'static str, mats: Vec<CMat>, m: u32) -> Fixture {
        Fixture {
            name,
            tuple: OperatorTuple::new(mats, &Tolerances::default()).expect("fixture commutes"),
            m,
        }
    }

    /// `n = 1, m = 1, H = ℂ, T = 0`.
    pub fn fix1() -> Fixture {
        build("FIX1", vec![CMat::zeros(1, 1)], 1)
    }

    /// `n = 1, m = 2, H = ℂ², T = [[0, 1/2], [0, 0]]`.
    pub fn fix2() -> Fixture {
        let mut t = CMat::zeros(2, 2);
        t[(0, 1)] = cr(0.5);
        build("FIX2", vec![t], 2)
    }

    /// `n = 2, m = 1, H = ℂ, T = (1/2, 1/2)`.
    pub fn fix3() -> Fixture {
        build(
            "FIX3",
            vec![
                CMat::from_element(1, 1, cr(0.5)),
                CMat::from_element(1, 1, cr(0.5)),
            ],
            1,
        )
    }

    pub fn all() -> Vec<Fixture> {
        vec![fix1(), fix2(), fix3()]
    }
}

/// Random commuting tuples for property tests.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        })
    }

    pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMat {
        gaussian_matrix(rng, d, d).qr().q()
    }

    fn polynomial(base: &CMat, coeffs: &[Complex64]) -> CMat {
        let d = base.nrows();
        let mut out = CMat::zeros(d, d);
        let mut power = CMat::identity(d, d);
        for &c in coeffs {
            out += &power * c;
            power = &power * base;
        }
        out
    }

    fn random_coeffs<R: Rng + ?Sized>(rng: &mut R, len: usize, constant: bool) -> Vec<Complex64> {
        (0..len)
            .map(|k| {
                if k == 0 && !constant {
                    Complex64::new(0.0, 0.0)
                } else {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re, im)
                }
            })
            .collect()
    }

    /// `Tᵢ = pᵢ(A)` for a random `A`; nilpotent when `A` is strictly upper
    /// triangular and the `pᵢ` have no constant term. The result is
    /// conjugated by a random unitary.
    pub fn commuting_tuple<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        dim: usize,
        nilpotent: bool,
    ) -> Vec<CMat> {
        let mut a = gaussian_matrix(rng, dim, dim);
        if nilpotent {
            for r in 0..dim {
                for c in 0..=r {
                    a[(r, c)] = cr(0.0);
                }
            }
        }
        let u = random_unitary(rng, dim);
        let degree = dim.clamp(2, 3);
        (0..n)
            .map(|_| {
                let coeffs = random_coeffs(rng, degree, !nilpotent);
                &u * polynomial(&a, &coeffs) * u.adjoint()
            })
            .collect()
    }

    /// `A ⊗ 1` and `1 ⊗ B` style tuples on `ℂ^{a} ⊗ ℂ^{b}`; these are not
    /// polynomials in a single matrix.
    pub fn tensor_tuple<R: Rng + ?Sized>(rng: &mut R, n: usize, a: usize, b: usize) -> Vec<CMat> {
        let x = gaussian_matrix(rng, a, a);
        let y = gaussian_matrix(rng, b, b);
        let ia = CMat::identity(a, a);
        let ib = CMat::identity(b, b);
        let left = x.kronecker(&ib);
        let right = ia.kronecker(&y);
        (0..n)
            .map(|_| {
                let c = random_coeffs(rng, 3, true);
                &left * c[0] + &right * c[1] + &left * &right * c[2] * cr(0.3)
            })
            .collect()
    }

    /// Random pure `m`-hypercontraction: scale a random commuting tuple to
    /// row norm `s ∈ [s_lo, s_hi]` and reject until every `Δ⁽ᵏ⁾`, `k ≤ m`,
    /// is PSD and the tuple is numerically pure.
    pub fn pure_hypercontraction<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        dim: usize,
        m: u32,
        nilpotent: bool,
        tol: &Tolerances,
    ) -> OperatorTuple {
        loop {
            let mats = if !nilpotent && dim == 4 && rng.random_bool(0.5) {
                tensor_tuple(rng, n, 2, 2)
            } else {
                commuting_tuple(rng, n, dim, nilpotent)
            };
            let Ok(t) = OperatorTuple::new(
                mats,
                &Tolerances {
                    residual: 1e-9,
                    ..*tol
                },
            ) else {
                continue;
            };
            let norm = t.row_norm();
            if norm < 1e-12 {
                // the only nilpotent 1×1 tuple is zero
                if nilpotent && dim == 1 {
                    return t;
                }
                continue;
            }
            let s: f64 = rng.random_range(0.35..0.85);
            let t = t.scaled(s / norm);
            let Ok(report) = t.classify(m, tol) else {
                continue;
            };
            if report.is_pure_hypercontraction() {
                return t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> CMat {
        CMat::from_diagonal(&linalg::CVec::from_iterator(
            v.len(),
            v.iter().map(|&x| cr(x)),
        ))
    }

    fn assert_close(a: &CMat, b: &CMat, eps: f64) {
        let r = fro(&(a - b));
        assert!(r <= eps, "residual {r:e} > {eps:e}\n{a}\n{b}");
    }

    #[test]
    fn sigma_on_fixtures() {
        let id1 = CMat::identity(1, 1);
        assert_close(
            &fix1().tuple.sigma_apply(&id1).unwrap(),
            &CMat::zeros(1, 1),
            0.0,
        );
        assert_close(
            &fix2().tuple.sigma_apply(&CMat::identity(2, 2)).unwrap(),
            &diag(&[0.25, 0.0]),
            1e-15,
        );
        assert_close(
            &fix3().tuple.sigma_apply(&id1).unwrap(),
            &diag(&[0.5]),
            1e-15,
        );
        assert!(matches!(
            fix1().tuple.sigma_apply(&CMat::identity(2, 2)),
            Err(TupleError::Argument(_))
        ));
    }

    #[test]
    fn defects_on_fixtures() {
        for k in 0..5 {
            assert_close(&fix1().tuple.defect(k), &CMat::identity(1, 1), 0.0);
        }
        let t = fix2().tuple;
        assert_close(&t.defect(1), &diag(&[0.75, 1.0]), 1e-15);
        assert_close(&t.defect(2), &diag(&[0.5, 1.0]), 1e-15);
        let (_, res) = t.defect_checked(3).unwrap();
        assert!(res < 1e-14);
    }

    #[test]
    fn non_commuting_tuple_is_rejected() {
        let mut a = CMat::zeros(2, 2);
        a[(0, 1)] = cr(1.0);
        let b = a.adjoint();
        assert!(matches!(
            OperatorTuple::new(vec![a, b], &Tolerances::default()),
            Err(TupleError::NonCommuting { .. })
        ));
    }

    #[test]
    fn classify_fixtures() {
        let tol = Tolerances::default();
        let r1 = fix1().tuple.classify(1, &tol).unwrap();
        assert!(r1.hypercontraction && r1.purity.pure);
        assert_eq!(r1.purity.certified_at, Some(1));
        assert_eq!(r1.purity.nilpotency_length, Some(1));
        assert_eq!(r1.purity.decay[0], 0.0);

        let r2 = fix2().tuple.classify(2, &tol).unwrap();
        assert!(r2.hypercontraction);
        assert_eq!(r2.purity.nilpotency_length, Some(2));
        assert_eq!(r2.verdict, "2-hypercontraction, pure (nilpotent, K=2)");

        let r3 = fix3().tuple.classify(1, &tol).unwrap();
        assert!(r3.hypercontraction && r3.purity.pure);
        for (k, v) in r3.purity.decay.iter().enumerate() {
            assert!((v - 0.5f64.powi(k as i32 + 1)).abs() < 1e-15);
        }
        assert_eq!(r3.purity.nilpotency_length, None);
    }

    #[test]
    fn isometry_is_not_pure() {
        let t = OperatorTuple::new(vec![CMat::identity(1, 1)], &Tolerances::default()).unwrap();
        let r = t.classify(1, &Tolerances::default()).unwrap();
        assert!(r.hypercontraction);
        assert!(!r.purity.pure);
        assert_eq!(r.purity.decay.len(), DEFAULT_PURITY_STEPS);
    }

    #[test]
    fn intermediate_order_disagreement_is_surfaced() {
        // n = 1, T = t·1 with t² = 1.5: Δ¹ < 0 and Δ² = (1 − 1.5)² > 0
        let t = OperatorTuple::new(
            vec![CMat::identity(1, 1) * cr(1.5f64.sqrt())],
            &Tolerances::default(),
        )
        .unwrap();
        let r = t.classify(2, &Tolerances::default()).unwrap();
        assert!(!r.hypercontraction);
        assert!(!r.endpoint_definition);
        assert!(t.defect_data(2, &Tolerances::default()).is_err());
    }

    #[test]
    fn defect_data_on_fixtures() {
        let tol = Tolerances::default();
        let d1 = fix1().tuple.defect_data(1, &tol).unwrap();
        assert_close(&d1.c, &CMat::identity(1, 1), 1e-15);
        assert_eq!(d1.p(), 1);
        assert_close(&d1.g, &CMat::identity(1, 1), 0.0);

        let d2 = fix2().tuple.defect_data(2, &tol).unwrap();
        assert_close(&d2.c, &diag(&[0.5f64.sqrt(), 1.0]), 1e-14);
        assert_close(&d2.g, &diag(&[1.75, 2.0]), 1e-14);
        assert_close(&(d2.c_out.adjoint() * &d2.c_out), d2.delta(2), 1e-14);

        let d3 = fix3().tuple.defect_data(1, &tol).unwrap();
        assert_close(&d3.c, &diag(&[0.5f64.sqrt()]), 1e-14);
        assert_close(&d3.d_t_star, &diag(&[0.5f64.sqrt()]), 1e-14);
        let (vals, vecs) = hermitian_eigen(&d3.d_t);
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 0.5f64.sqrt()).abs() < 1e-14);
        // top eigenvector ∝ (1, −1)
        assert!((vecs[(0, 0)] + vecs[(1, 0)]).norm() < 1e-12);
        assert_eq!(d3.d_t_basis.ncols(), 2);
    }

    #[test]
    fn defect_sum_identity_random() {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..12 {
            let n = 1 + trial % 3;
            let m = 1 + (trial % 4) as u32;
            let t =
                random::pure_hypercontraction(&mut rng, n, 2 + trial % 4, m, trial % 2 == 0, &tol);
            let lhs = t.defect_sum(m);
            let rhs = t.alternating_defect_sum(m).unwrap();
            assert!(fro(&(&lhs - &rhs)) < 1e-10);
            // T̃T̃* = 1 − Δ⁽ᵐ⁾ with T̃ᵢ = TᵢG
            let ttilde = t.sigma_apply(&lhs).unwrap();
            assert_close(
                &ttilde,
                &(CMat::identity(t.dim(), t.dim()) - t.defect(m)),
                1e-10,
            );
            let report = t.classify(m, &tol).unwrap();
            assert!(report.chain_monotone);
        }
    }

    #[test]
    fn nilpotent_generator_is_nilpotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random::pure_hypercontraction(&mut rng, 3, 4, 2, true, &Tolerances::default());
        let l = t.nilpotency_length(10).unwrap();
        assert!(l <= 4);
        let powers = t.powers(l).unwrap();
        for pos in powers.index().grade_range(l) {
            assert!(op_norm(powers.get(pos)) < 1e-7);
        }
    }

    #[test]
    fn tensor_tuples_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mats = random::tensor_tuple(&mut rng, 3, 2, 3);
        assert!(OperatorTuple::new(mats, &Tolerances::default()).is_ok());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::linalg::hermitian_eigen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn min_eigenvalue(a: &CMat) -> f64 {
        hermitian_eigen(a).0.last().copied().unwrap_or(0.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn defect_sum_is_the_alternating_sum(
            seed in any::<u64>(), n in 1usize..=3, dim in 1usize..=6, m in 1u32..=4, nilpotent in any::<bool>()
        ) {
            let tol = Tolerances::default();
            let t = random::pure_hypercontraction(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, m, nilpotent, &tol);
            let r = fro(&(t.defect_sum(m) - t.alternating_defect_sum(m).unwrap()));
            prop_assert!(r <= 1e-10, "residual {r:e}");
        }

        #[test]
        fn defect_chain_is_monotone(
            seed in any::<u64>(), n in 1usize..=3, dim in 1usize..=5, m in 1u32..=4, nilpotent in any::<bool>()
        ) {
            let tol = Tolerances::default();
            let t = random::pure_hypercontraction(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, m, nilpotent, &tol);
            // 0 ⪯ Δ⁽ᵐ⁾ ⪯ … ⪯ Δ⁽¹⁾ ⪯ Δ⁽⁰⁾ = 1
            prop_assert!(min_eigenvalue(&t.defect(m)) >= -1e-10);
            for k in 0..m {
                let step = t.defect(k) - t.defect(k + 1);
                prop_assert!(min_eigenvalue(&step) >= -1e-10, "Δ⁽{}⁾ ⋠ Δ⁽{}⁾", k + 1, k);
            }
        }

        #[test]
        fn recursive_and_multinomial_defects_agree(
            seed in any::<u64>(), n in 1usize..=3, dim in 1usize..=4, k in 0u32..=5
        ) {
            let mats = random::commuting_tuple(&mut ChaCha8Rng::seed_from_u64(seed), n, dim, false);
            let t = OperatorTuple::new(mats, &Tolerances { residual: 1e-9, ..Tolerances::default() }).unwrap();
            let t = t.scaled(0.9 / t.row_norm().max(1e-12));
            let r = fro(&(t.defect(k) - t.defect_multinomial(k).unwrap()));
            prop_assert!(r <= 1e-10 * (1.0 + fro(&t.defect(k))), "residual {r:e}");
        }
    }
}
