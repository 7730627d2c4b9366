//! Multi-indices over `ℕⁿ` and the combinatorial weights built on them.
//!
//! Everything that stores coefficient blocks indexes them by the graded
//! lexicographic order produced by [`enumerate`]: grade by total order
//! `|α|`, and within one grade larger leading entries come first, so for
//! `n = 2` the order is `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), …`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MultiIndexError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("integer overflow while computing {what} for {index}")]
    Overflow { what: &'static str, index: String },
}

/// A multi-index `α ∈ ℕⁿ`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// The unit index `e_i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    /// Total order `|α|`.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `α + e_i`.
    pub fn raised(&self, i: usize) -> Self {
        let mut e = self.0.clone();
        e[i] += 1;
        MultiIndex(e)
    }

    /// `α − e_i`, or `None` when `α_i = 0`.
    pub fn lowered(&self, i: usize) -> Option<Self> {
        if self.0[i] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[i] -= 1;
        Some(MultiIndex(e))
    }

    pub fn add(&self, other: &MultiIndex) -> Self {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `α − β` when `β ≤ α` componentwise.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<Self> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    /// `z^α = Π z_i^{α_i}` for a complex point.
    pub fn monomial(&self, z: &[num_complex::Complex64]) -> num_complex::Complex64 {
        self.0
            .iter()
            .zip(z)
            .fold(num_complex::Complex64::new(1.0, 0.0), |acc, (&a, &zi)| {
                acc * zi.powu(a)
            })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

fn push_grade(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == n - 1 {
        prefix.push(remaining);
        out.push(MultiIndex(prefix.clone()));
        prefix.pop();
        return;
    }
    for first in (0..=remaining).rev() {
        prefix.push(first);
        push_grade(n, remaining - first, prefix, out);
        prefix.pop();
    }
}

/// All multi-indices of exact order `k` in graded-lex order.
pub fn enumerate_grade(n: usize, k: u32) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    push_grade(n, k, &mut Vec::with_capacity(n), &mut out);
    out
}

/// All `α ∈ ℕⁿ` with `|α| ≤ max_order`, graded-lex.
pub fn enumerate(n: usize, max_order: i64) -> Result<Vec<MultiIndex>, MultiIndexError> {
    if n == 0 {
        return Err(MultiIndexError::Argument(
            "number of variables must be ≥ 1".into(),
        ));
    }
    if max_order < 0 {
        return Err(MultiIndexError::Argument(format!(
            "truncation degree must be ≥ 0, got {max_order}"
        )));
    }
    let mut out = Vec::new();
    for k in 0..=max_order as u32 {
        out.extend(enumerate_grade(n, k));
    }
    Ok(out)
}

/// `binom(a, b)` with overflow detection.
pub fn binomial(a: u64, b: u64) -> Option<u128> {
    if b > a {
        return Some(0);
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for i in 0..b {
        // acc * (a - i) is divisible by (i + 1) at every step
        acc = acc.checked_mul((a - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Multinomial `(s + Σα_i)! / (s! · α!)`, built as a product of binomials.
fn multinomial_with_offset(offset: u64, alpha: &MultiIndex) -> Option<u128> {
    let mut total = offset;
    let mut acc: u128 = 1;
    for &a in alpha.entries() {
        total += a as u64;
        acc = acc.checked_mul(binomial(total, a as u64)?)?;
    }
    Some(acc)
}

/// Largest order for which [`gamma`] and [`rho`] are guaranteed exact.
pub const MAX_EXACT_ORDER: u32 = 20;

/// `γ_α = |α|!/α!`.
pub fn gamma(alpha: &MultiIndex) -> Result<u128, MultiIndexError> {
    multinomial_with_offset(0, alpha).ok_or_else(|| MultiIndexError::Overflow {
        what: "gamma",
        index: alpha.to_string(),
    })
}

/// `ρ_ℓ(α) = (ℓ+|α|−1)! / (α!(ℓ−1)!)`, defined for `ℓ ≥ 1`.
pub fn rho(l: i64, alpha: &MultiIndex) -> Result<u128, MultiIndexError> {
    if l <= 0 {
        return Err(MultiIndexError::Argument(format!(
            "rho needs ℓ ≥ 1, got {l}"
        )));
    }
    multinomial_with_offset((l - 1) as u64, alpha).ok_or_else(|| MultiIndexError::Overflow {
        what: "rho",
        index: alpha.to_string(),
    })
}

/// `ρ_k(α)` extended to `k = 0` by `ρ_0(0) = 1` and `ρ_0(α) = 0` otherwise,
/// the weights of the constants-only space `H_0(𝔹, ℰ) = ℰ`.
pub fn rho_extended(k: u32, alpha: &MultiIndex) -> Result<u128, MultiIndexError> {
    if k == 0 {
        return Ok(if alpha.is_zero() { 1 } else { 0 });
    }
    rho(k as i64, alpha)
}

/// `ρ_m` applied to the one-variable index `(j)`, i.e. `binom(m+j−1, j)`.
pub fn rho_univariate(m: u32, j: u32) -> Result<u128, MultiIndexError> {
    rho_extended(m, &MultiIndex(vec![j]))
}

/// Graded-lex enumeration with `O(1)` offset lookup.
#[derive(Debug, Clone)]
pub struct IndexSet {
    n: usize,
    max_order: u32,
    indices: Vec<MultiIndex>,
    offsets: HashMap<MultiIndex, usize>,
    grade_starts: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, max_order: u32) -> Result<Self, MultiIndexError> {
        let indices = enumerate(n, max_order as i64)?;
        let offsets = indices
            .iter()
            .enumerate()
            .map(|(k, a)| (a.clone(), k))
            .collect();
        let mut grade_starts = Vec::with_capacity(max_order as usize + 2);
        let mut count = 0;
        for k in 0..=max_order {
            grade_starts.push(count);
            count += binomial(n as u64 - 1 + k as u64, k as u64).unwrap() as usize;
        }
        grade_starts.push(count);
        Ok(IndexSet {
            n,
            max_order,
            indices,
            offsets,
            grade_starts,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, k: usize) -> &MultiIndex {
        &self.indices[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.indices.iter()
    }

    pub fn offset(&self, alpha: &MultiIndex) -> Option<usize> {
        self.offsets.get(alpha).copied()
    }

    /// Offsets `[start, end)` of the indices of order `k`.
    pub fn grade_range(&self, k: u32) -> std::ops::Range<usize> {
        if k > self.max_order {
            return self.len()..self.len();
        }
        self.grade_starts[k as usize]..self.grade_starts[k as usize + 1]
    }
}

/// `ρ_ℓ(α)` and `γ_α` for every `|α| ≤ N`.
#[derive(Debug, Clone)]
pub struct WeightTable {
    l: u32,
    index: IndexSet,
    rho: Vec<u128>,
    gamma: Vec<u128>,
}

impl WeightTable {
    /// `ℓ = 0` is accepted and yields the constants-only weights of
    /// [`rho_extended`].
    pub fn new(n: usize, l: u32, max_order: u32) -> Result<Self, MultiIndexError> {
        let index = IndexSet::new(n, max_order)?;
        let rho = index
            .iter()
            .map(|a| rho_extended(l, a))
            .collect::<Result<Vec<_>, _>>()?;
        let gamma = index.iter().map(gamma).collect::<Result<Vec<_>, _>>()?;
        Ok(WeightTable {
            l,
            index,
            rho,
            gamma,
        })
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn index(&self) -> &IndexSet {
        &self.index
    }

    pub fn rho_exact(&self, k: usize) -> u128 {
        self.rho[k]
    }

    pub fn gamma_exact(&self, k: usize) -> u128 {
        self.gamma[k]
    }

    pub fn rho(&self, k: usize) -> f64 {
        self.rho[k] as f64
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma[k] as f64
    }
}
