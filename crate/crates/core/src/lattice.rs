//! Lattice fields carrying their signed index range.
//!
//! Atom (site) fields live on `j = lo..=hi`, typically `-L..=L`. Bond fields
//! are indexed by the right end of the bond, so the backward difference of a
//! site field on `-L..=L` lives on `-L+1..=L`. The two kinds are distinct
//! types; ranges are checked at run time and never silently truncated.

use std::fmt;
use std::marker::PhantomData;
use std::ops::Index;

use serde::Serialize;

use crate::error::{Error, Result};

/// Inclusive range `lo..=hi` of signed lattice indices. Empty when `hi < lo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct IndexRange {
    lo: i64,
    hi: i64,
}

impl IndexRange {
    pub const fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    /// Sites `-L..=L`.
    pub fn sites(half_width: usize) -> Self {
        let l = half_width as i64;
        Self::new(-l, l)
    }

    /// Free sites `-L+1..=L-1`.
    pub fn interior(half_width: usize) -> Self {
        let l = half_width as i64;
        Self::new(-l + 1, l - 1)
    }

    /// Bonds `-L+1..=L`.
    pub fn bonds(half_width: usize) -> Self {
        let l = half_width as i64;
        Self::new(-l + 1, l)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        if self.hi < self.lo {
            0
        } else {
            (self.hi - self.lo + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, j: i64) -> bool {
        self.lo <= j && j <= self.hi
    }

    pub fn contains_range(&self, other: &IndexRange) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    /// Zero-based storage offset of index `j`.
    pub fn offset(&self, j: i64) -> Option<usize> {
        self.contains(j).then(|| (j - self.lo) as usize)
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = i64> {
        self.lo..=self.hi
    }

    /// The range shrunk by `left` indices on the left and `right` on the right.
    pub fn shrink(&self, left: i64, right: i64) -> Self {
        Self::new(self.lo + left, self.hi - right)
    }
}

impl fmt::Display for IndexRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.lo, self.hi)
    }
}

/// Marker for atom-indexed fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sites {}

/// Marker for bond-indexed fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bonds {}

/// Real values over an [`IndexRange`].
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField<K> {
    range: IndexRange,
    values: Vec<f64>,
    _kind: PhantomData<K>,
}

/// Displacements, positions, loads and forces: anything indexed by atoms.
pub type Displacement = LatticeField<Sites>;

/// Strains and other bond-indexed quantities.
pub type StrainVector = LatticeField<Bonds>;

impl<K> LatticeField<K> {
    pub fn new(range: IndexRange, values: Vec<f64>) -> Result<Self> {
        if values.len() != range.len() {
            return Err(Error::Length {
                range,
                expected: range.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            range,
            values,
            _kind: PhantomData,
        })
    }

    pub fn zeros(range: IndexRange) -> Self {
        Self {
            range,
            values: vec![0.0; range.len()],
            _kind: PhantomData,
        }
    }

    pub fn from_fn(range: IndexRange, mut f: impl FnMut(i64) -> f64) -> Self {
        Self {
            range,
            values: range.iter().map(&mut f).collect(),
            _kind: PhantomData,
        }
    }

    pub fn range(&self) -> IndexRange {
        self.range
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, j: i64) -> Option<f64> {
        self.range.offset(j).map(|o| self.values[o])
    }

    /// Sets the value at `j`. Panics when `j` is outside the range.
    pub fn set(&mut self, j: i64, value: f64) {
        let o = self
            .range
            .offset(j)
            .unwrap_or_else(|| panic!("index {j} outside {}", self.range));
        self.values[o] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.range.iter().zip(self.values.iter().copied())
    }

    pub fn ensure_range(&self, expected: IndexRange) -> Result<()> {
        if self.range == expected {
            Ok(())
        } else {
            Err(Error::RangeMismatch {
                expected,
                found: self.range,
            })
        }
    }

    /// Copy of the values on a sub-range.
    pub fn restrict(&self, range: IndexRange) -> Result<Self> {
        if !self.range.contains_range(&range) {
            return Err(Error::Stencil {
                needed: range,
                available: self.range,
            });
        }
        Ok(Self::from_fn(range, |j| self[j]))
    }

    /// Embeds into a larger range, filling the new entries with zero.
    pub fn extend_by_zero(&self, range: IndexRange) -> Result<Self> {
        if !range.contains_range(&self.range) {
            return Err(Error::RangeMismatch {
                expected: range,
                found: self.range,
            });
        }
        Ok(Self::from_fn(range, |j| self.get(j).unwrap_or(0.0)))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            range: self.range,
            values: self.values.iter().map(|&v| f(v)).collect(),
            _kind: PhantomData,
        }
    }

    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        other.ensure_range(self.range)?;
        Ok(Self {
            range: self.range,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            _kind: PhantomData,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `ℓᵖ_ε` norm; pass `f64::INFINITY` for the maximum norm.
    pub fn norm(&self, p: f64, eps: f64) -> f64 {
        weighted_norm(&self.values, p, eps)
    }

    /// `ℓᵖ_ε` norm over the indices of `range` that the field covers.
    pub fn norm_on(&self, range: IndexRange, p: f64, eps: f64) -> f64 {
        let vals: Vec<f64> = range.iter().filter_map(|j| self.get(j)).collect();
        weighted_norm(&vals, p, eps)
    }

    /// The weighted inner product `ε Σ a_j b_j`; both fields must share a range.
    pub fn pairing(&self, other: &Self, eps: f64) -> Result<f64> {
        other.ensure_range(self.range)?;
        Ok(eps * dot(&self.values, &other.values))
    }
}

impl<K> Index<i64> for LatticeField<K> {
    type Output = f64;

    fn index(&self, j: i64) -> &f64 {
        match self.range.offset(j) {
            Some(o) => &self.values[o],
            None => panic!("index {j} outside {}", self.range),
        }
    }
}

impl Displacement {
    /// Membership in V₀: both end values are exactly zero.
    pub fn is_homogeneous(&self) -> bool {
        !self.values.is_empty() && self.values[0] == 0.0 && *self.values.last().unwrap() == 0.0
    }

    pub fn ensure_homogeneous(&self) -> Result<()> {
        if self.is_homogeneous() {
            Ok(())
        } else {
            Err(Error::NotHomogeneous {
                left: self.values.first().copied().unwrap_or(f64::NAN),
                right: self.values.last().copied().unwrap_or(f64::NAN),
            })
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn weighted_norm(values: &[f64], p: f64, eps: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        eps * values.iter().map(|v| v.abs()).sum::<f64>()
    } else if p == 2.0 {
        (eps * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    } else {
        (eps * values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }
}

/// Bond spacing `h ≈ F·ε` trimmed so that `j·h` is exact in `f64` for all
/// `|j| ≤ half_width`.
///
/// With this spacing every bond of the chain `y_j = j·h` has bitwise the same
/// length, so a uniform state is represented exactly.
pub fn exact_uniform_spacing(stretch: f64, eps: f64, half_width: usize) -> f64 {
    let h = stretch * eps;
    if h == 0.0 || !h.is_finite() {
        return h;
    }
    // bits needed by j, plus one for the sign-free doubling in y_j - y_{j-2}
    let index_bits = 64 - (half_width as u64 + 1).leading_zeros() as i32 + 1;
    let keep = 52 - index_bits;
    let exponent = h.abs().log2().floor() as i32;
    let quantum = 2f64.powi(exponent - keep);
    (h / quantum).round() * quantum
}

/// The uniformly deformed chain `y_j = F j ε` on `-L..=L`, represented exactly
/// (see [`exact_uniform_spacing`]). Returns the positions and the effective
/// stretch `h/ε` actually realised.
pub fn uniform_positions(stretch: f64, eps: f64, half_width: usize) -> (Displacement, f64) {
    let h = exact_uniform_spacing(stretch, eps, half_width);
    let y = Displacement::from_fn(IndexRange::sites(half_width), |j| j as f64 * h);
    (y, h / eps)
}
