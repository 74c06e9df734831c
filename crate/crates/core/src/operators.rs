//! Linearized chain operators and their strain-space (divergence-form) conjugates.
//!
//! Displacement operators `L` act on site fields and are stored with rows on
//! the free sites `-L+1..=L-1` and columns on all sites `-L..=L`. Their
//! conjugates `E` act on bond fields and satisfy `⟨E Dv, Dw⟩ = ⟨L v, w⟩` for
//! `w` vanishing at `±L`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::{Displacement, IndexRange, LatticeField, StrainVector};
use crate::potentials::{Coefficients, DomainSpec};

/// Dense matrix whose rows and columns are labelled by signed lattice or bond indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    rows: IndexRange,
    cols: IndexRange,
    entries: DMatrix<f64>,
}

impl DenseOperator {
    pub fn zeros(rows: IndexRange, cols: IndexRange) -> Self {
        Self {
            rows,
            cols,
            entries: DMatrix::zeros(rows.len(), cols.len()),
        }
    }

    pub fn from_matrix(rows: IndexRange, cols: IndexRange, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != rows.len() || entries.ncols() != cols.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{} but ranges {rows} x {cols} need {}x{}",
                entries.nrows(),
                entries.ncols(),
                rows.len(),
                cols.len()
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn rows(&self) -> IndexRange {
        self.rows
    }

    pub fn cols(&self) -> IndexRange {
        self.cols
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Entry at signed indices; `None` outside the declared ranges.
    pub fn get(&self, i: i64, j: i64) -> Option<f64> {
        Some(self.entries[(self.rows.offset(i)?, self.cols.offset(j)?)])
    }

    /// Entry at signed indices; panics outside the declared ranges.
    pub fn entry(&self, i: i64, j: i64) -> f64 {
        self.get(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside {} x {}", self.rows, self.cols))
    }

    fn add_to(&mut self, i: i64, j: i64, value: f64) {
        let (r, c) = (self.rows.offset(i).unwrap(), self.cols.offset(j).unwrap());
        self.entries[(r, c)] += value;
    }

    fn add_stencil(&mut self, row: i64, first_col: i64, stencil: &[f64], scale: f64) {
        for (k, &s) in stencil.iter().enumerate() {
            if s != 0.0 {
                self.add_to(row, first_col + k as i64, scale * s);
            }
        }
    }

    pub fn apply<K>(&self, v: &LatticeField<K>) -> Result<LatticeField<K>> {
        v.ensure_range(self.cols)?;
        let out = &self.entries * DVector::from_column_slice(v.values());
        LatticeField::new(self.rows, out.as_slice().to_vec())
    }

    /// Rows `rows` and columns `cols` of the operator.
    pub fn block(&self, rows: IndexRange, cols: IndexRange) -> Result<Self> {
        for (want, have) in [(rows, self.rows), (cols, self.cols)] {
            if !have.contains_range(&want) {
                return Err(Error::Stencil {
                    needed: want,
                    available: have,
                });
            }
        }
        let r0 = (rows.lo() - self.rows.lo()) as usize;
        let c0 = (cols.lo() - self.cols.lo()) as usize;
        let entries = self
            .entries
            .view((r0, c0), (rows.len(), cols.len()))
            .into_owned();
        Ok(Self { rows, cols, entries })
    }

    /// The square block acting on the free sites (columns restricted to the row range).
    pub fn interior_block(&self) -> Result<Self> {
        self.block(self.rows, self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.transpose(),
        }
    }

    fn ensure_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::RangeMismatch {
                expected: self.rows,
                found: self.cols,
            })
        }
    }

    /// `½(A + Aᵀ)`.
    pub fn symmetric_part(&self) -> Result<Self> {
        self.ensure_square()?;
        let entries = (&self.entries + self.entries.transpose()) * 0.5;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        })
    }

    /// Frobenius norm of `A - Aᵀ`.
    pub fn asymmetry_norm(&self) -> Result<f64> {
        self.ensure_square()?;
        Ok((&self.entries - self.entries.transpose()).norm())
    }

    /// Nonzero entries as `(row, col, value)` in row-major order.
    pub fn nonzeros(&self) -> Vec<(i64, i64, f64)> {
        let mut out = Vec::new();
        for (r, i) in self.rows.iter().enumerate() {
            for (c, j) in self.cols.iter().enumerate() {
                let v = self.entries[(r, c)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn row_nonzeros(&self, i: i64) -> usize {
        match self.rows.offset(i) {
            Some(r) => self.entries.row(r).iter().filter(|v| **v != 0.0).count(),
            None => 0,
        }
    }

    /// Largest `|i - j|` over the nonzero entries.
    pub fn bandwidth(&self) -> i64 {
        self.nonzeros()
            .iter()
            .map(|&(i, j, _)| (i - j).abs())
            .max()
            .unwrap_or(0)
    }

    /// Linear combination `a·self + b·other` of operators with equal ranges.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        other.ensure_range_pair(self.rows, self.cols)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            entries: &self.entries * a + &other.entries * b,
        })
    }

    fn ensure_range_pair(&self, rows: IndexRange, cols: IndexRange) -> Result<()> {
        if self.rows != rows {
            return Err(Error::RangeMismatch {
                expected: rows,
                found: self.rows,
            });
        }
        if self.cols != cols {
            return Err(Error::RangeMismatch {
                expected: cols,
                found: self.cols,
            });
        }
        Ok(())
    }
}

/// Backward difference `(Dv)_j = (v_j - v_{j-1})/ε` on bonds `lo+1..=hi`.
pub fn diff(v: &Displacement, eps: f64) -> Result<StrainVector> {
    let r = v.range();
    if r.len() < 2 {
        return Err(Error::Stencil {
            needed: IndexRange::new(r.lo(), r.lo() + 1),
            available: r,
        });
    }
    let vals = v.values().windows(2).map(|w| (w[1] - w[0]) / eps).collect();
    StrainVector::new(r.shrink(1, 0), vals)
}

/// Third backward difference `ε⁻³(v_j - 3v_{j-1} + 3v_{j-2} - v_{j-3})`, indexed
/// like bonds on `lo+3..=hi`.
pub fn diff3(v: &Displacement, eps: f64) -> Result<StrainVector> {
    let r = v.range();
    if r.len() < 4 {
        return Err(Error::Stencil {
            needed: IndexRange::new(r.lo(), r.lo() + 3),
            available: r,
        });
    }
    let e3 = eps * eps * eps;
    let vals = v
        .values()
        .windows(4)
        .map(|w| (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]) / e3)
        .collect();
    StrainVector::new(r.shrink(3, 0), vals)
}

/// Centered fourth difference `ε⁻⁴(v_{j+2} - 4v_{j+1} + 6v_j - 4v_{j-1} + v_{j-2})`
/// on sites `lo+2..=hi-2`.
pub fn diff4_centered(v: &Displacement, eps: f64) -> Result<Displacement> {
    let r = v.range();
    if r.len() < 5 {
        return Err(Error::Stencil {
            needed: IndexRange::new(r.lo(), r.lo() + 4),
            available: r,
        });
    }
    let e4 = (eps * eps) * (eps * eps);
    let vals = v
        .values()
        .windows(5)
        .map(|w| (w[4] - 4.0 * w[3] + 6.0 * w[2] - 4.0 * w[1] + w[0]) / e4)
        .collect();
    Displacement::new(r.shrink(2, 2), vals)
}

const SECOND_DIFF: [f64; 3] = [-1.0, 2.0, -1.0];
const WIDE_SECOND_DIFF: [f64; 5] = [-1.0, 0.0, 2.0, 0.0, -1.0];

fn site_operator(half_width: usize) -> DenseOperator {
    DenseOperator::zeros(
        IndexRange::interior(half_width),
        IndexRange::sites(half_width),
    )
}

/// Linearized atomistic operator `L^a` on `-M..=M` with lattice spacing `eps`.
pub fn assemble_la(c: &Coefficients, half_width: usize, eps: f64) -> Result<DenseOperator> {
    if half_width < 2 {
        return Err(Error::InvalidArgument(format!(
            "atomistic operator needs half-width >= 2, got {half_width}"
        )));
    }
    let mut op = site_operator(half_width);
    let s = 1.0 / (eps * eps);
    let m = half_width as i64;
    for j in op.rows.iter() {
        op.add_stencil(j, j - 1, &SECOND_DIFF, c.phi_f * s);
        if j == -m + 1 {
            op.add_stencil(j, j, &[1.0, 0.0, -1.0], c.phi_2f * s);
        } else if j == m - 1 {
            op.add_stencil(j, j - 2, &[-1.0, 0.0, 1.0], c.phi_2f * s);
        } else {
            op.add_stencil(j, j - 2, &WIDE_SECOND_DIFF, c.phi_2f * s);
        }
    }
    Ok(op)
}

/// Linearized local QC operator `(φ″_F + 4φ″_{2F})·(-Δ_ε)` on `-L..=L`.
pub fn assemble_llqc(c: &Coefficients, half_width: usize, eps: f64) -> Result<DenseOperator> {
    if half_width < 1 {
        return Err(Error::InvalidArgument("half-width must be positive".into()));
    }
    let mut op = site_operator(half_width);
    let s = c.atomistic_margin() / (eps * eps);
    for j in op.rows.iter() {
        op.add_stencil(j, j - 1, &SECOND_DIFF, s);
    }
    Ok(op)
}

/// Nearest-neighbour part `L₁ = -Δ_ε` of the QCF operator.
pub fn assemble_l1(spec: &DomainSpec) -> DenseOperator {
    let mut op = site_operator(spec.n());
    let s = 1.0 / (spec.eps() * spec.eps());
    for j in op.rows.iter() {
        op.add_stencil(j, j - 1, &SECOND_DIFF, s);
    }
    op
}

/// Next-nearest-neighbour part `L₂` of the QCF operator: the wide stencil on
/// the atomistic region, four times the nearest-neighbour stencil elsewhere.
pub fn assemble_l2(spec: &DomainSpec) -> DenseOperator {
    let mut op = site_operator(spec.n());
    let s = 1.0 / (spec.eps() * spec.eps());
    for j in op.rows.iter() {
        if spec.in_atomistic(j) {
            op.add_stencil(j, j - 2, &WIDE_SECOND_DIFF, s);
        } else {
            op.add_stencil(j, j - 1, &SECOND_DIFF, 4.0 * s);
        }
    }
    op
}

/// Linearized force-based QC operator `L^qcf = φ″_F L₁ + φ″_{2F} L₂`.
pub fn assemble_lqcf(c: &Coefficients, spec: &DomainSpec) -> DenseOperator {
    let mut op = site_operator(spec.n());
    let s = 1.0 / (spec.eps() * spec.eps());
    for j in op.rows.iter() {
        if spec.in_atomistic(j) {
            op.add_stencil(j, j - 1, &SECOND_DIFF, c.phi_f * s);
            op.add_stencil(j, j - 2, &WIDE_SECOND_DIFF, c.phi_2f * s);
        } else {
            op.add_stencil(j, j - 1, &SECOND_DIFF, c.atomistic_margin() * s);
        }
    }
    op
}

fn bond_operator(half_width: usize) -> DenseOperator {
    let b = IndexRange::bonds(half_width);
    DenseOperator::zeros(b, b)
}

/// Conjugate atomistic operator `E^a` on bonds `-M+1..=M`.
pub fn assemble_ea(c: &Coefficients, half_width: usize) -> Result<DenseOperator> {
    if half_width < 2 {
        return Err(Error::InvalidArgument(format!(
            "atomistic operator needs half-width >= 2, got {half_width}"
        )));
    }
    let mut op = bond_operator(half_width);
    let (lo, hi) = (op.rows.lo(), op.rows.hi());
    for j in lo..=hi {
        op.add_to(j, j, c.phi_f);
        if j == lo {
            op.add_stencil(j, j, &[1.0, 1.0], c.phi_2f);
        } else if j == hi {
            op.add_stencil(j, j - 1, &[1.0, 1.0], c.phi_2f);
        } else {
            op.add_stencil(j, j - 1, &[1.0, 2.0, 1.0], c.phi_2f);
        }
    }
    Ok(op)
}

/// Conjugate QCF operator `E^qcf = φ″_F I + φ″_{2F} B` on bonds `-N+1..=N`.
///
/// Continuum rows of `B` carry a diagonal 4 plus the stencil `[1, -2, 1]` on
/// bonds `-K-1..=-K+1` (left) or `K..=K+2` (right); on the two interface rows
/// `-K-1` and `K+2` these overlap the diagonal, giving `[5, -2, 1]` and
/// `[1, -2, 5]`. Rows `-K..=K+1` are the atomistic `[1, 2, 1]`.
pub fn assemble_eqcf(c: &Coefficients, spec: &DomainSpec) -> DenseOperator {
    let mut op = bond_operator(spec.n());
    let k = spec.k() as i64;
    for j in op.rows.iter() {
        op.add_to(j, j, c.phi_f);
        if j < -k {
            op.add_to(j, j, 4.0 * c.phi_2f);
            op.add_stencil(j, -k - 1, &[1.0, -2.0, 1.0], c.phi_2f);
        } else if j >= k + 2 {
            op.add_to(j, j, 4.0 * c.phi_2f);
            op.add_stencil(j, k, &[1.0, -2.0, 1.0], c.phi_2f);
        } else {
            op.add_stencil(j, j - 1, &[1.0, 2.0, 1.0], c.phi_2f);
        }
    }
    op
}

/// `⟨L v, w⟩ = ε Σ_j (Lv)_j w_j` over the rows of `op`; `w` must cover the rows.
pub fn site_pairing(op: &DenseOperator, v: &Displacement, w: &Displacement, eps: f64) -> Result<f64> {
    let lv = op.apply(v)?;
    lv.pairing(&w.restrict(op.rows())?, eps)
}

/// `⟨E Dv, Dw⟩ = ε Σ_j (E Dv)_j (Dw)_j`.
pub fn strain_pairing(op: &DenseOperator, v: &Displacement, w: &Displacement, eps: f64) -> Result<f64> {
    let ev = op.apply(&diff(v, eps)?)?;
    ev.pairing(&diff(w, eps)?, eps)
}

/// The three terms of `⟨L₂v, w⟩ = ⟨L₂^reg v, w⟩ + ε²D³v_{-K+1} w_{-K} - ε²D³v_{K+2} w_K`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2Split {
    pub regular: f64,
    pub left_interface: f64,
    pub right_interface: f64,
}

impl L2Split {
    pub fn total(&self) -> f64 {
        self.regular + self.left_interface + self.right_interface
    }

    pub fn interface(&self) -> f64 {
        self.left_interface + self.right_interface
    }
}

/// Summation-by-parts split of the pairing `⟨L₂v, w⟩` for `w` in V₀.
pub fn l2_decomposition(v: &Displacement, w: &Displacement, spec: &DomainSpec) -> Result<L2Split> {
    let sites = IndexRange::sites(spec.n());
    v.ensure_range(sites)?;
    w.ensure_range(sites)?;
    w.ensure_homogeneous()?;
    let eps = spec.eps();
    let dv = diff(v, eps)?;
    let dw = diff(w, eps)?;
    let n = spec.n() as i64;
    let k = spec.k() as i64;

    let mut regular = 0.0;
    for j in -n + 1..=n {
        let stencil = if j <= -k || j > k {
            4.0 * dv[j]
        } else {
            dv[j - 1] + 2.0 * dv[j] + dv[j + 1]
        };
        regular += eps * stencil * dw[j];
    }
    // ε²D³v_j = Dv_j - 2Dv_{j-1} + Dv_{j-2}
    let third = |j: i64| dv[j] - 2.0 * dv[j - 1] + dv[j - 2];
    Ok(L2Split {
        regular,
        left_interface: third(-k + 1) * w[-k],
        right_interface: -third(k + 2) * w[k],
    })
}
