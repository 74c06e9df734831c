//! Linear atomistic and QCF solves, truncation error and the error report.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Displacement, IndexRange};
use crate::operators::{assemble_la, assemble_lqcf, diff, diff3, diff4_centered};
use crate::potentials::{Coefficients, DomainSpec};
use crate::stability::dual_norm_star;

const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// External load: explicit samples on a site range, or a function of `x = jε`.
#[derive(Clone)]
pub enum ForceField {
    Samples(Displacement),
    Function {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for ForceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForceField::Samples(s) => write!(f, "Samples({})", s.range()),
            ForceField::Function { name, .. } => write!(f, "Function({name})"),
        }
    }
}

impl Default for ForceField {
    fn default() -> Self {
        Self::cosine()
    }
}

impl ForceField {
    pub fn function(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ForceField::Function {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `f(x) = cos(πx)`.
    pub fn cosine() -> Self {
        Self::function("cos(pi x)", |x| (std::f64::consts::PI * x).cos())
    }

    pub fn constant(value: f64) -> Self {
        Self::function(format!("const {value}"), move |_| value)
    }

    pub fn name(&self) -> String {
        match self {
            ForceField::Samples(s) => format!("samples on {}", s.range()),
            ForceField::Function { name, .. } => name.clone(),
        }
    }

    /// Load values on `range`, with `x_j = jε` for closed-form loads.
    pub fn sample(&self, range: IndexRange, eps: f64) -> Result<Displacement> {
        match self {
            ForceField::Samples(s) => s.restrict(range),
            ForceField::Function { f, .. } => Ok(Displacement::from_fn(range, |j| f(j as f64 * eps))),
        }
    }
}

/// LU solve of the free-site system with a residual check.
fn dense_solve(a: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let norm_a = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let lu = a.clone().lu();
    let ones = DVector::from_element(a.nrows(), 1.0);
    let inv_ones = lu.solve(&ones).ok_or(Error::Singular { condition: f64::INFINITY })?;
    let condition = norm_a * inv_ones.amax();
    let x = lu.solve(&b).ok_or(Error::Singular { condition })?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular { condition });
    }
    let residual = (&a * &x - &b).amax();
    let tolerance = RESIDUAL_TOLERANCE * b.amax();
    if residual > tolerance {
        return Err(Error::IllConditioned {
            residual,
            tolerance,
            condition,
        });
    }
    Ok(x.as_slice().to_vec())
}

/// Solves `L^a u = f` on `-M+1..=M-1` with `u_{±M} = 0`.
pub fn solve_atomistic(c: &Coefficients, f: &ForceField, half_width: usize, eps: f64) -> Result<Displacement> {
    if !(c.atomistic_margin() > 0.0) {
        return Err(Error::Config(format!(
            "atomistic system needs phiF + 4 phi2F > 0, got {}",
            c.atomistic_margin()
        )));
    }
    let op = assemble_la(c, half_width, eps)?.interior_block()?;
    let load = f.sample(op.rows(), eps)?;
    let u = dense_solve(op.into_matrix(), load.values())?;
    Displacement::new(IndexRange::interior(half_width), u)?.extend_by_zero(IndexRange::sites(half_width))
}

/// `u^D_j = bc_left + (bc_right - bc_left)(N + j)/(2N)`.
pub fn affine_lift(spec: &DomainSpec, bc_left: f64, bc_right: f64) -> Displacement {
    let n = spec.n() as i64;
    Displacement::from_fn(IndexRange::sites(spec.n()), |j| {
        if j == -n {
            bc_left
        } else if j == n {
            bc_right
        } else {
            bc_left + (bc_right - bc_left) * (n + j) as f64 / (2 * n) as f64
        }
    })
}

/// Solves `L^qcf u = f` on `-N+1..=N-1` with `u_{-N} = bc_left`, `u_N = bc_right`,
/// as the affine lift plus a homogeneous solve. Outside the stability regime
/// `φ″_F + 8φ″_{2F} > 0` it still solves, with a warning.
pub fn solve_qcf(
    c: &Coefficients,
    f: &ForceField,
    spec: &DomainSpec,
    bc_left: f64,
    bc_right: f64,
) -> Result<Displacement> {
    if !(c.qcf_margin() > 0.0) {
        log::warn!(
            "phiF + 8 phi2F = {} is not positive; the QCF solve is outside its stability regime",
            c.qcf_margin()
        );
    }
    let eps = spec.eps();
    let op = assemble_lqcf(c, spec).interior_block()?;
    let load = f.sample(op.rows(), eps)?;
    let homogeneous = dense_solve(op.into_matrix(), load.values())?;
    let homogeneous =
        Displacement::new(IndexRange::interior(spec.n()), homogeneous)?.extend_by_zero(IndexRange::sites(spec.n()))?;
    homogeneous.add(&affine_lift(spec, bc_left, bc_right))
}

/// Truncation error on `-N..=N` computed two ways.
#[derive(Clone, Debug, PartialEq)]
pub struct Truncation {
    /// `L^qcf u^a - L^a u^a`, assembled operators applied to the samples.
    pub direct: Displacement,
    /// `ε²φ″_{2F} D̄⁴u^a` on the continuum sites, zero elsewhere.
    pub identity: Displacement,
}

fn ensure_reference(u_a: &Displacement, spec: &DomainSpec) -> Result<usize> {
    let r = u_a.range();
    let needed = IndexRange::sites(spec.n() + 2);
    if r.lo() != -r.hi() || !r.contains_range(&needed) {
        return Err(Error::Stencil {
            needed,
            available: r,
        });
    }
    Ok(r.hi() as usize)
}

/// Residual of the atomistic solution in the QCF equations. Needs `u^a` on
/// `-M..=M` with `M ≥ N+2`.
pub fn truncation_error(u_a: &Displacement, c: &Coefficients, spec: &DomainSpec) -> Result<Truncation> {
    let m = ensure_reference(u_a, spec)?;
    let eps = spec.eps();
    let sites = IndexRange::sites(spec.n());
    let inner = u_a.restrict(sites)?;
    let qcf = assemble_lqcf(c, spec).apply(&inner)?;
    let atom = assemble_la(c, m, eps)?.apply(u_a)?;
    let direct = Displacement::from_fn(sites, |j| {
        if j.unsigned_abs() as usize == spec.n() {
            0.0
        } else {
            qcf[j] - atom[j]
        }
    });
    let d4 = diff4_centered(u_a, eps)?;
    let scale = eps * eps * c.phi_2f;
    let identity = Displacement::from_fn(sites, |j| if spec.in_continuum(j) { scale * d4[j] } else { 0.0 });
    Ok(Truncation { direct, identity })
}

/// `max |D³u^a_j|` over `C̃ = {-N+2..=-K+1} ∪ {K+2..=N+1}`.
pub fn third_difference_on_interface_band(u_a: &Displacement, spec: &DomainSpec) -> Result<f64> {
    ensure_reference(u_a, spec)?;
    let d3 = diff3(u_a, spec.eps())?;
    let (n, k) = (spec.n() as i64, spec.k() as i64);
    let left = d3.norm_on(IndexRange::new(-n + 2, -k + 1), f64::INFINITY, spec.eps());
    let right = d3.norm_on(IndexRange::new(k + 2, n + 1), f64::INFINITY, spec.eps());
    Ok(left.max(right))
}

/// Printed form of the strain stability bound: `2‖f‖_*/(φ″_F + 8φ″_{2F}) + |(u_N - u_{-N})/(2N)|`.
pub fn stability_bound_printed(c: &Coefficients, spec: &DomainSpec, f_star: f64, bc_left: f64, bc_right: f64) -> f64 {
    2.0 * f_star / c.qcf_margin() + ((bc_right - bc_left) / (2 * spec.n()) as f64).abs()
}

/// Strain stability bound with the boundary term as the slope of the affine
/// lift: `2‖f‖_*/(φ″_F + 8φ″_{2F}) + |u_N - u_{-N}|/(2Nε)`.
pub fn stability_bound(c: &Coefficients, spec: &DomainSpec, f_star: f64, bc_left: f64, bc_right: f64) -> f64 {
    2.0 * f_star / c.qcf_margin() + ((bc_right - bc_left) / (2 * spec.n()) as f64 / spec.eps()).abs()
}

/// One convergence measurement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub eps: f64,
    /// `‖D(u^a - u^qcf)‖_{ℓ∞_ε}`.
    pub err_strain_inf: f64,
    /// `4ε²|φ″_{2F}| ‖D³u^a‖_{ℓ∞(C̃)} / (φ″_F + 8φ″_{2F})`.
    pub bound_rhs: f64,
    /// `‖t‖_*`.
    pub trunc_star: f64,
    /// `2ε²|φ″_{2F}| ‖D³u^a‖_{ℓ∞(C̃)}`.
    pub trunc_bound: f64,
    /// `‖t‖_{ℓ¹_ε}`.
    #[serde(skip)]
    pub trunc_l1: f64,
    /// `‖Du^a‖_{ℓ∞_ε}` on the computational domain.
    #[serde(skip)]
    pub strain_scale: f64,
}

impl ErrorReport {
    /// Rounding allowance for the proved inequalities.
    pub fn slack(&self) -> f64 {
        1e-9 * self.strain_scale.max(1.0)
    }

    /// `(name, holds)` for each proved inequality.
    pub fn inequalities(&self) -> [(&'static str, bool); 3] {
        let s = self.slack();
        [
            ("err_strain_inf <= bound_rhs", self.err_strain_inf <= self.bound_rhs + s),
            ("trunc_star <= trunc_bound", self.trunc_star <= self.trunc_bound + s),
            ("trunc_star <= trunc_l1/2", self.trunc_star <= 0.5 * self.trunc_l1 + s),
        ]
    }

    pub fn all_hold(&self) -> bool {
        self.inequalities().iter().all(|(_, ok)| *ok)
    }
}

/// Reference atomistic solve on `-M..=M`, QCF solve with copied boundary
/// values, and the error and truncation measurements.
pub fn error_report(c: &Coefficients, f: &ForceField, spec: &DomainSpec) -> Result<ErrorReport> {
    if !(c.qcf_margin() > 0.0) {
        return Err(Error::Config(format!(
            "error estimate needs phiF + 8 phi2F > 0, got {}",
            c.qcf_margin()
        )));
    }
    let eps = spec.eps();
    let (n, m) = (spec.n(), spec.m());
    if m < n + 2 {
        return Err(Error::Config(format!("error estimate needs M >= N + 2, got N = {n}, M = {m}")));
    }
    let u_a = solve_atomistic(c, f, m, eps)?;
    let sites = IndexRange::sites(n);
    let inner = u_a.restrict(sites)?;
    let u_q = solve_qcf(c, f, spec, inner[-(n as i64)], inner[n as i64])?;
    let err = diff(&inner.sub(&u_q)?, eps)?.norm(f64::INFINITY, eps);
    let d3 = third_difference_on_interface_band(&u_a, spec)?;
    let t = truncation_error(&u_a, c, spec)?.identity;
    let lever = eps * eps * c.phi_2f.abs() * d3;
    Ok(ErrorReport {
        n,
        k: spec.k(),
        m,
        eps,
        err_strain_inf: err,
        bound_rhs: 4.0 * lever / c.qcf_margin(),
        trunc_star: dual_norm_star(&t, eps)?,
        trunc_bound: 2.0 * lever,
        trunc_l1: t.norm(1.0, eps),
        strain_scale: diff(&inner, eps)?.norm(f64::INFINITY, eps),
    })
}
