//! Coercivity and inf-sup stability of the QCF operator.
//!
//! Strain-space quantities act on bond fields over `-N+1..=N` and are taken
//! over the mean-zero subspace, the range of the backward difference on V₀.

use nalgebra::{DMatrix, DVector, SymmetricTridiagonal, SVD};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lattice::{Displacement, IndexRange, StrainVector};
use crate::operators::{assemble_eqcf, assemble_lqcf, diff, site_pairing, DenseOperator};
use crate::potentials::{Coefficients, DomainSpec};

const EIGEN_TOLERANCE: f64 = 1e-10;

/// Smallest value of `⟨L^qcf v, v⟩` over `v ∈ V₀` with `‖Dv‖_{ℓ²_ε} = 1`.
///
/// Solved as the smallest eigenvalue of the pencil `(ε² sym(L), T)` with `T`
/// the Dirichlet second-difference matrix, reduced to a standard problem
/// through the bidiagonal Cholesky factor of `T`.
pub fn rayleigh_min(c: &Coefficients, spec: &DomainSpec) -> Result<f64> {
    let op = assemble_lqcf(c, spec).interior_block()?;
    let eps2 = spec.eps() * spec.eps();
    let mut s = op.into_matrix();
    let st = s.transpose();
    s += st;
    s *= 0.5 * eps2;
    pencil_min_eigenvalue(s)
}

/// Cholesky factor `T = R Rᵀ` of `tridiag(-1, 2, -1)`: diagonal `d` and subdiagonal `l`.
fn laplacian_cholesky(n: usize) -> (Vec<f64>, Vec<f64>) {
    let d: Vec<f64> = (1..=n).map(|i| ((i + 1) as f64 / i as f64).sqrt()).collect();
    let l: Vec<f64> = d[..n.saturating_sub(1)].iter().map(|x| -1.0 / x).collect();
    (d, l)
}

/// Overwrites every column of `m` with `R⁻¹` applied to it.
fn forward_solve_columns(m: &mut DMatrix<f64>, d: &[f64], l: &[f64]) {
    for mut col in m.column_iter_mut() {
        let x = col.as_mut_slice();
        x[0] /= d[0];
        for i in 1..x.len() {
            x[i] = (x[i] - l[i - 1] * x[i - 1]) / d[i];
        }
    }
}

/// Smallest eigenvalue of `R⁻¹ S R⁻ᵀ` for symmetric `S`.
fn pencil_min_eigenvalue(mut s: DMatrix<f64>) -> Result<f64> {
    let n = s.nrows();
    let (d, l) = laplacian_cholesky(n);
    forward_solve_columns(&mut s, &d, &l);
    s.transpose_mut();
    forward_solve_columns(&mut s, &d, &l);
    let st = s.transpose();
    s += st;
    s *= 0.5;
    symmetric_min_eigenvalue(s)
}

/// Smallest eigenvalue of a dense symmetric matrix, with an inverse-iteration residual check.
pub fn symmetric_min_eigenvalue(m: DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 1 {
        return Ok(m[(0, 0)]);
    }
    let (diag, off) = SymmetricTridiagonal::new(m).unpack_tridiagonal();
    let (diag, off) = (diag.as_slice().to_vec(), off.as_slice().to_vec());
    let lambda = tridiagonal_min_eigenvalue(&diag, &off);
    let residual = inverse_iteration_residual(&diag, &off, lambda);
    let (lo, hi) = gershgorin(&diag, &off);
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if !(residual <= EIGEN_TOLERANCE * scale) {
        return Err(Error::Eigen { residual });
    }
    Ok(lambda)
}

fn gershgorin(d: &[f64], e: &[f64]) -> (f64, f64) {
    let n = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    (lo, hi)
}

/// Number of eigenvalues strictly below `x` (Sturm sequence via `LDLᵀ` pivots).
fn count_below(d: &[f64], e: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..d.len() {
        q = if i == 0 { d[0] - x } else { d[i] - x - e[i - 1] * e[i - 1] / q };
        if q.abs() < tiny {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_min_eigenvalue(d: &[f64], e: &[f64]) -> f64 {
    let (mut lo, mut hi) = gershgorin(d, e);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    lo -= 1e-12 * scale;
    hi += 1e-12 * scale;
    while hi - lo > 4.0 * f64::EPSILON * scale {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(d, e, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `(T - σI) x = b` for a symmetric tridiagonal `T` by Gaussian
/// elimination with partial pivoting; tiny pivots are floored.
fn tridiagonal_solve(d: &[f64], e: &[f64], sigma: f64, b: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut diag: Vec<f64> = d.iter().map(|x| x - sigma).collect();
    let mut sup: Vec<f64> = e.to_vec();
    sup.push(0.0);
    let mut sup2 = vec![0.0; n];
    let sub: Vec<f64> = e.to_vec();
    let mut rhs = b.to_vec();
    let floor = f64::EPSILON * gershgorin(d, e).1.abs().max(1.0);
    for i in 0..n - 1 {
        if diag[i].abs() >= sub[i].abs() {
            if diag[i].abs() < floor {
                diag[i] = floor;
            }
            let f = sub[i] / diag[i];
            diag[i + 1] -= f * sup[i];
            rhs[i + 1] -= f * rhs[i];
        } else {
            let f = diag[i] / sub[i];
            diag[i] = sub[i];
            let next = diag[i + 1];
            diag[i + 1] = sup[i] - f * next;
            sup[i] = next;
            if i + 2 < n {
                sup2[i] = sup[i + 1];
                sup[i + 1] = -f * sup2[i];
            }
            rhs.swap(i, i + 1);
            rhs[i + 1] -= f * rhs[i];
        }
    }
    if diag[n - 1].abs() < floor {
        diag[n - 1] = floor;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        if i + 1 < n {
            acc -= sup[i] * x[i + 1];
        }
        if i + 2 < n {
            acc -= sup2[i] * x[i + 2];
        }
        x[i] = acc / diag[i];
    }
    x
}

fn tridiagonal_apply(d: &[f64], e: &[f64], x: &[f64]) -> Vec<f64> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut s = d[i] * x[i];
            if i > 0 {
                s += e[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += e[i] * x[i + 1];
            }
            s
        })
        .collect()
}

/// `‖T x - λ x‖` for the unit vector `x` obtained by inverse iteration at `λ`.
fn inverse_iteration_residual(d: &[f64], e: &[f64], lambda: f64) -> f64 {
    let n = d.len();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_7).fract()).collect();
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let y = tridiagonal_solve(d, e, lambda, &x);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        x = y.iter().map(|v| v / norm).collect();
        let tx = tridiagonal_apply(d, e, &x);
        let r = tx
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.min(r);
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Piecewise-linear plateau (1 on `-K-2..=K+2`, linear to 0 at `±N`) plus
/// `±ε^{1/2}` at site `K+1`; not normalized. Needs `N ≥ K+3`.
pub fn unstable_candidate_raw(spec: &DomainSpec, sign: Sign) -> Result<Displacement> {
    let (n, k) = (spec.n() as i64, spec.k() as i64);
    if n < k + 3 {
        return Err(Error::Config(format!(
            "the unstable mode needs N >= K + 3, got N = {n}, K = {k}"
        )));
    }
    let ramp = (n - k - 2) as f64;
    let mut v = Displacement::from_fn(IndexRange::sites(spec.n()), |j| {
        if j < -k - 2 {
            (n + j) as f64 / ramp
        } else if j > k + 2 {
            (n - j) as f64 / ramp
        } else {
            1.0
        }
    });
    v.set(k + 1, v[k + 1] + sign.value() * spec.eps().sqrt());
    Ok(v)
}

/// [`unstable_candidate_raw`] rescaled to `‖Dv‖_{ℓ²_ε} = 1`.
pub fn unstable_candidate(spec: &DomainSpec, sign: Sign) -> Result<Displacement> {
    let v = unstable_candidate_raw(spec, sign)?;
    let norm = diff(&v, spec.eps())?.norm(2.0, spec.eps());
    Ok(v.scale(1.0 / norm))
}

/// `⟨L^qcf v, v⟩` for `v ∈ V₀`.
pub fn quadratic_form(c: &Coefficients, spec: &DomainSpec, v: &Displacement) -> Result<f64> {
    v.ensure_range(IndexRange::sites(spec.n()))?;
    v.ensure_homogeneous()?;
    site_pairing(&assemble_lqcf(c, spec), v, v, spec.eps())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoercivityScanRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rayleigh_min: f64,
    /// Smaller quadratic form over the two normalized unstable candidates;
    /// absent when `N < K+3`.
    pub witness_value: Option<f64>,
}

pub fn coercivity_row(c: &Coefficients, spec: &DomainSpec) -> Result<CoercivityScanRow> {
    let rayleigh = rayleigh_min(c, spec)?;
    let witness = if spec.n() >= spec.k() + 3 {
        let mut best = f64::INFINITY;
        for sign in [Sign::Plus, Sign::Minus] {
            best = best.min(quadratic_form(c, spec, &unstable_candidate(spec, sign)?)?);
        }
        Some(best)
    } else {
        None
    };
    Ok(CoercivityScanRow {
        n: spec.n(),
        k: spec.k(),
        rayleigh_min: rayleigh,
        witness_value: witness,
    })
}

/// Row-diagonal-dominance margin
/// `γ = min_i (A_ii + Σ_{j≠i} min(A_ij, 0)) - max_i Σ_{j≠i} max(A_ij, 0)`.
pub fn rdd_margin(a: &DenseOperator) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::RangeMismatch {
            expected: a.rows(),
            found: a.cols(),
        });
    }
    let m = a.matrix();
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    for i in 0..m.nrows() {
        let mut neg = 0.0;
        let mut pos = 0.0;
        for (j, &v) in m.row(i).iter().enumerate() {
            if j != i {
                if v < 0.0 {
                    neg += v;
                } else {
                    pos += v;
                }
            }
        }
        low = low.min(m[(i, i)] + neg);
        high = high.max(pos);
    }
    Ok(low - high.max(0.0))
}

/// `Qᵀ A Q` for an orthonormal basis `Q` of the mean-zero subspace, built from
/// the Householder reflector that maps `e₀` to the normalized constant vector.
pub fn mean_zero_compression(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut w = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    w[0] -= 1.0;
    let wn = w.norm();
    w /= wn;
    // H A H with H = I - 2wwᵀ
    let aw = a * &w;
    let wta = a.tr_mul(&w);
    let waw = w.dot(&aw);
    let mut h = a.clone();
    h.ger(-2.0, &w, &wta, 1.0);
    h.ger(-2.0, &aw, &w, 1.0);
    h.ger(4.0 * waw, &w, &w, 1.0);
    h.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// Inf-sup constant of a bond operator over the mean-zero `ℓ²_ε` pairing: the
/// smallest singular value of its compression to the mean-zero subspace.
pub fn infsup_2(a: &DenseOperator) -> Result<f64> {
    if !a.is_square() || a.rows().len() < 2 {
        return Err(Error::InvalidArgument(
            "inf-sup needs a square operator with at least two rows".into(),
        ));
    }
    let compressed = mean_zero_compression(a.matrix());
    let scale = compressed.amax().max(f64::MIN_POSITIVE);
    let svd = SVD::try_new(compressed, false, false, f64::EPSILON * scale, 0)
        .ok_or(Error::Eigen { residual: f64::NAN })?;
    Ok(svd.singular_values.min())
}

/// Coefficient `α = (φ″_F + 5φ″_{2F}) / (2φ″_{2F})` of the nonlocal mode.
pub fn nonlocal_alpha(c: &Coefficients) -> Result<f64> {
    if c.phi_2f == 0.0 {
        return Err(Error::Config("the nonlocal mode needs phi2F != 0".into()));
    }
    Ok((c.phi_f + 5.0 * c.phi_2f) / (2.0 * c.phi_2f))
}

/// Mean-zero strain concentrated on the interfaces: `-1` left of `-K`, `-α` at `-K`,
/// `0` on `-K+1..=K`, `α` at `K+1`, `1` right of `K+1`. `E^qcf` maps it to a
/// field supported on the four bonds `-K, -K+1, K, K+1`.
pub fn nonlocal_mode(c: &Coefficients, spec: &DomainSpec) -> Result<StrainVector> {
    let alpha = nonlocal_alpha(c)?;
    let k = spec.k() as i64;
    Ok(StrainVector::from_fn(IndexRange::bonds(spec.n()), |j| {
        if j < -k {
            -1.0
        } else if j == -k {
            -alpha
        } else if j <= k {
            0.0
        } else if j == k + 1 {
            alpha
        } else {
            1.0
        }
    }))
}

/// `‖E^qcf ξ̃‖_{ℓᵖ_ε} / ‖ξ̃‖_{ℓᵖ_ε}` for the nonlocal mode, in closed form.
pub fn infsup_p_upper(c: &Coefficients, spec: &DomainSpec, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let alpha = nonlocal_alpha(c)?;
    let eps = spec.eps();
    let (a, b) = nonlocal_image_values(c, alpha);
    let num = 2.0 * eps * (a.abs().powf(p) + b.abs().powf(p));
    let den = 2.0 * eps * ((spec.n() - spec.k() - 1) as f64 + alpha.abs().powf(p));
    Ok((num / den).powf(1.0 / p))
}

/// Constant `C` with `infsup_p_upper ≤ C N^{-1/p}` once `N ≥ 2K+2`.
pub fn infsup_p_upper_constant(c: &Coefficients, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let (a, b) = nonlocal_image_values(c, nonlocal_alpha(c)?);
    Ok((2.0 * (a.abs().powf(p) + b.abs().powf(p))).powf(1.0 / p))
}

/// The two distinct magnitudes of `E^qcf ξ̃`: `αφ″_{2F}` and `αφ″_F + (1+2α)φ″_{2F}`.
fn nonlocal_image_values(c: &Coefficients, alpha: f64) -> (f64, f64) {
    (alpha * c.phi_2f, alpha * c.phi_f + (1.0 + 2.0 * alpha) * c.phi_2f)
}

/// The same quotient computed by assembling `E^qcf` and applying it.
pub fn infsup_p_upper_direct(c: &Coefficients, spec: &DomainSpec, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let xi = nonlocal_mode(c, spec)?;
    let image = assemble_eqcf(c, spec).apply(&xi)?;
    Ok(image.norm(p, spec.eps()) / xi.norm(p, spec.eps()))
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "norm exponent must satisfy 1 <= p < inf, got {p}"
        )));
    }
    Ok(())
}

/// `sup_η ⟨Aξ, η⟩ / ‖η‖_{ℓ¹_ε}` over mean-zero `η`, which the extreme points
/// `(e_i - e_j)/(2ε)` reduce to `½(max Aξ - min Aξ)`.
pub fn linf_l1_sup(a: &DenseOperator, xi: &StrainVector) -> Result<f64> {
    let image = a.apply(xi)?;
    let (lo, hi) = image
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(0.5 * (hi - lo))
}

/// Smallest `linf_l1_sup(ξ) / ‖ξ‖_∞` over the given mean-zero candidates.
/// Candidates whose mean is not zero (to `1e-12` of their size) are rejected.
pub fn linf_l1_search<'a>(
    a: &DenseOperator,
    candidates: impl IntoIterator<Item = &'a StrainVector>,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for xi in candidates {
        let size = xi.max_abs();
        let mean = xi.values().iter().sum::<f64>() / xi.values().len() as f64;
        if mean.abs() > 1e-12 * size {
            return Err(Error::InvalidArgument(format!(
                "candidate strain is not mean-zero (mean {mean:.3e})"
            )));
        }
        if size > 0.0 {
            best = best.min(linf_l1_sup(a, xi)? / size);
        }
    }
    Ok(best)
}

/// The dual norm `sup { ⟨f, w⟩ : w ∈ V₀, ‖Dw‖_{ℓ¹_ε} = 1 }` of a site field on
/// `-N..=N`: `½(max g - min g)` for the tail sums `g_i = ε Σ_{j=i}^{N-1} f_j`,
/// `i = -N+1..=N`. The end values `f_{±N}` do not enter.
pub fn dual_norm_star(f: &Displacement, eps: f64) -> Result<f64> {
    let r = f.range();
    if r.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "dual norm needs at least one free site, got range {r}"
        )));
    }
    let vals = f.values();
    let mut g = 0.0;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for &fj in vals[1..vals.len() - 1].iter().rev() {
        g += eps * fj;
        lo = lo.min(g);
        hi = hi.max(g);
    }
    Ok(0.5 * (hi - lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Exact,
    LowerBound,
    UpperBound,
}

fn serialize_exponent<S: Serializer>(p: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if p.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*p)
    }
}

/// One inf-sup value or bound. `p = ∞` labels the `ℓ∞_ε`–`ℓ¹_ε` pairing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfSupScanRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(serialize_with = "serialize_exponent")]
    pub p: f64,
    pub kind: BoundKind,
    pub value: f64,
}

/// Spectrum summary of the (non-symmetric) QCF operator on V₀.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenScanRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub min_real: f64,
    pub max_abs_imag: f64,
    pub negative_real_count: usize,
}

/// Eigenvalues of `ε² L^qcf` restricted to V₀, summarized.
pub fn eigen_scan_row(c: &Coefficients, spec: &DomainSpec) -> Result<EigenScanRow> {
    let eps2 = spec.eps() * spec.eps();
    let m = assemble_lqcf(c, spec).interior_block()?.into_matrix() * eps2;
    let eig = m.complex_eigenvalues();
    let mut min_real = f64::INFINITY;
    let mut max_imag: f64 = 0.0;
    let mut negative = 0;
    for z in eig.iter() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Eigen { residual: f64::NAN });
        }
        min_real = min_real.min(z.re);
        max_imag = max_imag.max(z.im.abs());
        if z.re < 0.0 {
            negative += 1;
        }
    }
    Ok(EigenScanRow {
        n: spec.n(),
        k: spec.k(),
        min_real,
        max_abs_imag: max_imag,
        negative_real_count: negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{assemble_ea, l2_decomposition};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference minimum of the Rayleigh quotient through the strain-space form.
    fn rayleigh_via_strains(c: &Coefficients, spec: &DomainSpec) -> f64 {
        let e = assemble_eqcf(c, spec).into_matrix();
        let sym = (&e + e.transpose()) * 0.5;
        let q = mean_zero_compression(&sym);
        SymmetricEigen::new(q).eigenvalues.min()
    }

    #[test]
    fn pencil_matches_strain_route() {
        for (c, n, k) in [((1.0, -0.2), 16, 4), ((1.0, -0.1), 24, 5), ((2.0, 0.3), 12, 6)] {
            let c = Coefficients::new(c.0, c.1).unwrap();
            let spec = DomainSpec::new(n, k, 4 * n).unwrap();
            let a = rayleigh_min(&c, &spec).unwrap();
            let b = rayleigh_via_strains(&c, &spec);
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn nearest_neighbour_chain_is_exactly_coercive() {
        let c = Coefficients::new(1.0, 0.0).unwrap();
        for n in [4, 16, 64] {
            let spec = DomainSpec::new(n, 2, 2 * n).unwrap();
            assert!((rayleigh_min(&c, &spec).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_eigen_helpers() {
        let d = vec![2.0; 6];
        let e = vec![-1.0; 5];
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / 7.0).cos();
        let lambda = tridiagonal_min_eigenvalue(&d, &e);
        assert!((lambda - exact).abs() < 1e-14);
        assert_eq!(count_below(&d, &e, 2.0), 3);
        assert!(inverse_iteration_residual(&d, &e, lambda) < 1e-12);
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        for sigma in [0.0, 0.7, 3.9] {
            let x = tridiagonal_solve(&d, &e, sigma, &b);
            let back = tridiagonal_apply(&d, &e, &x);
            for i in 0..6 {
                assert!((back[i] - sigma * x[i] - b[i]).abs() < 1e-12);
            }
        }
        // a pivot-heavy case
        let d = vec![1e-3, 5.0, -2.0, 0.1];
        let e = vec![4.0, 1e-2, 3.0];
        let x = tridiagonal_solve(&d, &e, 0.0, &b[..4]);
        let back = tridiagonal_apply(&d, &e, &x);
        for i in 0..4 {
            assert!((back[i] - b[i]).abs() < 1e-10, "{back:?}");
        }
    }

    #[test]
    fn dense_min_eigenvalue_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(30, 30, |_, _| rng.random_range(-1.0..1.0));
        let s = &a + a.transpose();
        let reference = SymmetricEigen::new(s.clone()).eigenvalues.min();
        assert!((symmetric_min_eigenvalue(s).unwrap() - reference).abs() < 1e-12);
    }

    #[test]
    fn candidate_interface_terms() {
        for (n, k) in [(16, 4), (64, 16), (100, 7)] {
            let spec = DomainSpec::new(n, k, 4 * n).unwrap();
            let v = unstable_candidate_raw(&spec, Sign::Plus).unwrap();
            assert!(v.is_homogeneous());
            let split = l2_decomposition(&v, &v, &spec).unwrap();
            assert_eq!(split.left_interface, 0.0);
            assert_relative_eq!(split.interface(), 3.0 * (n as f64).sqrt(), max_relative = 1e-10);
            let u = unstable_candidate(&spec, Sign::Minus).unwrap();
            assert_relative_eq!(diff(&u, spec.eps()).unwrap().norm(2.0, spec.eps()), 1.0, max_relative = 1e-14);
        }
        let tight = DomainSpec::new(5, 2, 20).unwrap();
        assert!(unstable_candidate(&tight, Sign::Plus).is_ok());
        let too_tight = DomainSpec::new(4, 2, 20).unwrap();
        assert!(unstable_candidate(&too_tight, Sign::Plus).is_err());
    }

    #[test]
    fn candidate_is_feasible() {
        let c = Coefficients::new(1.0, -0.2).unwrap();
        for (n, k) in [(16, 4), (32, 8), (40, 3)] {
            let spec = DomainSpec::new(n, k, 4 * n).unwrap();
            let row = coercivity_row(&c, &spec).unwrap();
            assert!(row.rayleigh_min <= row.witness_value.unwrap() + 1e-12);
        }
        let spec = DomainSpec::new(4, 2, 16).unwrap();
        assert_eq!(coercivity_row(&c, &spec).unwrap().witness_value, None);
    }

    #[test]
    fn margins() {
        let id = DenseOperator::from_matrix(IndexRange::bonds(3), IndexRange::bonds(3), DMatrix::identity(6, 6)).unwrap();
        assert_eq!(rdd_margin(&id).unwrap(), 1.0);
        let c = Coefficients::new(1.0, -0.05).unwrap();
        let spec = DomainSpec::new(64, 16, 256).unwrap();
        assert!((rdd_margin(&assemble_eqcf(&c, &spec)).unwrap() - 0.6).abs() <= 1e-14);
        let c = Coefficients::new(1.0, -0.1).unwrap();
        assert!((rdd_margin(&assemble_ea(&c, 16).unwrap()).unwrap() - 0.6).abs() <= 1e-14);
        assert!(rdd_margin(&assemble_lqcf(&c, &spec)).is_err());
    }

    #[test]
    fn infsup_of_identity_and_sandwich() {
        let id = DenseOperator::from_matrix(IndexRange::bonds(8), IndexRange::bonds(8), DMatrix::identity(16, 16)).unwrap();
        assert!((infsup_2(&id).unwrap() - 1.0).abs() < 1e-12);
        let c = Coefficients::new(1.0, -0.05).unwrap();
        for n in [16, 32, 64] {
            let spec = DomainSpec::new(n, n / 4, 4 * n).unwrap();
            let exact = infsup_2(&assemble_eqcf(&c, &spec)).unwrap();
            assert!(exact <= infsup_p_upper(&c, &spec, 2.0).unwrap());
            assert!(exact > 0.0);
        }
    }

    #[test]
    fn compression_drops_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(9, 9, |_, _| rng.random_range(-1.0..1.0));
        let q = mean_zero_compression(&a);
        // same as explicit projection: singular values of P A P on the complement
        let p = DMatrix::identity(9, 9) - DMatrix::from_element(9, 9, 1.0 / 9.0);
        let pap = &p * &a * &p;
        let mut s1: Vec<f64> = q.singular_values().iter().copied().collect();
        let mut s2: Vec<f64> = pap.singular_values().iter().copied().collect();
        s1.sort_by(f64::total_cmp);
        s2.sort_by(f64::total_cmp);
        for (x, y) in s1.iter().zip(&s2[1..]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlocal_mode_image() {
        let c = Coefficients::new(1.0, -0.05).unwrap();
        let spec = DomainSpec::new(64, 16, 256).unwrap();
        let alpha = nonlocal_alpha(&c).unwrap();
        let xi = nonlocal_mode(&c, &spec).unwrap();
        assert!(xi.values().iter().sum::<f64>().abs() < 1e-12);
        let image = assemble_eqcf(&c, &spec).apply(&xi).unwrap();
        let (a, b) = nonlocal_image_values(&c, alpha);
        for (j, v) in image.iter() {
            let expect = match j {
                -16 => -b,
                -15 => -a,
                16 => a,
                17 => b,
                _ => 0.0,
            };
            assert!((v - expect).abs() < 1e-14, "j={j}: {v} vs {expect}");
        }
        // continuum rows read φ″_F·ξ̃ + φ″_{2F}(-5+2α) before the cancellation
        assert!((-c.phi_f + c.phi_2f * (-5.0 + 2.0 * alpha)).abs() < 1e-15);
    }

    #[test]
    fn nonlocal_bounds() {
        let c = Coefficients::new(1.0, -0.25).unwrap();
        assert_eq!(nonlocal_alpha(&c).unwrap(), 0.5);
        let c = Coefficients::new(1.0, -0.1).unwrap();
        for p in [1.0, 2.0, 4.0] {
            for n in [16, 64, 256] {
                let spec = DomainSpec::new(n, n / 4, 4 * n).unwrap();
                let closed = infsup_p_upper(&c, &spec, p).unwrap();
                let direct = infsup_p_upper_direct(&c, &spec, p).unwrap();
                assert_relative_eq!(closed, direct, max_relative = 1e-12);
                let bound = infsup_p_upper_constant(&c, p).unwrap() * (n as f64).powf(-1.0 / p);
                assert!(closed <= bound);
            }
        }
        assert!(nonlocal_alpha(&Coefficients::new(1.0, 0.0).unwrap()).is_err());
        let spec = DomainSpec::new(16, 4, 64).unwrap();
        assert!(infsup_p_upper(&c, &spec, 0.5).is_err());
    }

    #[test]
    fn linf_l1_search_respects_margin() {
        let c = Coefficients::new(1.0, -0.05).unwrap();
        let spec = DomainSpec::new(16, 4, 64).unwrap();
        let e = assemble_eqcf(&c, &spec);
        let gamma = rdd_margin(&e).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bonds = IndexRange::bonds(16);
        let mut cands = vec![nonlocal_mode(&c, &spec).unwrap()];
        for i in bonds.iter() {
            for j in bonds.iter().filter(|&j| j > i) {
                cands.push(StrainVector::from_fn(bonds, |b| (b == i) as i32 as f64 - (b == j) as i32 as f64));
            }
        }
        for _ in 0..200 {
            let raw: Vec<f64> = bonds.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            cands.push(StrainVector::new(bonds, raw.iter().map(|x| x - mean).collect()).unwrap());
        }
        let found = linf_l1_search(&e, &cands).unwrap();
        assert!(found >= 0.5 * gamma - 1e-10);
        let skewed = StrainVector::from_fn(bonds, |_| 1.0);
        assert!(linf_l1_search(&e, [&skewed]).is_err());
    }

    #[test]
    fn dual_norm_cases() {
        let n = 8usize;
        let eps = 1.0 / n as f64;
        let zero = Displacement::zeros(IndexRange::sites(n));
        assert_eq!(dual_norm_star(&zero, eps).unwrap(), 0.0);
        let mut imp = zero.clone();
        imp.set(0, 1.0 / eps);
        assert!((dual_norm_star(&imp, eps).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mut f = Displacement::from_fn(IndexRange::sites(n), |_| rng.random_range(-1.0..1.0));
            f.set(-(n as i64), 0.0);
            f.set(n as i64, 0.0);
            assert!(dual_norm_star(&f, eps).unwrap() <= 0.5 * f.norm(1.0, eps) + 1e-15);
        }
    }

    #[test]
    fn eigen_scan_is_positive_in_stable_regime() {
        let c = Coefficients::new(1.0, -0.1).unwrap();
        let spec = DomainSpec::new(32, 8, 128).unwrap();
        let row = eigen_scan_row(&c, &spec).unwrap();
        assert!(row.min_real > 0.0);
        assert_eq!(row.negative_real_count, 0);
    }
}
