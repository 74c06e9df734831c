//! Pair potentials and the nonlinear next-nearest-neighbour chain.
//!
//! Positions `y_j` are given on a symmetric site range `-L..=L`; the lattice
//! spacing is `ε`. Potentials are evaluated at the dimensionless bond strain
//! `(y_j - y_i)/ε`. Forces are per lattice spacing, `F_j = -(1/ε) ∂E/∂y_j`,
//! and are returned on the free sites `-L+1..=L-1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{uniform_positions, Displacement, IndexRange};

pub trait PairPotential: Send + Sync {
    fn eval(&self, r: f64) -> Result<f64>;
    fn deriv1(&self, r: f64) -> Result<f64>;
    fn deriv2(&self, r: f64) -> Result<f64>;
}

/// Normalized Lennard-Jones potential `φ(r) = r⁻¹² - 2r⁻⁶`, minimum `-1` at `r = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LennardJones;

pub fn lennard_jones() -> LennardJones {
    LennardJones
}

impl LennardJones {
    fn inverse_sixth(r: f64) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain { r });
        }
        let s = 1.0 / (r * r);
        Ok(s * s * s)
    }
}

impl PairPotential for LennardJones {
    fn eval(&self, r: f64) -> Result<f64> {
        let x = Self::inverse_sixth(r)?;
        Ok(x * x - 2.0 * x)
    }

    fn deriv1(&self, r: f64) -> Result<f64> {
        let x = Self::inverse_sixth(r)?;
        Ok(12.0 * (x - x * x) / r)
    }

    fn deriv2(&self, r: f64) -> Result<f64> {
        let x = Self::inverse_sixth(r)?;
        Ok((156.0 * x * x - 84.0 * x) / (r * r))
    }
}

/// Linearized spring constants `φ″_F = φ″(F)` and `φ″_{2F} = φ″(2F)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub phi_f: f64,
    pub phi_2f: f64,
}

impl Coefficients {
    pub fn new(phi_f: f64, phi_2f: f64) -> Result<Self> {
        if !(phi_f > 0.0) || !phi_f.is_finite() {
            return Err(Error::Config(format!("phiF must be positive, got {phi_f}")));
        }
        if !phi_2f.is_finite() {
            return Err(Error::Config(format!("phi2F must be finite, got {phi_2f}")));
        }
        Ok(Self { phi_f, phi_2f })
    }

    /// Linearize `φ` about the uniform stretch `F`.
    pub fn from_potential<P: PairPotential + ?Sized>(phi: &P, stretch: f64) -> Result<Self> {
        Self::new(phi.deriv2(stretch)?, phi.deriv2(2.0 * stretch)?)
    }

    /// `φ″_F + 4φ″_{2F}`: positive iff the atomistic chain is stable.
    pub fn atomistic_margin(&self) -> f64 {
        self.phi_f + 4.0 * self.phi_2f
    }

    /// `φ″_F + 8φ″_{2F}`: the margin under which the QCF operator is inf-sup stable.
    pub fn qcf_margin(&self) -> f64 {
        self.phi_f + 8.0 * self.phi_2f
    }
}

/// Computational half-width `N` (ε = 1/N), atomistic half-width `K` and
/// reference half-width `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    n: usize,
    k: usize,
    m: usize,
}

impl DomainSpec {
    pub fn new(n: usize, k: usize, m: usize) -> Result<Self> {
        if k < 2 || 2 * k > n {
            return Err(Error::Config(format!(
                "K out of range: need 2 <= K <= N/2, got N = {n}, K = {k}"
            )));
        }
        if m <= n {
            return Err(Error::Config(format!(
                "reference half-width must exceed N: got N = {n}, M = {m}"
            )));
        }
        Ok(Self { n, k, m })
    }

    /// `M = factor · N`.
    pub fn with_factor(n: usize, k: usize, m_factor: usize) -> Result<Self> {
        Self::new(n, k, m_factor.saturating_mul(n))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Atomistic region `A = {-K..=K}`.
    pub fn atomistic(&self) -> IndexRange {
        IndexRange::sites(self.k)
    }

    pub fn in_atomistic(&self, j: i64) -> bool {
        j.unsigned_abs() as usize <= self.k
    }

    /// Continuum sites `C = {-N+1..=N-1} \ A`.
    pub fn in_continuum(&self, j: i64) -> bool {
        !self.in_atomistic(j) && (j.unsigned_abs() as usize) < self.n
    }
}

fn half_width_of(y: &Displacement) -> Result<usize> {
    let r = y.range();
    if r.lo() != -r.hi() || r.hi() < 2 {
        return Err(Error::InvalidArgument(format!(
            "positions must cover a symmetric range -L..=L with L >= 2, got {r}"
        )));
    }
    Ok(r.hi() as usize)
}

/// Nearest-neighbour strains `(y_j - y_{j-1})/ε` for bonds `-L+1..=L`, stored from offset 0.
fn nn_strains(y: &[f64], eps: f64) -> Vec<f64> {
    y.windows(2).map(|w| (w[1] - w[0]) / eps).collect()
}

/// Next-nearest strains `(y_j - y_{j-2})/ε` for `j = -L+2..=L`.
fn nnn_strains(y: &[f64], eps: f64) -> Vec<f64> {
    y.windows(3).map(|w| (w[2] - w[0]) / eps).collect()
}

fn map_potential(
    strains: &[f64],
    f: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    strains.iter().map(|&s| f(s)).collect()
}

/// Atomistic energy `Σ ε φ(Dy_j) + Σ ε φ((y_j - y_{j-2})/ε)`.
pub fn energy_atomistic<P: PairPotential + ?Sized>(
    y: &Displacement,
    eps: f64,
    phi: &P,
) -> Result<f64> {
    half_width_of(y)?;
    let nn = map_potential(&nn_strains(y.values(), eps), |s| phi.eval(s))?;
    let nnn = map_potential(&nnn_strains(y.values(), eps), |s| phi.eval(s))?;
    Ok(eps * (nn.iter().sum::<f64>() + nnn.iter().sum::<f64>()))
}

/// Local QC (Cauchy-Born) energy `Σ ε [φ(Dy_j) + φ(2Dy_j)]`.
pub fn energy_lqc<P: PairPotential + ?Sized>(y: &Displacement, eps: f64, phi: &P) -> Result<f64> {
    half_width_of(y)?;
    let mut total = 0.0;
    for s in nn_strains(y.values(), eps) {
        total += phi.eval(s)? + phi.eval(2.0 * s)?;
    }
    Ok(eps * total)
}

/// Per-bond derivative tables reused by the force routines.
struct BondForces {
    /// `φ′(Dy_b)` for bonds `b = -L+1..=L` at offset `b + L - 1`.
    nn: Vec<f64>,
    /// `φ′((y_j - y_{j-2})/ε)` for `j = -L+2..=L` at offset `j + L - 2`.
    nnn: Vec<f64>,
    /// `φ′(Dy_b) + 2φ′(2Dy_b)` for bonds `b = -L+1..=L`.
    cauchy_born: Vec<f64>,
}

impl BondForces {
    fn new<P: PairPotential + ?Sized>(y: &Displacement, eps: f64, phi: &P, lqc: bool) -> Result<Self> {
        let s = nn_strains(y.values(), eps);
        let nn = map_potential(&s, |r| phi.deriv1(r))?;
        let nnn = map_potential(&nnn_strains(y.values(), eps), |r| phi.deriv1(r))?;
        let cauchy_born = if lqc {
            s.iter()
                .zip(&nn)
                .map(|(&r, &d)| Ok(d + 2.0 * phi.deriv1(2.0 * r)?))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { nn, nnn, cauchy_born })
    }
}

/// `F^a_j` at site `j` of a chain of half-width `l`; next-nearest bonds that
/// would reach beyond `±l` contribute zero.
fn atomistic_force_at(t: &BondForces, l: i64, j: i64, eps: f64) -> f64 {
    let nn = |b: i64| t.nn[(b + l - 1) as usize];
    let nnn = |top: i64| {
        if top >= -l + 2 && top <= l {
            t.nnn[(top + l - 2) as usize]
        } else {
            0.0
        }
    };
    ((nn(j + 1) + nnn(j + 2)) - (nn(j) + nnn(j))) / eps
}

fn lqc_force_at(t: &BondForces, l: i64, j: i64, eps: f64) -> f64 {
    let cb = |b: i64| t.cauchy_born[(b + l - 1) as usize];
    (cb(j + 1) - cb(j)) / eps
}

/// Atomistic force `F^a_j`, `j = -L+1..=L-1`.
pub fn force_atomistic<P: PairPotential + ?Sized>(
    y: &Displacement,
    eps: f64,
    phi: &P,
) -> Result<Displacement> {
    let l = half_width_of(y)?;
    let t = BondForces::new(y, eps, phi, false)?;
    let l = l as i64;
    Ok(Displacement::from_fn(IndexRange::interior(l as usize), |j| {
        atomistic_force_at(&t, l, j, eps)
    }))
}

/// Local QC force `F^lqc_j`, `j = -L+1..=L-1`.
pub fn force_lqc<P: PairPotential + ?Sized>(
    y: &Displacement,
    eps: f64,
    phi: &P,
) -> Result<Displacement> {
    let l = half_width_of(y)?;
    let t = BondForces::new(y, eps, phi, true)?;
    let l = l as i64;
    Ok(Displacement::from_fn(IndexRange::interior(l as usize), |j| {
        lqc_force_at(&t, l, j, eps)
    }))
}

/// Force-based QC force on the computational domain: atomistic law on
/// `A = {-K..=K}`, local QC law on the continuum sites.
pub fn force_qcf<P: PairPotential + ?Sized>(
    y: &Displacement,
    spec: &DomainSpec,
    phi: &P,
) -> Result<Displacement> {
    y.ensure_range(IndexRange::sites(spec.n()))?;
    let eps = spec.eps();
    let t = BondForces::new(y, eps, phi, true)?;
    let l = spec.n() as i64;
    Ok(Displacement::from_fn(IndexRange::interior(spec.n()), |j| {
        if spec.in_atomistic(j) {
            atomistic_force_at(&t, l, j, eps)
        } else {
            lqc_force_at(&t, l, j, eps)
        }
    }))
}

/// Ghost-force measurement of [`force_qcf`] at one uniform state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PatchResidual {
    /// Stretch actually realised by the exactly uniform positions.
    pub stretch: f64,
    pub max_residual: f64,
    /// `(|φ'(F)| + |φ'(2F)|)/ε`, the size of a single bond force.
    pub scale: f64,
}

impl PatchResidual {
    pub fn relative(&self) -> f64 {
        self.max_residual / self.scale
    }
}

/// Largest QCF force on the uniformly stretched chain `y_j = F j ε`.
pub fn patch_residual<P: PairPotential + ?Sized>(stretch: f64, spec: &DomainSpec, phi: &P) -> Result<PatchResidual> {
    let eps = spec.eps();
    let (y, f_eff) = uniform_positions(stretch, eps, spec.n());
    let force = force_qcf(&y, spec, phi)?;
    let bond = phi.deriv1(f_eff)?.abs() + phi.deriv1(2.0 * f_eff)?.abs();
    let scale = if bond > 0.0 { bond / eps } else { 1.0 / eps };
    Ok(PatchResidual {
        stretch: f_eff,
        max_residual: force.max_abs(),
        scale,
    })
}
