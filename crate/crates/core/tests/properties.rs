mod common;

use common::{fd_jacobian, random_sites};
use proptest::prelude::*;
use qcf::lattice::{uniform_positions, Displacement, IndexRange, StrainVector};
use qcf::operators::{assemble_eqcf, assemble_la, assemble_lqcf, diff};
use qcf::potentials::{force_qcf, lennard_jones, patch_residual, Coefficients, DomainSpec};
use qcf::solver::{solve_qcf, stability_bound, ForceField};
use qcf::stability::{
    coercivity_row, dual_norm_star, infsup_2, infsup_p_upper, linf_l1_search, nonlocal_mode, rdd_margin,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Admissible `(N, K)` with `N` in `lo..=hi`.
fn domain(lo: usize, hi: usize) -> impl Strategy<Value = (usize, usize)> {
    (lo..=hi).prop_flat_map(|n| (Just(n), 2..=n / 2))
}

/// Coefficients with `φ″_F + 8φ″_{2F} > 0` and `φ″_{2F} < 0`.
fn stable_coefficients() -> impl Strategy<Value = Coefficients> {
    (0.5f64..2.0, 0.05f64..0.95).prop_map(|(pf, t)| Coefficients::new(pf, -t * pf / 8.0).unwrap())
}

/// Positions `j/32 + p_j/1024` with small integer `p_j`: every sum and
/// difference below stays exact in `f64`.
fn dyadic_state(n: usize) -> impl Strategy<Value = Displacement> {
    prop::collection::vec(-2i32..=2, 2 * n + 1).prop_map(move |p| {
        let values = p
            .iter()
            .enumerate()
            .map(|(i, &pi)| (i as f64 - n as f64) / 32.0 + pi as f64 / 1024.0)
            .collect();
        Displacement::new(IndexRange::sites(n), values).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn uniform_states_have_no_ghost_forces(stretch in 0.85f64..1.3, (n, k) in domain(4, 64)) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let r = patch_residual(stretch, &spec, &lennard_jones()).unwrap();
        prop_assert!(r.relative() <= 1e-13, "relative residual {}", r.relative());
    }

    #[test]
    fn forces_are_translation_invariant(y in dyadic_state(32), k in 2usize..=16, shift in -4096i32..=4096) {
        let spec = DomainSpec::new(32, k, 128).unwrap();
        let s = shift as f64 / 1024.0;
        let moved = y.map(|v| v + s);
        let lj = lennard_jones();
        prop_assert_eq!(force_qcf(&y, &spec, &lj).unwrap(), force_qcf(&moved, &spec, &lj).unwrap());
    }

    #[test]
    fn qcf_operator_is_the_negative_force_jacobian(stretch in 0.95f64..1.1, (n, k) in domain(8, 24)) {
        let lj = lennard_jones();
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let eps = spec.eps();
        let (y, f_eff) = uniform_positions(stretch, eps, n);
        let c = Coefficients::from_potential(&lj, f_eff).unwrap();
        let op = assemble_lqcf(&c, &spec);
        let jac = fd_jacobian(&y, 1e-6, |y| force_qcf(y, &spec, &lj).unwrap());
        let rel = (op.matrix() + &jac).amax() / op.matrix().amax();
        prop_assert!(rel <= 1e-6, "relative deviation {rel}");
    }

    #[test]
    fn qcf_operator_is_not_symmetric(c in stable_coefficients(), (n, k) in domain(8, 40)) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let qcf = assemble_lqcf(&c, &spec).interior_block().unwrap();
        let atom = assemble_la(&c, n, spec.eps()).unwrap().interior_block().unwrap();
        prop_assert!(qcf.asymmetry_norm().unwrap() > 0.0);
        prop_assert_eq!(atom.asymmetry_norm().unwrap(), 0.0);
    }

    #[test]
    fn affine_fields_are_in_the_qcf_kernel(c in stable_coefficients(), (n, k) in domain(4, 40), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let v = Displacement::from_fn(IndexRange::sites(n), |j| a + b * j as f64 * spec.eps());
        let op = assemble_lqcf(&c, &spec);
        let out = op.apply(&v).unwrap();
        prop_assert!(out.max_abs() <= 1e-12 * op.matrix().amax() * v.max_abs().max(1.0));
    }

    #[test]
    fn qcf_strain_obeys_the_stability_bound(c in stable_coefficients(), (n, k) in domain(6, 48), seed in any::<u64>()) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let eps = spec.eps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let load = random_sites(n, &mut rng, true);
        let bc = random_sites(1, &mut rng, false);
        let u = solve_qcf(&c, &ForceField::Samples(load.clone()), &spec, bc[-1], bc[1]).unwrap();
        prop_assert_eq!(u[-(n as i64)], bc[-1]);
        prop_assert_eq!(u[n as i64], bc[1]);
        let strain = diff(&u, eps).unwrap().norm(f64::INFINITY, eps);
        let bound = stability_bound(&c, &spec, dual_norm_star(&load, eps).unwrap(), bc[-1], bc[1]);
        prop_assert!(strain <= bound * (1.0 + 1e-10), "{strain} > {bound}");
    }

    #[test]
    fn dual_norm_is_at_most_half_the_l1_norm((n, _k) in domain(4, 64), seed in any::<u64>()) {
        let eps = 1.0 / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_sites(n, &mut rng, true);
        let star = dual_norm_star(&f, eps).unwrap();
        prop_assert!(star <= 0.5 * f.norm(1.0, eps) * (1.0 + 1e-12));
        prop_assert!((dual_norm_star(&f.scale(-3.0), eps).unwrap() - 3.0 * star).abs() <= 1e-12 * star.max(1e-300));
    }

    #[test]
    fn diagonal_dominance_margin_is_exact(c in stable_coefficients(), (n, k) in domain(4, 96)) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let margin = rdd_margin(&assemble_eqcf(&c, &spec)).unwrap();
        prop_assert!((margin - c.qcf_margin()).abs() <= 1e-14 * c.phi_f.max(1.0));
    }

    #[test]
    fn linf_l1_candidates_respect_the_lower_bound(c in stable_coefficients(), (n, k) in domain(4, 48), seed in any::<u64>()) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let e = assemble_eqcf(&c, &spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut candidates = vec![nonlocal_mode(&c, &spec).unwrap()];
        for _ in 0..20 {
            let w = random_sites(n, &mut rng, true);
            candidates.push(diff(&w, spec.eps()).unwrap());
        }
        let bonds = IndexRange::bonds(n);
        for (i, j) in [(bonds.lo(), bonds.hi()), (0, 1), (-(k as i64), k as i64 + 1)] {
            candidates.push(StrainVector::from_fn(bonds, |b| if b == i { 1.0 } else if b == j { -1.0 } else { 0.0 }));
        }
        let best = linf_l1_search(&e, &candidates).unwrap();
        prop_assert!(best >= 0.5 * c.qcf_margin() - 1e-10, "{best} < {}", 0.5 * c.qcf_margin());
    }

    #[test]
    fn p2_value_sits_below_its_upper_bound(c in stable_coefficients(), (n, k) in domain(4, 48)) {
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let exact = infsup_2(&assemble_eqcf(&c, &spec)).unwrap();
        prop_assert!(exact <= infsup_p_upper(&c, &spec, 2.0).unwrap() * (1.0 + 1e-10));
    }

    #[test]
    fn witness_never_undercuts_the_minimum(phi_2f in -0.3f64..0.3, (n, k) in domain(5, 40)) {
        let c = Coefficients::new(1.0, phi_2f).unwrap();
        let spec = DomainSpec::new(n, k, 4 * n).unwrap();
        let row = coercivity_row(&c, &spec).unwrap();
        if let Some(w) = row.witness_value {
            prop_assert!(w >= row.rayleigh_min - 1e-10 * row.rayleigh_min.abs().max(1.0));
        }
    }
}
