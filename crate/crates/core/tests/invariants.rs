//! Property tests for invariants that must hold for arbitrary data.

use lwfr::amr::{coarsen_transfer, refine_transfer, transfer_solution};
use lwfr::basis::{gll_basis, mortar_operators};
use lwfr::equations::{Euler, State};
use lwfr::lwfr::{element_integral, element_mean};
use lwfr::mesh::{build_structured, flip_index, AdaptFlag, Origin, StructuredSpec, Transform};
use lwfr::shockcapture::scaling_limiter;
use lwfr::timestep::kappa;
use proptest::prelude::*;

const EQ: Euler = Euler { gamma: 1.4 };

fn primitive() -> impl Strategy<Value = [f64; 4]> {
    (0.1..10.0f64, -5.0..5.0f64, -5.0..5.0f64, 0.1..10.0f64).prop_map(|(r, u, v, p)| [r, u, v, p])
}

fn unit_normal() -> impl Strategy<Value = [f64; 2]> {
    (0.0..std::f64::consts::TAU).prop_map(|a| [a.cos(), a.sin()])
}

fn rel_close(a: &State, b: &State, tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn prim_cons_round_trip(w in primitive()) {
        let back = EQ.cons2prim(&EQ.prim2cons(&w));
        prop_assert!(rel_close(&back, &w, 1e-13));
    }

    #[test]
    fn rusanov_is_consistent(w in primitive(), n in unit_normal()) {
        let u = EQ.prim2cons(&w);
        prop_assert!(rel_close(&EQ.rusanov(&u, &u, n), &EQ.normal_flux(&u, n), 1e-14));
    }

    #[test]
    fn rusanov_is_antisymmetric(a in primitive(), b in primitive(), n in unit_normal()) {
        let (ua, ub) = (EQ.prim2cons(&a), EQ.prim2cons(&b));
        let f = EQ.rusanov(&ua, &ub, n);
        let g = EQ.rusanov(&ub, &ua, [-n[0], -n[1]]);
        prop_assert!(rel_close(&f, &g.map(|x| -x), 1e-13));
    }

    #[test]
    fn reflection_is_an_involution_preserving_pressure(w in primitive(), n in unit_normal()) {
        let u = EQ.prim2cons(&w);
        let r = Euler::reflect(&u, n);
        prop_assert!(rel_close(&Euler::reflect(&r, n), &u, 1e-14));
        prop_assert!((EQ.pressure(&r) - EQ.pressure(&u)).abs() <= 1e-12 * EQ.pressure(&u));
        let mn = r[1] * n[0] + r[2] * n[1];
        let un = u[1] * n[0] + u[2] * n[1];
        prop_assert!((mn + un).abs() <= 1e-12 * (1.0 + un.abs()));
    }

    #[test]
    fn kappa_is_bounded_and_increasing(x in 0.0..1e6f64, dx in 1e-6..10.0f64) {
        let (a, b) = (kappa(x), kappa(x + dx));
        prop_assert!(a > 1.0 - std::f64::consts::FRAC_PI_4 - 1e-15);
        prop_assert!(b < 1.0 + std::f64::consts::FRAC_PI_2);
        prop_assert!(b > a);
    }

    #[test]
    fn flip_index_is_an_involution(n in 1usize..12, k in 0usize..12, flipped: bool) {
        let k = k % (n + 1);
        prop_assert_eq!(flip_index(n, flip_index(n, k, flipped), flipped), k);
    }

    #[test]
    fn scaling_limiter_restores_admissibility_and_keeps_mean(
        base in primitive(),
        bumps in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 16),
    ) {
        let basis = gll_basis(3).unwrap();
        let mesh = build_structured(&StructuredSpec::new(Transform::annulus(), 2, 2), &basis).unwrap();
        let geom = &mesh.geometry[0];
        // Large density and energy perturbations, many nodes inadmissible.
        let c = EQ.prim2cons(&base);
        let mut u: Vec<State> = bumps
            .iter()
            .map(|(a, b)| [c[0] * (1.0 + a), c[1] * (1.0 - b), c[2] * (1.0 + 0.5 * a), c[3] * (1.0 + b)])
            .collect();
        let mean = element_mean(&u, geom, &basis);
        prop_assume!(EQ.is_admissible(&mean));
        let theta = scaling_limiter(&EQ, &mut u, &mean).unwrap();
        prop_assert!((0.0..=1.0).contains(&theta));
        prop_assert!(u.iter().all(|s| EQ.is_admissible(s)));
        prop_assert!(rel_close(&element_mean(&u, geom, &basis), &mean, 1e-12));
    }

    #[test]
    fn projection_inverts_interpolation_on_random_vectors(n in 1usize..=8, seed in proptest::collection::vec(-1.0..1.0f64, 9)) {
        let basis = gll_basis(n).unwrap();
        let ops = mortar_operators(&basis);
        let a = &seed[..=n];
        let back: Vec<f64> = (0..2)
            .map(|s| ops.proj[s].matvec(&ops.interp[s].matvec(a)))
            .fold(vec![0.0; n + 1], |acc, v| acc.iter().zip(&v).map(|(x, y)| x + y).collect());
        for (x, y) in back.iter().zip(a) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_then_coarsen_recovers_and_conserves(
        n in 4usize..=6,
        coeff in proptest::collection::vec(-0.3..0.3f64, 36),
    ) {
        let basis = gll_basis(n).unwrap();
        let mut mesh = build_structured(&StructuredSpec::new(Transform::warped_square(), 4, 4), &basis).unwrap();
        let np = (n + 1) * (n + 1);
        let u0: Vec<State> = (0..mesh.n_elements() * np)
            .map(|i| {
                let a = coeff[i % coeff.len()];
                EQ.prim2cons(&[1.0 + a, a, -a, 2.0 - a])
            })
            .collect();
        let total = |mesh: &lwfr::mesh::Mesh, u: &[State]| -> State {
            (0..mesh.n_elements()).fold([0.0; 4], |acc, e| {
                let t = element_integral(&u[e * np..(e + 1) * np], &mesh.geometry[e], &mesh.basis);
                std::array::from_fn(|v| acc[v] + t[v])
            })
        };
        let before = total(&mesh, &u0);

        let old_geom = mesh.geometry.clone();
        let origins = mesh.adapt(&vec![AdaptFlag::Refine; mesh.n_elements()]).unwrap();
        prop_assert_eq!(mesh.n_elements(), 64);
        let fine = transfer_solution(&EQ, &mesh, &old_geom, &u0, &origins);
        prop_assert!(rel_close(&total(&mesh, &fine), &before, 1e-12));

        let fine_geom = mesh.geometry.clone();
        let origins = mesh.adapt(&vec![AdaptFlag::Coarsen; mesh.n_elements()]).unwrap();
        let all_coarsened = origins.iter().all(|o| matches!(o, Origin::Coarsened { .. }));
        prop_assert!(all_coarsened);
        let back = transfer_solution(&EQ, &mesh, &fine_geom, &fine, &origins);
        prop_assert!(rel_close(&total(&mesh, &back), &before, 1e-12));
        for (a, b) in back.iter().zip(&u0) {
            prop_assert!(rel_close(a, b, 1e-11));
        }
    }

    #[test]
    fn coarsening_random_children_keeps_volume_weighted_mean(
        vals in proptest::collection::vec(0.5..2.0f64, 64),
    ) {
        let basis = gll_basis(3).unwrap();
        let mut mesh = build_structured(&StructuredSpec::new(Transform::annulus(), 1, 1), &basis).unwrap();
        mesh.adapt(&[AdaptFlag::Refine]).unwrap();
        let kids: Vec<_> = mesh.geometry.clone();
        let np = 16;
        let u: Vec<State> = vals.iter().map(|&r| [r, 0.1 * r, 0.0, 3.0 * r]).collect();
        let children: [&[State]; 4] = std::array::from_fn(|s| &u[s * np..(s + 1) * np]);
        mesh.adapt(&[AdaptFlag::Coarsen; 4]).unwrap();
        let parent = &mesh.geometry[0];
        let up = coarsen_transfer(children, std::array::from_fn(|s| &kids[s]), parent, &mesh.mortar);
        let coarse = element_integral(&up, parent, &basis);
        let fine = (0..4).fold([0.0; 4], |acc, s| {
            let t = element_integral(children[s], &kids[s], &basis);
            std::array::from_fn(|v| acc[v] + t[v])
        });
        prop_assert!(rel_close(&coarse, &fine, 1e-12));

        // Refining the parent again conserves what coarsening produced.
        let re = refine_transfer(&up, parent, std::array::from_fn(|s| &kids[s]), &mesh.mortar);
        let refined = (0..4).fold([0.0; 4], |acc, s| {
            let t = element_integral(&re[s], &kids[s], &basis);
            std::array::from_fn(|v| acc[v] + t[v])
        });
        prop_assert!(rel_close(&refined, &coarse, 1e-12));
    }
}
