use std::sync::Arc;

use dgfit::adaptivity::{mark, MarkingPolicy, Strategy};
use dgfit::coef::PotentialValue;
use dgfit::fem::{transfer, DgField, DgSpace};
use dgfit::fitting::{combine_pointwise, DeltaPolicy};
use dgfit::mesh::{BoundaryLabels, Domain, Flag, Mesh};
use proptest::prelude::*;

fn adapted(levels: u8, flags: &[u8]) -> Mesh {
    let m = Mesh::create_uniform(Domain::unit_square(), levels, BoundaryLabels::all_dirichlet()).unwrap();
    let f: Vec<Flag> = (0..m.n_cells())
        .map(|c| match flags[c % flags.len()] % 4 {
            0 => Flag::Refine,
            1 => Flag::Coarsen,
            _ => Flag::Keep,
        })
        .collect();
    m.execute_adaptation(&f).unwrap().0
}

/// Three-point Gauss rule per cell, exact up to degree 5 per direction.
fn integral(f: &DgField) -> f64 {
    let a = 0.5 * (0.6f64).sqrt();
    let pts = [(0.5 - a, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + a, 5.0 / 18.0)];
    (0..f.mesh().n_cells())
        .map(|c| {
            let area = f.mesh().rect(c).area();
            pts.iter()
                .flat_map(|&(x, wx)| pts.iter().map(move |&(y, wy)| (x, y, wx * wy)))
                .map(|(x, y, w)| w * area * f.value(c, [x, y]))
                .sum::<f64>()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adapted_mesh_is_valid_and_tiles_domain(levels in 1u8..4, flags in prop::collection::vec(any::<u8>(), 1..40)) {
        let m = adapted(levels, &flags);
        prop_assert!(m.validate().is_ok());
        let area: f64 = (0..m.n_cells()).map(|c| m.rect(c).area()).sum();
        prop_assert!((area - 1.0).abs() < 1e-12);
        for f in m.faces() {
            for s in [0.0, 0.3, 1.0] {
                let p = f.point(s);
                let q = m.rect(f.minus).map(f.minus_map.ref_point(s));
                prop_assert!((p[0] - q[0]).abs() < 1e-14 && (p[1] - q[1]).abs() < 1e-14);
                if let (Some(c), Some(map)) = (f.plus, f.plus_map) {
                    let q = m.rect(c).map(map.ref_point(s));
                    prop_assert!((p[0] - q[0]).abs() < 1e-14 && (p[1] - q[1]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn auxiliary_mesh_refines_both(levels in 2u8..4, flags in prop::collection::vec(any::<u8>(), 1..40)) {
        let m = Mesh::create_uniform(Domain::unit_square(), levels, BoundaryLabels::all_dirichlet()).unwrap();
        let f: Vec<Flag> = (0..m.n_cells())
            .map(|c| match flags[c % flags.len()] % 3 { 0 => Flag::Refine, 1 => Flag::Coarsen, _ => Flag::Keep })
            .collect();
        let (next, _) = m.execute_adaptation(&f).unwrap();
        let aux = m.advance_auxiliary(&f).unwrap();
        prop_assert!(aux.refines(&m) && aux.refines(&next));
        let cr = m.common_refinement(&next).unwrap();
        prop_assert!(cr.refines(&m) && cr.refines(&next));
    }

    #[test]
    fn transfer_preserves_piecewise_polynomials(k in 1usize..4, flags in prop::collection::vec(any::<u8>(), 1..20), seed in any::<u64>()) {
        let coarse = Arc::new(Mesh::create_uniform(Domain::unit_square(), 2, BoundaryLabels::all_dirichlet()).unwrap());
        let fine = Arc::new(coarse.refine_all().unwrap());
        let reach = Arc::new(adapted(2, &flags));
        let space = DgSpace::new(k);
        let n = coarse.n_cells() * space.n_local();
        let coeffs: Vec<f64> = (0..n).map(|i| (((seed.wrapping_add(i as u64 * 2654435761)) % 1000) as f64) / 500.0 - 1.0).collect();
        let u = DgField::from_coeffs(coarse.clone(), space, coeffs).unwrap();
        let back = transfer(&transfer(&u, fine).unwrap(), coarse.clone()).unwrap();
        for (a, b) in u.coeffs().iter().zip(back.coeffs()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // projection onto any other mesh keeps the integral
        let v = transfer(&u, reach).unwrap();
        prop_assert!((integral(&u) - integral(&v)).abs() < 1e-12);
    }

    #[test]
    fn fitting_identities(alpha in 0.0f64..3.0, eps in 1e-8f64..1.0, eta in -2.0f64..2.0,
                          g in prop::array::uniform2(-3.0f64..3.0), lap in -5.0f64..5.0,
                          b in prop::array::uniform2(-3.0f64..3.0), div in -5.0f64..5.0, d in 0.0f64..2.0) {
        let pv = PotentialValue { eta, grad: g, lap };
        for policy in [DeltaPolicy::Auto, DeltaPolicy::Fixed(d), DeltaPolicy::Zero] {
            let f = combine_pointwise(alpha, eps, policy, pv, b, div);
            prop_assert!((f.m + f.delta - 2.0 * f.l).abs() <= 1e-12 * (1.0 + f.m.abs() + f.delta));
            prop_assert!((f.omega - (-alpha * eta).exp()).abs() <= 1e-15 * f.omega.max(1.0));
            if policy == DeltaPolicy::Auto {
                prop_assert!(f.l >= 0.0);
                prop_assert!(f.delta >= 0.0);
            }
        }
    }

    #[test]
    fn marking_properties(ind in prop::collection::vec(0.0f64..10.0, 1..300), rf in 0.0f64..0.6, cf in 0.0f64..0.4) {
        let n = ind.len();
        let pol = MarkingPolicy { refine_fraction: rf, coarsen_fraction: cf, ..Default::default() };
        let f = mark(&ind, &pol).unwrap();
        prop_assert_eq!(f.refine.len(), ((rf * n as f64).ceil() as usize).min(n));
        prop_assert!(f.coarsen.iter().all(|c| f.refine.binary_search(c).is_err()));
        prop_assert!(f.refine.windows(2).all(|w| w[0] < w[1]));
        // every refined indicator dominates every unrefined one
        let min_r = f.refine.iter().map(|&c| ind[c]).fold(f64::INFINITY, f64::min);
        prop_assert!((0..n).filter(|c| f.refine.binary_search(c).is_err()).all(|c| ind[c] <= min_r));
        // deterministic
        prop_assert_eq!(mark(&ind, &pol).unwrap(), f);

        let pol = MarkingPolicy { strategy: Strategy::FractionOfError, refine_fraction: rf, coarsen_fraction: cf / 4.0, ..Default::default() };
        let f = mark(&ind, &pol).unwrap();
        let total: f64 = ind.iter().map(|v| v * v).sum();
        let got: f64 = f.refine.iter().map(|&c| ind[c] * ind[c]).sum();
        prop_assert!(got >= rf * total - 1e-9 * total);
        let coarse: f64 = f.coarsen.iter().map(|&c| ind[c] * ind[c]).sum();
        prop_assert!(coarse <= cf / 4.0 * total + 1e-9 * total);
    }
}
