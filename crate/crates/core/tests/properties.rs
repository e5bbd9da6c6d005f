//! Invariants over random inputs: lattice boxes, sums, gcd arithmetic and
//! the block schedule.

use std::sync::Arc;

use num_integer::Integer;
use proptest::prelude::*;
use rflab::covariance::{c_ij, diophantine_count};
use rflab::distributions::Marginal;
use rflab::lattice::{set_distance, BoxRegion, LatticePoint, TimePoint};
use rflab::observables::{decompose, Observable};
use rflab::qmaps::{QFamily, QMap};
use rflab::quadrature::QuadratureConfig;
use rflab::random_fields::FieldSpec;
use rflab::schedule::{BlockSchedule, Segment};
use rflab::sums::SumRequest;

fn two_index_request(nu: usize, n: u64) -> SumRequest {
    let spec = FieldSpec::gaussian_ma(
        nu,
        vec![
            (vec![0; nu], 1.0),
            (LatticePoint::axis(nu, 0, 1).into_coords(), 0.5),
        ],
    );
    let obs = Observable::polynomial(
        2,
        1,
        rflab::observables::Polynomial::new(vec![
            rflab::observables::Term::new(
                1.0,
                vec![rflab::observables::Factor {
                    arg: 0,
                    comp: 0,
                    power: 1,
                }],
            ),
            rflab::observables::Term::new(
                0.7,
                vec![
                    rflab::observables::Factor {
                        arg: 0,
                        comp: 0,
                        power: 1,
                    },
                    rflab::observables::Factor {
                        arg: 1,
                        comp: 0,
                        power: 2,
                    },
                ],
            ),
        ]),
        None,
    )
    .unwrap();
    let dec = decompose(&obs, &spec.value_law(), &QuadratureConfig::default()).unwrap();
    let q = QFamily::new(nu, 1, vec![QMap::square(nu)]).unwrap();
    SumRequest::new(spec, Arc::new(dec), q, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_cardinality_is_product_of_extents(n in 1u64..200, raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..4)) {
        let s: Vec<f64> = raw.iter().map(|&(a, b)| a.min(b)).collect();
        let t: Vec<f64> = raw.iter().map(|&(a, b)| a.max(b)).collect();
        let b = BoxRegion::new(n, TimePoint::new(s.clone()).unwrap(), TimePoint::new(t.clone()).unwrap()).unwrap();
        let nf = n as f64;
        let expected: usize = s.iter().zip(&t).map(|(&sl, &tl)| {
            let lo = (0..=n as i64).find(|&c| c as f64 >= nf * sl - 1e-9);
            let hi = (0..=n as i64).rev().find(|&c| c as f64 <= nf * tl + 1e-9);
            match (lo, hi) { (Some(lo), Some(hi)) if lo <= hi => (hi - lo + 1) as usize, _ => 0 }
        }).product();
        prop_assert_eq!(b.len(), expected);
        prop_assert_eq!(b.points().count(), expected);
    }

    #[test]
    fn set_distance_is_symmetric_and_minimal(
        a in prop::collection::vec(prop::collection::vec(-20i64..20, 2), 1..6),
        b in prop::collection::vec(prop::collection::vec(-20i64..20, 2), 1..6),
    ) {
        let ga: Vec<LatticePoint> = a.into_iter().map(LatticePoint::new).collect();
        let gb: Vec<LatticePoint> = b.into_iter().map(LatticePoint::new).collect();
        let d = set_distance(&ga, &gb).unwrap();
        prop_assert_eq!(d, set_distance(&gb, &ga).unwrap());
        for x in &ga {
            for y in &gb {
                let e: f64 = x.coords().iter().zip(y.coords()).map(|(p, q)| ((p - q) * (p - q)) as f64).sum::<f64>().sqrt();
                prop_assert!(d <= e + 1e-12);
            }
        }
    }

    #[test]
    fn component_sums_are_additive(seed in any::<u64>(), n in 8u64..40, cut in 0.0f64..1.0, i in 1usize..=2) {
        let req = two_index_request(1, n);
        let engine = req.realize(seed).unwrap();
        let p = (cut * n as f64).floor();
        let nf = n as f64;
        let tp = |v: f64| TimePoint::new(vec![v]).unwrap();
        let whole = engine.xi_i_n(i, &tp(0.0), &tp(1.0)).unwrap();
        let left = engine.xi_i_n(i, &tp(0.0), &tp(p / nf)).unwrap();
        let right = engine.xi_i_n(i, &tp((p + 1.0) / nf), &tp(1.0)).unwrap();
        prop_assert!((whole - left - right).abs() < 1e-9 * (1.0 + whole.abs()));
    }

    #[test]
    fn decomposition_identity_holds_pathwise(seed in any::<u64>(), n in 4u64..24, t0 in 0.05f64..1.0, t1 in 0.05f64..1.0, nu in 1usize..=2) {
        let req = two_index_request(nu, n);
        let engine = req.realize(seed).unwrap();
        let t = TimePoint::new(vec![t0, t1][..nu].to_vec()).unwrap();
        let gap = engine.decomposition_gap(&t).unwrap();
        let scale = engine.xi_n(&t).unwrap().abs().max(1.0);
        prop_assert!(gap <= 1e-9 * scale, "gap {gap}");
    }

    #[test]
    fn diophantine_count_matches_brute_force(i in 1usize..6, j in 1usize..6, u in -12i64..12, n in 1u64..60) {
        let one = TimePoint::ones(1);
        let got = diophantine_count(i, j, &LatticePoint::new(vec![u]), n, &one, &one).unwrap().exact_count;
        let (ii, jj, nn) = (i as i64, j as i64, n as i64);
        let mut brute = 0u64;
        for a in 0..=nn {
            for b in 0..=nn {
                if ii * a <= nn && jj * b <= nn && ii * a - jj * b == u {
                    brute += 1;
                }
            }
        }
        prop_assert_eq!(got, brute);
        if u.rem_euclid(i.gcd(&j) as i64) != 0 {
            prop_assert_eq!(got, 0);
        }
    }

    #[test]
    fn lag_integral_vanishes_off_the_gcd_lattice(i in 1usize..=3, j in 1usize..=3, u in -6i64..6) {
        let spec = FieldSpec::gaussian_ma(1, vec![(vec![0], 1.0), (vec![1], 1.0)]);
        let obs = Observable::linear(&[1.0, 1.0, 1.0]).unwrap();
        let dec = decompose(&obs, &spec.value_law(), &QuadratureConfig::default()).unwrap();
        let c = c_ij(&spec, &dec, i, j, &LatticePoint::new(vec![u])).unwrap();
        let g = i.gcd(&j) as i64;
        if u.rem_euclid(g) != 0 {
            prop_assert_eq!(c, 0.0);
        } else {
            // F_i = x_i pairs x_i with y_i at lag (i/υ)·u = u when i = j
            if i == j {
                let expected = match u.abs() { 0 => 2.0, 1 => 1.0, _ => 0.0 };
                prop_assert!((c - expected).abs() < 1e-12, "c = {c}, expected {expected}");
            }
        }
    }

    #[test]
    fn schedule_tiles_and_obeys_bounds(n in 1u64..50_000) {
        let s = BlockSchedule::default_for(n).unwrap();
        let v = s.verify();
        prop_assert!(v.pass(), "{v:?}");
        prop_assert!((s.blocks as f64) <= 2.0 * (n as f64).powf(1.0 / 1.9) + 1.0);
        prop_assert!(s.a(s.blocks + 1) >= n as i64);
        let mut last = 0usize;
        for shell in 0..=s.a(s.blocks + 1).min(5000) {
            let rank = match s.classify(shell) {
                Segment::Block(l) => 2 * l,
                Segment::Gap(l) => 2 * l + 1,
                Segment::Beyond => unreachable!("shell {shell} beyond a(L+1)"),
            };
            prop_assert!(rank >= last);
            last = rank;
        }
    }
}

#[test]
fn rademacher_marginal_decomposes_exactly() {
    let spec = FieldSpec::iid(1, Marginal::Rademacher);
    let obs = Observable::product(&[0, 0], 1).unwrap();
    let dec = decompose(&obs, &spec.value_law(), &QuadratureConfig::default()).unwrap();
    assert!(dec
        .verify(100, 10, 1, &QuadratureConfig::default())
        .unwrap()
        .pass());
}
