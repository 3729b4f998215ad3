use atwflow::distance::signed_distance_bruteforce;
use atwflow::oracles::{shrinking_ball, CrossFlow, DiskFamily};
use atwflow::solver::{Scheme, SolverConfig};
use atwflow::stencil::Stencil;
use atwflow::{Anisotropy, GridDomain, IndicatorField, ScalarField};
use proptest::prelude::*;

const N: usize = 24;

fn dom() -> GridDomain {
    GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[N, N]).unwrap()
}

/// Union of up to three axis-aligned boxes in cell coordinates, kept off the frame.
fn boxes(lo: usize, hi: usize) -> impl Strategy<Value = Vec<[usize; 4]>> {
    prop::collection::vec((lo..hi, lo..hi, 2usize..8, 2usize..8), 1..4).prop_map(move |v| {
        v.into_iter().map(|(x, y, w, h)| [x, y, (x + w).min(hi), (y + h).min(hi)]).collect()
    })
}

fn raster(d: &GridDomain, b: &[[usize; 4]]) -> IndicatorField {
    let m = (0..d.len())
        .map(|x| {
            let i = d.multi(x);
            b.iter().any(|r| i[0] >= r[0] && i[0] < r[2] && i[1] >= r[1] && i[1] < r[3])
        })
        .collect();
    IndicatorField::new(d, m).unwrap()
}

fn scheme(phi: &Anisotropy, h: f64) -> Scheme {
    Scheme::new(&dom(), phi, phi, h, SolverConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_commutes_with_grid_translation(b in boxes(4, 14), k in (0isize..5, 0isize..5)) {
        let s = scheme(&Anisotropy::l1(2).unwrap(), 0.02);
        let e = raster(s.domain(), &b);
        let moved = e.shifted([k.0, k.1, 0]).unwrap();
        let a = s.step(&e, None).unwrap().next_set.shifted([k.0, k.1, 0]).unwrap();
        let b = s.step(&moved, None).unwrap().next_set;
        prop_assert_eq!(a.members(), b.members());
    }

    #[test]
    fn step_preserves_inclusion(b in boxes(4, 18), extra in boxes(4, 18)) {
        let s = scheme(&Anisotropy::euclidean(2).unwrap(), 0.01);
        let e = raster(s.domain(), &b);
        let f = e.union(&raster(s.domain(), &extra));
        prop_assume!(f.count() < s.domain().len());
        let te = s.step(&e, None).unwrap().next_set;
        let tf = s.step(&f, None).unwrap().next_set;
        prop_assert!(te.is_subset_of(&tf));
    }

    #[test]
    fn distance_is_antimonotone(b in boxes(4, 18), extra in boxes(4, 18)) {
        let psi = Anisotropy::euclidean(2).unwrap();
        let e = raster(&dom(), &b);
        let f = e.union(&raster(&dom(), &extra));
        prop_assume!(f.count() < dom().len());
        let de = signed_distance_bruteforce(&e, &psi).unwrap();
        let df = signed_distance_bruteforce(&f, &psi).unwrap();
        for (a, b) in df.field.values.iter().zip(&de.field.values) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }

    #[test]
    fn perimeter_is_submodular(b in boxes(3, 20), c in boxes(3, 20)) {
        let s = scheme(&Anisotropy::euclidean(2).unwrap(), 0.01);
        let (e, f) = (raster(s.domain(), &b), raster(s.domain(), &c));
        let lhs = s.perimeter(&e.union(&f)) + s.perimeter(&e.intersection(&f));
        let rhs = s.perimeter(&e) + s.perimeter(&f);
        prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn total_variation_obeys_coarea(levels in prop::collection::vec(0u8..5, N * N)) {
        let d = dom();
        let st = Stencil::for_gauge(&Anisotropy::euclidean(2).unwrap(), d.spacing());
        // zero on the frame so every superlevel set is admissible
        let w: Vec<f64> = (0..d.len()).map(|x| if d.in_frame_idx(x) { 0.0 } else { levels[x] as f64 }).collect();
        let tv = st.tv(&d, &w);
        let layered: f64 = (0..4)
            .map(|s| {
                let sup = IndicatorField::new(&d, w.iter().map(|&v| v > s as f64 + 0.5).collect()).unwrap();
                st.perimeter(&sup)
            })
            .sum();
        prop_assert!((tv - layered).abs() <= 1e-10 * tv.max(1.0));
    }

    #[test]
    fn ball_radius_is_decreasing(r0 in 0.1f64..3.0, t in 0.0f64..1.0, dt in 1e-6f64..0.5, dim in 2usize..4) {
        prop_assert!(shrinking_ball(r0, t + dt, dim) <= shrinking_ball(r0, t, dim));
    }

    #[test]
    fn cross_sets_are_nested_and_match_arrival(x in -2.2f64..2.2, y in -2.2f64..2.2, t in 0.0f64..1.6, dt in 0.0f64..0.3) {
        let flow = CrossFlow::default();
        if flow.contains(t + dt, [x, y]) {
            prop_assert!(flow.contains(t, [x, y]));
        }
        let u = flow.arrival([x, y]);
        // the closed set at time t is {u >= t}; skip points within rounding of the boundary
        if (u - t).abs() > 1e-9 {
            prop_assert_eq!(flow.contains(t, [x, y]), u > t);
        }
    }

    #[test]
    fn disk_family_arrival_inverts_membership(x in -1.0f64..1.0, y in -1.0f64..1.0, t in 0.0f64..0.2) {
        let fam = DiskFamily::new(vec![[-0.5, 0.0], [0.5, 0.0]], vec![0.4, 0.3]).unwrap();
        let u = fam.arrival([x, y]);
        if (u - t).abs() > 1e-9 {
            prop_assert_eq!(fam.contains(t, [x, y]), u > t);
        }
    }

    #[test]
    fn gauge_and_dual_satisfy_cauchy_schwarz(
        a in prop::collection::vec(-3.0f64..3.0, 2),
        b in prop::collection::vec(-3.0f64..3.0, 2),
        w in (0.2f64..4.0, 0.2f64..4.0),
    ) {
        for g in [Anisotropy::euclidean(2).unwrap(), Anisotropy::l1(2).unwrap(), Anisotropy::weighted_l1(vec![w.0, w.1]).unwrap()] {
            let dot = a[0] * b[0] + a[1] * b[1];
            prop_assert!(dot <= g.eval(&a).unwrap() * g.dual_eval(&b).unwrap() + 1e-12);
        }
    }
}

#[test]
fn constant_field_has_no_variation() {
    let d = dom();
    let st = Stencil::for_gauge(&Anisotropy::l1(2).unwrap(), d.spacing());
    assert_eq!(st.tv(&d, &ScalarField::from_fn(&d, |_| 3.0).values), 0.0);
}
