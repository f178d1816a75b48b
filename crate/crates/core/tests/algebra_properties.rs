//! Randomized invariants of the algebra layer and the symmetric space catalog.

use lieflow::liecore::*;
use lieflow::symspace::{catalog, r3_to_su2, random_component_point, su2_to_r3, ComponentPoint, SpaceId};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tags() -> Vec<AlgebraTag> {
    vec![
        AlgebraTag::u(2),
        AlgebraTag::u(3),
        AlgebraTag::su(2),
        AlgebraTag::su(3),
        AlgebraTag::so(3),
        AlgebraTag::so(4),
        AlgebraTag::so(5),
        AlgebraTag::sp(1),
        AlgebraTag::sp(2),
    ]
}

fn tag_strategy() -> impl Strategy<Value = AlgebraTag> {
    prop::sample::select(tags())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobi_and_ad_invariance(tag in tag_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, z) = (tag.random(&mut rng, 1.0), tag.random(&mut rng, 1.0), tag.random(&mut rng, 1.0));
        let j = comm(&x, &comm(&y, &z)) + comm(&y, &comm(&z, &x)) + comm(&z, &comm(&x, &y));
        prop_assert!(j.norm() < 1e-12);
        let s = inner_m(&comm(&z, &x), &y) + inner_m(&x, &comm(&z, &y));
        prop_assert!(s.abs() < 1e-12);
        prop_assert!(tag.membership_defect(&comm(&x, &y)) < 1e-12);
    }

    #[test]
    fn centralizer_splitting(tag in tag_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = AlgebraElement::new(tag, tag.random(&mut rng, 1.0)).unwrap();
        let cd = build_centralizer(&a);
        let v = cd.pi1_m(&tag.random(&mut rng, 1.0));
        // [ad_inv(v), a] = v on the image, and ad(a) lands in the image.
        prop_assert!((cd.ad_m(&cd.ad_inv_m(&v)) - &v).norm() < 1e-9 * v.norm().max(1.0));
        prop_assert!(cd.pi0_m(&cd.ad_m(&tag.random(&mut rng, 1.0))).norm() < 1e-10);
        if is_regular(&a) {
            for s in &cd.basis_t {
                for t in &cd.basis_t {
                    prop_assert!(comm(s, t).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exponential_stays_in_the_group(tag in tag_strategy(), seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tag.random(&mut rng, 1.0);
        let x = AlgebraElement::new(tag, m.scale(scale / m.norm())).unwrap();
        let g = exp_to_group(&x);
        prop_assert!(group_defect(tag, &g.m) < TAU_GRP);
    }

    #[test]
    fn complex_structure_of_hermitian_entries(seed in any::<u64>(), which in 0usize..4) {
        let id = [
            SpaceId::GrkCn { n: 4, k: 1 },
            SpaceId::Gr2Rn2 { n: 2 },
            SpaceId::SO2nUn { n: 2 },
            SpaceId::SpnUn { n: 3 },
        ][which];
        let s = catalog(id).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_component_point(&s, &mut rng);
        let m = s.embed_point(&c).unwrap();
        let am = comm(&s.a.m, &m);
        prop_assert!((comm(&s.a.m, &am) + &m).norm() < 1e-12);
        let got = s.coordinates_point(&am).unwrap();
        let d = match (got, c) {
            (ComponentPoint::Complex(a), ComponentPoint::Complex(q)) => (a - q * I).norm(),
            (ComponentPoint::Pair(p, r), ComponentPoint::Pair(x, y)) => (p + &y).norm() + (r - x).norm(),
            _ => f64::INFINITY,
        };
        prop_assert!(d < 1e-12);
    }

    #[test]
    fn su2_brackets_are_cross_products(v in prop::array::uniform3(-2.0f64..2.0), w in prop::array::uniform3(-2.0f64..2.0)) {
        let (v, w) = (DVector::from_row_slice(&v), DVector::from_row_slice(&w));
        let b = su2_to_r3(&comm(&r3_to_su2(&v), &r3_to_su2(&w)));
        prop_assert!((b - v.cross(&w)).norm() < 1e-13);
        prop_assert!((inner_m(&r3_to_su2(&v), &r3_to_su2(&w)) - 0.5 * v.dot(&w)).abs() < 1e-13);
    }
}

#[test]
fn cartan_relations_on_the_catalog() {
    for id in [
        SpaceId::GrkCn { n: 3, k: 1 },
        SpaceId::GrkCn { n: 6, k: 3 },
        SpaceId::Sn { n: 2 },
        SpaceId::Sn { n: 5 },
        SpaceId::Gr2Rn2 { n: 4 },
        SpaceId::SO2nUn { n: 2 },
        SpaceId::SO2nUn { n: 4 },
        SpaceId::SpnUn { n: 1 },
        SpaceId::SpnUn { n: 3 },
    ] {
        let s = catalog(id).unwrap();
        assert!(s.invariant_residual() < 1e-12, "{id:?}");
    }
}
