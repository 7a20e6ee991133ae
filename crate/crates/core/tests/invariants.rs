use proptest::prelude::*;

use qfiga_core::approx::ApproxConfig;
use qfiga_core::cache::CacheKey;
use qfiga_core::domains::{perturbed, unit_cube};
use qfiga_core::element::{element_stiffness, identity_maps, ElementTables};
use qfiga_core::spline::volume::BezierVolume;

fn jittered_element(p: usize, jitter: &[f64]) -> BezierVolume {
    let n = p + 1;
    let mut control = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let g = [i, j, k].map(|c| c as f64 / p as f64);
                let s = 3 * control.len();
                control.push([0, 1, 2].map(|d| g[d] + 0.08 * jitter[(s + d) % jitter.len()]));
            }
        }
    }
    BezierVolume { degrees: [p; 3], control, block: 0, element: [0; 3], sub_box: [[0.0, 1.0]; 3] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn element_stiffness_is_symmetric_and_kills_constants(
        p in 1usize..=2,
        jitter in proptest::collection::vec(-1.0f64..1.0, 81),
    ) {
        let elem = jittered_element(p, &jitter);
        let t = ElementTables::build(elem.degrees, ApproxConfig::default()).unwrap();
        let maps = identity_maps(elem.degrees);
        let (k, _) = element_stiffness(&t, &elem, [&maps[0], &maps[1], &maps[2]], "e").unwrap();
        let n = t.local_size();
        let scale = k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for r in 0..n {
            let row: f64 = k[r * n..(r + 1) * n].iter().sum();
            prop_assert!(row.abs() <= 1e-10 * scale, "row {r} sums to {row}");
            prop_assert!(k[r * n + r] > 0.0);
            for c in 0..r {
                prop_assert!((k[r * n + c] - k[c * n + r]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn refinement_keeps_the_map(
        levels in 1usize..=2,
        amp in 0.0f64..0.1,
        pts in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 10),
    ) {
        let m = perturbed(&unit_cube(3, [2, 1, 1]), amp).unwrap();
        let r = m.h_refine(levels).unwrap();
        for (a, b, c) in pts {
            let (x, y) = (m.blocks()[0].evaluate([a, b, c]), r.blocks()[0].evaluate([a, b, c]));
            for d in 0..3 {
                prop_assert!((x[d] - y[d]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cache_key_ignores_geometry(amp in 0.0f64..0.1) {
        let a = unit_cube(2, [2, 2, 1]);
        let b = perturbed(&a, amp).unwrap();
        let faces = a.exterior_faces();
        let ka = CacheKey::new(&a, ApproxConfig::default(), &faces).unwrap();
        let kb = CacheKey::new(&b, ApproxConfig::default(), &faces).unwrap();
        prop_assert_eq!(ka.hash(), kb.hash());
        let bumped = ApproxConfig { degree_bump: 1, ..ApproxConfig::default() };
        prop_assert_ne!(ka.hash(), CacheKey::new(&a, bumped, &faces).unwrap().hash());
    }
}
