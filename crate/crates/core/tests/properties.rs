use proptest::prelude::*;

use helipatch_core::helical_coeff::{eval_kh, factor_t, potential_y, rotate};
use helipatch_core::helix::helical_map;
use helipatch_core::patch::bathtub;
use helipatch_core::{CoefficientField, HelicalField, HelixParams};

fn in_disc() -> impl Strategy<Value = [f64; 2]> {
    (0.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| [r * t.cos(), r * t.sin()])
}

proptest! {
    #[test]
    fn kh_is_spd_within_its_bounds(x in in_disc(), k in 0.1..3.0f64) {
        let m = eval_kh(x, k);
        prop_assert_eq!(m.xy, m.yx);
        let [lo, hi] = m.sym_eigenvalues();
        let (l1, l2) = HelicalField::new(k, 1.0).unwrap().bounds();
        prop_assert!(lo > 0.0);
        prop_assert!(lo >= l1 * (1.0 - 1e-12) && hi <= l2 * (1.0 + 1e-12));
        // the eigenvalues are k²/(k²+|x|²) and 1
        prop_assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn factor_round_trip(x in in_disc(), k in 0.1..3.0f64) {
        let m = eval_kh(x, k);
        let t = factor_t(&m).unwrap();
        let back = t.transpose().mul(&t).mul(&m);
        prop_assert!((back.xx - 1.0).abs() < 1e-12 && (back.yy - 1.0).abs() < 1e-12);
        prop_assert!(back.xy.abs() < 1e-12 && back.yx.abs() < 1e-12);
    }

    #[test]
    fn bathtub_places_the_exact_mass(
        weight in prop::collection::vec(-5.0..5.0f64, 4..60),
        fill in 0.05..0.95f64,
        cap in 0.5..20.0f64,
    ) {
        let n = weight.len();
        let areas: Vec<f64> = (0..n).map(|i| 0.01 + 0.001 * (i % 7) as f64).collect();
        let mass = fill * cap * areas.iter().sum::<f64>();
        let (omega, level) = bathtub(&weight, &areas, cap, mass).unwrap();
        let placed: f64 = omega.iter().zip(&areas).map(|(w, a)| w * a).sum();
        prop_assert!((placed - mass).abs() <= 1e-12 * mass);
        prop_assert!(omega.iter().all(|&w| (0.0..=cap).contains(&w)));
        prop_assert!(omega.iter().filter(|&&w| w > 0.0 && w < cap).count() <= 1);
        // every filled cell outweighs every empty one
        for (i, &w) in omega.iter().enumerate() {
            if w > 0.0 {
                prop_assert!(weight[i] >= level);
            } else {
                prop_assert!(weight[i] <= level);
            }
        }
    }

    #[test]
    fn potential_is_radial(x in in_disc(), theta in -6.3..6.3f64, k in 0.2..2.0f64, r in 0.1..0.9f64) {
        let p = HelixParams::new(k, 1.0, r, 1.0, 0.1).unwrap();
        let a = potential_y(x, &p);
        let b = potential_y(rotate(x, theta), &p);
        prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn helical_maps_form_a_group(
        x in prop::array::uniform3(-2.0..2.0f64),
        a in -4.0..4.0f64,
        b in -4.0..4.0f64,
        k in 0.1..3.0f64,
    ) {
        let two = helical_map(helical_map(x, a, k), b, k);
        let one = helical_map(x, a + b, k);
        for i in 0..3 {
            prop_assert!((two[i] - one[i]).abs() < 1e-12);
        }
        let back = helical_map(helical_map(x, a, k), -a, k);
        for i in 0..3 {
            prop_assert!((back[i] - x[i]).abs() < 1e-12);
        }
    }
}
