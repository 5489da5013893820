use levelguide::mmcci::{
    analytic_max_cci, fit_cci_params, max_cci_level, mm_cci_level, AnchorSet, CciParams, LevelGrid,
};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = CciParams> {
    (1.0..4.0f64, 1.0..4.0f64, 0.1..10.0f64).prop_map(|(a, b, c)| CciParams::new(a, b, c).unwrap())
}

proptest! {
    #[test]
    fn feasible_values_map_to_one(p in params(), g in -100.0..=0.0f64, k in 1usize..100) {
        let grid = LevelGrid::new(k).unwrap();
        prop_assert_eq!(max_cci_level(g, &p, &grid), 1.0);
        prop_assert_eq!(analytic_max_cci(g, &p), 1.0);
    }

    #[test]
    fn levels_decrease_with_violation(p in params(), v1 in 1e-6..50.0f64, gap in 1e-3..50.0f64) {
        let v2 = v1 + gap;
        prop_assert!(analytic_max_cci(v1, &p) > analytic_max_cci(v2, &p));
        let grid = LevelGrid::default();
        prop_assert!(max_cci_level(v1, &p, &grid) >= max_cci_level(v2, &p, &grid));
    }

    #[test]
    fn grid_is_sandwiched(p in params(), g in 1e-6..100.0f64, k in 1usize..100) {
        let grid = LevelGrid::new(k).unwrap();
        let (lv, a) = (max_cci_level(g, &p, &grid), analytic_max_cci(g, &p));
        prop_assert!(lv <= a + 1e-12);
        prop_assert!(a - 1.0 / (k as f64) < lv + 1e-12);
    }

    #[test]
    fn analytic_level_is_convex(p in params(), v1 in 1e-4..20.0f64, h in 1e-4..10.0f64) {
        let second = analytic_max_cci(v1, &p) - 2.0 * analytic_max_cci(v1 + h, &p) + analytic_max_cci(v1 + 2.0 * h, &p);
        prop_assert!(second >= -1e-9, "second difference {}", second);
    }

    #[test]
    fn worst_constraint_decides(
        ps in prop::collection::vec(params(), 1..5),
        gs in prop::collection::vec(-2.0..5.0f64, 5),
    ) {
        let grid = LevelGrid::default();
        let g = &gs[..ps.len()];
        let joint = mm_cci_level(g, &ps, &grid).unwrap();
        let each: Vec<f64> = g.iter().zip(&ps).map(|(&v, p)| max_cci_level(v, p, &grid)).collect();
        prop_assert!(each.iter().all(|&l| joint <= l));
        prop_assert!(each.contains(&joint));
    }

    #[test]
    fn fit_recovers_generating_params(p in params(), noise in 0.0..1.0f64) {
        // 21 sorted violations put every anchor quantile on an exact index
        let anchors = AnchorSet::default();
        let v = |l: f64| p.c() * (1.0 - l).powf(p.beta()) / l.powf(p.alpha());
        let mut data = vec![0.0; 21];
        for (&r, &l) in anchors.quantiles().iter().zip(anchors.targets()) {
            data[(r * 20.0).round() as usize] = v(l);
        }
        let fixed = [1usize, 5, 10, 15, 19];
        for w in fixed.windows(2) {
            for i in w[0] + 1..w[1] {
                let t = (i - w[0]) as f64 / (w[1] - w[0]) as f64;
                data[i] = data[w[0]] + t * (data[w[1]] - data[w[0]]);
            }
        }
        data[0] = data[1] * (0.1 + 0.8 * noise);
        data[20] = data[19] * (1.1 + noise);
        let fit = fit_cci_params(&data, &anchors).unwrap();
        prop_assert!(!fit.fallback);
        prop_assert!((fit.params.alpha() - p.alpha()).abs() <= 1e-6);
        prop_assert!((fit.params.beta() - p.beta()).abs() <= 1e-6);
        prop_assert!((fit.params.c() - p.c()).abs() <= 1e-6 * p.c().max(1.0));
    }
}
