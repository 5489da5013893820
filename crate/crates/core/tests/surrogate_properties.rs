use levelguide::mmcci::{CciParams, ConstraintHandler, ConstraintMode, LevelGrid};
use levelguide::surrogate::GpModel;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..25, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(0.0..1.0f64, d), n),
            prop::collection::vec(-3.0..3.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn row_order_does_not_matter((x, y) in dataset(), q in prop::collection::vec(0.0..1.0f64, 3)) {
        let m = GpModel::fit(&x, &y).unwrap();
        let (mut rx, mut ry) = (x.clone(), y.clone());
        rx.reverse();
        ry.reverse();
        let r = GpModel::fit(&rx, &ry).unwrap();
        let q = &q[..x[0].len()];
        prop_assert!((m.predict_one(q) - r.predict_one(q)).abs() <= 1e-9);
    }

    #[test]
    fn small_perturbations_keep_the_level(g in 0.001..5.0f64, frac in -0.49..0.49f64) {
        // the level only changes where g crosses C (1 - λ)^β / λ^α for a grid λ
        let p = CciParams::default();
        let grid = LevelGrid::default();
        let h = ConstraintHandler::new(ConstraintMode::MmCci, grid.clone(), vec![p]);
        let gap = grid
            .values()
            .filter(|&l| l > 0.0)
            .map(|l| (p.c() * (1.0 - l).powf(p.beta()) / l.powf(p.alpha()) - g).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-9);
        prop_assert_eq!(h.level(&[g + frac * gap]).unwrap(), h.level(&[g]).unwrap());
    }
}
