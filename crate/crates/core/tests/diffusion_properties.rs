use levelguide::diffusion::{self, DiffusionConfig, NoiseSchedule};
use levelguide::rng::{stream, Stream};
use proptest::prelude::*;

proptest! {
    #[test]
    fn alpha_bar_strictly_decreases(steps in 2usize..200, lo in 1e-5..1e-2f64, span in 1e-4..0.5f64) {
        let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.alpha_bar(t) > 0.0);
        }
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let config = DiffusionConfig { epochs: 5, ..DiffusionConfig::default() };
    let data: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 12.0, 0.5]).collect();
    let draw = |seed| {
        let mut r = stream(seed, Stream::Diffusion, 0);
        let (model, _) = diffusion::train(&data, &[0.0; 2], &[1.0; 2], &config, &mut r).unwrap();
        diffusion::sample(&model, &config, 16, &[0.0; 2], &[1.0; 2], &mut r).unwrap()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}
