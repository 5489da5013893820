//! Seeded fixtures shared by the benchmarks.

use levelguide::ela::{build_input_tensor, ElaInput};
use levelguide::nn::Tensor;
use levelguide::rng::{stream, Rng, Stream};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Init, 7)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub fn random_points(n: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect()
}

/// Encoder input for an archive of `n` solutions with `m` objectives.
pub fn encoder_input(n: usize, m: usize, rng: &mut Rng) -> ElaInput {
    let y = random_points(n, m, rng);
    let levels: Vec<f64> = (0..n).map(|_| rng.random_range(0..=40) as f64 / 40.0).collect();
    build_input_tensor(&y, &levels, n, n.max(300)).expect("valid archive")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(random_points(3, 2, &mut rng(1)), random_points(3, 2, &mut rng(1)));
        assert_eq!(encoder_input(10, 2, &mut rng(2)).population(), 10);
    }
}
