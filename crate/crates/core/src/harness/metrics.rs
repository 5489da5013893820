use crate::error::{Error, Result};
use crate::problems::EvaluatedSolution;
use crate::saea::fast_nondominated_sort;

/// Mean distance from each reference point to its nearest point in `points`.
///
/// `None` when `points` is empty, i.e. no feasible solution was found.
pub fn igd(points: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Option<f64>> {
    if reference.is_empty() {
        return Err(Error::Empty("IGD reference front"));
    }
    if points.is_empty() {
        return Ok(None);
    }
    let m = reference[0].len();
    if let Some(bad) = points.iter().chain(reference).find(|p| p.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            got: bad.len(),
            context: "IGD point dimension",
        });
    }
    let total: f64 = reference
        .iter()
        .map(|r| {
            points
                .iter()
                .map(|p| p.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Ok(Some(total / reference.len() as f64))
}

/// Objective vectors of the truly feasible, mutually nondominated solutions.
pub fn feasible_nondominated(archive: &[EvaluatedSolution]) -> Vec<Vec<f64>> {
    let feasible: Vec<Vec<f64>> = archive.iter().filter(|s| s.is_feasible()).map(|s| s.y.clone()).collect();
    if feasible.is_empty() {
        return feasible;
    }
    let mut first = fast_nondominated_sort(&feasible).swap_remove(0);
    first.sort_unstable();
    first.into_iter().map(|i| feasible[i].clone()).collect()
}

/// IGD of the feasible nondominated subset of `archive`.
pub fn archive_igd(archive: &[EvaluatedSolution], reference: &[Vec<f64>]) -> Result<Option<f64>> {
    igd(&feasible_nondominated(archive), reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol(y: Vec<f64>, g: f64) -> EvaluatedSolution {
        EvaluatedSolution {
            x: vec![],
            y,
            g: vec![g],
            level: if g <= 0.0 { 1.0 } else { 0.5 },
            cycle: 0,
        }
    }

    #[test]
    fn igd_examples() {
        let reference = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(igd(&reference, &reference).unwrap(), Some(0.0));
        let v = igd(&[vec![0.5, 0.5]], &reference).unwrap().unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(igd(&[], &reference).unwrap(), None);
        assert!(igd(&[vec![0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn feasible_front_filtering() {
        let archive = vec![
            sol(vec![0.0, 0.0], 1.0),
            sol(vec![1.0, 2.0], 0.0),
            sol(vec![2.0, 1.0], -1.0),
            sol(vec![3.0, 3.0], -1.0),
        ];
        assert_eq!(feasible_nondominated(&archive), vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(feasible_nondominated(&archive[..1]).is_empty());
        assert_eq!(feasible_nondominated(&archive[3..]), vec![vec![3.0, 3.0]]);
        for s in &archive {
            assert_eq!(s.is_feasible(), s.level == 1.0);
        }
    }
}
