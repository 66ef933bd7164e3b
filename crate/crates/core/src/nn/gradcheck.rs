//! Central-difference gradient checking.
//!
//! Errors are measured per named parameter array as
//! `‖analytic − numeric‖ / max(1e-8, ‖analytic‖ + ‖numeric‖)` over the checked
//! coordinates, and the report's headline number is the maximum over arrays.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-8)
}

/// Which coordinates of each array to perturb.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most this many coordinates per array, drawn without replacement.
    Sample { per_param: usize, seed: u64 },
}

/// Compare `analytic` gradients against central differences of `loss`.
///
/// `values` is perturbed in place and restored before returning.
pub fn grad_check(
    names: &[String],
    values: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    eps: f64,
    coords: Coords,
    mut loss: impl FnMut(&[Vec<f64>]) -> f64,
) -> GradCheckReport {
    assert_eq!(names.len(), values.len());
    assert_eq!(analytic.len(), values.len());
    let mut per_param = Vec::with_capacity(names.len());
    for p in 0..values.len() {
        let len = values[p].len();
        assert_eq!(analytic[p].len(), len, "analytic gradient length for {}", names[p]);
        let picked: Vec<usize> = match coords {
            Coords::Sample { per_param, seed } if per_param < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, len, per_param).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        };
        let mut numeric = Vec::with_capacity(picked.len());
        for &i in &picked {
            let orig = values[p][i];
            values[p][i] = orig + eps;
            let plus = loss(values);
            values[p][i] = orig - eps;
            let minus = loss(values);
            values[p][i] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
        }
        let selected: Vec<f64> = picked.iter().map(|&i| analytic[p][i]).collect();
        per_param.push((names[p].clone(), relative_error(&selected, &numeric)));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    GradCheckReport {
        per_param,
        max_rel_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_a_cubic() {
        let mut values = vec![vec![0.3, -1.2, 2.0]];
        let analytic = vec![values[0].iter().map(|x| 3.0 * x * x).collect()];
        let report = grad_check(&["x".into()], &mut values, &analytic, DEFAULT_EPS, Coords::All, |v| {
            v[0].iter().map(|x| x * x * x).sum()
        });
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(values[0], vec![0.3, -1.2, 2.0]);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut values = vec![vec![1.0, 2.0]];
        let analytic = vec![vec![1.0, 1.0]];
        let report = grad_check(&["x".into()], &mut values, &analytic, DEFAULT_EPS, Coords::All, |v| {
            v[0].iter().map(|x| x * x).sum()
        });
        assert!(report.max_rel_error > 0.1);
    }

    #[test]
    fn zero_gradients_are_not_flagged() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
