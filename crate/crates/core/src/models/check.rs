use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cross_entropy, total_loss, Mode, Model};
use crate::cca::CcaConfig;
use crate::error::Result;
use crate::nn::{grad_check, Coords, GradCheckReport, Matrix};

/// Inputs for a whole-model gradient check.
pub struct GradProbe<'a> {
    pub a: &'a Matrix<f64>,
    pub b: Option<&'a Matrix<f64>>,
    pub labels: &'a [usize],
    pub lambda: f64,
    pub cca: CcaConfig,
    /// Seeds the dropout masks; every loss evaluation reuses the same masks.
    pub dropout_seed: u64,
}

fn loss_of(model: &mut Model<f64>, probe: &GradProbe<'_>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(probe.dropout_seed);
    let out = model.forward(probe.a, probe.b, Mode::Train, &probe.cca, &mut rng)?;
    let ce = cross_entropy(&out.probs, probe.labels)?;
    Ok(match out.cca_value {
        Some(c) => total_loss(ce, c, probe.lambda),
        None => ce,
    })
}

/// Compare the analytic gradient of the training objective with central
/// differences over every parameter array of `model`.
pub fn check_model_gradients(model: &Model<f64>, probe: &GradProbe<'_>, eps: f64, coords: Coords) -> Result<GradCheckReport> {
    let mut work = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(probe.dropout_seed);
    work.forward(probe.a, probe.b, Mode::Train, &probe.cca, &mut rng)?;
    work.backward(probe.labels, probe.lambda)?;
    let names: Vec<String> = work.params().iter().map(|p| p.name.clone()).collect();
    let analytic: Vec<Vec<f64>> = work.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut values = work.params().snapshot();
    let mut failure = None;
    let report = grad_check(&names, &mut values, &analytic, eps, coords, |v| {
        work.params_mut().restore(v);
        match loss_of(&mut work, probe) {
            Ok(l) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
