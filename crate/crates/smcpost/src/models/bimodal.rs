//! Two-component location mixture with symmetric modes.
//!
//! y_t ~ 0.5 N(theta, sigma2) + 0.5 N(-theta, sigma2), theta ~ N(0, v0).
//! The likelihood is symmetric in theta -> -theta, so the posterior is
//! bimodal with modes at +/- theta*. Used to exercise the simulator on a
//! multimodal target with well-separated basins.

use super::log_normal_pdf;
use crate::error::Result;
use crate::model::{Model, NamedFunction};
use crate::rng::RandomStream;

#[derive(Debug, Clone)]
pub struct BimodalLocation {
    pub prior_var: f64,
    pub obs_var: f64,
}

impl BimodalLocation {
    pub fn new(prior_var: f64, obs_var: f64) -> Self {
        assert!(prior_var > 0.0 && obs_var > 0.0);
        BimodalLocation { prior_var, obs_var }
    }
}

impl Model for BimodalLocation {
    type State = ();

    fn id(&self) -> String {
        format!("bimodal(v0={},s2={})", self.prior_var, self.obs_var)
    }

    fn dim(&self) -> usize {
        1
    }

    fn sample_prior(&self, stream: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(vec![self.prior_var.sqrt() * stream.normal()])
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        log_normal_pdf(theta[0], 0.0, self.prior_var.sqrt())
    }

    fn init_state(&self) -> Self::State {}

    fn log_cond_density(&self, theta: &[f64], _state: &mut Self::State, y: f64) -> f64 {
        let sd = self.obs_var.sqrt();
        let a = log_normal_pdf(y, theta[0], sd);
        let b = log_normal_pdf(y, -theta[0], sd);
        let hi = a.max(b);
        hi + (0.5 * ((a - hi).exp() + (b - hi).exp())).ln()
    }

    fn test_functions(&self) -> Vec<NamedFunction<Self>> {
        vec![
            NamedFunction {
                name: "theta_sq",
                eval: |_, th, _| th[0] * th[0],
            },
            NamedFunction {
                name: "abs_theta",
                eval: |_, th, _| th[0].abs(),
            },
        ]
    }

    fn simulate_observation(
        &self,
        theta: &[f64],
        _state: &Self::State,
        stream: &mut RandomStream,
    ) -> Option<f64> {
        let loc = if stream.uniform() < 0.5 { theta[0] } else { -theta[0] };
        Some(loc + self.obs_var.sqrt() * stream.normal())
    }

    fn state_len(&self) -> usize {
        0
    }

    fn encode_state(&self, _state: &Self::State, _out: &mut Vec<f64>) {}

    fn decode_state(&self, _slots: &[f64]) -> Self::State {}
}
