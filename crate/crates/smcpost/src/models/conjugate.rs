//! Conjugate-normal model: y_t ~ N(theta, sigma2) with theta ~ N(m0, v0).
//!
//! Everything about this model has a closed form, which makes it the oracle
//! for calibrating the engine: posterior moments, marginal likelihood, and
//! one-step predictive densities are all exact.

use super::log_normal_pdf;
use crate::error::Result;
use crate::model::{Model, NamedFunction};
use crate::rng::RandomStream;

#[derive(Debug, Clone)]
pub struct ConjugateNormal {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub obs_var: f64,
}

impl ConjugateNormal {
    pub fn new(prior_mean: f64, prior_var: f64, obs_var: f64) -> Self {
        assert!(prior_var > 0.0 && obs_var > 0.0);
        ConjugateNormal {
            prior_mean,
            prior_var,
            obs_var,
        }
    }

    pub fn oracle(&self) -> ConjugateOracle {
        ConjugateOracle {
            model: self.clone(),
        }
    }
}

impl Model for ConjugateNormal {
    type State = ();

    fn id(&self) -> String {
        format!(
            "conjugate(m0={},v0={},s2={})",
            self.prior_mean, self.prior_var, self.obs_var
        )
    }

    fn dim(&self) -> usize {
        1
    }

    fn sample_prior(&self, stream: &mut RandomStream) -> Result<Vec<f64>> {
        Ok(vec![self.prior_mean + self.prior_var.sqrt() * stream.normal()])
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        log_normal_pdf(theta[0], self.prior_mean, self.prior_var.sqrt())
    }

    fn init_state(&self) -> Self::State {}

    fn log_cond_density(&self, theta: &[f64], _state: &mut Self::State, y: f64) -> f64 {
        log_normal_pdf(y, theta[0], self.obs_var.sqrt())
    }

    fn log_likelihood(&self, theta: &[f64], data: &[f64]) -> f64 {
        // Single tight pass; identical to the sequential fold.
        let t = theta[0];
        let mut ss = 0.0;
        for &y in data {
            let d = y - t;
            ss += d * d;
        }
        let n = data.len() as f64;
        -0.5 * n * (2.0 * std::f64::consts::PI * self.obs_var).ln() - ss / (2.0 * self.obs_var)
    }

    fn log_likelihood_and_state(&self, theta: &[f64], data: &[f64]) -> (f64, Self::State) {
        (self.log_likelihood(theta, data), ())
    }

    fn test_functions(&self) -> Vec<NamedFunction<Self>> {
        vec![
            NamedFunction {
                name: "theta",
                eval: |_, th, _| th[0],
            },
            NamedFunction {
                name: "theta_sq",
                eval: |_, th, _| th[0] * th[0],
            },
        ]
    }

    fn simulate_observation(
        &self,
        theta: &[f64],
        _state: &Self::State,
        stream: &mut RandomStream,
    ) -> Option<f64> {
        Some(theta[0] + self.obs_var.sqrt() * stream.normal())
    }

    fn state_len(&self) -> usize {
        0
    }

    fn encode_state(&self, _state: &Self::State, _out: &mut Vec<f64>) {}

    fn decode_state(&self, _slots: &[f64]) -> Self::State {}
}

/// Closed-form posterior and evidence for [`ConjugateNormal`].
pub struct ConjugateOracle {
    model: ConjugateNormal,
}

impl ConjugateOracle {
    /// Posterior mean and variance after observing `data`.
    pub fn posterior(&self, data: &[f64]) -> (f64, f64) {
        let m = &self.model;
        let n = data.len() as f64;
        let precision = 1.0 / m.prior_var + n / m.obs_var;
        let sum: f64 = data.iter().sum();
        let mean = (m.prior_mean / m.prior_var + sum / m.obs_var) / precision;
        (mean, 1.0 / precision)
    }

    /// log p(y_1:T), the product of one-step predictive densities.
    pub fn log_marginal_likelihood(&self, data: &[f64]) -> f64 {
        self.predictive_log_densities(data).iter().sum()
    }

    /// log p(y_t | y_1:t-1) for each t; predictive is N(m_{t-1}, v_{t-1} + sigma2).
    pub fn predictive_log_densities(&self, data: &[f64]) -> Vec<f64> {
        let m = &self.model;
        let mut mean = m.prior_mean;
        let mut var = m.prior_var;
        let mut out = Vec::with_capacity(data.len());
        for &y in data {
            out.push(log_normal_pdf(y, mean, (var + m.obs_var).sqrt()));
            let precision = 1.0 / var + 1.0 / m.obs_var;
            mean = (mean / var + y / m.obs_var) / precision;
            var = 1.0 / precision;
        }
        out
    }
}
