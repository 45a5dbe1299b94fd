//! Abstract Bayesian model contract.
//!
//! A model supplies prior sampling/evaluation and a sequential conditional
//! data density advanced through an opaque per-particle state. Parameter
//! vectors live on an unconstrained transformed scale throughout; the model
//! owns the transformation.

use crate::error::Result;
use crate::rng::RandomStream;

/// A named scalar function of (theta, state) evaluated on the particle
/// population, e.g. the test functions driving the RNE stopping rule.
pub struct NamedFunction<M: Model + ?Sized> {
    pub name: &'static str,
    pub eval: fn(&M, &[f64], &<M as Model>::State) -> f64,
}

pub trait Model: Sync {
    /// Per-particle sequential state. Must encode to a fixed number of f64
    /// slots for snapshots.
    type State: Clone + Send + Sync;

    /// Stable identifier recorded in designs and reports.
    fn id(&self) -> String;

    /// Dimension of the (transformed) parameter vector.
    fn dim(&self) -> usize;

    fn sample_prior(&self, stream: &mut RandomStream) -> Result<Vec<f64>>;

    /// Log prior density on the transformed scale; -inf outside the support.
    fn log_prior(&self, theta: &[f64]) -> f64;

    fn init_state(&self) -> Self::State;

    /// log p(y_t | y_{1:t-1}, theta), advancing the state. Returns -inf for
    /// numerically inadmissible evaluations.
    fn log_cond_density(&self, theta: &[f64], state: &mut Self::State, y: f64) -> f64;

    /// Full-scan log likelihood through `data`. The default folds the
    /// sequential density; models with cheaper closed forms may override
    /// (the value must agree with the fold to 1e-12 relative).
    fn log_likelihood(&self, theta: &[f64], data: &[f64]) -> f64 {
        let mut state = self.init_state();
        let mut total = 0.0;
        for &y in data {
            let ll = self.log_cond_density(theta, &mut state, y);
            if !ll.is_finite() {
                return f64::NEG_INFINITY;
            }
            total += ll;
        }
        total
    }

    /// Full-scan log likelihood plus the terminal state, used when a
    /// Metropolis proposal is accepted and the particle's state must be
    /// rebuilt through the data seen so far.
    fn log_likelihood_and_state(&self, theta: &[f64], data: &[f64]) -> (f64, Self::State) {
        let mut state = self.init_state();
        let mut total = 0.0;
        for &y in data {
            let ll = self.log_cond_density(theta, &mut state, y);
            if !ll.is_finite() {
                return (f64::NEG_INFINITY, state);
            }
            total += ll;
        }
        (total, state)
    }

    /// Test functions monitored by the RNE-based M-phase stopping rule.
    fn test_functions(&self) -> Vec<NamedFunction<Self>>;

    /// Functions of interest for moment reports. Defaults to the test
    /// functions.
    fn functions_of_interest(&self) -> Vec<NamedFunction<Self>> {
        self.test_functions()
    }

    /// Simulate Y_t | y_{1:t-1}, theta from the current state, without
    /// advancing it. `None` when the model has no simulator.
    fn simulate_observation(
        &self,
        _theta: &[f64],
        _state: &Self::State,
        _stream: &mut RandomStream,
    ) -> Option<f64> {
        None
    }

    /// Number of f64 slots a state occupies in a snapshot.
    fn state_len(&self) -> usize;

    fn encode_state(&self, state: &Self::State, out: &mut Vec<f64>);

    fn decode_state(&self, slots: &[f64]) -> Self::State;
}
