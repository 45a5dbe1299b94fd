//! Group-structured particle population and C-phase weight accounting.
//!
//! Particles are organized in J groups of N. Groups never exchange particles;
//! the J group means are the independent replicates from which numerical
//! standard errors are computed. All weight arithmetic is in log space with
//! max-subtraction normalization, since raw weight products underflow for
//! samples in the thousands.

use crate::error::{Error, Result};
use crate::exec::{for_each_indexed, sum_fixed_order, ExecMode};
use crate::model::Model;
use crate::rng::{stream_for, Phase, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem<S> {
    pub groups: usize,
    pub per_group: usize,
    pub dim: usize,
    /// JN x dim, row-major, group-major ordering.
    pub theta: Vec<f64>,
    pub state: Vec<S>,
    /// Within-cycle log weights; reset to 0 by the S phase.
    pub log_weight: Vec<f64>,
    /// Cached cumulative log likelihood through `current_t`, per particle.
    pub log_like: Vec<f64>,
    pub current_t: usize,
    pub cycle: usize,
}

impl<S: Clone + Send + Sync> ParticleSystem<S> {
    pub fn total(&self) -> usize {
        self.groups * self.per_group
    }

    pub fn theta_of(&self, idx: usize) -> &[f64] {
        &self.theta[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn group_of(&self, idx: usize) -> usize {
        idx / self.per_group
    }

    /// Relative sample size ESS/(JN) of the current log weights, computed
    /// stably by subtracting the max before exponentiating.
    pub fn rss(&self) -> Result<f64> {
        rss_of_log_weights(&self.log_weight)
    }

    /// Per-group self-normalized weighted means of `values` (one entry per
    /// particle) and their grand mean.
    pub fn weighted_group_means(&self, values: &[f64]) -> Result<(Vec<f64>, f64)> {
        assert_eq!(values.len(), self.total());
        let mut group_means = Vec::with_capacity(self.groups);
        for j in 0..self.groups {
            let lo = j * self.per_group;
            let hi = lo + self.per_group;
            let lw = &self.log_weight[lo..hi];
            let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::EmptyGroup { group: j });
            }
            let w: Vec<f64> = lw.iter().map(|&l| (l - max).exp()).collect();
            let denom = sum_fixed_order(&w);
            let num: Vec<f64> = w
                .iter()
                .zip(&values[lo..hi])
                .map(|(&wi, &gi)| wi * gi)
                .collect();
            group_means.push(sum_fixed_order(&num) / denom);
        }
        let grand = sum_fixed_order(&group_means) / self.groups as f64;
        Ok((group_means, grand))
    }

    /// Log of each group's mean within-cycle weight, log(N^-1 sum w_jn).
    pub fn group_log_mean_weights(&self) -> Vec<f64> {
        (0..self.groups)
            .map(|j| {
                let lo = j * self.per_group;
                log_mean_exp(&self.log_weight[lo..lo + self.per_group])
            })
            .collect()
    }
}

/// Stable log(mean(exp(x))); -inf for an all-(-inf) slice.
pub fn log_mean_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    max + (sum_fixed_order(&terms) / logs.len() as f64).ln()
}

pub fn rss_of_log_weights(log_weight: &[f64]) -> Result<f64> {
    let max = log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Invalid("all log weights are -inf".into()));
    }
    let w: Vec<f64> = log_weight.iter().map(|&l| (l - max).exp()).collect();
    let sum = sum_fixed_order(&w);
    let sq: Vec<f64> = w.iter().map(|&x| x * x).collect();
    let sum_sq = sum_fixed_order(&sq);
    Ok(sum * sum / (log_weight.len() as f64 * sum_sq))
}

/// Draw the initial population i.i.d. from the prior.
pub fn init_particles<M: Model>(
    model: &M,
    groups: usize,
    per_group: usize,
    master_seed: u64,
    mode: ExecMode,
) -> Result<ParticleSystem<M::State>> {
    if groups < 2 || per_group < 2 {
        return Err(Error::Config(format!(
            "need J >= 2 and N >= 2, got J={groups}, N={per_group}"
        )));
    }
    let total = groups * per_group;
    let dim = model.dim();
    let mut slots: Vec<(Vec<f64>, Option<crate::error::Error>)> =
        (0..total).map(|_| (Vec::new(), None)).collect();
    for_each_indexed(mode, &mut slots, |idx, slot| {
        let key = StreamKey::new(master_seed, idx / per_group, idx % per_group, Phase::Init);
        match model.sample_prior(&mut stream_for(key)) {
            Ok(theta) => slot.0 = theta,
            Err(e) => slot.1 = Some(e),
        }
    });
    let mut theta = Vec::with_capacity(total * dim);
    for (draw, err) in slots {
        if let Some(e) = err {
            return Err(Error::Invalid(format!("prior sampling failed: {e}")));
        }
        assert_eq!(draw.len(), dim);
        theta.extend_from_slice(&draw);
    }
    Ok(ParticleSystem {
        groups,
        per_group,
        dim,
        theta,
        state: vec![model.init_state(); total],
        log_weight: vec![0.0; total],
        log_like: vec![0.0; total],
        current_t: 0,
        cycle: 0,
    })
}

/// One C-phase update: multiply every particle's weight by its conditional
/// density of the next observation and advance its state.
pub fn c_phase_step<M: Model>(
    system: &mut ParticleSystem<M::State>,
    model: &M,
    y: f64,
    mode: ExecMode,
) -> Result<()> {
    let dim = system.dim;
    let theta = &system.theta;
    struct Slot<S> {
        state: S,
        log_weight: f64,
        log_like: f64,
    }
    // Temporarily move per-particle fields into disjoint slots for the
    // parallel pass.
    let mut slots: Vec<Slot<M::State>> = system
        .state
        .drain(..)
        .zip(system.log_weight.iter().zip(&system.log_like))
        .map(|(state, (&log_weight, &log_like))| Slot {
            state,
            log_weight,
            log_like,
        })
        .collect();
    for_each_indexed(mode, &mut slots, |idx, slot| {
        let th = &theta[idx * dim..(idx + 1) * dim];
        let ll = model.log_cond_density(th, &mut slot.state, y);
        let inc = if ll.is_finite() { ll } else { f64::NEG_INFINITY };
        slot.log_weight += inc;
        slot.log_like += inc;
    });
    let any_finite = slots.iter().any(|s| s.log_weight.is_finite());
    for (i, slot) in slots.into_iter().enumerate() {
        system.state.push(slot.state);
        system.log_weight[i] = slot.log_weight;
        system.log_like[i] = slot.log_like;
    }
    system.current_t += 1;
    if !any_finite {
        return Err(Error::WeightCollapse { t: system.current_t });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConjugateNormal;

    fn model() -> ConjugateNormal {
        ConjugateNormal::new(0.0, 1.0, 1.0)
    }

    #[test]
    fn init_draws_distinct_and_deterministic() {
        let m = model();
        let a = init_particles(&m, 2, 3, 9, ExecMode::default()).unwrap();
        let b = init_particles(&m, 2, 3, 9, ExecMode::default()).unwrap();
        assert_eq!(a.theta, b.theta);
        assert!(a.log_weight.iter().all(|&w| w == 0.0));
        assert_eq!(a.current_t, 0);
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert_ne!(a.theta[i], a.theta[j]);
            }
        }
    }

    #[test]
    fn init_rejects_small_populations() {
        let m = model();
        assert!(init_particles(&m, 1, 4, 0, ExecMode::default()).is_err());
        assert!(init_particles(&m, 4, 1, 0, ExecMode::default()).is_err());
    }

    #[test]
    fn prior_mean_matches_hyperparameters() {
        let m = ConjugateNormal::new(0.5, 2.0, 1.0);
        let sys = init_particles(&m, 10, 10_000, 3, ExecMode::default()).unwrap();
        let mean = sum_fixed_order(&sys.theta) / sys.theta.len() as f64;
        let se = (2.0f64 / 1e5).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean = {mean}");
    }

    #[test]
    fn c_step_increment_is_standard_normal_logpdf_at_zero() {
        let m = model();
        let mut sys = init_particles(&m, 2, 2, 1, ExecMode::default()).unwrap();
        // Force theta = 0 so the predictive is exactly standard normal.
        sys.theta.iter_mut().for_each(|t| *t = 0.0);
        c_phase_step(&mut sys, &m, 0.0, ExecMode::default()).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI).ln();
        for &lw in &sys.log_weight {
            assert!((lw - expect).abs() < 1e-14);
        }
        assert_eq!(sys.current_t, 1);
    }

    #[test]
    fn c_steps_match_one_shot_likelihood() {
        let m = model();
        let data: Vec<f64> = (0..40).map(|i| ((i * 37 + 11) % 19) as f64 / 10.0 - 0.9).collect();
        let mut sys = init_particles(&m, 2, 8, 5, ExecMode::default()).unwrap();
        for &y in &data {
            c_phase_step(&mut sys, &m, y, ExecMode::default()).unwrap();
        }
        for idx in 0..sys.total() {
            let direct = m.log_likelihood(sys.theta_of(idx), &data);
            let rel = (sys.log_like[idx] - direct).abs() / direct.abs().max(1.0);
            assert!(rel < 1e-12, "rel = {rel}");
        }
    }

    #[test]
    fn rss_equal_weights_is_one() {
        let m = model();
        let sys = init_particles(&m, 2, 8, 5, ExecMode::default()).unwrap();
        assert!((sys.rss().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rss_degenerate_and_hand_cases() {
        // One particle carries all the weight: ESS = 1, RSS = 1/4.
        let lw = vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert!((rss_of_log_weights(&lw).unwrap() - 0.25).abs() < 1e-12);
        // Weights (2,1,1,0): ESS = 16/6.
        let lw = vec![2.0f64.ln(), 0.0, 0.0, f64::NEG_INFINITY];
        let rss = rss_of_log_weights(&lw).unwrap();
        assert!((rss - (16.0 / 6.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn rss_shift_invariant() {
        let lw = vec![0.3, -1.2, 0.0, 2.2, -0.7, 1.1];
        let base = rss_of_log_weights(&lw).unwrap();
        let shifted: Vec<f64> = lw.iter().map(|&l| l + 123.456).collect();
        assert!((rss_of_log_weights(&shifted).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn rss_all_collapsed_errors() {
        assert!(rss_of_log_weights(&[f64::NEG_INFINITY; 4]).is_err());
    }

    #[test]
    fn weighted_group_means_hand_cases() {
        let m = model();
        let mut sys = init_particles(&m, 2, 2, 5, ExecMode::default()).unwrap();
        // Equal weights, values {0,2} and {4,6}.
        let (gm, grand) = sys.weighted_group_means(&[0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(gm, vec![1.0, 5.0]);
        assert_eq!(grand, 3.0);
        // Weights (1,3) on values (0,4) in group 0.
        sys.log_weight = vec![0.0, 3.0f64.ln(), 0.0, 0.0];
        let (gm, _) = sys.weighted_group_means(&[0.0, 4.0, 1.0, 1.0]).unwrap();
        assert!((gm[0] - 3.0).abs() < 1e-12);
        // Constant function: every group mean equals the constant exactly.
        let (gm, grand) = sys.weighted_group_means(&[7.5; 4]).unwrap();
        assert_eq!(gm, vec![7.5, 7.5]);
        assert_eq!(grand, 7.5);
    }

    #[test]
    fn weighted_group_means_zero_group_errors() {
        let m = model();
        let mut sys = init_particles(&m, 2, 2, 5, ExecMode::default()).unwrap();
        sys.log_weight = vec![0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        match sys.weighted_group_means(&[1.0; 4]) {
            Err(Error::EmptyGroup { group }) => assert_eq!(group, 1),
            other => panic!("expected EmptyGroup, got {other:?}"),
        }
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let lw = [1.0, -2.0, 0.5, 3.0, -0.1, 0.0, 2.5, -4.0];
        let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|&l| (l - max).exp()).collect();
        let total = sum_fixed_order(&w);
        let norm_sum: f64 = w.iter().map(|&x| x / total).sum();
        assert!((norm_sum - 1.0).abs() < 1e-12);
    }
}
