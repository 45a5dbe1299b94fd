//! Numerical-accuracy estimators and model-check statistics.
//!
//! All accuracy assessments come from the J independent group means: the
//! estimated simulation variance vhat = [N/(J-1)] sum_j (gbar_j - gbar)^2,
//! the numerical standard error NSE = sqrt(vhat/(JN)), and the relative
//! numerical efficiency RNE = vhat_posterior / vhat. Marginal likelihood
//! estimates multiply per-cycle mean weights; everything is evaluated in log
//! space relative to running maxima so no intermediate overflows even for
//! |log ML| in the tens of thousands.

use crate::error::{Error, Result};
use crate::exec::sum_fixed_order;
use crate::model::Model;
use crate::particle::{log_mean_exp, ParticleSystem};
use crate::rng::{stream_for, Phase, StreamKey};

/// Posterior moment estimate with its accuracy diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub name: String,
    pub t: usize,
    pub mean: f64,
    pub sd: f64,
    pub nse: f64,
    /// `None` when the function is constant across groups (vhat = 0).
    pub rne: Option<f64>,
    pub group_means: Vec<f64>,
}

/// Marginal likelihood estimates and the log score.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceReport {
    /// Per-group log products of cycle-mean weights.
    pub group_log_products: Vec<f64>,
    /// log of the group-mean estimator, log wbar^(J,N).
    pub log_ml: f64,
    /// log of the cycle-product estimator, log wtilde^(J,N).
    pub log_ml_alt: f64,
    /// Delta-method NSE of log wbar.
    pub nse_log_ml: f64,
    pub log_score: Option<f64>,
    pub nse_log_score: Option<f64>,
}

/// vhat and NSE from the J group means.
pub fn nse_from_group_means(group_means: &[f64], per_group: usize) -> Result<(f64, f64)> {
    let j = group_means.len();
    if j < 2 {
        return Err(Error::Config(format!("NSE needs J >= 2 groups, got {j}")));
    }
    let grand = sum_fixed_order(group_means) / j as f64;
    let devs: Vec<f64> = group_means.iter().map(|&g| (g - grand) * (g - grand)).collect();
    let ss = sum_fixed_order(&devs);
    let vhat = per_group as f64 / (j - 1) as f64 * ss;
    let nse = (ss / (j as f64 * (j - 1) as f64)).sqrt();
    Ok((vhat, nse))
}

/// RNE of an equal-weight population: posterior-variance estimate with
/// denominator NJ-1, divided by vhat. `None` when vhat is zero.
pub fn rne_from_values(values: &[f64], vhat: f64) -> Option<f64> {
    if vhat <= 0.0 {
        return None;
    }
    let n = values.len() as f64;
    let mean = sum_fixed_order(values) / n;
    let devs: Vec<f64> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = sum_fixed_order(&devs) / (n - 1.0);
    Some(var / vhat)
}

/// Build a moment report from per-particle function values under the current
/// (possibly unequal) weights.
pub fn moment_report<S: Clone + Send + Sync>(
    system: &ParticleSystem<S>,
    name: &str,
    values: &[f64],
) -> Result<MomentReport> {
    let (group_means, grand) = system.weighted_group_means(values)?;
    let (vhat, nse) = nse_from_group_means(&group_means, system.per_group)?;
    let equal_weights = system.log_weight.iter().all(|&w| w == 0.0);
    let (sd, rne) = if equal_weights {
        let rne = rne_from_values(values, vhat);
        let n = values.len() as f64;
        let devs: Vec<f64> = values.iter().map(|&v| (v - grand) * (v - grand)).collect();
        let var = sum_fixed_order(&devs) / (n - 1.0);
        (var.max(0.0).sqrt(), rne)
    } else {
        // Self-normalized weighted variance for a mid-C-phase report.
        let sq: Vec<f64> = values.iter().map(|&v| v * v).collect();
        let (_, second) = system.weighted_group_means(&sq)?;
        ((second - grand * grand).max(0.0).sqrt(), None)
    };
    Ok(MomentReport {
        name: name.to_string(),
        t: system.current_t,
        mean: grand,
        sd,
        nse,
        rne,
        group_means,
    })
}

/// Delta-method NSE of the log of a group-mean estimator, from per-group log
/// values. Algebraically sd(group values)/mean, evaluated relative to the max
/// so it is overflow-safe.
pub fn log_mean_and_delta_nse(group_logs: &[f64]) -> Result<(f64, f64)> {
    let j = group_logs.len();
    if j < 2 {
        return Err(Error::Config("delta-method NSE needs J >= 2".into()));
    }
    let max = group_logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Invalid("all group log values are -inf".into()));
    }
    let rel: Vec<f64> = group_logs.iter().map(|&l| (l - max).exp()).collect();
    let mean = sum_fixed_order(&rel) / j as f64;
    let devs: Vec<f64> = rel.iter().map(|&r| (r - mean) * (r - mean)).collect();
    let vhat = sum_fixed_order(&devs) / (j as f64 * (j - 1) as f64);
    Ok((max + mean.ln(), vhat.sqrt() / mean))
}

/// Accumulate the two marginal-likelihood estimators from per-cycle group
/// log-mean weights (`cycles[l][j]` = log of group j's mean weight in cycle l).
pub fn evidence_accumulate(cycles: &[Vec<f64>]) -> Result<EvidenceReport> {
    if cycles.is_empty() {
        return Err(Error::Invalid("no cycles recorded".into()));
    }
    let j = cycles[0].len();
    let mut group_log_products = vec![0.0; j];
    let mut log_ml_alt = 0.0;
    for cycle in cycles {
        if cycle.len() != j {
            return Err(Error::Invalid("inconsistent group count across cycles".into()));
        }
        for (acc, &lw) in group_log_products.iter_mut().zip(cycle) {
            *acc += lw;
        }
        log_ml_alt += log_mean_exp(cycle);
    }
    let (log_ml, nse_log_ml) = log_mean_and_delta_nse(&group_log_products)?;
    Ok(EvidenceReport {
        group_log_products,
        log_ml,
        log_ml_alt,
        nse_log_ml,
        log_score: None,
        nse_log_score: None,
    })
}

/// Probability integral transform: the weighted fraction of simulated
/// next-observation draws whose transform lies at or below the observed one.
/// The system must be positioned at current_t = s-1 with the weights w(s-1).
pub fn pit<M: Model>(
    system: &ParticleSystem<M::State>,
    model: &M,
    y_observed: f64,
    transform: impl Fn(f64) -> f64,
    draws_per_particle: usize,
    master_seed: u64,
) -> Result<f64> {
    let threshold = transform(y_observed);
    let max = system
        .log_weight
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Invalid("all weights collapsed".into()));
    }
    let mut num = 0.0;
    let mut denom = 0.0;
    for idx in 0..system.total() {
        let w = (system.log_weight[idx] - max).exp();
        if w == 0.0 {
            continue;
        }
        let key = StreamKey::new(
            master_seed,
            system.group_of(idx),
            idx % system.per_group,
            Phase::Aux,
        )
        .with_cycle(system.current_t);
        let mut stream = stream_for(key);
        for _ in 0..draws_per_particle {
            let draw = model
                .simulate_observation(system.theta_of(idx), &system.state[idx], &mut stream)
                .ok_or_else(|| Error::Invalid("model has no simulator".into()))?;
            if transform(draw) <= threshold {
                num += w;
            }
            denom += w;
        }
    }
    Ok(num / denom)
}
