//! M phase: Metropolis sweeps over the full parameter vector.
//!
//! The default sampler is a Gaussian random walk in a single block with
//! proposal variance h^2 V, where V is the sample covariance of the current
//! population and h adapts toward a 0.25 acceptance rate in steps of 0.1 on
//! [0.1, 1.0]. Two stopping rules: a deterministic iteration count keyed on
//! the RSS at entry, and an RNE-based rule that iterates until the mean RNE
//! of the model's test functions clears a threshold.

use crate::diagnostics::{nse_from_group_means, rne_from_values};
use crate::error::{Error, Result};
use crate::exec::{for_each_indexed, ExecMode};
use crate::model::Model;
use crate::particle::ParticleSystem;
use crate::rng::{stream_for, Phase, StreamKey};

pub const STEPSIZE_INIT: f64 = 0.5;
pub const STEPSIZE_MIN: f64 = 0.1;
pub const STEPSIZE_MAX: f64 = 1.0;
pub const TARGET_ACCEPTANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeState {
    pub h: f64,
}

impl Default for StepsizeState {
    fn default() -> Self {
        StepsizeState { h: STEPSIZE_INIT }
    }
}

/// h moves by +/- 0.1 toward the 0.25 target, clamped to [0.1, 1.0].
pub fn adapt_stepsize(state: StepsizeState, acceptance_rate: f64) -> StepsizeState {
    let delta = if acceptance_rate > TARGET_ACCEPTANCE { 0.1 } else { -0.1 };
    StepsizeState {
        h: (state.h + delta).clamp(STEPSIZE_MIN, STEPSIZE_MAX),
    }
}

/// M-phase stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MPhaseRule {
    /// rbar sweeps normally, kappa*rbar when the RSS at entry fell below d2.
    Deterministic {
        rbar: usize,
        kappa: usize,
        d1: f64,
        d2: f64,
    },
    /// Sweep until the mean test-function RNE reaches e1 (e2 at forced
    /// dates), capped at rmax.
    RneBased { e1: f64, e2: f64, rmax: usize },
}

impl MPhaseRule {
    pub fn default_deterministic() -> Self {
        MPhaseRule::Deterministic {
            rbar: 7,
            kappa: 3,
            d1: 0.50,
            d2: 0.20,
        }
    }

    pub fn default_rne() -> Self {
        MPhaseRule::RneBased {
            e1: 0.35,
            e2: 0.90,
            rmax: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MPhaseRule::Deterministic { rbar, kappa, d1, d2 } => {
                if rbar == 0 || kappa == 0 || !(0.0 < d2 && d2 <= d1 && d1 < 1.0) {
                    return Err(Error::Config(
                        "deterministic rule needs rbar,kappa >= 1 and 0 < D2 <= D1 < 1".into(),
                    ));
                }
            }
            MPhaseRule::RneBased { e1, e2, rmax } => {
                if !(0.0 < e1 && e1 <= e2 && e2 <= 1.0) || rmax == 0 {
                    return Err(Error::Config(
                        "RNE rule needs 0 < E1 <= E2 <= 1 and Rmax >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Proposal sampler. The independence sampler is experimental; it collapses
/// badly on irregular posteriors and is excluded from the default path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MutationSampler {
    #[default]
    RandomWalk,
    IndependenceGaussian,
}

/// Per-iteration record of one M phase, sufficient to replay it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MutationIter {
    /// Full proposal covariance actually used (k x k, row-major).
    pub cov: Vec<f64>,
    pub stepsize: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MutationRecord {
    pub cycle: usize,
    pub iterations: Vec<MutationIter>,
    /// Per-iteration RNE of each test function (record-only under the
    /// deterministic rule, the stopping statistic under the RNE rule).
    pub rne_path: Vec<Vec<f64>>,
}

/// Sample covariance of the population (denominator JN-1) scaled by h^2,
/// plus a diagonal jitter of 1e-10 * mean diagonal so factorization succeeds
/// even for a degenerate population.
pub fn proposal_covariance<S: Clone + Send + Sync>(
    system: &ParticleSystem<S>,
    h: f64,
) -> Result<Vec<f64>> {
    let k = system.dim;
    let total = system.total();
    if system.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite particle values".into()));
    }
    let mut mean = vec![0.0; k];
    for idx in 0..total {
        for (m, &v) in mean.iter_mut().zip(system.theta_of(idx)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut cov = vec![0.0; k * k];
    for idx in 0..total {
        let th = system.theta_of(idx);
        for a in 0..k {
            let da = th[a] - mean[a];
            for b in a..k {
                cov[a * k + b] += da * (th[b] - mean[b]);
            }
        }
    }
    let denom = (total - 1) as f64;
    for a in 0..k {
        for b in a..k {
            let v = cov[a * k + b] / denom;
            cov[a * k + b] = v;
            cov[b * k + a] = v;
        }
    }
    let trace: f64 = (0..k).map(|a| cov[a * k + a]).sum();
    let jitter = 1e-10 * if trace > 0.0 { trace / k as f64 } else { 1.0 };
    for entry in cov.iter_mut() {
        *entry *= h * h;
    }
    for a in 0..k {
        cov[a * k + a] += jitter;
    }
    Ok(cov)
}

/// Population mean of theta, for the independence sampler.
fn population_mean<S: Clone + Send + Sync>(system: &ParticleSystem<S>) -> Vec<f64> {
    let k = system.dim;
    let total = system.total();
    let mut mean = vec![0.0; k];
    for idx in 0..total {
        for (m, &v) in mean.iter_mut().zip(system.theta_of(idx)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    mean
}

/// In-place Cholesky of a row-major k x k PSD matrix; returns the lower
/// factor.
pub fn cholesky(mut a: Vec<f64>, k: usize) -> Result<Vec<f64>> {
    for c in 0..k {
        for r in c..k {
            let mut sum = a[r * k + c];
            for j in 0..c {
                sum -= a[r * k + j] * a[c * k + j];
            }
            if r == c {
                if sum <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "covariance not positive definite at pivot {c}"
                    )));
                }
                a[c * k + c] = sum.sqrt();
            } else {
                a[r * k + c] = sum / a[c * k + c];
            }
        }
        for j in (c + 1)..k {
            a[c * k + j] = 0.0;
        }
    }
    Ok(a)
}

fn solve_lower(l: &[f64], k: usize, rhs: &mut [f64]) {
    for r in 0..k {
        let mut v = rhs[r];
        for j in 0..r {
            v -= l[r * k + j] * rhs[j];
        }
        rhs[r] = v / l[r * k + r];
    }
}

fn log_det_from_factor(l: &[f64], k: usize) -> f64 {
    2.0 * (0..k).map(|a| l[a * k + a].ln()).sum::<f64>()
}

struct SweepSlot<S> {
    theta: Vec<f64>,
    state: S,
    log_like: f64,
    accepted: bool,
}

/// One Metropolis sweep with proposal factor `chol` (lower-triangular of the
/// full proposal covariance). Returns the population acceptance rate.
#[allow(clippy::too_many_arguments)]
pub fn metropolis_sweep<M: Model>(
    system: &mut ParticleSystem<M::State>,
    model: &M,
    data: &[f64],
    chol: &[f64],
    sampler: MutationSampler,
    master_seed: u64,
    iteration: usize,
    mode: ExecMode,
) -> Result<f64> {
    debug_assert!(system.log_weight.iter().all(|&w| w == 0.0));
    let k = system.dim;
    let per_group = system.per_group;
    let cycle = system.cycle;
    let mean = match sampler {
        MutationSampler::IndependenceGaussian => population_mean(system),
        MutationSampler::RandomWalk => Vec::new(),
    };
    let log_det = log_det_from_factor(chol, k);

    let mut slots: Vec<SweepSlot<M::State>> = {
        let mut out = Vec::with_capacity(system.total());
        for (idx, state) in system.state.drain(..).enumerate() {
            out.push(SweepSlot {
                theta: system.theta[idx * k..(idx + 1) * k].to_vec(),
                state,
                log_like: system.log_like[idx],
                accepted: false,
            });
        }
        out
    };

    for_each_indexed(mode, &mut slots, |idx, slot| {
        let key = StreamKey::new(master_seed, idx / per_group, idx % per_group, Phase::Mutation)
            .with_cycle(cycle)
            .with_iteration(iteration);
        let mut stream = stream_for(key);
        let z: Vec<f64> = (0..k).map(|_| stream.normal()).collect();
        let mut proposal = vec![0.0; k];
        for r in 0..k {
            let mut v = 0.0;
            for c in 0..=r {
                v += chol[r * k + c] * z[c];
            }
            proposal[r] = v;
        }
        // Hastings term: zero for the symmetric random walk, the proposal
        // density ratio for the independence sampler.
        let mut hastings = 0.0;
        match sampler {
            MutationSampler::RandomWalk => {
                for (p, &t) in proposal.iter_mut().zip(&slot.theta) {
                    *p += t;
                }
            }
            MutationSampler::IndependenceGaussian => {
                for (p, &m) in proposal.iter_mut().zip(&mean) {
                    *p += m;
                }
                let quad = |x: &[f64]| {
                    let mut d: Vec<f64> = x.iter().zip(&mean).map(|(&a, &b)| a - b).collect();
                    solve_lower(chol, k, &mut d);
                    d.iter().map(|&v| v * v).sum::<f64>()
                };
                let log_q_prop = -0.5 * (quad(&proposal) + log_det);
                let log_q_curr = -0.5 * (quad(&slot.theta) + log_det);
                hastings = log_q_curr - log_q_prop;
            }
        }
        let log_prior_prop = model.log_prior(&proposal);
        let u = stream.uniform();
        if !log_prior_prop.is_finite() {
            return;
        }
        let log_prior_curr = model.log_prior(&slot.theta);
        let (ll_prop, state_prop) = model.log_likelihood_and_state(&proposal, data);
        if !ll_prop.is_finite() {
            return;
        }
        let log_ratio = log_prior_prop + ll_prop - log_prior_curr - slot.log_like + hastings;
        if u.ln() < log_ratio {
            slot.theta = proposal;
            slot.state = state_prop;
            slot.log_like = ll_prop;
            slot.accepted = true;
        }
    });

    let mut accepted = 0usize;
    for (idx, slot) in slots.into_iter().enumerate() {
        system.theta[idx * k..(idx + 1) * k].copy_from_slice(&slot.theta);
        system.state.push(slot.state);
        system.log_like[idx] = slot.log_like;
        if slot.accepted {
            accepted += 1;
        }
    }
    Ok(accepted as f64 / system.total() as f64)
}

/// Per-particle test-function values on the current population.
pub fn test_function_values<M: Model>(
    system: &ParticleSystem<M::State>,
    model: &M,
) -> Vec<Vec<f64>> {
    let fns = model.test_functions();
    fns.iter()
        .map(|f| {
            (0..system.total())
                .map(|idx| (f.eval)(model, system.theta_of(idx), &system.state[idx]))
                .collect()
        })
        .collect()
}

/// RNE of each test function on the (equal-weight) population; +inf marks an
/// undefined entry (function constant across groups, no simulation noise).
/// The sentinel is infinite rather than NaN so recorded traces stay
/// comparable with `==`; [`mean_defined`] skips non-finite entries either way.
pub fn test_function_rnes<M: Model>(system: &ParticleSystem<M::State>, model: &M) -> Vec<f64> {
    test_function_values(system, model)
        .iter()
        .map(|values| {
            let group_means: Vec<f64> = (0..system.groups)
                .map(|j| {
                    let lo = j * system.per_group;
                    values[lo..lo + system.per_group].iter().sum::<f64>()
                        / system.per_group as f64
                })
                .collect();
            match nse_from_group_means(&group_means, system.per_group) {
                Ok((vhat, _)) => rne_from_values(values, vhat).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            }
        })
        .collect()
}

fn mean_defined(rnes: &[f64]) -> Option<f64> {
    let defined: Vec<f64> = rnes.iter().cloned().filter(|v| v.is_finite()).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Run a full adaptive M phase. The stepsize state persists across cycles
/// and is adapted after every sweep.
#[allow(clippy::too_many_arguments)]
pub fn m_phase<M: Model>(
    system: &mut ParticleSystem<M::State>,
    model: &M,
    data: &[f64],
    rule: MPhaseRule,
    rss_at_entry: f64,
    forced_date: bool,
    stepsize: &mut StepsizeState,
    sampler: MutationSampler,
    master_seed: u64,
    mode: ExecMode,
) -> Result<MutationRecord> {
    rule.validate()?;
    let mut record = MutationRecord {
        cycle: system.cycle,
        ..Default::default()
    };
    let (max_iters, rne_target) = match rule {
        MPhaseRule::Deterministic { rbar, kappa, d2, .. } => {
            let iters = if rss_at_entry < d2 { kappa * rbar } else { rbar };
            (iters, None)
        }
        MPhaseRule::RneBased { e1, e2, rmax } => {
            (rmax, Some(if forced_date { e2 } else { e1 }))
        }
    };
    for r in 0..max_iters {
        let cov = proposal_covariance(system, stepsize.h)?;
        let chol = cholesky(cov.clone(), system.dim)?;
        let rate = metropolis_sweep(system, model, data, &chol, sampler, master_seed, r, mode)?;
        record.iterations.push(MutationIter {
            cov,
            stepsize: stepsize.h,
            acceptance: rate,
        });
        *stepsize = adapt_stepsize(*stepsize, rate);
        let rnes = test_function_rnes(system, model);
        let mean_rne = mean_defined(&rnes);
        record.rne_path.push(rnes);
        if let Some(target) = rne_target {
            // All-constant test functions carry no diversity signal; stop.
            if mean_rne.is_none_or(|m| m >= target) {
                break;
            }
        }
    }
    Ok(record)
}

/// Replay a recorded M phase: exactly the recorded covariances, in order,
/// with no adaptation.
pub fn m_phase_replay<M: Model>(
    system: &mut ParticleSystem<M::State>,
    model: &M,
    data: &[f64],
    covs: &[Vec<f64>],
    sampler: MutationSampler,
    master_seed: u64,
    mode: ExecMode,
) -> Result<MutationRecord> {
    let mut record = MutationRecord {
        cycle: system.cycle,
        ..Default::default()
    };
    for (r, cov) in covs.iter().enumerate() {
        let chol = cholesky(cov.clone(), system.dim)?;
        let rate = metropolis_sweep(system, model, data, &chol, sampler, master_seed, r, mode)?;
        record.iterations.push(MutationIter {
            cov: cov.clone(),
            // No adaptation happens on replay; 0 marks "not applicable"
            // (adaptive stepsizes are clamped to [0.1, 1.0], so 0 is free).
            stepsize: 0.0,
            acceptance: rate,
        });
        record.rne_path.push(test_function_rnes(system, model));
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecMode;
    use crate::models::ConjugateNormal;
    use crate::particle::init_particles;
    use crate::rng::{stream_for, Phase, StreamKey};

    #[test]
    fn stepsize_rule() {
        let s = StepsizeState { h: 0.5 };
        assert_eq!(adapt_stepsize(s, 0.30).h, 0.6);
        assert_eq!(adapt_stepsize(StepsizeState { h: 1.0 }, 0.50).h, 1.0);
        assert_eq!(adapt_stepsize(StepsizeState { h: 0.1 }, 0.0).h, 0.1);
        // Exactly at target counts as "not greater": decrement.
        assert!((adapt_stepsize(s, 0.25).h - 0.4).abs() < 1e-12);
    }

    #[test]
    fn covariance_hand_cases() {
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let mut sys = init_particles(&m, 2, 2, 3, ExecMode::default()).unwrap();
        sys.groups = 2;
        sys.per_group = 1;
        sys.theta = vec![0.0, 2.0];
        sys.state.truncate(2);
        sys.log_weight = vec![0.0, 0.0];
        sys.log_like = vec![0.0, 0.0];
        // k=1, values {0,2}, sample variance (N-1 denom) = 2; h=0.5 -> 0.5.
        let cov = proposal_covariance(&sys, 0.5).unwrap();
        assert!((cov[0] - 0.5).abs() < 1e-9);
        // Scaling thetas by c scales the covariance by c^2.
        sys.theta = vec![0.0, 6.0];
        let cov3 = proposal_covariance(&sys, 0.5).unwrap();
        assert!((cov3[0] - 4.5).abs() < 1e-8);
        // Identical particles: jitter only.
        sys.theta = vec![1.5, 1.5];
        let covj = proposal_covariance(&sys, 0.5).unwrap();
        assert!((covj[0] - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn cholesky_round_trip() {
        let a = vec![4.0, 2.0, 0.5, 2.0, 5.0, 1.0, 0.5, 1.0, 3.0];
        let l = cholesky(a.clone(), 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let mut v = 0.0;
                for j in 0..3 {
                    v += l[r * 3 + j] * l[c * 3 + j];
                }
                assert!((v - a[r * 3 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_proposal_accepts_everything() {
        // Near-zero covariance: proposals coincide with current points to
        // machine precision, so every move is accepted and moments survive.
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let mut sys = init_particles(&m, 2, 32, 5, ExecMode::default()).unwrap();
        let before = sys.theta.clone();
        let chol = vec![1e-300];
        let data = [0.2, -0.1];
        sys.log_like
            .iter_mut()
            .enumerate()
            .for_each(|(i, ll)| *ll = m.log_likelihood(&before[i..i + 1], &data));
        let rate =
            metropolis_sweep(&mut sys, &m, &data, &chol, MutationSampler::RandomWalk, 5, 0, ExecMode::default())
                .unwrap();
        assert_eq!(rate, 1.0);
        for (a, b) in sys.theta.iter().zip(&before) {
            assert!((a - b).abs() < 1e-290);
        }
    }

    fn posterior_initialized_system(
        m: &ConjugateNormal,
        data: &[f64],
        j: usize,
        n: usize,
        seed: u64,
    ) -> ParticleSystem<()> {
        // Exact-posterior initialization via the closed form.
        let (pm, pv) = m.oracle().posterior(data);
        let mut sys = init_particles(m, j, n, seed, ExecMode::default()).unwrap();
        for idx in 0..sys.total() {
            let key = StreamKey::new(seed ^ 0xABCD, idx / n, idx % n, Phase::Aux);
            let draw = pm + pv.sqrt() * stream_for(key).normal();
            sys.theta[idx] = draw;
            sys.log_like[idx] = m.log_likelihood(&[draw], data);
        }
        sys
    }

    #[test]
    fn sweep_preserves_exact_posterior_moments() {
        // Detailed balance smoke test: initialized from the exact posterior,
        // one sweep leaves the first two moments unchanged within MC error.
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data: Vec<f64> = (0..20).map(|i| 0.3 + 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let (pm, pv) = m.oracle().posterior(&data);
        let mut sys = posterior_initialized_system(&m, &data, 4, 25_000, 31);
        let total = sys.total() as f64;
        let chol = cholesky(proposal_covariance(&sys, 0.5).unwrap(), 1).unwrap();
        metropolis_sweep(&mut sys, &m, &data, &chol, MutationSampler::RandomWalk, 31, 0, ExecMode::default())
            .unwrap();
        let mean: f64 = sys.theta.iter().sum::<f64>() / total;
        let var: f64 = sys.theta.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / total;
        let se_mean = (pv / total).sqrt();
        assert!((mean - pm).abs() < 4.0 * se_mean, "mean {mean} vs {pm}");
        let se_var = pv * (2.0 / total).sqrt();
        assert!((var - pv).abs() < 4.0 * se_var, "var {var} vs {pv}");
    }

    #[test]
    fn sweeps_converge_to_posterior_from_wrong_start() {
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data: Vec<f64> = (0..30).map(|i| 1.0 + 0.05 * ((i % 7) as f64 - 3.0)).collect();
        let (pm, pv) = m.oracle().posterior(&data);
        let mut sys = init_particles(&m, 4, 2048, 77, ExecMode::default()).unwrap();
        // Deliberately wrong start, far in the prior tail.
        sys.theta.iter_mut().for_each(|t| *t = -4.0 + 0.001 * *t);
        for idx in 0..sys.total() {
            sys.log_like[idx] = m.log_likelihood(sys.theta_of(idx).to_vec().as_slice(), &data);
        }
        let mut h = StepsizeState::default();
        for r in 0..200 {
            let chol = cholesky(proposal_covariance(&sys, h.h).unwrap(), 1).unwrap();
            let rate = metropolis_sweep(
                &mut sys, &m, &data, &chol, MutationSampler::RandomWalk, 77, r, ExecMode::default(),
            )
            .unwrap();
            h = adapt_stepsize(h, rate);
        }
        let total = sys.total() as f64;
        let mean: f64 = sys.theta.iter().sum::<f64>() / total;
        let var: f64 = sys.theta.iter().map(|&t| (t - mean) * (t - mean)).sum::<f64>() / total;
        // Particles are correlated after repeated sweeps from a common start;
        // allow a generous multiple of the i.i.d. standard error.
        assert!((mean - pm).abs() < 20.0 * (pv / total).sqrt(), "mean {mean} vs {pm}");
        assert!((var - pv).abs() < 0.3 * pv, "var {var} vs {pv}");
    }

    #[test]
    fn accepted_cache_matches_full_scan() {
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data = [0.4, -0.2, 0.9, 0.1];
        let mut sys = init_particles(&m, 2, 64, 13, ExecMode::default()).unwrap();
        for idx in 0..sys.total() {
            sys.log_like[idx] = m.log_likelihood(sys.theta_of(idx).to_vec().as_slice(), &data);
        }
        let chol = cholesky(proposal_covariance(&sys, 0.5).unwrap(), 1).unwrap();
        metropolis_sweep(&mut sys, &m, &data, &chol, MutationSampler::RandomWalk, 13, 0, ExecMode::default())
            .unwrap();
        for idx in 0..sys.total() {
            let fresh = m.log_likelihood(sys.theta_of(idx), &data);
            assert!((sys.log_like[idx] - fresh).abs() / fresh.abs().max(1.0) < 1e-12);
        }
    }

    #[test]
    fn deterministic_rule_iteration_counts() {
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data = [0.1, 0.2];
        let rule = MPhaseRule::default_deterministic();
        for (rss, expect) in [(0.45, 7usize), (0.10, 21usize)] {
            let mut sys = init_particles(&m, 2, 32, 3, ExecMode::default()).unwrap();
            for idx in 0..sys.total() {
                sys.log_like[idx] = m.log_likelihood(sys.theta_of(idx).to_vec().as_slice(), &data);
            }
            let mut h = StepsizeState::default();
            let rec = m_phase(
                &mut sys,
                &m,
                &data,
                rule,
                rss,
                false,
                &mut h,
                MutationSampler::RandomWalk,
                3,
                ExecMode::default(),
            )
            .unwrap();
            assert_eq!(rec.iterations.len(), expect, "rss {rss}");
        }
    }

    #[test]
    fn stepsize_sequence_reproducible_from_record() {
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data = [0.1, 0.2, -0.3];
        let mut sys = init_particles(&m, 2, 64, 4, ExecMode::default()).unwrap();
        for idx in 0..sys.total() {
            sys.log_like[idx] = m.log_likelihood(sys.theta_of(idx).to_vec().as_slice(), &data);
        }
        let mut h = StepsizeState::default();
        let rec = m_phase(
            &mut sys,
            &m,
            &data,
            MPhaseRule::default_deterministic(),
            0.3,
            false,
            &mut h,
            MutationSampler::RandomWalk,
            4,
            ExecMode::default(),
        )
        .unwrap();
        let mut replayed = StepsizeState::default();
        for it in &rec.iterations {
            assert_eq!(it.stepsize, replayed.h);
            assert!((STEPSIZE_MIN..=STEPSIZE_MAX).contains(&it.stepsize));
            replayed = adapt_stepsize(replayed, it.acceptance);
        }
    }

    #[test]
    fn independence_sampler_preserves_posterior() {
        // On a Gaussian posterior the independence sampler is near-exact.
        let m = ConjugateNormal::new(0.0, 1.0, 1.0);
        let data = [0.5, 0.3, 0.6, 0.4];
        let (pm, pv) = m.oracle().posterior(&data);
        let mut sys = posterior_initialized_system(&m, &data, 4, 10_000, 51);
        let chol = cholesky(proposal_covariance(&sys, 1.0).unwrap(), 1).unwrap();
        let rate = metropolis_sweep(
            &mut sys,
            &m,
            &data,
            &chol,
            MutationSampler::IndependenceGaussian,
            51,
            0,
            ExecMode::default(),
        )
        .unwrap();
        assert!(rate > 0.5, "rate = {rate}");
        let total = sys.total() as f64;
        let mean: f64 = sys.theta.iter().sum::<f64>() / total;
        assert!((mean - pm).abs() < 5.0 * (pv / total).sqrt());
    }
}
