//! Cycle orchestration: C (correction) -> S (selection) -> M (mutation).
//!
//! Three entry points:
//! - [`run_adaptive`]: data-driven cycle boundaries and proposal tuning,
//!   producing a [`DesignRecord`] of every adaptive decision;
//! - [`run_nonadaptive`]: replays a design with fresh randomness, which makes
//!   the run a fixed-design simulator with valid group-based error estimates;
//! - [`run_hybrid`]: the two-pass combination, adaptive then replay.

use crate::diagnostics::{
    evidence_accumulate, log_mean_and_delta_nse, moment_report, pit, EvidenceReport, MomentReport,
};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::model::Model;
use crate::mutation::{
    m_phase, m_phase_replay, MPhaseRule, MutationRecord, MutationSampler, StepsizeState,
};
use crate::particle::{c_phase_step, init_particles, ParticleSystem};
use crate::resample::{s_phase, ResampleScheme};
use std::time::Instant;

pub const DESIGN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub groups: usize,
    pub per_group: usize,
    pub master_seed: u64,
    /// C phase terminates when RSS drops below this (default 0.5).
    pub rss_threshold: f64,
    pub mphase: MPhaseRule,
    pub scheme: ResampleScheme,
    pub sampler: MutationSampler,
    /// Observation indices (1-based) at which the C phase is cut regardless
    /// of RSS; the following M phase targets the higher RNE threshold.
    pub forced_dates: Vec<usize>,
    /// Dates at which posterior moments are reported. Each acts as a forced
    /// date so the report is computed on a rejuvenated population.
    pub moment_dates: Vec<usize>,
    /// Burn-in index for the log score; 0 disables it.
    pub burn_in: usize,
    /// Compute a PIT value at every observation (needs a model simulator).
    pub pit: bool,
    pub exec: ExecMode,
}

impl EngineConfig {
    pub fn new(groups: usize, per_group: usize, master_seed: u64) -> Self {
        EngineConfig {
            groups,
            per_group,
            master_seed,
            rss_threshold: 0.5,
            mphase: MPhaseRule::default_rne(),
            scheme: ResampleScheme::default(),
            sampler: MutationSampler::default(),
            forced_dates: Vec::new(),
            moment_dates: Vec::new(),
            burn_in: 0,
            pit: false,
            exec: ExecMode::default(),
        }
    }

    pub fn validate(&self, t_total: usize) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::Config("J must be >= 2 (NSE needs two groups)".into()));
        }
        if self.per_group < 2 {
            return Err(Error::Config("N must be >= 2".into()));
        }
        if !(0.0 < self.rss_threshold && self.rss_threshold < 1.0) {
            return Err(Error::Config("RSS threshold must lie in (0,1)".into()));
        }
        self.mphase.validate()?;
        for &d in self.forced_dates.iter().chain(&self.moment_dates) {
            if d == 0 || d > t_total {
                return Err(Error::Config(format!(
                    "forced/moment date {d} outside 1..={t_total}"
                )));
            }
        }
        if self.burn_in >= t_total && self.burn_in != 0 {
            return Err(Error::Config("burn-in must be < T".into()));
        }
        Ok(())
    }

    /// Hash of everything that shapes the design, used to refuse replaying a
    /// design against a different configuration.
    pub fn design_hash(&self, model_id: &str, t_total: usize) -> u64 {
        let mut text = format!(
            "{model_id}|{t_total}|{}|{}|{}|{:?}|{}|{:?}|",
            self.groups,
            self.per_group,
            self.rss_threshold.to_bits(),
            self.mphase,
            self.scheme.as_str(),
            self.sampler,
        );
        for &d in &self.forced_dates {
            text.push_str(&format!("f{d}|"));
        }
        for &d in &self.moment_dates {
            text.push_str(&format!("m{d}|"));
        }
        fnv1a(text.as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One cycle of the frozen design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignCycle {
    pub t_end: usize,
    /// False only for a terminal cycle that ends mid-C with weighted
    /// particles (no S or M executed).
    pub resampled: bool,
    /// Per-iteration proposal covariances (k*k row-major each).
    pub covs: Vec<Vec<f64>>,
    pub stepsizes: Vec<f64>,
}

/// The frozen adaptive decisions: everything a nonadaptive rerun needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRecord {
    pub schema_version: u32,
    pub model_id: String,
    pub groups: usize,
    pub per_group: usize,
    pub dim: usize,
    pub t_total: usize,
    pub config_hash: u64,
    pub scheme: ResampleScheme,
    pub sampler: MutationSampler,
    pub forced_dates: Vec<usize>,
    pub moment_dates: Vec<usize>,
    pub burn_in: usize,
    /// Seed of the adaptive pass that produced this design.
    pub adaptive_seed: u64,
    pub cycles: Vec<DesignCycle>,
}

impl DesignRecord {
    pub fn total_sweeps(&self) -> usize {
        self.cycles.iter().map(|c| c.covs.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0usize;
        for (i, c) in self.cycles.iter().enumerate() {
            if c.t_end <= prev {
                return Err(Error::Format(format!(
                    "cycle {i}: boundaries must be strictly increasing"
                )));
            }
            if c.covs.len() != c.stepsizes.len() {
                return Err(Error::Format(format!("cycle {i}: covariance/stepsize mismatch")));
            }
            for cov in &c.covs {
                if cov.len() != self.dim * self.dim {
                    return Err(Error::Format(format!("cycle {i}: covariance has wrong size")));
                }
            }
            prev = c.t_end;
        }
        if prev != self.t_total {
            return Err(Error::Format("cycle boundaries must end at T".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimings {
    pub c_secs: f64,
    pub s_secs: f64,
    pub m_secs: f64,
}

/// Per-cycle diagnostics captured during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub t_end: usize,
    pub resampled: bool,
    /// Group log-mean within-cycle weights at cycle end (before the S reset).
    pub group_log_mean_w: Vec<f64>,
    pub rss_at_entry: f64,
    pub forced: bool,
    pub mutation: MutationRecord,
}

/// Full diagnostic record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    /// RSS after each C-phase update, observation 1..=T.
    pub rss: Vec<f64>,
    /// Group log-mean within-cycle weights after each update, 1..=T.
    pub group_log_mean_w: Vec<Vec<f64>>,
    /// PIT value per observation when enabled.
    pub pit: Vec<f64>,
    pub cycles: Vec<CycleTrace>,
    pub timings: PhaseTimings,
}

impl RunTrace {
    pub fn total_sweeps(&self) -> usize {
        self.cycles.iter().map(|c| c.mutation.iterations.len()).sum()
    }

    /// Per-group log marginal likelihood through observation `t`:
    /// completed-cycle log mean weights plus the partial within-cycle term.
    pub fn group_log_ml_at(&self, t: usize) -> Result<Vec<f64>> {
        if t > self.group_log_mean_w.len() {
            return Err(Error::Invalid(format!("t={t} beyond recorded trace")));
        }
        let groups = self
            .group_log_mean_w
            .first()
            .map(|g| g.len())
            .ok_or_else(|| Error::Invalid("empty trace".into()))?;
        let mut acc = vec![0.0; groups];
        let mut covered = 0usize;
        for cycle in &self.cycles {
            if cycle.t_end > t {
                break;
            }
            for (a, &g) in acc.iter_mut().zip(&cycle.group_log_mean_w) {
                *a += g;
            }
            covered = cycle.t_end;
        }
        if t > covered {
            for (a, &g) in acc.iter_mut().zip(&self.group_log_mean_w[t - 1]) {
                *a += g;
            }
        }
        Ok(acc)
    }

    /// Log predictive likelihood log p(y_{t+1:s} | y_{1:t}) with its
    /// delta-method NSE. `t` must be a cycle start and `s` must fall within
    /// that cycle, where the C-phase weights are exactly the predictive
    /// integrand.
    pub fn predictive_likelihood(&self, t: usize, s: usize) -> Result<(f64, f64)> {
        let mut start = 0usize;
        let mut found = false;
        for cycle in &self.cycles {
            if start == t {
                if s > t && s <= cycle.t_end {
                    found = true;
                }
                break;
            }
            start = cycle.t_end;
        }
        if !found {
            return Err(Error::Invalid(format!(
                "(t={t}, s={s}) does not lie within a single recorded cycle"
            )));
        }
        log_mean_and_delta_nse(&self.group_log_mean_w[s - 1])
    }
}

/// Moments, evidence, and trace from one pass of the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub moments: Vec<MomentReport>,
    pub evidence: EvidenceReport,
    pub trace: RunTrace,
}

fn evidence_from_trace(trace: &RunTrace, burn_in: usize) -> Result<EvidenceReport> {
    let cycles: Vec<Vec<f64>> = trace
        .cycles
        .iter()
        .map(|c| c.group_log_mean_w.clone())
        .collect();
    let mut report = evidence_accumulate(&cycles)?;
    if burn_in > 0 {
        let at_end = trace.group_log_ml_at(trace.group_log_mean_w.len())?;
        let at_burn = trace.group_log_ml_at(burn_in)?;
        let scores: Vec<f64> = at_end.iter().zip(&at_burn).map(|(&a, &b)| a - b).collect();
        let (score, nse) = log_mean_and_delta_nse(&scores)?;
        report.log_score = Some(score);
        report.nse_log_score = Some(nse);
    }
    Ok(report)
}

fn check_data(data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("empty data series".into()));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite observation at row {}", i + 1)));
    }
    Ok(())
}

fn moment_reports_now<M: Model>(
    system: &ParticleSystem<M::State>,
    model: &M,
) -> Result<Vec<MomentReport>> {
    let fns = model.functions_of_interest();
    let mut out = Vec::with_capacity(fns.len());
    for f in fns {
        let values: Vec<f64> = (0..system.total())
            .map(|idx| (f.eval)(model, system.theta_of(idx), &system.state[idx]))
            .collect();
        out.push(moment_report(system, f.name, &values)?);
    }
    Ok(out)
}

/// Adaptive pass (cycle boundaries and tuning decided on the fly).
pub fn run_adaptive<M: Model>(
    model: &M,
    data: &[f64],
    config: &EngineConfig,
) -> Result<(RunOutput, DesignRecord, ParticleSystem<M::State>)> {
    check_data(data)?;
    config.validate(data.len())?;
    let t_total = data.len();
    let forced: std::collections::BTreeSet<usize> = config
        .forced_dates
        .iter()
        .chain(&config.moment_dates)
        .copied()
        .collect();
    let moment_dates: std::collections::BTreeSet<usize> =
        config.moment_dates.iter().copied().collect();

    let mut system = init_particles(model, config.groups, config.per_group, config.master_seed, config.exec)?;
    let mut stepsize = StepsizeState::default();
    let mut trace = RunTrace::default();
    let mut moments = Vec::new();
    let mut cycles = Vec::new();

    while system.current_t < t_total {
        // C phase: extend until the RSS crosses the threshold or a forced
        // date (or the data end) cuts the cycle.
        let c_start = Instant::now();
        let mut rss = 1.0;
        let mut is_forced = false;
        let mut crossed = false;
        while system.current_t < t_total {
            if config.pit {
                let p = pit(
                    &system,
                    model,
                    data[system.current_t],
                    |y| y,
                    1,
                    config.master_seed,
                )?;
                trace.pit.push(p);
            }
            let y = data[system.current_t];
            c_phase_step(&mut system, model, y, config.exec)?;
            rss = system.rss()?;
            trace.rss.push(rss);
            trace.group_log_mean_w.push(system.group_log_mean_weights());
            if forced.contains(&system.current_t) {
                is_forced = true;
                break;
            }
            if rss < config.rss_threshold {
                crossed = true;
                break;
            }
        }
        trace.timings.c_secs += c_start.elapsed().as_secs_f64();

        let t_end = system.current_t;
        let group_log_mean_w = system.group_log_mean_weights();
        let do_sm = is_forced || crossed;
        let mutation = if do_sm {
            let s_start = Instant::now();
            s_phase::<M>(&mut system, config.scheme, config.master_seed)?;
            trace.timings.s_secs += s_start.elapsed().as_secs_f64();
            let m_start = Instant::now();
            let record = m_phase(
                &mut system,
                model,
                &data[..t_end],
                config.mphase,
                rss,
                is_forced,
                &mut stepsize,
                config.sampler,
                config.master_seed,
                config.exec,
            )?;
            trace.timings.m_secs += m_start.elapsed().as_secs_f64();
            record
        } else {
            MutationRecord {
                cycle: system.cycle,
                ..Default::default()
            }
        };

        cycles.push(DesignCycle {
            t_end,
            resampled: do_sm,
            covs: mutation.iterations.iter().map(|it| it.cov.clone()).collect(),
            stepsizes: mutation.iterations.iter().map(|it| it.stepsize).collect(),
        });
        trace.cycles.push(CycleTrace {
            t_end,
            resampled: do_sm,
            group_log_mean_w,
            rss_at_entry: rss,
            forced: is_forced,
            mutation,
        });

        if moment_dates.contains(&t_end) || t_end == t_total {
            moments.extend(moment_reports_now(&system, model)?);
        }
        system.cycle += 1;
    }

    let evidence = evidence_from_trace(&trace, config.burn_in)?;
    let design = DesignRecord {
        schema_version: DESIGN_SCHEMA_VERSION,
        model_id: model.id(),
        groups: config.groups,
        per_group: config.per_group,
        dim: model.dim(),
        t_total,
        config_hash: config.design_hash(&model.id(), t_total),
        scheme: config.scheme,
        sampler: config.sampler,
        forced_dates: config.forced_dates.clone(),
        moment_dates: config.moment_dates.clone(),
        burn_in: config.burn_in,
        adaptive_seed: config.master_seed,
        cycles,
    };
    Ok((
        RunOutput {
            moments,
            evidence,
            trace,
        },
        design,
        system,
    ))
}

/// Nonadaptive pass: control flow driven entirely by the design.
pub fn run_nonadaptive<M: Model>(
    model: &M,
    data: &[f64],
    design: &DesignRecord,
    seed: u64,
    exec: ExecMode,
    pit_enabled: bool,
) -> Result<(RunOutput, ParticleSystem<M::State>)> {
    check_data(data)?;
    design.validate()?;
    if design.model_id != model.id() {
        return Err(Error::DesignMismatch(format!(
            "design was built for model '{}', got '{}'",
            design.model_id,
            model.id()
        )));
    }
    if design.dim != model.dim() {
        return Err(Error::DesignMismatch("parameter dimension differs".into()));
    }
    if design.t_total != data.len() {
        return Err(Error::DesignMismatch(format!(
            "design covers T={}, data has T={}",
            design.t_total,
            data.len()
        )));
    }

    let moment_dates: std::collections::BTreeSet<usize> =
        design.moment_dates.iter().copied().collect();
    let mut system = init_particles(model, design.groups, design.per_group, seed, exec)?;
    let mut trace = RunTrace::default();
    let mut moments = Vec::new();

    for cycle in &design.cycles {
        let c_start = Instant::now();
        let mut rss = 1.0;
        while system.current_t < cycle.t_end {
            if pit_enabled {
                let p = pit(&system, model, data[system.current_t], |y| y, 1, seed)?;
                trace.pit.push(p);
            }
            let y = data[system.current_t];
            c_phase_step(&mut system, model, y, exec)?;
            rss = system.rss()?;
            trace.rss.push(rss);
            trace.group_log_mean_w.push(system.group_log_mean_weights());
        }
        trace.timings.c_secs += c_start.elapsed().as_secs_f64();
        let group_log_mean_w = system.group_log_mean_weights();
        let mutation = if cycle.resampled {
            let s_start = Instant::now();
            s_phase::<M>(&mut system, design.scheme, seed)?;
            trace.timings.s_secs += s_start.elapsed().as_secs_f64();
            let m_start = Instant::now();
            let record = m_phase_replay(
                &mut system,
                model,
                &data[..cycle.t_end],
                &cycle.covs,
                design.sampler,
                seed,
                exec,
            )?;
            trace.timings.m_secs += m_start.elapsed().as_secs_f64();
            record
        } else {
            MutationRecord {
                cycle: system.cycle,
                ..Default::default()
            }
        };
        trace.cycles.push(CycleTrace {
            t_end: cycle.t_end,
            resampled: cycle.resampled,
            group_log_mean_w,
            rss_at_entry: rss,
            forced: false,
            mutation,
        });
        if moment_dates.contains(&cycle.t_end) || cycle.t_end == design.t_total {
            moments.extend(moment_reports_now(&system, model)?);
        }
        system.cycle += 1;
    }

    let evidence = evidence_from_trace(&trace, design.burn_in)?;
    Ok((
        RunOutput {
            moments,
            evidence,
            trace,
        },
        system,
    ))
}

/// Paired adaptive + replay runs.
#[derive(Debug, Clone)]
pub struct HybridReport {
    pub step1: RunOutput,
    pub step2: RunOutput,
    pub design: DesignRecord,
    pub step2_seed: u64,
}

/// Derive the fresh step-2 seed from the master seed, so the whole hybrid
/// run is reproducible from a single seed.
pub fn step2_seed(master_seed: u64) -> u64 {
    let mut z = master_seed ^ 0x5EED_0002_5EED_0002;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-pass hybrid: adaptive design pass (particles discarded, diagnostics
/// retained), then a nonadaptive rerun with a fresh seed.
pub fn run_hybrid<M: Model>(model: &M, data: &[f64], config: &EngineConfig) -> Result<HybridReport> {
    let (step1, design, step1_particles) = run_adaptive(model, data, config)?;
    drop(step1_particles);
    let expected = config.design_hash(&model.id(), data.len());
    if design.config_hash != expected {
        return Err(Error::DesignMismatch("config hash mismatch at step 2".into()));
    }
    let seed2 = step2_seed(config.master_seed);
    let (step2, _) = run_nonadaptive(model, data, &design, seed2, config.exec, config.pit)?;
    // The adaptive and replayed passes must execute the identical design.
    debug_assert_eq!(
        step1.trace.cycles.iter().map(|c| c.t_end).collect::<Vec<_>>(),
        step2.trace.cycles.iter().map(|c| c.t_end).collect::<Vec<_>>()
    );
    Ok(HybridReport {
        step1,
        step2,
        design,
        step2_seed: seed2,
    })
}
