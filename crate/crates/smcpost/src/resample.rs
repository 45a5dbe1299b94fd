//! S phase: per-group resampling proportional to weights.
//!
//! Residual resampling is the default. Stratified and systematic are
//! implemented but experimental: they lack supporting theory in the CLT
//! framework the group-based error estimates rely on, so use them only for
//! experimentation.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::particle::ParticleSystem;
use crate::rng::{stream_for, Phase, RandomStream, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResampleScheme {
    Multinomial,
    #[default]
    Residual,
    Stratified,
    Systematic,
}

impl ResampleScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            ResampleScheme::Multinomial => "multinomial",
            ResampleScheme::Residual => "residual",
            ResampleScheme::Stratified => "stratified",
            ResampleScheme::Systematic => "systematic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(ResampleScheme::Multinomial),
            "residual" => Ok(ResampleScheme::Residual),
            "stratified" => Ok(ResampleScheme::Stratified),
            "systematic" => Ok(ResampleScheme::Systematic),
            other => Err(Error::Config(format!("unknown resampler '{other}'"))),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ResampleScheme::Multinomial => 0,
            ResampleScheme::Residual => 1,
            ResampleScheme::Stratified => 2,
            ResampleScheme::Systematic => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ResampleScheme::Multinomial),
            1 => Ok(ResampleScheme::Residual),
            2 => Ok(ResampleScheme::Stratified),
            3 => Ok(ResampleScheme::Systematic),
            other => Err(Error::Format(format!("bad resampler tag {other}"))),
        }
    }
}

/// Draw N ancestor indices proportional to `weights`.
pub fn resample_group(
    weights: &[f64],
    scheme: ResampleScheme,
    stream: &mut RandomStream,
) -> Result<Vec<usize>> {
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Invalid("negative or non-finite resampling weight".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Invalid("resampling weights sum to zero".into()));
    }
    let n = weights.len();
    let norm: Vec<f64> = weights.iter().map(|&w| w / total).collect();
    let out = match scheme {
        ResampleScheme::Multinomial => multinomial(&norm, n, stream),
        ResampleScheme::Residual => residual(&norm, n, stream),
        ResampleScheme::Stratified => cdf_lookup(&norm, n, |i| (i as f64 + stream.uniform()) / n as f64),
        ResampleScheme::Systematic => {
            let u0 = stream.uniform();
            cdf_lookup(&norm, n, |i| (i as f64 + u0) / n as f64)
        }
    };
    Ok(out)
}

fn multinomial(norm: &[f64], count: usize, stream: &mut RandomStream) -> Vec<usize> {
    (0..count).map(|_| sample_index(norm, stream.uniform())).collect()
}

fn residual(norm: &[f64], count: usize, stream: &mut RandomStream) -> Vec<usize> {
    // Deterministic floor counts first, then multinomial on the residual
    // fractions (Baker's scheme).
    let mut out = Vec::with_capacity(count);
    let mut residuals = Vec::with_capacity(norm.len());
    for (i, &w) in norm.iter().enumerate() {
        let scaled = count as f64 * w;
        let floor = scaled.floor() as usize;
        out.extend(std::iter::repeat_n(i, floor));
        residuals.push(scaled - floor as f64);
    }
    let remaining = count - out.len();
    if remaining > 0 {
        let rsum: f64 = residuals.iter().sum();
        if rsum > 0.0 {
            let rnorm: Vec<f64> = residuals.iter().map(|r| r / rsum).collect();
            for _ in 0..remaining {
                out.push(sample_index(&rnorm, stream.uniform()));
            }
        } else {
            // Exact integer weights: pad with the largest-weight index.
            let best = norm
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            out.extend(std::iter::repeat_n(best, remaining));
        }
    }
    out
}

fn cdf_lookup(norm: &[f64], count: usize, mut point: impl FnMut(usize) -> f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut cum = norm[0];
    let mut idx = 0;
    for i in 0..count {
        let u = point(i);
        while u > cum && idx + 1 < norm.len() {
            idx += 1;
            cum += norm[idx];
        }
        out.push(idx);
    }
    out
}

fn sample_index(norm: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &w) in norm.iter().enumerate() {
        cum += w;
        if u < cum {
            return i;
        }
    }
    norm.len() - 1
}

/// Apply the S phase: resample each group independently from its within-cycle
/// weights, copy theta/state/cached likelihoods by ancestry, reset weights.
pub fn s_phase<M: Model>(
    system: &mut ParticleSystem<M::State>,
    scheme: ResampleScheme,
    master_seed: u64,
) -> Result<()> {
    let n = system.per_group;
    let dim = system.dim;
    let mut new_theta = Vec::with_capacity(system.theta.len());
    let mut new_state = Vec::with_capacity(system.state.len());
    let mut new_loglike = Vec::with_capacity(system.log_like.len());
    for j in 0..system.groups {
        let lo = j * n;
        let max = system.log_weight[lo..lo + n]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::EmptyGroup { group: j });
        }
        let weights: Vec<f64> = system.log_weight[lo..lo + n]
            .iter()
            .map(|&l| (l - max).exp())
            .collect();
        // One stream per (group, cycle); resampling is a per-group operation.
        let key = StreamKey::new(master_seed, j, 0, Phase::Selection).with_cycle(system.cycle);
        let ancestors = resample_group(&weights, scheme, &mut stream_for(key))?;
        debug_assert_eq!(ancestors.len(), n);
        for &a in &ancestors {
            let src = lo + a;
            new_theta.extend_from_slice(&system.theta[src * dim..(src + 1) * dim]);
            new_state.push(system.state[src].clone());
            new_loglike.push(system.log_like[src]);
        }
    }
    system.theta = new_theta;
    system.state = new_state;
    system.log_like = new_loglike;
    system.log_weight.iter_mut().for_each(|w| *w = 0.0);
    Ok(())
}
