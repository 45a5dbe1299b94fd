//! Binary persistence for [`DesignRecord`] and particle-system snapshots.
//!
//! Design file layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SMCD"
//! 4       4     schema version (u32)
//! 8       4     model id length L (u32)
//! 12      L     model id (utf-8)
//! ..      8     J:    groups (u64)
//! ..      8     N:    particles per group (u64)
//! ..      8     k:    parameter dimension (u64)
//! ..      8     T:    observation count (u64)
//! ..      8     config hash (u64)
//! ..      1     resampling scheme tag (u8)
//! ..      1     mutation sampler tag (u8: 0 random walk, 1 independence)
//! ..      8     burn-in (u64)
//! ..      8     adaptive seed (u64)
//! ..      8     forced-date count F (u64), then F u64 dates
//! ..      8     moment-date count M (u64), then M u64 dates
//! ..      8     cycle count L (u64)
//! ```
//!
//! followed by L cycle blocks:
//!
//! ```text
//! 8             t_end (u64)
//! 1             resampled flag (u8)
//! 8             iteration count R (u64)
//! R*8           stepsizes (f64; 0 in a replayed record)
//! R*k*k*8       proposal covariances, row-major f64
//! ```
//!
//! Snapshot layout: magic "SMCP", then u64 header fields J, N, k, state
//! slot count, current_t, cycle; then row-major f64 arrays theta (J*N x k),
//! log_weight (J*N), log_like (J*N), encoded states (J*N x slots).

use crate::engine::{DesignCycle, DesignRecord, DESIGN_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::mutation::MutationSampler;
use crate::particle::ParticleSystem;
use crate::resample::ResampleScheme;
use std::io::{Read, Write};

const DESIGN_MAGIC: &[u8; 4] = b"SMCD";
const SNAPSHOT_MAGIC: &[u8; 4] = b"SMCP";

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }
    fn usize_list(&mut self, vs: &[usize]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        for &v in vs {
            self.u64(v as u64)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn usize_checked(&mut self, what: &str, max: usize) -> Result<usize> {
        let v = self.u64()?;
        if v > max as u64 {
            return Err(Error::Format(format!("{what} = {v} exceeds sane bound {max}")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn usize_list(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.usize_checked(what, 1 << 32)?;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            out.push(self.u64()? as usize);
        }
        Ok(out)
    }
}

fn sampler_tag(s: MutationSampler) -> u8 {
    match s {
        MutationSampler::RandomWalk => 0,
        MutationSampler::IndependenceGaussian => 1,
    }
}

fn sampler_from_tag(tag: u8) -> Result<MutationSampler> {
    match tag {
        0 => Ok(MutationSampler::RandomWalk),
        1 => Ok(MutationSampler::IndependenceGaussian),
        other => Err(Error::Format(format!("unknown sampler tag {other}"))),
    }
}

pub fn write_design<W: Write>(design: &DesignRecord, out: W) -> Result<()> {
    design.validate()?;
    let mut w = Writer { inner: out };
    w.inner.write_all(DESIGN_MAGIC)?;
    w.u32(design.schema_version)?;
    let id = design.model_id.as_bytes();
    w.u32(id.len() as u32)?;
    w.inner.write_all(id)?;
    w.u64(design.groups as u64)?;
    w.u64(design.per_group as u64)?;
    w.u64(design.dim as u64)?;
    w.u64(design.t_total as u64)?;
    w.u64(design.config_hash)?;
    w.u8(design.scheme.tag())?;
    w.u8(sampler_tag(design.sampler))?;
    w.u64(design.burn_in as u64)?;
    w.u64(design.adaptive_seed)?;
    w.usize_list(&design.forced_dates)?;
    w.usize_list(&design.moment_dates)?;
    w.u64(design.cycles.len() as u64)?;
    for cycle in &design.cycles {
        w.u64(cycle.t_end as u64)?;
        w.u8(u8::from(cycle.resampled))?;
        w.u64(cycle.covs.len() as u64)?;
        w.f64s(&cycle.stepsizes)?;
        for cov in &cycle.covs {
            w.f64s(cov)?;
        }
    }
    Ok(())
}

pub fn read_design<R: Read>(input: R) -> Result<DesignRecord> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != DESIGN_MAGIC {
        return Err(Error::Format("not a design file (bad magic)".into()));
    }
    let schema_version = r.u32()?;
    if schema_version != DESIGN_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported design schema version {schema_version}"
        )));
    }
    let id_len = r.u32()? as usize;
    if id_len > 4096 {
        return Err(Error::Format(format!("model id length {id_len} exceeds sane bound")));
    }
    let mut id = vec![0u8; id_len];
    r.inner.read_exact(&mut id)?;
    let model_id =
        String::from_utf8(id).map_err(|_| Error::Format("model id is not utf-8".into()))?;
    let groups = r.usize_checked("J", 1 << 20)?;
    let per_group = r.usize_checked("N", 1 << 30)?;
    let dim = r.usize_checked("k", 1 << 16)?;
    let t_total = r.usize_checked("T", 1 << 32)?;
    let config_hash = r.u64()?;
    let scheme = ResampleScheme::from_tag(r.u8()?)?;
    let sampler = sampler_from_tag(r.u8()?)?;
    let burn_in = r.u64()? as usize;
    let adaptive_seed = r.u64()?;
    let forced_dates = r.usize_list("forced-date count")?;
    let moment_dates = r.usize_list("moment-date count")?;
    let n_cycles = r.usize_checked("cycle count", 1 << 32)?;
    let mut cycles = Vec::with_capacity(n_cycles.min(1 << 20));
    for _ in 0..n_cycles {
        let t_end = r.u64()? as usize;
        let resampled = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad resampled flag {other}"))),
        };
        let n_iters = r.usize_checked("iteration count", 1 << 24)?;
        let stepsizes = r.f64s(n_iters)?;
        let mut covs = Vec::with_capacity(n_iters);
        for _ in 0..n_iters {
            covs.push(r.f64s(dim * dim)?);
        }
        cycles.push(DesignCycle {
            t_end,
            resampled,
            covs,
            stepsizes,
        });
    }
    let design = DesignRecord {
        schema_version,
        model_id,
        groups,
        per_group,
        dim,
        t_total,
        config_hash,
        scheme,
        sampler,
        forced_dates,
        moment_dates,
        burn_in,
        adaptive_seed,
        cycles,
    };
    design.validate()?;
    Ok(design)
}

pub fn write_snapshot<M: Model, W: Write>(
    system: &ParticleSystem<M::State>,
    model: &M,
    out: W,
) -> Result<()> {
    let mut w = Writer { inner: out };
    w.inner.write_all(SNAPSHOT_MAGIC)?;
    let slots = model.state_len();
    w.u64(system.groups as u64)?;
    w.u64(system.per_group as u64)?;
    w.u64(system.dim as u64)?;
    w.u64(slots as u64)?;
    w.u64(system.current_t as u64)?;
    w.u64(system.cycle as u64)?;
    w.f64s(&system.theta)?;
    w.f64s(&system.log_weight)?;
    w.f64s(&system.log_like)?;
    let mut buf = Vec::with_capacity(slots);
    for state in &system.state {
        buf.clear();
        model.encode_state(state, &mut buf);
        if buf.len() != slots {
            return Err(Error::Invalid(format!(
                "model '{}' encoded {} state slots, declared {slots}",
                model.id(),
                buf.len()
            )));
        }
        w.f64s(&buf)?;
    }
    Ok(())
}

pub fn read_snapshot<M: Model, R: Read>(model: &M, input: R) -> Result<ParticleSystem<M::State>> {
    let mut r = Reader { inner: input };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a snapshot file (bad magic)".into()));
    }
    let groups = r.usize_checked("J", 1 << 20)?;
    let per_group = r.usize_checked("N", 1 << 30)?;
    let dim = r.usize_checked("k", 1 << 16)?;
    let slots = r.usize_checked("state slots", 1 << 16)?;
    if dim != model.dim() {
        return Err(Error::Format(format!(
            "snapshot has k={dim}, model '{}' has k={}",
            model.id(),
            model.dim()
        )));
    }
    if slots != model.state_len() {
        return Err(Error::Format("snapshot state width differs from model".into()));
    }
    let current_t = r.u64()? as usize;
    let cycle = r.u64()? as usize;
    let total = groups
        .checked_mul(per_group)
        .ok_or_else(|| Error::Format("snapshot dimensions overflow".into()))?;
    let theta = r.f64s(total * dim)?;
    let log_weight = r.f64s(total)?;
    let log_like = r.f64s(total)?;
    let mut state = Vec::with_capacity(total);
    for _ in 0..total {
        let buf = r.f64s(slots)?;
        state.push(model.decode_state(&buf));
    }
    Ok(ParticleSystem {
        groups,
        per_group,
        dim,
        theta,
        state,
        log_weight,
        log_like,
        current_t,
        cycle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DesignCycle, DesignRecord, DESIGN_SCHEMA_VERSION};
    use crate::exec::ExecMode;
    use crate::models::ConjugateNormal;
    use crate::particle::init_particles;

    fn sample_design() -> DesignRecord {
        DesignRecord {
            schema_version: DESIGN_SCHEMA_VERSION,
            model_id: "conjugate_normal".into(),
            groups: 4,
            per_group: 8,
            dim: 1,
            t_total: 20,
            config_hash: 0xDEAD_BEEF,
            scheme: ResampleScheme::Systematic,
            sampler: MutationSampler::RandomWalk,
            forced_dates: vec![10],
            moment_dates: vec![10, 20],
            burn_in: 5,
            adaptive_seed: 42,
            cycles: vec![
                DesignCycle {
                    t_end: 10,
                    resampled: true,
                    covs: vec![vec![0.25], vec![0.5]],
                    stepsizes: vec![0.5, 0.6],
                },
                DesignCycle {
                    t_end: 20,
                    resampled: false,
                    covs: vec![],
                    stepsizes: vec![],
                },
            ],
        }
    }

    #[test]
    fn design_round_trip() {
        let design = sample_design();
        let mut buf = Vec::new();
        write_design(&design, &mut buf).unwrap();
        let back = read_design(buf.as_slice()).unwrap();
        assert_eq!(design, back);
    }

    #[test]
    fn design_serialization_is_deterministic() {
        let design = sample_design();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_design(&design, &mut a).unwrap();
        write_design(&design, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn design_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_design(&sample_design(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(read_design(buf.as_slice()).is_err());
    }

    #[test]
    fn design_rejects_truncation() {
        let mut buf = Vec::new();
        write_design(&sample_design(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_design(buf.as_slice()).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let model = ConjugateNormal::new(0.0, 10.0, 1.0);
        let mut sys = init_particles(&model, 3, 5, 7, ExecMode::Sequential).unwrap();
        sys.current_t = 4;
        sys.cycle = 2;
        sys.log_weight[3] = -1.25;
        sys.log_like[3] = -7.5;
        let mut buf = Vec::new();
        write_snapshot(&sys, &model, &mut buf).unwrap();
        let back = read_snapshot(&model, buf.as_slice()).unwrap();
        assert_eq!(sys.theta, back.theta);
        assert_eq!(sys.log_weight, back.log_weight);
        assert_eq!(sys.log_like, back.log_like);
        assert_eq!(sys.current_t, back.current_t);
        assert_eq!(sys.cycle, back.cycle);
    }
}
