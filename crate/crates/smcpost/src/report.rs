//! Human-readable key/value reports and CSV trace emission.
//!
//! A report is an ordered list of `key = value` lines. Floats are rendered
//! with Rust's shortest round-trip formatting, so parsing a report back
//! recovers bit-identical values; this keeps the text format lossless and
//! diffable at the same time.

use crate::diagnostics::{EvidenceReport, MomentReport};
use crate::engine::{RunOutput, RunTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, fmt_f64(value));
    }

    pub fn push_usize(&mut self, key: &str, value: usize) {
        self.push(key, value.to_string());
    }

    pub fn push_f64_list(&mut self, key: &str, values: &[f64]) {
        let body: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.push(key, format!("[{}]", body.join(", ")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("report key '{key}' missing")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("report key '{key}' is not a float: '{raw}'")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("report key '{key}' missing")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("report key '{key}' is not an integer: '{raw}'")))
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Format(format!("report key '{key}' missing")))?;
        let inner = raw
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Format(format!("report key '{key}' is not a list")))?;
        if inner.trim().is_empty() {
            return Ok(Vec::new());
        }
        inner
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad float '{tok}' in '{key}'")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Report> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("report line {}: expected 'key = value'", i + 1)))?;
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Report { entries })
    }
}

fn push_moment(report: &mut Report, prefix: &str, i: usize, m: &MomentReport) {
    let base = format!("{prefix}moment.{i}");
    report.push(&format!("{base}.name"), m.name.clone());
    report.push_usize(&format!("{base}.t"), m.t);
    report.push_f64(&format!("{base}.mean"), m.mean);
    report.push_f64(&format!("{base}.sd"), m.sd);
    report.push_f64(&format!("{base}.nse"), m.nse);
    match m.rne {
        Some(r) => report.push_f64(&format!("{base}.rne"), r),
        None => report.push(&format!("{base}.rne"), "undefined"),
    }
    report.push_f64_list(&format!("{base}.group_means"), &m.group_means);
}

fn push_evidence(report: &mut Report, prefix: &str, e: &EvidenceReport) {
    report.push_f64(&format!("{prefix}log_ml"), e.log_ml);
    report.push_f64(&format!("{prefix}nse_log_ml"), e.nse_log_ml);
    report.push_f64(&format!("{prefix}log_ml_alt"), e.log_ml_alt);
    report.push_f64_list(&format!("{prefix}group_log_ml"), &e.group_log_products);
    if let (Some(score), Some(nse)) = (e.log_score, e.nse_log_score) {
        report.push_f64(&format!("{prefix}log_score"), score);
        report.push_f64(&format!("{prefix}nse_log_score"), nse);
    }
}

/// Render one pass of the engine under a key prefix ("" or e.g. "step1.").
pub fn push_run_output(report: &mut Report, prefix: &str, output: &RunOutput) {
    report.push_usize(&format!("{prefix}cycles"), output.trace.cycles.len());
    report.push_usize(&format!("{prefix}sweeps"), output.trace.total_sweeps());
    push_evidence(report, prefix, &output.evidence);
    for (i, m) in output.moments.iter().enumerate() {
        push_moment(report, prefix, i, m);
    }
    let ends: Vec<f64> = output.trace.cycles.iter().map(|c| c.t_end as f64).collect();
    report.push_f64_list(&format!("{prefix}cycle_ends"), &ends);
    report.push_f64_list(&format!("{prefix}rss"), &output.trace.rss);
    let accept: Vec<f64> = output
        .trace
        .cycles
        .iter()
        .flat_map(|c| c.mutation.iterations.iter().map(|it| it.acceptance))
        .collect();
    report.push_f64_list(&format!("{prefix}acceptance"), &accept);
    // Wall-clock timings deliberately stay out of the report: replaying the
    // same design and seed must reproduce the report byte for byte.
}

/// `t,rss` per observation.
pub fn rss_csv(trace: &RunTrace) -> String {
    let mut out = String::from("t,rss\n");
    for (i, &r) in trace.rss.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, fmt_f64(r)));
    }
    out
}

/// `cycle,iteration,func,rne` per M-phase sweep (long format).
pub fn rne_csv(trace: &RunTrace) -> String {
    let mut out = String::from("cycle,iteration,func,rne\n");
    for cycle in &trace.cycles {
        for (r, rnes) in cycle.mutation.rne_path.iter().enumerate() {
            for (f, &v) in rnes.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    cycle.mutation.cycle,
                    r + 1,
                    f,
                    fmt_f64(v)
                ));
            }
        }
    }
    out
}

/// `cycle,t_end,resampled,group,log_mean_w` per cycle and group.
pub fn cycles_csv(trace: &RunTrace) -> String {
    let mut out = String::from("cycle,t_end,resampled,group,log_mean_w\n");
    for (l, cycle) in trace.cycles.iter().enumerate() {
        for (j, &lw) in cycle.group_log_mean_w.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l,
                cycle.t_end,
                u8::from(cycle.resampled),
                j,
                fmt_f64(lw)
            ));
        }
    }
    out
}

/// `t,pit` per observation (empty when PIT was disabled).
pub fn pit_csv(trace: &RunTrace) -> String {
    let mut out = String::from("t,pit\n");
    for (i, &p) in trace.pit.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, fmt_f64(p)));
    }
    out
}
