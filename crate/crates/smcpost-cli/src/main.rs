//! Batch front end for the sequential posterior simulator.
//!
//! Subcommands: `run` (adaptive), `replay` (nonadaptive from a design file),
//! `hybrid` (adaptive pass then fresh-seed replay), `simulate` (synthetic
//! series), `report` (re-render a saved report). Exit codes: 0 success,
//! 1 usage/configuration, 2 data or format error, 3 numerical failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use smcpost::design::{read_design, write_design};
use smcpost::engine::{run_adaptive, run_hybrid, run_nonadaptive, EngineConfig, RunOutput};
use smcpost::error::{Error, Result};
use smcpost::exec::mode_from_env;
use smcpost::model::Model;
use smcpost::models::{BimodalLocation, ConjugateNormal, Egarch};
use smcpost::mutation::{MPhaseRule, MutationSampler};
use smcpost::report::{cycles_csv, pit_csv, push_run_output, rne_csv, rss_csv, Report};
use smcpost::resample::ResampleScheme;
use smcpost::rng::{stream_for, Phase, StreamKey};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "smcpost", version, about = "Sequential posterior simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive run; writes a report and optionally the design record.
    Run(RunArgs),
    /// Nonadaptive run replaying a saved design with a fresh seed.
    Replay(ReplayArgs),
    /// Adaptive design pass followed by a fresh-seed nonadaptive rerun.
    Hybrid(RunArgs),
    /// Write a synthetic series from a named model (parameters drawn from
    /// the prior under the given seed).
    Simulate(SimulateArgs),
    /// Parse a saved report and re-render it (round-trip validation).
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelName {
    Conjugate,
    Bimodal,
    Egarch,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    /// File already contains returns; passed through unchanged.
    Returns,
    /// File contains price levels; converted to y_t = log(p_t / p_{t-1}).
    Prices,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleName {
    /// RNE-based stopping (E1/E2/Rmax).
    Rne,
    /// Fixed sweep counts (rbar, kappa, d1, d2).
    Deterministic,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerName {
    RandomWalk,
    Independence,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum)]
    model: ModelName,
    /// EGARCH volatility factor count.
    #[arg(long = "K", default_value_t = 1)]
    k_factors: usize,
    /// EGARCH mixture component count.
    #[arg(long = "I", default_value_t = 1)]
    i_components: usize,
    /// Prior mean (conjugate model).
    #[arg(long, default_value_t = 0.0)]
    m0: f64,
    /// Prior variance (conjugate and bimodal models).
    #[arg(long, default_value_t = 10.0)]
    v0: f64,
    /// Observation variance (conjugate and bimodal models).
    #[arg(long, default_value_t = 1.0)]
    s2: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input series, one numeric per row (header line allowed).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = DataKind::Returns)]
    data_kind: DataKind,
    /// Number of particle groups.
    #[arg(long = "J", default_value_t = 16)]
    groups: usize,
    /// Particles per group.
    #[arg(long = "N", default_value_t = 512)]
    per_group: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    rss_threshold: f64,
    #[arg(long, value_enum, default_value_t = RuleName::Rne)]
    mphase_rule: RuleName,
    #[arg(long, default_value_t = 7)]
    rbar: usize,
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[arg(long, default_value_t = 0.5)]
    d1: f64,
    #[arg(long, default_value_t = 0.2)]
    d2: f64,
    #[arg(long, default_value_t = 0.35)]
    e1: f64,
    #[arg(long, default_value_t = 0.90)]
    e2: f64,
    #[arg(long, default_value_t = 100)]
    rmax: usize,
    /// One of: multinomial, residual, stratified, systematic.
    #[arg(long, default_value = "residual", value_parser = parse_resampler)]
    resampler: ResampleScheme,
    #[arg(long, value_enum, default_value_t = SamplerName::RandomWalk)]
    sampler: SamplerName,
    /// Comma-separated observation indices forcing a cycle boundary.
    #[arg(long, value_delimiter = ',')]
    forced_dates: Vec<usize>,
    /// Comma-separated dates at which moments are reported.
    #[arg(long, value_delimiter = ',')]
    moment_dates: Vec<usize>,
    /// Burn-in index for the log score (0 disables).
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Record a PIT value per observation.
    #[arg(long)]
    pit: bool,
    /// Where to persist the design record.
    #[arg(long)]
    design_out: Option<PathBuf>,
    /// Report file; stdout when omitted. CSV traces are written next to it.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = DataKind::Returns)]
    data_kind: DataKind,
    /// Design record produced by `run` or `hybrid`.
    #[arg(long)]
    design_in: PathBuf,
    /// Seed for the replay (must differ from the adaptive seed for valid
    /// standard errors; this is not enforced).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    pit: bool,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Series length.
    #[arg(long = "T")]
    t_total: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file, one observation per row.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report file.
    input: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

enum AnyModel {
    Conjugate(ConjugateNormal),
    Bimodal(BimodalLocation),
    Egarch(Egarch),
}

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::Conjugate($m) => $body,
            AnyModel::Bimodal($m) => $body,
            AnyModel::Egarch($m) => $body,
        }
    };
}

fn parse_resampler(s: &str) -> std::result::Result<ResampleScheme, String> {
    ResampleScheme::parse(s).map_err(|e| e.to_string())
}

fn build_model(args: &ModelArgs) -> Result<AnyModel> {
    if args.v0 <= 0.0 || args.s2 <= 0.0 {
        return Err(Error::Config("--v0 and --s2 must be positive".into()));
    }
    Ok(match args.model {
        ModelName::Conjugate => AnyModel::Conjugate(ConjugateNormal::new(args.m0, args.v0, args.s2)),
        ModelName::Bimodal => AnyModel::Bimodal(BimodalLocation::new(args.v0, args.s2)),
        ModelName::Egarch => {
            if args.k_factors == 0 || args.i_components == 0 {
                return Err(Error::Config("--K and --I must be at least 1".into()));
            }
            AnyModel::Egarch(Egarch::new(args.k_factors, args.i_components))
        }
    })
}

fn ingest_series(path: &Path, kind: DataKind) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => {
                return Err(Error::Data(format!(
                    "{}:{}: non-finite value '{tok}'",
                    path.display(),
                    i + 1
                )))
            }
            // A single leading header line is tolerated.
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Data(format!(
                    "{}:{}: non-numeric row '{tok}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    let series = match kind {
        DataKind::Returns => values,
        DataKind::Prices => {
            if let Some(idx) = values.iter().position(|&p| p <= 0.0) {
                return Err(Error::Data(format!(
                    "price at row {} is not positive; cannot take log returns",
                    idx + 1
                )));
            }
            values.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
        }
    };
    if series.is_empty() {
        return Err(Error::Data(format!("{}: no observations", path.display())));
    }
    eprintln!("ingested {} observations from {}", series.len(), path.display());
    Ok(series)
}

fn engine_config(args: &RunArgs) -> EngineConfig {
    let mut config = EngineConfig::new(args.groups, args.per_group, args.seed);
    config.rss_threshold = args.rss_threshold;
    config.mphase = match args.mphase_rule {
        RuleName::Rne => MPhaseRule::RneBased {
            e1: args.e1,
            e2: args.e2,
            rmax: args.rmax,
        },
        RuleName::Deterministic => MPhaseRule::Deterministic {
            rbar: args.rbar,
            kappa: args.kappa,
            d1: args.d1,
            d2: args.d2,
        },
    };
    config.scheme = args.resampler;
    config.sampler = match args.sampler {
        SamplerName::RandomWalk => MutationSampler::RandomWalk,
        SamplerName::Independence => MutationSampler::IndependenceGaussian,
    };
    config.forced_dates = args.forced_dates.clone();
    config.moment_dates = args.moment_dates.clone();
    config.burn_in = args.burn_in;
    config.pit = args.pit;
    config.exec = mode_from_env();
    config
}

fn echo_config(report: &mut Report, model_id: &str, t_total: usize, args: &RunArgs) {
    report.push("model", model_id);
    report.push_usize("T", t_total);
    report.push_usize("J", args.groups);
    report.push_usize("N", args.per_group);
    report.push("seed", args.seed.to_string());
    report.push_f64("rss_threshold", args.rss_threshold);
    report.push(
        "mphase_rule",
        match args.mphase_rule {
            RuleName::Rne => format!("rne(e1={},e2={},rmax={})", args.e1, args.e2, args.rmax),
            RuleName::Deterministic => format!(
                "deterministic(rbar={},kappa={},d1={},d2={})",
                args.rbar, args.kappa, args.d1, args.d2
            ),
        },
    );
    report.push("resampler", args.resampler.as_str());
    report.push_usize("burn_in", args.burn_in);
}

/// Write the report (stdout when no path) and its sibling CSV traces.
fn emit(report: &Report, outputs: &[(&str, &RunOutput)], path: Option<&Path>) -> Result<()> {
    match path {
        None => print!("{}", report.to_text()),
        Some(path) => {
            fs::write(path, report.to_text())?;
            for (tag, out) in outputs {
                let stem = path.to_string_lossy();
                let prefix = if tag.is_empty() {
                    stem.to_string()
                } else {
                    format!("{stem}.{tag}")
                };
                fs::write(format!("{prefix}.rss.csv"), rss_csv(&out.trace))?;
                fs::write(format!("{prefix}.rne.csv"), rne_csv(&out.trace))?;
                fs::write(format!("{prefix}.cycles.csv"), cycles_csv(&out.trace))?;
                if !out.trace.pit.is_empty() {
                    fs::write(format!("{prefix}.pit.csv"), pit_csv(&out.trace))?;
                }
            }
            eprintln!("report written to {}", path.display());
        }
    }
    for (tag, out) in outputs {
        let t = &out.trace.timings;
        let label = if tag.is_empty() { "run" } else { tag };
        eprintln!(
            "{label} timings: C {:.3}s, S {:.3}s, M {:.3}s ({} cycles, {} sweeps)",
            t.c_secs,
            t.s_secs,
            t.m_secs,
            out.trace.cycles.len(),
            out.trace.total_sweeps()
        );
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let any = build_model(&args.model)?;
    let data = ingest_series(&args.data, args.data_kind)?;
    let config = engine_config(args);
    with_model!(&any, m => {
        let (out, design, _) = run_adaptive(m, &data, &config)?;
        if let Some(path) = &args.design_out {
            let file = fs::File::create(path)?;
            write_design(&design, std::io::BufWriter::new(file))?;
            eprintln!("design written to {}", path.display());
        }
        let mut report = Report::new();
        report.push("mode", "adaptive");
        echo_config(&mut report, &design.model_id, data.len(), args);
        push_run_output(&mut report, "", &out);
        emit(&report, &[("", &out)], args.report_out.as_deref())
    })
}

fn cmd_hybrid(args: &RunArgs) -> Result<()> {
    let any = build_model(&args.model)?;
    let data = ingest_series(&args.data, args.data_kind)?;
    let config = engine_config(args);
    with_model!(&any, m => {
        let hybrid = run_hybrid(m, &data, &config)?;
        if let Some(path) = &args.design_out {
            let file = fs::File::create(path)?;
            write_design(&hybrid.design, std::io::BufWriter::new(file))?;
            eprintln!("design written to {}", path.display());
        }
        let mut report = Report::new();
        report.push("mode", "hybrid");
        echo_config(&mut report, &hybrid.design.model_id, data.len(), args);
        report.push("step2_seed", hybrid.step2_seed.to_string());
        push_run_output(&mut report, "step1.", &hybrid.step1);
        push_run_output(&mut report, "step2.", &hybrid.step2);
        emit(
            &report,
            &[("step1", &hybrid.step1), ("step2", &hybrid.step2)],
            args.report_out.as_deref(),
        )
    })
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let any = build_model(&args.model)?;
    let data = ingest_series(&args.data, args.data_kind)?;
    let file = fs::File::open(&args.design_in)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", args.design_in.display())))?;
    let design = read_design(std::io::BufReader::new(file))?;
    with_model!(&any, m => {
        let (out, _) = run_nonadaptive(m, &data, &design, args.seed, mode_from_env(), args.pit)?;
        let mut report = Report::new();
        report.push("mode", "replay");
        report.push("model", design.model_id.clone());
        report.push_usize("T", data.len());
        report.push_usize("J", design.groups);
        report.push_usize("N", design.per_group);
        report.push("seed", args.seed.to_string());
        report.push("design_seed", design.adaptive_seed.to_string());
        push_run_output(&mut report, "", &out);
        emit(&report, &[("", &out)], args.report_out.as_deref())
    })
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.t_total == 0 {
        return Err(Error::Config("--T must be positive".into()));
    }
    let any = build_model(&args.model)?;
    let mut stream = stream_for(StreamKey::new(args.seed, 0, 0, Phase::Init));
    let series: Vec<f64> = match &any {
        // The EGARCH state evolves with the simulated path.
        AnyModel::Egarch(m) => {
            let theta = m.sample_prior(&mut stream)?;
            let params = m.transform(&theta);
            m.simulate(&params, args.t_total, &mut stream)
        }
        _ => with_model!(&any, m => {
            let theta = m.sample_prior(&mut stream)?;
            // The macro arm must compile for every model, including those
            // whose state type happens to be the unit type.
            #[allow(clippy::let_unit_value)]
            let state = m.init_state();
            (0..args.t_total)
                .map(|_| {
                    m.simulate_observation(&theta, &state, &mut stream)
                        .ok_or_else(|| Error::Invalid("model cannot simulate".into()))
                })
                .collect::<Result<Vec<f64>>>()?
        }),
    };
    let mut text = String::new();
    for y in &series {
        text.push_str(&smcpost::report::fmt_f64(*y));
        text.push('\n');
    }
    fs::write(&args.out, text)?;
    eprintln!("wrote {} observations to {}", series.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", args.input.display())))?;
    let report = Report::from_text(&text)?;
    match &args.report_out {
        None => print!("{}", report.to_text()),
        Some(path) => fs::write(path, report.to_text())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Hybrid(args) => cmd_hybrid(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
