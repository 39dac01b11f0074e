use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use faas_bypass_sim::calibrate::calibrate;
use faas_bypass_sim::config::RunConfig;
use faas_bypass_sim::controlplane::write_invocation_log;
use faas_bypass_sim::experiments::{cold_start, compare_backends_traced, sweep_backends, ComparisonReport};
use faas_bypass_sim::report::{comparison_files, emit_reports, reproduce, sweep_files, write_files};
use faas_bypass_sim::scenario::Scenario;
use faas_bypass_sim::sched::write_sched_trace;
use faas_bypass_sim::{Error, PathKind, Result};

#[derive(Parser)]
#[command(name = "faas-sim", version, about = "Kernel-stack vs kernel-bypass FaaS simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// JSON run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write the event trace of the sequential runs here as CSV.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Write the scheduler tick trace of the sequential bypass run here as CSV.
    #[arg(long, global = true)]
    sched_trace: Option<PathBuf>,
    /// Check conservation and allocation invariants after every event.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand)]
enum Verb {
    /// Fit kernel-path overheads to the target reductions.
    Calibrate,
    /// Closed-loop sequential invocations on both backends.
    Sequential,
    /// Open-loop offered-load sweep on both backends.
    Sweep,
    /// Deploy-to-ready time.
    Coldstart {
        #[arg(long, value_enum, default_value = "both")]
        backend: BackendArg,
    },
    /// Calibrate, then run every experiment and write summary.json.
    Reproduce,
    /// Replay a JSON scenario of deploy/scale/invoke/remove actions.
    Scenario { script: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Bypass,
    Kernel,
    Both,
}

impl BackendArg {
    fn kinds(self) -> Vec<PathKind> {
        match self {
            BackendArg::Bypass => vec![PathKind::Bypass],
            BackendArg::Kernel => vec![PathKind::KernelStack],
            BackendArg::Both => PathKind::ALL.to_vec(),
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_traces(cli: &Cli, c: &ComparisonReport) -> Result<()> {
    if let Some(path) = &cli.trace {
        let mut buf = b"time_us,kind,detail\n".to_vec();
        for run in [&c.bypass, &c.kernel] {
            if let Some(t) = &run.trace {
                for r in &t.records {
                    buf.extend(format!("{},{},{} {}\n", r.time_us, r.kind.as_str(), run.backend, r.detail).bytes());
                }
            }
        }
        std::fs::write(path, buf).map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &cli.sched_trace {
        let mut buf = Vec::new();
        write_sched_trace(&c.bypass.sched_trace, &mut buf).map_err(|e| io_err(path, e))?;
        std::fs::write(path, buf).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.check_invariants |= cli.check;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let tracing = cli.trace.is_some() || cli.sched_trace.is_some();

    match &cli.verb {
        Verb::Calibrate => {
            let fit = calibrate(&cfg)?;
            for r in &fit.residuals {
                println!(
                    "{:?}: target {:.2}% achieved {:.2}% ({:+.2} pp{})",
                    r.metric,
                    r.target,
                    r.achieved,
                    r.residual_pp,
                    if r.within_band { "" } else { ", outside band" }
                );
            }
            let fitted = fit.apply(&cfg);
            write_files(
                &out,
                &[
                    ("calibration.json".into(), json(&fit)),
                    ("calibrated_config.json".into(), json(&fitted)),
                ],
            )?;
            println!("wrote {}", out.join("calibrated_config.json").display());
        }
        Verb::Sequential => {
            let c = compare_backends_traced(&cfg, tracing)?;
            let mut files = comparison_files(&c)?;
            files.push(("sequential.json".into(), json(&c)));
            write_files(&out, &files)?;
            write_traces(cli, &c)?;
            let r = c.reductions;
            println!(
                "e2e median {:.2}% p99 {:.2}%, exec median {:.2}% p99 {:.2}%",
                r.e2e_median_pct, r.e2e_p99_pct, r.exec_median_pct, r.exec_p99_pct
            );
        }
        Verb::Sweep => {
            let s = sweep_backends(&cfg)?;
            let mut files = sweep_files(&s)?;
            files.push(("sweep.json".into(), json(&s)));
            write_files(&out, &files)?;
            println!(
                "max unsaturated: bypass {:?} rps, kernel {:?} rps, ratio {:?}",
                s.bypass.max_unsaturated_rps, s.kernel.max_unsaturated_rps, s.throughput_ratio
            );
        }
        Verb::Coldstart { backend } => {
            let results = backend
                .kinds()
                .into_iter()
                .map(|b| cold_start(&cfg, b))
                .collect::<Result<Vec<_>>>()?;
            for c in &results {
                println!("{}: {} us", c.backend, c.cold_start_us);
            }
            write_files(&out, &[("coldstart.json".into(), json(&results))])?;
        }
        Verb::Reproduce => {
            let r = reproduce(&cfg, tracing)?;
            let paths = emit_reports(&r, &out)?;
            write_traces(cli, &r.comparison)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Verb::Scenario { script } => {
            let text = std::fs::read_to_string(script).map_err(|e| io_err(script, e))?;
            let mut scenario = Scenario::from_json(&text)?;
            if let Some(seed) = cli.seed {
                scenario.seed = seed;
            }
            let outcome = scenario.run()?;
            let mut log = Vec::new();
            write_invocation_log(&outcome.invocations, &mut log).map_err(|e| io_err(&out, e))?;
            write_files(
                &out,
                &[
                    ("invocations.csv".into(), String::from_utf8_lossy(&log).into_owned()),
                    ("scenario.json".into(), json(&outcome)),
                ],
            )?;
            println!("{}", serde_json::to_string(&outcome.counters).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
