use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsm_core::dsm::{run_dsm, ProblemData};
use dsm_core::nonlinear::nonlinear_discrepancy;
use dsm_core::operators::{
    decompose, write_vector_text, SpectralDecomposition, DEFAULT_RANK_TOLERANCE,
};
use dsm_core::problems::add_noise;
use dsm_core::schedule::{admissibility_report, AdmissibilityReport, Schedule};
use dsm_core::{DsmResult, NoiseSpec, PowerSchedule, Vector};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, NoiseMode, ResolvedProblem};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] dsm_core::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_precondition() => 3,
            CliError::Core(_) | CliError::Io { .. } | CliError::CheckFailed(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "precondition",
            _ => "numerical",
        }
    }

    pub fn stage(&self) -> Option<String> {
        match self {
            CliError::Core(e) => e.stage().map(|s| s.to_string()),
            _ => None,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

pub struct Options {
    pub output: PathBuf,
    pub store_trajectory: bool,
    pub quiet: bool,
}

impl Options {
    pub fn new(
        cfg: &ExperimentConfig,
        output: Option<&Path>,
        store_trajectory: bool,
        quiet: bool,
    ) -> Self {
        Self {
            output: cfg.output_dir(output),
            store_trajectory: store_trajectory || cfg.dsm.store_trajectory,
            quiet,
        }
    }
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let io = |source| CliError::Io {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(&path, bytes).map_err(io)?;
    Ok(path)
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact serializes");
    out.push(b'\n');
    out
}

/// CSV body preceded by a `# config_hash: ...` line.
fn csv_bytes(hash: &str, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = format!("# config_hash: {hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).expect("in-memory write");
        for row in rows {
            w.write_record(row).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn noisy_data(
    cfg: &ExperimentConfig,
    f_exact: &Vector,
    dec: Option<&SpectralDecomposition>,
    delta: f64,
    seed: u64,
) -> Result<Vector, CliError> {
    match cfg.noise.mode {
        NoiseMode::None => Ok(f_exact.clone()),
        NoiseMode::Seeded => {
            let spec = NoiseSpec {
                delta,
                seed,
                in_range_closure: cfg.noise.in_range_closure && dec.is_some(),
            };
            Ok(add_noise(f_exact, dec, &spec)?)
        }
    }
}

fn linear_problem(
    cfg: &ExperimentConfig,
    command: &str,
) -> Result<dsm_core::TestProblem, CliError> {
    match cfg.resolve_problem()? {
        ResolvedProblem::Linear(p) => Ok(p),
        ResolvedProblem::Nonlinear { .. } => Err(config_error(format!(
            "{command} needs a linear problem; use the nonlinear command"
        ))),
    }
}

fn dump_linear(
    dir: &Path,
    problem: &dsm_core::TestProblem,
    f_delta: Option<&Vector>,
) -> Result<(), CliError> {
    let mut op = Vec::new();
    problem
        .operator
        .write_text(&mut op)
        .expect("in-memory write");
    write_artifact(dir, "operator.txt", &op)?;
    let mut vectors: Vec<(&str, &Vector)> = vec![
        ("f_exact.txt", &problem.f_exact),
        ("y_reference.txt", &problem.y_reference),
    ];
    if let Some(f) = f_delta {
        vectors.push(("f_delta.txt", f));
    }
    for (name, v) in vectors {
        let mut buf = Vec::new();
        write_vector_text(v, &mut buf).expect("in-memory write");
        write_artifact(dir, name, &buf)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SolveArtifact<'a> {
    config_hash: &'a str,
    command: &'static str,
    problem: &'a str,
    delta: f64,
    #[serde(rename = "C")]
    c: f64,
    seed: u64,
    result: &'a DsmResult,
}

pub fn solve(cfg: &ExperimentConfig, opts: &Options) -> Result<DsmResult, CliError> {
    let [delta] = cfg.delta_sequence[..] else {
        return Err(config_error(format!(
            "solve needs exactly one delta, got {}",
            cfg.delta_sequence.len()
        )));
    };
    let problem = linear_problem(cfg, "solve")?;
    let c = cfg.c.unwrap_or(1.0);
    let dec = decompose(&problem.operator, DEFAULT_RANK_TOLERANCE)?;
    let f_delta = noisy_data(cfg, &problem.f_exact, Some(&dec), delta, cfg.seed)?;
    if cfg.dump_problem {
        dump_linear(&opts.output, &problem, Some(&f_delta))?;
    }
    let dsm = dsm_core::DsmConfig {
        store_trajectory: opts.store_trajectory,
        ..cfg.dsm.clone()
    };
    let data = ProblemData {
        f_delta: &f_delta,
        y_reference: Some(&problem.y_reference),
    };
    let result = run_dsm(&dec, &cfg.schedule, data, delta, c, &dsm)?;

    let artifact = SolveArtifact {
        config_hash: &cfg.hash,
        command: "solve",
        problem: &problem.label,
        delta,
        c,
        seed: cfg.seed,
        result: &result,
    };
    let path = write_artifact(&opts.output, "results.json", &json_bytes(&artifact))?;
    if let Some(traj) = &result.trajectory {
        let mut buf = format!("# config_hash: {}\n", cfg.hash).into_bytes();
        traj.write_csv(&mut buf, Some(&problem.y_reference), true)
            .expect("in-memory write");
        write_artifact(&opts.output, "trajectory.csv", &buf)?;
    }
    if !opts.quiet {
        println!(
            "epsilon_star = {:e}, t_delta = {:e}, residual = {:e}, error = {}",
            result.stopping.epsilon_star,
            result.stopping.t_delta,
            result.residual,
            opt_num(result.error_vs_reference)
        );
        println!("wrote {}", path.display());
    }
    Ok(result)
}

pub const CONVERGENCE_HEADER: [&str; 9] = [
    "delta",
    "epsilon_star",
    "t_delta",
    "residual",
    "dsm_error",
    "tikhonov_error",
    "norm_ratio",
    "wall_time_ms",
    "errors",
];

pub fn convergence(cfg: &ExperimentConfig, opts: &Options) -> Result<usize, CliError> {
    if cfg.delta_sequence.len() < 3 {
        return Err(config_error(format!(
            "convergence needs at least 3 deltas, got {}",
            cfg.delta_sequence.len()
        )));
    }
    let problem = linear_problem(cfg, "convergence")?;
    let c = cfg.c.unwrap_or(1.0);
    let dec = decompose(&problem.operator, DEFAULT_RANK_TOLERANCE)?;
    if cfg.dump_problem {
        dump_linear(&opts.output, &problem, None)?;
    }
    let mut rows = Vec::new();
    let mut failures = 0;
    for (i, &delta) in cfg.delta_sequence.iter().enumerate() {
        let started = Instant::now();
        let outcome = noisy_data(
            cfg,
            &problem.f_exact,
            Some(&dec),
            delta,
            cfg.seed + i as u64,
        )
        .and_then(|f_delta| {
            let data = ProblemData {
                f_delta: &f_delta,
                y_reference: Some(&problem.y_reference),
            };
            Ok(run_dsm(&dec, &cfg.schedule, data, delta, c, &cfg.dsm)?)
        });
        let wall = if cfg.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let row = match outcome {
            Ok(r) => vec![
                num(delta),
                num(r.stopping.epsilon_star),
                num(r.stopping.t_delta),
                num(r.residual),
                opt_num(r.error_vs_reference),
                opt_num(r.tikhonov_error),
                opt_num(r.norm_ratio),
                num(wall),
                String::new(),
            ],
            Err(e) => {
                failures += 1;
                let mut row = vec![num(delta)];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(num(wall));
                row.push(e.to_string());
                row
            }
        };
        if !opts.quiet {
            println!("{}", row.join(" "));
        }
        rows.push(row);
    }
    let path = write_artifact(
        &opts.output,
        "convergence.csv",
        &csv_bytes(&cfg.hash, &CONVERGENCE_HEADER, &rows),
    )?;
    if !opts.quiet {
        println!("wrote {} ({} failed rows)", path.display(), failures);
    }
    Ok(failures)
}

pub const NONLINEAR_HEADER: [&str; 7] = [
    "delta",
    "epsilon_delta",
    "residual_at_root",
    "error",
    "gap_certificate",
    "certified",
    "errors",
];

pub fn nonlinear(cfg: &ExperimentConfig, opts: &Options) -> Result<usize, CliError> {
    let spec = cfg.problem_spec()?;
    if !spec.is_nonlinear() {
        return Err(config_error(
            "nonlinear needs a nonlinear problem kind (cubic)",
        ));
    }
    if cfg.delta_sequence.is_empty() {
        return Err(config_error("delta_sequence is empty"));
    }
    let c = cfg.c.unwrap_or(1.1);
    if c <= 1.0 {
        return Err(config_error(format!("nonlinear needs C > 1, got {c}")));
    }
    let ResolvedProblem::Nonlinear {
        operator,
        f_exact,
        y_reference,
        ..
    } = cfg.resolve_problem()?
    else {
        unreachable!("problem kind checked above")
    };

    let mut rows = Vec::new();
    let mut trace_rows = Vec::new();
    let mut failures = 0;
    for (i, &delta) in cfg.delta_sequence.iter().enumerate() {
        let outcome = noisy_data(cfg, &f_exact, None, delta, cfg.seed + i as u64)
            .and_then(|f_delta| Ok(nonlinear_discrepancy(&operator, &f_delta, delta, c)?));
        let row = match outcome {
            Ok(root) => {
                for p in &root.trace {
                    trace_rows.push(vec![
                        num(delta),
                        num(p.epsilon),
                        num(p.h),
                        num(p.f_value),
                        num(p.gap),
                    ]);
                }
                vec![
                    num(delta),
                    num(root.epsilon),
                    num(root.residual),
                    num((&root.u - &y_reference).norm()),
                    num(root.gap_certificate),
                    root.certified.to_string(),
                    String::new(),
                ]
            }
            Err(e) => {
                failures += 1;
                let mut row = vec![num(delta)];
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(e.to_string());
                row
            }
        };
        if !opts.quiet {
            println!("{}", row.join(" "));
        }
        rows.push(row);
    }
    let path = write_artifact(
        &opts.output,
        "nonlinear.csv",
        &csv_bytes(&cfg.hash, &NONLINEAR_HEADER, &rows),
    )?;
    if opts.store_trajectory {
        let header = ["delta", "epsilon", "h", "F", "gap"];
        write_artifact(
            &opts.output,
            "nonlinear_trace.csv",
            &csv_bytes(&cfg.hash, &header, &trace_rows),
        )?;
    }
    if !opts.quiet {
        println!("wrote {} ({} failed rows)", path.display(), failures);
    }
    Ok(failures)
}

pub const SCHEDULE_GRID: [f64; 4] = [10.0, 1e2, 1e3, 1e4];

#[derive(Serialize)]
struct ScheduleArtifact<'a> {
    config_hash: &'a str,
    schedule: &'a PowerSchedule,
    report: &'a AdmissibilityReport,
    r_at_50: f64,
    log_r_at_50: f64,
}

pub fn check_schedule(
    cfg: &ExperimentConfig,
    opts: &Options,
) -> Result<AdmissibilityReport, CliError> {
    let s = &cfg.schedule;
    let report = admissibility_report(s, &SCHEDULE_GRID)?;
    let log_r = -50.0 - s.eval(50.0)?.ln();
    let artifact = ScheduleArtifact {
        config_hash: &cfg.hash,
        schedule: s,
        report: &report,
        r_at_50: log_r.exp(),
        log_r_at_50: log_r,
    };
    let path = write_artifact(&opts.output, "schedule_report.json", &json_bytes(&artifact))?;
    if !opts.quiet {
        let mut out = std::io::stdout().lock();
        for p in &report.points {
            let _ = writeln!(out, "t = {:e}: q = {:e}, log r = {:.6}", p.t, p.q, p.log_r);
        }
        let _ = writeln!(out, "r(50) = {:e}", log_r.exp());
        let _ = writeln!(out, "admissible: {}", report.admissible);
        let _ = writeln!(out, "wrote {}", path.display());
    }
    if !report.admissible {
        return Err(CliError::CheckFailed(format!(
            "schedule not admissible (q decreasing: {}, r decreasing: {})",
            report.q_decreasing, report.r_decreasing
        )));
    }
    Ok(report)
}
