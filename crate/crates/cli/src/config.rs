//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 42
//! C = 1.0
//! delta_sequence = [0.1, 0.05, 0.025]
//! integrator = "exponential_quadrature"
//!
//! [problem]
//! name = "gaussian_blur"
//! n = 64
//! width = 0.05
//!
//! [schedule]
//! c0 = 1.0
//! c1 = 1.0
//! b = 0.5
//!
//! [noise]
//! mode = "seeded"
//! in_range_closure = true
//! ```

use std::path::{Path, PathBuf};

use dsm_core::nonlinear::SeparableOperator;
use dsm_core::operators::{read_vector_text, DenseOperator};
use dsm_core::problems::{self, TestProblem};
use dsm_core::{DsmConfig, Integrator, PowerSchedule, Vector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Option<ProblemSpec>,
    #[serde(default)]
    schedule: ScheduleSpec,
    #[serde(rename = "C")]
    c: Option<f64>,
    #[serde(default)]
    delta_sequence: Vec<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    integrator: Integrator,
    relative_tolerance: Option<f64>,
    absolute_tolerance: Option<f64>,
    max_steps: Option<usize>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    store_trajectory: bool,
    #[serde(default)]
    project_data: bool,
    #[serde(default)]
    record_wall_time: bool,
    #[serde(default)]
    dump_problem: bool,
    #[serde(default)]
    noise: NoiseConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSpec {
    c0: f64,
    c1: f64,
    b: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        let s = PowerSchedule::default();
        Self {
            c0: s.c0(),
            c1: s.c1(),
            b: s.b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Seeded Gaussian direction scaled to norm `δ`.
    #[default]
    Seeded,
    /// `f_δ = f`; `δ` is only the stated noise level.
    None,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub mode: NoiseMode,
    #[serde(default = "default_true")]
    pub in_range_closure: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Seeded,
            in_range_closure: true,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Identity {
        n: usize,
    },
    Hilbert {
        n: usize,
    },
    GaussianBlur {
        n: usize,
        width: f64,
    },
    RankDeficient {
        n: usize,
        r: usize,
        seed: Option<u64>,
    },
    /// Plain-text matrix and solution files, relative to the config file.
    File {
        operator: PathBuf,
        solution: PathBuf,
    },
    /// `A(u)_i = a_i u_i + u_i³`.
    Cubic {
        a: Vec<f64>,
        y: Vec<f64>,
    },
}

impl ProblemSpec {
    pub fn is_nonlinear(&self) -> bool {
        matches!(self, ProblemSpec::Cubic { .. })
    }
}

pub enum ResolvedProblem {
    Linear(TestProblem),
    Nonlinear {
        operator: SeparableOperator,
        f_exact: Vector,
        y_reference: Vector,
    },
}

impl ResolvedProblem {
    pub fn f_exact(&self) -> &Vector {
        match self {
            ResolvedProblem::Linear(p) => &p.f_exact,
            ResolvedProblem::Nonlinear { f_exact, .. } => f_exact,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: Option<ProblemSpec>,
    pub schedule: PowerSchedule,
    /// Explicit `C`; commands apply their own default when absent.
    pub c: Option<f64>,
    pub delta_sequence: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub dsm: DsmConfig,
    pub output_dir: Option<PathBuf>,
    pub record_wall_time: bool,
    pub dump_problem: bool,
    /// SHA-256 of the raw config bytes, lowercase hex.
    pub hash: String,
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| invalid("config is not UTF-8"))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &bytes, base_dir)
    }

    pub fn parse(text: &str, raw: &[u8], base_dir: PathBuf) -> Result<Self, ConfigError> {
        let cfg: RawConfig = toml::from_str(text)?;
        let schedule = PowerSchedule::new(cfg.schedule.c0, cfg.schedule.c1, cfg.schedule.b)
            .map_err(|e| invalid(e.to_string()))?;
        if let Some(c) = cfg.c {
            if !(c >= 1.0 && c.is_finite()) {
                return Err(invalid(format!("C must be a finite real >= 1, got {c}")));
            }
        }
        if let Some(d) = cfg
            .delta_sequence
            .iter()
            .find(|d| !(**d > 0.0 && d.is_finite()))
        {
            return Err(invalid(format!(
                "delta_sequence entries must be positive, got {d}"
            )));
        }
        if cfg.delta_sequence.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("delta_sequence must be strictly decreasing"));
        }
        let mut dsm = DsmConfig {
            integrator: cfg.integrator,
            store_trajectory: cfg.store_trajectory,
            project_data: cfg.project_data,
            ..DsmConfig::default()
        };
        if let Some(r) = cfg.relative_tolerance {
            dsm.relative_tolerance = r;
        }
        if let Some(a) = cfg.absolute_tolerance {
            dsm.absolute_tolerance = a;
        }
        if let Some(m) = cfg.max_steps {
            dsm.max_steps = m;
        }
        if !(dsm.relative_tolerance > 0.0 && dsm.relative_tolerance < 1.0) {
            return Err(invalid("relative_tolerance must lie in (0, 1)"));
        }
        if !(dsm.absolute_tolerance >= 0.0 && dsm.absolute_tolerance.is_finite()) {
            return Err(invalid("absolute_tolerance must be nonnegative"));
        }
        if dsm.max_steps == 0 {
            return Err(invalid("max_steps must be positive"));
        }
        Ok(Self {
            problem: cfg.problem,
            schedule,
            c: cfg.c,
            delta_sequence: cfg.delta_sequence,
            seed: cfg.seed,
            noise: cfg.noise,
            dsm,
            output_dir: cfg.output_dir,
            record_wall_time: cfg.record_wall_time,
            dump_problem: cfg.dump_problem,
            hash: hex::encode(Sha256::digest(raw)),
            base_dir,
        })
    }

    pub fn problem_spec(&self) -> Result<&ProblemSpec, ConfigError> {
        self.problem
            .as_ref()
            .ok_or_else(|| invalid("missing [problem] section"))
    }

    /// Builds the problem and checks every `δ < ‖f_exact‖`.
    pub fn resolve_problem(&self) -> Result<ResolvedProblem, ConfigError> {
        let spec = self.problem_spec()?;
        let to_config = |e: dsm_core::Error| invalid(format!("problem: {e}"));
        let resolved = match spec {
            ProblemSpec::Identity { n } => {
                ResolvedProblem::Linear(problems::identity_problem(*n).map_err(to_config)?)
            }
            ProblemSpec::Hilbert { n } => {
                ResolvedProblem::Linear(problems::hilbert_problem(*n).map_err(to_config)?)
            }
            ProblemSpec::GaussianBlur { n, width } => ResolvedProblem::Linear(
                problems::gaussian_blur_problem(*n, *width).map_err(to_config)?,
            ),
            ProblemSpec::RankDeficient { n, r, seed } => ResolvedProblem::Linear(
                problems::rank_deficient_problem(*n, *r, seed.unwrap_or(self.seed))
                    .map_err(to_config)?,
            ),
            ProblemSpec::File { operator, solution } => {
                let open = |p: &PathBuf| {
                    let path = self.base_dir.join(p);
                    std::fs::File::open(&path)
                        .map(std::io::BufReader::new)
                        .map_err(|source| ConfigError::Io { path, source })
                };
                let op = DenseOperator::read_text(open(operator)?).map_err(to_config)?;
                let y = read_vector_text(open(solution)?).map_err(to_config)?;
                let label = format!("file({})", operator.display());
                ResolvedProblem::Linear(
                    TestProblem::from_operator(op, y, label).map_err(to_config)?,
                )
            }
            ProblemSpec::Cubic { a, y } => {
                let y = Vector::from_column_slice(y);
                let (operator, f_exact) =
                    problems::cubic_separable_problem(a, &y).map_err(to_config)?;
                ResolvedProblem::Nonlinear {
                    operator,
                    f_exact,
                    y_reference: y,
                }
            }
        };
        let norm = resolved.f_exact().norm();
        if let Some(d) = self.delta_sequence.iter().find(|&&d| d >= norm) {
            return Err(invalid(format!(
                "delta {d} is not below ||f_exact|| = {norm}"
            )));
        }
        Ok(resolved)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.as_ref().map(|d| self.base_dir.join(d)))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, text.as_bytes(), PathBuf::new())
    }

    #[test]
    fn defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.schedule, PowerSchedule::default());
        assert_eq!(cfg.c, None);
        assert_eq!(cfg.noise.mode, NoiseMode::Seeded);
        assert!(cfg.noise.in_range_closure);
        assert_eq!(cfg.dsm, DsmConfig::default());
        assert_eq!(cfg.hash.len(), 64);
    }

    #[test]
    fn problem_kinds() {
        let cfg = parse("[problem]\nname = \"rank_deficient\"\nn = 12\nr = 6\n").unwrap();
        assert_eq!(
            cfg.problem,
            Some(ProblemSpec::RankDeficient {
                n: 12,
                r: 6,
                seed: None
            })
        );
        let cfg = parse("[problem]\nname = \"cubic\"\na = [1.0]\ny = [0.5]\n").unwrap();
        assert!(cfg.problem.unwrap().is_nonlinear());
    }

    #[test]
    fn rejects_bad_values() {
        let err = parse("[schedule]\nc0 = 1.0\nc1 = 1.0\nb = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("b must lie in (0,1)"), "{err}");
        assert!(parse("delta_sequence = [0.1, 0.2]").is_err());
        assert!(parse("delta_sequence = [0.1, -0.2]").is_err());
        assert!(parse("C = 0.5").is_err());
        assert!(parse("unknown = 1").is_err());
        assert!(parse("integrator = \"euler\"").is_err());
    }

    #[test]
    fn delta_must_be_below_data_norm() {
        let cfg = parse("delta_sequence = [1.5]\n[problem]\nname = \"identity\"\nn = 3\n").unwrap();
        assert!(cfg.resolve_problem().is_err());
    }

    #[test]
    fn hash_tracks_bytes() {
        let a = parse("seed = 1").unwrap();
        let b = parse("seed = 1 ").unwrap();
        assert_ne!(a.hash, b.hash);
    }
}
