//! Service configuration: command-line flags with `LATCOMPASS_*` environment
//! overrides.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use latcompass_core::engine::{BalancePolicy, CalibrationConfig};
use latcompass_core::svm::SolverConfig;

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Builtin,
    External(String),
}

impl std::str::FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "builtin" {
            Ok(Self::Builtin)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::External(s.to_string()))
        } else {
            Err(format!("expected `builtin` or an http(s) base URL, got {s:?}"))
        }
    }
}

impl std::fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Builtin => f.write_str("builtin"),
            Self::External(url) => f.write_str(url),
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive and finite, got {v}"))
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0 {
        Ok(v)
    } else {
        Err("must be at least 1".into())
    }
}

fn positive_u64(s: &str) -> Result<u64, String> {
    positive_usize(s).map(|v| v as u64)
}

/// Flags shared by every subcommand that opens the direction store.
#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    /// Directory holding saved direction records.
    #[arg(long, env = "LATCOMPASS_DATA_DIR", default_value = "latcompass-data")]
    pub data_dir: PathBuf,
}

/// Settings of the calibrate/navigate loop.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Scene-level latents are clamped to [-theta, theta] when rendered.
    #[arg(long, env = "LATCOMPASS_TRUNCATION_THETA", default_value_t = 2.0, value_parser = positive_f64)]
    pub truncation_theta: f64,
    /// Soft-margin penalty of the SVM.
    #[arg(long, env = "LATCOMPASS_SVM_C", default_value_t = 1.0, value_parser = positive_f64)]
    pub svm_c: f64,
    #[arg(long, env = "LATCOMPASS_MIN_TOTAL", default_value_t = 14, value_parser = positive_usize)]
    pub min_total: usize,
    #[arg(long, env = "LATCOMPASS_MIN_PER_CLASS", default_value_t = 5, value_parser = positive_usize)]
    pub min_per_class: usize,
    #[arg(long, env = "LATCOMPASS_MAX_IMBALANCE_RATIO", default_value_t = 2.0, value_parser = positive_f64)]
    pub max_imbalance_ratio: f64,
    /// Scales the step size derived at calibration.
    #[arg(long, env = "LATCOMPASS_STEP_MULTIPLIER", default_value_t = 1.0, value_parser = positive_f64)]
    pub step_multiplier: f64,
}

impl Default for EngineArgs {
    fn default() -> Self {
        Self {
            truncation_theta: 2.0,
            svm_c: 1.0,
            min_total: 14,
            min_per_class: 5,
            max_imbalance_ratio: 2.0,
            step_multiplier: 1.0,
        }
    }
}

impl EngineArgs {
    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            solver: SolverConfig::with_c(self.svm_c),
            policy: BalancePolicy {
                min_total: self.min_total,
                min_per_class: self.min_per_class,
                max_imbalance_ratio: self.max_imbalance_ratio,
            },
            step_multiplier: self.step_multiplier,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ServiceConfig {
    /// Address to listen on.
    #[arg(long, env = "LATCOMPASS_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Overrides the port of --listen.
    #[arg(long, env = "LATCOMPASS_PORT")]
    pub port: Option<u16>,
    /// `builtin`, or the base URL of an external generator.
    #[arg(long, env = "LATCOMPASS_BACKEND", default_value = "builtin")]
    pub backend: BackendChoice,
    /// Per-call timeout for an external generator, in seconds.
    #[arg(long, env = "LATCOMPASS_BACKEND_TIMEOUT_SECS", default_value_t = 30, value_parser = positive_u64)]
    pub backend_timeout_secs: u64,
    #[arg(long, env = "LATCOMPASS_MAX_INFLIGHT_BACKEND_CALLS", default_value_t = 4, value_parser = positive_usize)]
    pub max_inflight_backend_calls: usize,
    /// Idle time after which sessions, compasses and their images are dropped.
    #[arg(long, env = "LATCOMPASS_SESSION_TTL_SECS", default_value_t = 86_400, value_parser = positive_u64)]
    pub session_ttl_secs: u64,
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl ServiceConfig {
    /// Defaults for the given backend and data directory.
    pub fn new(backend: BackendChoice, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 0)),
            port: None,
            backend,
            backend_timeout_secs: 30,
            max_inflight_backend_calls: 4,
            session_ttl_secs: 86_400,
            store: StoreArgs { data_dir: data_dir.into() },
            engine: EngineArgs::default(),
        }
    }

    pub fn listen_address(&self) -> SocketAddr {
        let mut addr = self.listen;
        if let Some(port) = self.port {
            addr.set_port(port);
        }
        addr
    }

    pub fn session_ttl(&self) -> Duration {
        Duration::from_secs(self.session_ttl_secs)
    }

    pub fn backend_timeout(&self) -> Duration {
        Duration::from_secs(self.backend_timeout_secs)
    }
}
