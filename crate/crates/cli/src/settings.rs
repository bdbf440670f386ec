//! Config resolution: built-in defaults, then the `--config` file, then
//! command-line flags.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use graspkit::annealer::AnnealSchedule;
use graspkit::capsnet::{CapsNetConfig, CapsNetWeights};
use graspkit::config::KvConfig;
use graspkit::fitness::FitnessWeights;
use graspkit::gripper::GripperSpec;
use graspkit::losses::{QualityMode, TotalLossParams};
use graspkit::pointcloud::DEFAULT_NORMAL_K;
use graspkit::postprocess::{DEFAULT_MAX_ROUNDS, DEFAULT_SMOOTH_K, DEFAULT_SMOOTH_SIGMA, DEFAULT_VOTES};
use graspkit::datasetgen::DEFAULT_GRASPS_PER_OBJECT;
use graspkit::gradcheck::FD_STEP;

use crate::error::{CliError, Kind, Stage};

/// Keys owned by the command line rather than a library module.
pub const CLI_KEYS: [&str; 15] = [
    "seed",
    "jobs",
    "network",
    "weights",
    "grasps",
    "normal_k",
    "smooth_sigma",
    "smooth_k",
    "votes",
    "max_rounds",
    "grad_configs",
    "grad_points",
    "grad_step",
    "quality_mode",
    "beta",
];

/// Manifest keys; ignored when a manifest is passed back as `--config`.
const RUN_PREFIX: &str = "run.";

pub struct Settings {
    /// Fully resolved configuration, every key present.
    pub cfg: KvConfig,
    pub seed: u64,
    pub jobs: usize,
    started: u64,
}

fn known_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = CLI_KEYS.to_vec();
    keys.extend(GripperSpec::KEYS);
    keys.extend(FitnessWeights::KEYS);
    keys.extend(AnnealSchedule::KEYS);
    keys.extend(CapsNetConfig::KEYS);
    keys.extend(["alpha"]);
    keys
}

fn defaults(toy: bool) -> KvConfig {
    let mut cfg = KvConfig::new();
    GripperSpec::default().write_config(&mut cfg);
    FitnessWeights::default().write_config(&mut cfg);
    AnnealSchedule::default().write_config(&mut cfg);
    let net = if toy {
        CapsNetConfig::toy(CapsNetConfig::default().num_points)
    } else {
        CapsNetConfig::default()
    };
    net.write_config(&mut cfg);
    let loss = TotalLossParams::default();
    cfg.set("network", if toy { "toy" } else { "full" });
    cfg.set("jobs", 0);
    cfg.set("grasps", DEFAULT_GRASPS_PER_OBJECT);
    cfg.set("normal_k", DEFAULT_NORMAL_K);
    cfg.set("smooth_sigma", DEFAULT_SMOOTH_SIGMA);
    cfg.set("smooth_k", DEFAULT_SMOOTH_K);
    cfg.set("votes", DEFAULT_VOTES);
    cfg.set("max_rounds", DEFAULT_MAX_ROUNDS);
    cfg.set("grad_configs", 200);
    cfg.set("grad_points", 16);
    cfg.set("grad_step", FD_STEP);
    cfg.set("quality_mode", "raw");
    cfg.set("beta", loss.beta);
    cfg.set("alpha", loss.grasp.alpha);
    cfg
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Settings {
    pub fn resolve(file: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> Result<Self, CliError> {
        let started = now();
        let mut user = KvConfig::new();
        if let Some(path) = file {
            let loaded = KvConfig::load(path).stage("config")?;
            for key in loaded.keys().filter(|k| !k.starts_with(RUN_PREFIX)) {
                user.set(key, loaded.get_str(key).unwrap_or_default());
            }
        }
        user.check_known(&known_keys()).stage("config")?;
        let toy = match user.get_str("network") {
            None | Some("full") => false,
            Some("toy") => true,
            Some(other) => {
                return Err(CliError::new(
                    "config",
                    Kind::Validation,
                    format!("network must be `full` or `toy`, got {other:?}"),
                ))
            }
        };
        let mut cfg = defaults(toy);
        cfg.merge(&user);
        if let Some(s) = seed {
            cfg.set("seed", s);
        }
        if let Some(j) = jobs {
            cfg.set("jobs", j);
        }
        let seed = cfg.get("seed").stage("config")?.unwrap_or(0);
        let jobs = cfg.get("jobs").stage("config")?.unwrap_or(0);
        Ok(Self { cfg, seed, jobs, started })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.cfg
            .get(key)
            .stage("config")?
            .ok_or_else(|| CliError::new("config", Kind::Validation, format!("missing key `{key}`")))
    }

    pub fn gripper(&self) -> Result<GripperSpec, CliError> {
        GripperSpec::from_config(&self.cfg).stage("config")
    }

    pub fn fitness(&self) -> Result<FitnessWeights, CliError> {
        FitnessWeights::from_config(&self.cfg).stage("config")
    }

    pub fn schedule(&self) -> Result<AnnealSchedule, CliError> {
        AnnealSchedule::from_config(&self.cfg).stage("config")
    }

    pub fn network(&self) -> Result<CapsNetConfig, CliError> {
        CapsNetConfig::from_config(&self.cfg).stage("config")
    }

    /// Weights from the `weights` file if set, else seeded initialization.
    pub fn weights(&self, config: &CapsNetConfig) -> Result<CapsNetWeights, CliError> {
        match self.cfg.get_str("weights") {
            Some(path) => CapsNetWeights::load(config, path).stage("load"),
            None => Ok(CapsNetWeights::init(config)),
        }
    }

    pub fn loss(&self) -> Result<TotalLossParams, CliError> {
        let mut p = TotalLossParams::default();
        p.beta = self.get("beta")?;
        p.grasp.alpha = self.get("alpha")?;
        p.quality_mode = match self.get::<String>("quality_mode")?.as_str() {
            "raw" => QualityMode::Raw,
            "clamped" => QualityMode::Clamped,
            other => {
                return Err(CliError::new(
                    "config",
                    Kind::Validation,
                    format!("quality_mode must be `raw` or `clamped`, got {other:?}"),
                ))
            }
        };
        Ok(p)
    }

    /// Runs `f` on a pool with `jobs` workers (0 picks the core count).
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::new("setup", Kind::Validation, e.to_string()))?;
        Ok(pool.install(f))
    }

    /// Writes `<out>.manifest`: the resolved config plus `run.*` entries.
    /// Passing it back as `--config` repeats the run.
    pub fn write_manifest(&self, command: &str, inputs: &[&Path], out: &Path) -> Result<PathBuf, CliError> {
        let mut m = self.cfg.clone();
        m.set("run.command", command);
        m.set("run.version", env!("CARGO_PKG_VERSION"));
        let inputs: Vec<String> = inputs.iter().map(|p| p.display().to_string()).collect();
        m.set_list("run.inputs", &inputs);
        m.set("run.output", out.display());
        m.set("run.started_unix", self.started);
        m.set("run.finished_unix", now());
        let path = PathBuf::from(format!("{}.manifest", out.display()));
        std::fs::write(&path, m.to_string()).stage("write")?;
        Ok(path)
    }
}
