//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use visracer_core::baseline::PursuitParams;
use visracer_core::geometry::LookaheadWindow;
use visracer_core::{CameraSpec, TrackSpec, VehicleParams};
use visracer_learn::phase1::Phase1Config;
use visracer_learn::SacConfig;

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Wall-penalty weight of both profiles, s^2/m^2. At 0.01 a wall hit costs
/// less than the time it saves on this vehicle, and trained agents ride the walls.
pub const WALL_PENALTY: f64 = 0.3;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "VISRACER_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackRef {
    /// One of [`BUILTIN_TRACKS`].
    Builtin { name: String },
    /// Track spec file, relative paths resolved against the config file.
    File { path: PathBuf },
    Inline { spec: TrackSpec },
}

pub const BUILTIN_TRACKS: [&str; 3] = ["default", "stadium", "circle"];

pub fn builtin_track(name: &str) -> Option<TrackSpec> {
    match name {
        "default" => Some(TrackSpec::default_circuit()),
        "stadium" => Some(TrackSpec::stadium(150.0, 30.0, 10.0, 0.5)),
        "circle" => Some(TrackSpec::circle(50.0, 10.0, 0.5)),
        _ => None,
    }
}

/// Input of the privileged-observation agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivilegedInput {
    /// Standardized 27-dim ground truth followed by the 11 dedicated features.
    #[default]
    Direct38,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub track: TrackRef,
    pub vehicle: VehicleParams,
    pub camera: CameraSpec,
    pub lookahead: LookaheadWindow,
    pub phase1: Phase1Config,
    /// Initialization seed of the second representation used for the robustness check.
    pub alt_repr_seed: u64,
    pub sac: SacConfig,
    pub pursuit: PursuitParams,
    pub privileged_input: PrivilegedInput,
    /// A policy lap longer than this multiple of the baseline lap is a DNF.
    pub dnf_factor: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            track: TrackRef::Builtin { name: "default".into() },
            vehicle: VehicleParams::default(),
            camera: CameraSpec::default(),
            lookahead: LookaheadWindow::default(),
            phase1: Phase1Config::default(),
            alt_repr_seed: 1,
            sac: SacConfig::default(),
            pursuit: PursuitParams::default(),
            privileged_input: PrivilegedInput::Direct38,
            dnf_factor: 3.0,
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Full budget: 400 epochs of 20 trials of 100 s per seed.
    pub fn full() -> Self {
        let mut cfg = Self::default();
        cfg.sac.c_w = WALL_PENALTY;
        cfg
    }

    /// Reduced budget that fits the ordering check into about two CPU hours.
    pub fn smoke() -> Self {
        Self {
            sac: SacConfig {
                batch_size: 128,
                trial_duration: 50.0,
                trials_per_epoch: 10,
                epochs: 15,
                control_steps_per_env_step: 6,
                c_w: WALL_PENALTY,
                ..SacConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => HarnessError::ArtifactMissing { path: path.to_path_buf() },
            _ => HarnessError::ConfigInvalid(format!("{}: {e}", path.display())),
        })?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        if let TrackRef::File { path: p } = &mut cfg.track {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::ConfigInvalid(m));
        if self.format_version != CONFIG_VERSION {
            return invalid(format!("format_version {} (expected {CONFIG_VERSION})", self.format_version));
        }
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty".into());
        }
        if !(self.dnf_factor > 1.0) {
            return invalid("dnf_factor must exceed 1".into());
        }
        if self.lookahead.count != visracer_core::obs::slots::CURVATURES.len() {
            return invalid(format!(
                "lookahead.count must be {}",
                visracer_core::obs::slots::CURVATURES.len()
            ));
        }
        self.vehicle.validate().or_else(|e| invalid(e.to_string()))?;
        self.camera.validate().or_else(|e| invalid(e.to_string()))?;
        self.pursuit.validate().or_else(|e| invalid(e.to_string()))?;
        self.phase1.validate().or_else(|e| invalid(format!("phase1: {e}")))?;
        self.sac.validate().or_else(|e| invalid(format!("sac: {e}")))?;
        match &self.track {
            TrackRef::Builtin { name } if builtin_track(name).is_none() => {
                invalid(format!("unknown builtin track {name:?} (known: {})", BUILTIN_TRACKS.join(", ")))
            }
            TrackRef::File { path } if !path.exists() => Err(HarnessError::ArtifactMissing { path: path.clone() }),
            _ => Ok(()),
        }
    }

    /// Resolves the track reference to a spec.
    pub fn track_spec(&self) -> Result<TrackSpec> {
        match &self.track {
            TrackRef::Builtin { name } => {
                builtin_track(name).ok_or_else(|| HarnessError::ConfigInvalid(format!("unknown builtin track {name:?}")))
            }
            TrackRef::File { path } => crate::persist::load_track_spec(path),
            TrackRef::Inline { spec } => Ok(spec.clone()),
        }
    }

    /// SHA-256 over the config JSON and the resolved track spec, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(serde_json::to_vec(&self.track_spec()?).expect("track serializes"));
        Ok(hex(&h.finalize()))
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
