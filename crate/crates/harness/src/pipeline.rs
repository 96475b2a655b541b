//! The experiment stages behind each command.
//!
//! A run directory is `<output root>/<first 16 hex digits of the config hash>`.
//! Stage outputs are plain files inside it; later stages read them back, so
//! every stage can run in its own process.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use visracer_core::baseline::NoiseConfig;
use visracer_core::obs::Standardizer;
use visracer_core::Track;
use visracer_learn::env::{EnvSetup, ObsMode, RacingEnv};
use visracer_learn::phase1::{
    collect_regression_dataset, evaluate_regression, mean_predictor_metrics, train_repr, CollectSetup, RegressionMetrics,
    RegressionSample, ReprNetwork, StopAfter,
};
use visracer_learn::sac::PolicyNet;
use visracer_learn::seed;
use visracer_learn::train::{
    evaluate_driver, evaluate_policy, flying_start_speed, train_policy, CurveRow, EpochObserver, EvalSettings, LapReport,
    PursuitDriver, CURVE_HEADER,
};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::CommandRecord;
use crate::persist::{self, Csv, DatasetHeader, PolicyHeader, ReprHeader};

pub const TRAJECTORY_HEADER: &str = "time_s,s_m,lateral_m,x_m,y_m,speed_mps";
pub const LAP_TIMES_HEADER: &str = "agent,seed,repr_init_seed,lap1_s,lap2_s,dnf_flag,wall_contacts";
pub const LAP_TABLE_HEADER: &str = "agent,best_lap2_s,best_seed,runs,completed_runs,best_run_wall_contacts";
pub const REGRESSION_HEADER: &str = "group,trained_mse,mean_predictor_mse,ratio,trained_native_mse";
pub const REPR_HISTORY_HEADER: &str = "epoch,train_loss,eval_mse";

/// Agents compared in the report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Baseline,
    Privileged,
    Vision,
}

impl Agent {
    pub fn name(self) -> &'static str {
        match self {
            Agent::Baseline => "baseline",
            Agent::Privileged => "privileged",
            Agent::Vision => "vision",
        }
    }
}

/// Which trained policy a stage refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyId {
    pub agent: Agent,
    pub seed: u64,
    /// Representation initialization seed; only for vision agents.
    pub repr_init: Option<u64>,
}

impl PolicyId {
    pub fn tag(&self) -> String {
        match (self.agent, self.repr_init) {
            (Agent::Baseline, _) => "baseline".into(),
            (a, Some(r)) => format!("{}-seed{}-repr{}", a.name(), self.seed, r),
            (a, None) => format!("{}-seed{}", a.name(), self.seed),
        }
    }
}

/// Lap evaluation as written to `eval/<tag>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub agent: Agent,
    pub seed: Option<u64>,
    pub repr_init_seed: Option<u64>,
    pub lap_times: Vec<f64>,
    pub second_lap: Option<f64>,
    pub dnf: bool,
    pub wall_contacts: usize,
    pub lap_limit: f64,
    pub start_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub init_seed: u64,
    pub trained: RegressionMetrics,
    pub mean_predictor: RegressionMetrics,
}

impl RegressionReport {
    /// Trained over mean-predictor standardized MSE for the group `name`.
    pub fn ratio(&self, name: &str) -> Option<f64> {
        let t = self.trained.groups.iter().find(|g| g.0 == name)?.1;
        let m = self.mean_predictor.groups.iter().find(|g| g.0 == name)?.1;
        Some(t / m)
    }

    pub fn overall_ratio(&self) -> f64 {
        self.trained.overall_mse / self.mean_predictor.overall_mse
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LapTableRow {
    pub agent: Agent,
    pub best_lap2: Option<f64>,
    pub best_seed: Option<u64>,
    pub runs: usize,
    pub completed: usize,
    pub best_run_wall_contacts: Option<usize>,
}

pub struct Run {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub track: Track,
}

impl Run {
    /// Validates `cfg`, builds the track and makes sure the run directory
    /// holds this config.
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.track_spec()?;
        let track = Track::build(&spec).map_err(|e| HarnessError::ConfigInvalid(format!("track: {e}")))?;
        let hash = cfg.hash()?;
        let dir = cfg.output_root().join(&hash[..16]);
        persist::write_new(&dir.join("config.json"), format!("{}\n", cfg.to_json()).as_bytes())?;
        persist::write_new(&dir.join("track.json"), &persist::track_spec_bytes(&spec))?;
        Ok(Self { cfg, hash, dir, track })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn track_hash(&self) -> String {
        sha256_hex(&persist::track_spec_bytes(self.track.spec()))
    }

    fn env_setup(&self) -> EnvSetup {
        EnvSetup {
            track: self.track.clone(),
            vehicle: self.cfg.vehicle,
            camera: self.cfg.camera,
            window: self.cfg.lookahead,
            c_w: self.cfg.sac.c_w,
            frame_delay: self.cfg.sac.frame_delay,
            action_repeat: self.cfg.sac.control_steps_per_env_step,
        }
    }

    // ---- Phase 1 -----------------------------------------------------------

    /// Drives the baseline to record the training (disrupted), validation and
    /// evaluation (clean) datasets.
    pub fn collect(&self) -> Result<()> {
        let mut rec = CommandRecord::start("collect");
        let p1 = &self.cfg.phase1;
        let l = self.track.length();
        let splits: [(&str, usize, NoiseConfig, f64); 3] = [
            ("train", p1.train_samples, p1.noise, 0.0),
            ("val", p1.eval_samples.div_ceil(2), NoiseConfig::OFF, l / 3.0),
            ("eval", p1.eval_samples, NoiseConfig::OFF, 2.0 * l / 3.0),
        ];
        let mut rng = seed::stream(p1.seed, "collection");
        for (name, count, noise, start) in splits {
            let setup = CollectSetup {
                track: &self.track,
                vehicle: &self.cfg.vehicle,
                pursuit: &self.cfg.pursuit,
                camera: &self.cfg.camera,
                window: &self.cfg.lookahead,
                noise: &noise,
            };
            let samples = collect_regression_dataset(&setup, start, StopAfter::Samples(count), &mut rng)?;
            let header = DatasetHeader {
                config_hash: self.hash.clone(),
                split: name.into(),
                track_hash: self.track_hash(),
                width: self.cfg.camera.width,
                height: self.cfg.camera.height,
                channels: self.cfg.camera.channels,
                count: samples.len(),
            };
            let file = format!("data/{name}.bin");
            persist::save_dataset(&self.path(&file), &header, &samples)?;
            rec.add("dataset", &file);
            if name == "train" {
                let std = Standardizer::fit(samples.iter().map(|s| s.target.as_slice()))
                    .map_err(HarnessError::runtime)?;
                persist::write_json(&self.path("data/standardizer.json"), "standardizer", &self.hash, &std)?;
                rec.add("standardizer", "data/standardizer.json");
                let img = persist::frame_image_path(Path::new("data"), "first_frame", &samples[0].frame);
                persist::write_new(&self.dir.join(&img), &samples[0].frame.to_pnm())?;
                rec.add("frame_dump", img);
            }
            info!("collected {} {name} samples", samples.len());
        }
        rec.commit(&self.dir, &self.hash)?;
        Ok(())
    }

    pub fn load_split(&self, name: &str) -> Result<Vec<RegressionSample>> {
        let path = self.path(&format!("data/{name}.bin"));
        let (header, samples, _) = persist::load_dataset(&path)?;
        if header.config_hash != self.hash {
            return Err(HarnessError::Runtime(format!("{} belongs to another config", path.display())));
        }
        Ok(samples)
    }

    pub fn standardizer(&self) -> Result<Standardizer> {
        Ok(persist::read_json::<Standardizer>(&self.path("data/standardizer.json"), "standardizer")?.payload)
    }

    fn repr_file(init_seed: u64) -> String {
        format!("repr/init{init_seed}.bin")
    }

    /// Trains `phi_reg(phi_rep(.))` from the initialization `init_seed`.
    pub fn train_repr(&self, init_seed: u64) -> Result<ReprNetwork> {
        let mut rec = CommandRecord::start("train-repr");
        let train = self.load_split("train")?;
        let val = self.load_split("val")?;
        let cfg = visracer_learn::phase1::Phase1Config {
            seed: init_seed,
            ..self.cfg.phase1.clone()
        };
        let mut rng = seed::stream(init_seed, "init");
        let out = train_repr(&train, &val, &self.cfg.camera, &cfg, &mut rng)?;
        let header = ReprHeader {
            config_hash: self.hash.clone(),
            init_seed,
            camera: self.cfg.camera,
            channels: cfg.channels,
            standardizer: out.net.standardizer.clone(),
            best_epoch: out.best_epoch,
        };
        let file = Self::repr_file(init_seed);
        persist::write_new(&self.path(&file), &persist::repr_bytes(&header, &out.net))?;
        rec.add("repr_weights", &file);
        let mut csv = Csv::new("repr_history", REPR_HISTORY_HEADER);
        for h in &out.history {
            csv.push(format!("{},{:.8},{:.8}", h.epoch, h.train_loss, h.eval_mse));
        }
        let hist = format!("repr/init{init_seed}_history.csv");
        csv.write(&self.path(&hist), &self.hash)?;
        rec.add("repr_history", hist);
        rec.commit(&self.dir, &self.hash)?;
        Ok(out.net)
    }

    pub fn load_repr(&self, init_seed: u64) -> Result<ReprNetwork> {
        let path = self.path(&Self::repr_file(init_seed));
        let (header, net) = persist::load_repr(&path)?;
        if header.config_hash != self.hash || header.camera != self.cfg.camera {
            return Err(HarnessError::Runtime(format!("{} belongs to another config", path.display())));
        }
        Ok(net)
    }

    /// Held-out regression error of a trained representation next to the
    /// training-mean predictor.
    pub fn eval_repr(&self, init_seed: u64) -> Result<RegressionReport> {
        let mut rec = CommandRecord::start("eval-repr");
        let net = self.load_repr(init_seed)?;
        let eval = self.load_split("eval")?;
        let report = RegressionReport {
            init_seed,
            trained: evaluate_regression(&net, &eval)?,
            mean_predictor: mean_predictor_metrics(&net.standardizer, &eval)?,
        };
        let mut csv = Csv::new("regression_metrics", REGRESSION_HEADER);
        let mut groups: Vec<(String, f64, f64)> = vec![(
            "all".into(),
            report.trained.overall_mse,
            report.mean_predictor.overall_mse,
        )];
        groups.extend(report.trained.groups.iter().zip(&report.mean_predictor.groups).map(|(t, m)| (t.0.clone(), t.1, m.1)));
        for (name, t, m) in groups {
            let native = report.trained.groups.iter().find(|g| g.0 == name).map(|g| g.2);
            csv.push(format!(
                "{name},{t:.8},{m:.8},{:.8},{}",
                t / m,
                native.map(|v| format!("{v:.8}")).unwrap_or_default()
            ));
        }
        let file = format!("repr/init{init_seed}_metrics.csv");
        csv.write(&self.path(&file), &self.hash)?;
        rec.add("regression_metrics", &file);
        rec.commit(&self.dir, &self.hash)?;
        Ok(report)
    }

    // ---- Phase 2 -----------------------------------------------------------

    fn policy_dir(id: &PolicyId) -> String {
        format!("rl/{}", id.tag())
    }

    fn obs_mode(&self, id: &PolicyId) -> Result<ObsMode> {
        Ok(match id.agent {
            Agent::Vision => ObsMode::Vision(Box::new(self.load_repr(id.repr_init.unwrap_or(self.cfg.phase1.seed))?)),
            _ => ObsMode::Privileged(self.standardizer()?),
        })
    }

    /// Baseline flying-start speed and DNF limit for policy evaluation.
    pub fn eval_settings(&self) -> Result<(EvalSettings, LapReport)> {
        let mut env = RacingEnv::new(self.env_setup(), ObsMode::Privileged(identity_standardizer()));
        let v0 = flying_start_speed(&env, &self.cfg.pursuit);
        let base = evaluate_driver(&mut env, &mut PursuitDriver(self.cfg.pursuit), v0, f64::INFINITY)?;
        let lap = base
            .second_lap()
            .ok_or_else(|| HarnessError::Runtime("the baseline does not complete two laps".into()))?;
        Ok((
            EvalSettings {
                start_speed: v0,
                lap_limit: self.cfg.dnf_factor * lap,
            },
            base,
        ))
    }

    fn normalize_id(&self, mut id: PolicyId) -> PolicyId {
        if id.agent == Agent::Vision {
            let r = id.repr_init.unwrap_or(self.cfg.phase1.seed);
            id.repr_init = (r != self.cfg.phase1.seed).then_some(r);
        } else {
            id.repr_init = None;
        }
        id
    }

    /// Trains one SAC policy and keeps the snapshot with the best evaluation.
    pub fn train_rl<O: EpochObserver>(&self, id: PolicyId, observer: &mut O) -> Result<Vec<CurveRow>> {
        let id = self.normalize_id(id);
        if id.agent == Agent::Baseline {
            return Err(HarnessError::ConfigInvalid("the baseline is not trained".into()));
        }
        let mut rec = CommandRecord::start("train-rl");
        let mode = self.obs_mode(&id)?;
        let (eval, _) = self.eval_settings()?;
        let mut env = RacingEnv::new(self.env_setup(), mode.clone());
        let mut eval_env = RacingEnv::new(self.env_setup(), mode);
        let out = train_policy(&mut env, &mut eval_env, &self.cfg.sac, &eval, id.seed, observer)?;
        let dir = Self::policy_dir(&id);
        let header = PolicyHeader {
            config_hash: self.hash.clone(),
            agent: id.agent.name().into(),
            seed: id.seed,
            repr_init_seed: (id.agent == Agent::Vision).then(|| id.repr_init.unwrap_or(self.cfg.phase1.seed)),
            obs_dim: env.obs_dim(),
            epoch: out.best_epoch,
            standardizer: match &env.mode {
                ObsMode::Privileged(s) => Some(s.clone()),
                ObsMode::Vision(_) => None,
            },
        };
        let file = format!("{dir}/policy.bin");
        persist::write_new(&self.path(&file), &persist::policy_bytes(&header, &out.best))?;
        rec.add("policy_checkpoint", &file);
        let mut csv = Csv::new("learning_curve", CURVE_HEADER);
        for row in &out.curve {
            csv.push(row.csv());
        }
        let curve = format!("{dir}/curve.csv");
        csv.write(&self.path(&curve), &self.hash)?;
        rec.add("learning_curve", curve);
        rec.commit(&self.dir, &self.hash)?;
        Ok(out.curve)
    }

    pub fn load_policy(&self, id: PolicyId) -> Result<(PolicyHeader, PolicyNet)> {
        let id = self.normalize_id(id);
        let path = self.path(&format!("{}/policy.bin", Self::policy_dir(&id)));
        let (header, net) = persist::load_policy(&path)?;
        if header.config_hash != self.hash {
            return Err(HarnessError::Runtime(format!("{} belongs to another config", path.display())));
        }
        Ok((header, net))
    }

    /// Two-lap flying-start evaluation of the baseline or a trained policy.
    pub fn eval(&self, id: PolicyId) -> Result<EvalRecord> {
        let id = self.normalize_id(id);
        let mut rec = CommandRecord::start("eval");
        let (settings, base) = self.eval_settings()?;
        let report = match id.agent {
            Agent::Baseline => base,
            _ => {
                let (_, policy) = self.load_policy(id)?;
                let mut env = RacingEnv::new(self.env_setup(), self.obs_mode(&id)?);
                evaluate_policy(&mut env, &policy, settings.start_speed, settings.lap_limit)?
            }
        };
        let record = EvalRecord {
            agent: id.agent,
            seed: (id.agent != Agent::Baseline).then_some(id.seed),
            repr_init_seed: match id.agent {
                Agent::Vision => Some(id.repr_init.unwrap_or(self.cfg.phase1.seed)),
                _ => None,
            },
            lap_times: report.lap_times.clone(),
            second_lap: report.second_lap(),
            dnf: report.dnf,
            wall_contacts: report.wall_contact_count,
            lap_limit: settings.lap_limit,
            start_speed: settings.start_speed,
        };
        let tag = id.tag();
        let file = format!("eval/{tag}.json");
        persist::write_json(&self.path(&file), "lap_report", &self.hash, &record)?;
        rec.add("lap_report", &file);
        let mut csv = Csv::new("trajectory", TRAJECTORY_HEADER);
        for p in &report.trajectory {
            let xy = self.track.point_at(p.s) + self.track.tangent_at(p.s).perp() * p.lateral;
            csv.push(format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                p.time, p.s, p.lateral, xy.x, xy.y, p.speed
            ));
        }
        let traj = format!("eval/{tag}_trajectory.csv");
        csv.write(&self.path(&traj), &self.hash)?;
        rec.add("trajectory", traj);
        rec.commit(&self.dir, &self.hash)?;
        Ok(record)
    }

    pub fn load_eval(&self, id: PolicyId) -> Result<EvalRecord> {
        let id = self.normalize_id(id);
        Ok(persist::read_json(&self.path(&format!("eval/{}.json", id.tag())), "lap_report")?.payload)
    }

    // ---- report ------------------------------------------------------------

    /// Policies the report covers: every configured seed for both learned
    /// agents, plus any vision agent on the alternate representation.
    pub fn report_ids(&self) -> Vec<PolicyId> {
        let mut ids = vec![PolicyId {
            agent: Agent::Baseline,
            seed: 0,
            repr_init: None,
        }];
        for agent in [Agent::Privileged, Agent::Vision] {
            for &seed in &self.cfg.seeds {
                ids.push(PolicyId {
                    agent,
                    seed,
                    repr_init: None,
                });
            }
        }
        for &seed in &self.cfg.seeds {
            let id = PolicyId {
                agent: Agent::Vision,
                seed,
                repr_init: Some(self.cfg.alt_repr_seed),
            };
            if self.cfg.alt_repr_seed != self.cfg.phase1.seed && self.path(&format!("eval/{}.json", id.tag())).exists() {
                ids.push(id);
            }
        }
        ids
    }

    /// Lap-time table, per-run lap times, and copies of the trajectory and
    /// learning-curve CSVs under `report/`. The two tables are rewritten as
    /// more evaluations appear; the copies are write-once like their sources.
    pub fn report(&self) -> Result<Vec<LapTableRow>> {
        let mut rec = CommandRecord::start("report");
        let mut records = Vec::new();
        for id in self.report_ids() {
            records.push((id, self.load_eval(id)?));
        }
        let mut runs = Csv::new("lap_times", LAP_TIMES_HEADER);
        for (_, r) in &records {
            runs.push(format!(
                "{},{},{},{},{},{},{}",
                r.agent.name(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.repr_init_seed.map(|s| s.to_string()).unwrap_or_default(),
                r.lap_times.first().map(|t| format!("{t:.6}")).unwrap_or_default(),
                r.second_lap.map(|t| format!("{t:.6}")).unwrap_or_default(),
                u8::from(r.dnf),
                r.wall_contacts
            ));
        }
        runs.replace(&self.path("report/lap_times.csv"), &self.hash)?;
        rec.add("lap_times", "report/lap_times.csv");

        let main_repr = self.cfg.phase1.seed;
        let table: Vec<LapTableRow> = [Agent::Baseline, Agent::Privileged, Agent::Vision]
            .into_iter()
            .map(|agent| {
                let rs: Vec<&EvalRecord> = records
                    .iter()
                    .map(|(_, r)| r)
                    .filter(|r| r.agent == agent && (agent != Agent::Vision || r.repr_init_seed == Some(main_repr)))
                    .collect();
                lap_table_row(agent, &rs)
            })
            .collect();
        let mut csv = Csv::new("lap_table", LAP_TABLE_HEADER);
        for row in &table {
            csv.push(format!(
                "{},{},{},{},{},{}",
                row.agent.name(),
                row.best_lap2.map(|t| format!("{t:.6}")).unwrap_or_default(),
                row.best_seed.map(|s| s.to_string()).unwrap_or_default(),
                row.runs,
                row.completed,
                row.best_run_wall_contacts.map(|c| c.to_string()).unwrap_or_default()
            ));
        }
        csv.replace(&self.path("report/lap_table.csv"), &self.hash)?;
        rec.add("lap_table", "report/lap_table.csv");

        for (id, _) in &records {
            let tag = id.tag();
            let src = self.path(&format!("eval/{tag}_trajectory.csv"));
            let dst = format!("report/trajectories/{tag}.csv");
            persist::write_new(&self.path(&dst), &persist::read_bytes(&src)?)?;
            rec.add("trajectory", dst);
            if id.agent != Agent::Baseline {
                let src = self.path(&format!("{}/curve.csv", Self::policy_dir(id)));
                let dst = format!("report/curves/{tag}.csv");
                persist::write_new(&self.path(&dst), &persist::read_bytes(&src)?)?;
                rec.add("learning_curve", dst);
            }
        }
        rec.commit(&self.dir, &self.hash)?;
        Ok(table)
    }
}

fn lap_table_row(agent: Agent, rs: &[&EvalRecord]) -> LapTableRow {
    let best = rs
        .iter()
        .filter_map(|r| r.second_lap.map(|t| (t, r)))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    LapTableRow {
        agent,
        best_lap2: best.map(|b| b.0),
        best_seed: best.and_then(|b| b.1.seed),
        runs: rs.len(),
        completed: rs.iter().filter(|r| r.second_lap.is_some()).count(),
        best_run_wall_contacts: best.map(|b| b.1.wall_contacts),
    }
}

/// Identity standardizer for environments whose observations are unused.
pub fn identity_standardizer() -> Standardizer {
    let n = visracer_core::obs::ENV_DIM;
    Standardizer {
        mean: vec![0.0; n],
        std: vec![1.0; n],
    }
}
