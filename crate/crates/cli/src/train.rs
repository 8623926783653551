//! A single optimizer run from a TOML config, with its plan, checkpoint and
//! per-iteration log written to an output directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use fecnn_core::drl::{run_optimization, AccuracyReward, ActionMode, DrlConfig, Problem};
use fecnn_core::scheme::PlanFile;
use fecnn_core::{ChannelSpec, EccSpec};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audit::{config_hash, write_rows};
use crate::setup::{load_evaluator, ReprChoice};
use crate::sweep::plan_text;

fn parse_text<'de, D, T>(d: D) -> std::result::Result<T, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    String::deserialize(d)?
        .parse()
        .map_err(serde::de::Error::custom)
}

fn show_text<S: Serializer, T: Display>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub limit: usize,
    #[serde(deserialize_with = "parse_text", serialize_with = "show_text")]
    pub repr: ReprChoice,
    #[serde(deserialize_with = "parse_text", serialize_with = "show_text")]
    pub ecc: EccSpec,
    pub ber: f64,
    pub target_r: f64,
    pub mode: ActionMode,
    pub seed: u64,
    /// Matched channel draws used to re-evaluate the best plans.
    pub final_trials: usize,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub drl: DrlConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: PathBuf::from("assets/reference-model.bin"),
            dataset: PathBuf::from("data/mnist-5k"),
            limit: 1000,
            repr: ReprChoice::Float32,
            ecc: EccSpec::Ideal,
            ber: 0.01,
            target_r: 0.008,
            mode: ActionMode::TopBits,
            seed: 0,
            final_trials: 100,
            out_dir: PathBuf::from("runs/train"),
            drl: DrlConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(
            (0.0..=1.0).contains(&self.ber),
            "BER {} outside [0, 1]",
            self.ber
        );
        anyhow::ensure!(
            self.target_r >= 0.0,
            "target redundancy {} must be nonnegative",
            self.target_r
        );
        anyhow::ensure!(self.final_trials > 0, "final_trials must be positive");
        self.ecc.overhead(self.ber)?;
        self.drl.validate()?;
        Ok(())
    }
}

/// One line of `log.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub r: f64,
    #[serde(rename = "P")]
    pub accuracy: f64,
    #[serde(rename = "R")]
    pub reward: f64,
    pub loss_actor: Option<f64>,
    pub loss_critic: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: ActionMode,
    pub ber: f64,
    pub target_r: f64,
    pub achieved_r: f64,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub trials: usize,
    pub fallback: bool,
    pub plan: String,
    pub seed: u64,
    pub config_hash: String,
}

pub fn run_train(cfg: &TrainConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let evaluator = load_evaluator(&cfg.model, &cfg.dataset, cfg.repr, cfg.limit)?;
    let problem = Problem::for_evaluator(&evaluator, cfg.ecc, cfg.ber, cfg.target_r, cfg.mode);
    let chan = ChannelSpec::symmetric(cfg.ber, cfg.seed)?;
    let mut source = AccuracyReward::new(
        &evaluator,
        chan,
        cfg.seed,
        &problem,
        cfg.drl.reward,
        cfg.final_trials,
    );
    let res = run_optimization(&problem, &cfg.drl, &mut source, cfg.seed)?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let plan_file = PlanFile::new(res.plan.clone(), evaluator.layer_sizes(), cfg.ber)?;
    std::fs::write(dir.join("plan.txt"), plan_file.to_string())?;
    if let Some(agent) = &res.agent {
        agent.save_checkpoint(dir.join("checkpoint.bin"))?;
    }
    let log: Vec<TrainLogRow> = res
        .log
        .iter()
        .map(|l| TrainLogRow {
            iteration: l.iteration,
            r: l.r,
            accuracy: l.accuracy,
            reward: l.reward,
            loss_actor: l.loss_actor,
            loss_critic: l.loss_critic,
            seed: cfg.seed,
            config_hash: hash.clone(),
        })
        .collect();
    write_rows(Some(&dir.join("log.csv")), &log)?;
    let summary = TrainSummary {
        mode: cfg.mode,
        ber: cfg.ber,
        target_r: cfg.target_r,
        achieved_r: res.evaluation.r,
        mean: res.evaluation.mean,
        std: res.evaluation.std,
        stderr: res.evaluation.std_err(),
        trials: cfg.final_trials,
        fallback: res.used_fallback,
        plan: plan_text(&res.plan),
        seed: cfg.seed,
        config_hash: hash,
    };
    write_rows(
        Some(&dir.join("summary.csv")),
        std::slice::from_ref(&summary),
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::from_toml(
            r#"
            repr = "fixed:8:auto"
            ecc = "bch:255:239:2"
            mode = "bit_mask"
            ber = 0.02
            [drl]
            iterations = 5
            "#,
        )
        .unwrap();
        assert_eq!(
            cfg.repr,
            ReprChoice::Fixed {
                width: 8,
                clamp: None
            }
        );
        assert_eq!(cfg.ecc, EccSpec::block(255, 239, 2).unwrap());
        assert_eq!(cfg.mode, ActionMode::BitMask);
        assert_eq!(cfg.drl.iterations, 5);
        assert_eq!(cfg.limit, 1000);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_toml("iterations = 5").is_err());
        assert!(TrainConfig::from_toml("[drl]\nnoise = 1.0").is_err());
        assert!(TrainConfig::from_toml("ecc = \"hamming\"").is_err());
    }

    #[test]
    fn out_dir_does_not_change_hash() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            out_dir: PathBuf::from("elsewhere"),
            ..a.clone()
        };
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c = TrainConfig {
            seed: 1,
            ..a.clone()
        };
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
    }
}
