//! Run configuration: TOML file, defaults and validation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{AlarmRule, GeneratorProfile, VitalSpec, DEFAULT_SUMMARY_BYTES};
use crate::ingest::ChannelMapping;
use crate::model::Channel;
use crate::network::{DEFAULT_GSM_BPS, DEFAULT_LORAWAN_BPS};
use crate::pipeline::Mode;
use crate::sim::SimConfig;
use crate::workload::{WorkloadParams, DEFAULT_REPORT_BYTES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkRates {
    pub lorawan_bps: u64,
    pub gsm_bps: u64,
}

impl Default for LinkRates {
    fn default() -> Self {
        LinkRates { lorawan_bps: DEFAULT_LORAWAN_BPS, gsm_bps: DEFAULT_GSM_BPS }
    }
}

/// Fixed message sizes for messages the Home Monitor composes itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PayloadSizes {
    pub summary_bytes: u32,
    pub report_bytes: u32,
    pub alarm_bytes: u32,
}

impl Default for PayloadSizes {
    fn default() -> Self {
        PayloadSizes { summary_bytes: DEFAULT_SUMMARY_BYTES, report_bytes: DEFAULT_REPORT_BYTES, alarm_bytes: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Baseline,
    Filtered,
    Managed,
    All,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSelection::Baseline => vec![Mode::Baseline],
            ModeSelection::Filtered => vec![Mode::Filtered],
            ModeSelection::Managed => vec![Mode::Managed],
            ModeSelection::All => Mode::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for ModeSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(ModeSelection::All),
            other => other.parse::<Mode>().map(|m| match m {
                Mode::Baseline => ModeSelection::Baseline,
                Mode::Filtered => ModeSelection::Filtered,
                Mode::Managed => ModeSelection::Managed,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: ModeSelection,
    pub output_dir: PathBuf,
    /// Lab dataset file. Relative paths in a config file resolve against the
    /// file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Parse at most this many dataset records.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_limit: Option<usize>,
    pub emit_trace: bool,
    pub sim: SimConfig,
    pub links: LinkRates,
    pub payloads: PayloadSizes,
    pub workload: WorkloadParams,
    pub mappings: Vec<ChannelMapping>,
    pub vitals: Vec<VitalSpec>,
    pub alarms: Vec<AlarmRule>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: ModeSelection::All,
            output_dir: PathBuf::from("out"),
            dataset: None,
            dataset_limit: None,
            emit_trace: false,
            sim: SimConfig::default(),
            links: LinkRates::default(),
            payloads: PayloadSizes::default(),
            workload: WorkloadParams::default(),
            mappings: vec![ChannelMapping::default_body_temp()],
            vitals: default_vitals(),
            alarms: vec![AlarmRule::default_cardiac()],
        }
    }
}

/// Body temperature from the dataset; heart rate and blood pressure synthesised.
pub fn default_vitals() -> Vec<VitalSpec> {
    vec![
        VitalSpec::banded(Channel::BodyTemp, 36.0, 37.0),
        VitalSpec {
            synth: Some(GeneratorProfile {
                mean: 72.0,
                jitter: 12.0,
                exception_probability: 0.05,
                rate_hz: 1.0,
                source_id: 1001,
            }),
            ..VitalSpec::banded(Channel::HRM, 50.0, 100.0)
        },
        VitalSpec {
            synth: Some(GeneratorProfile {
                mean: 118.0,
                jitter: 12.0,
                exception_probability: 0.02,
                rate_hz: 1.0,
                source_id: 1002,
            }),
            ..VitalSpec::banded(Channel::BP, 90.0, 140.0)
        },
    ]
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: at `{key}`: {message}")]
    Parse { path: String, key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Reads, defaults and validates a TOML run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut config = parse_config(&text).map_err(|e| match e {
        ConfigError::Parse { key, message, .. } => ConfigError::Parse {
            path: path.display().to_string(),
            key,
            message,
        },
        other => other,
    })?;
    if let (Some(dataset), Some(dir)) = (&config.dataset, path.parent()) {
        if dataset.is_relative() {
            config.dataset = Some(dir.join(dataset));
        }
    }
    Ok(config)
}

/// Parses TOML text into a validated config. Unknown keys are rejected with
/// their full path.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: "<inline>".into(),
        key: e.path().to_string(),
        message: e.inner().message().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| ConfigError::Invalid(msg);
        self.sim.validate().map_err(|e| invalid(e.to_string()))?;
        self.workload.validate().map_err(|e| invalid(e.to_string()))?;
        if self.links.lorawan_bps == 0 || self.links.gsm_bps == 0 {
            return Err(invalid("link rates must be positive".into()));
        }
        let p = &self.payloads;
        if p.summary_bytes == 0 || p.report_bytes == 0 || p.alarm_bytes == 0 {
            return Err(invalid("payload sizes must be positive".into()));
        }

        let mut configured = BTreeSet::new();
        for vital in &self.vitals {
            vital.validate().map_err(|e| invalid(e.to_string()))?;
            if !configured.insert(vital.channel) {
                return Err(invalid(format!("channel {} configured twice in vitals", vital.channel)));
            }
        }
        for mapping in &self.mappings {
            mapping.validate().map_err(invalid)?;
            let Some(vital) = self.vitals.iter().find(|v| v.channel == mapping.target_channel) else {
                return Err(invalid(format!(
                    "mapping targets {} which has no vitals entry",
                    mapping.target_channel
                )));
            };
            if vital.synth.is_some() {
                return Err(invalid(format!(
                    "{} is both mapped from the dataset and synthesised",
                    mapping.target_channel
                )));
            }
        }
        for rule in &self.alarms {
            for channel in rule.when.channels() {
                if !configured.contains(&channel) {
                    return Err(invalid(format!(
                        "alarm `{}` references {} which has no vitals entry",
                        rule.id, channel
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn needs_dataset(&self) -> bool {
        !self.mappings.is_empty()
    }
}
