//! Discrete-event simulation of a home health-monitoring edge pipeline.
//!
//! Sensor readings flow through per-channel edge filters into a Home Monitor
//! that summarises in-band data under a processing deadline, raises alarms,
//! and forwards traffic over rate-limited LoRaWAN and GSM links. The same
//! input stream is run in three modes (baseline, filtered, managed) and the
//! resulting traffic, compute and bandwidth figures are compared.
//!
//! ```
//! use homesim::config::RunConfig;
//! use homesim::ingest::synthetic_lab_rows;
//! use homesim::runner::run_scenario;
//!
//! let dir = tempfile::tempdir().unwrap();
//! let data = dir.path().join("lab.txt");
//! std::fs::write(&data, synthetic_lab_rows(1000, 1)).unwrap();
//! let config = RunConfig { dataset: Some(data), output_dir: dir.path().join("out"), ..RunConfig::default() };
//! let out = run_scenario(&config).unwrap();
//! let table = out.comparison.unwrap();
//! assert!(table.filtered.bytes_forwarded < table.baseline.bytes_forwarded);
//! ```

pub mod config;
pub mod filter;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod runner;
pub mod sim;
pub mod time;
pub mod workload;

pub use config::{load_config, RunConfig};
pub use model::{Channel, SensorReading};
pub use pipeline::{simulate, Mode};
pub use runner::run_scenario;
pub use time::{SimDuration, SimTime};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/clock.md")]
    mod clock {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/filtering.md")]
    mod filtering {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
}
