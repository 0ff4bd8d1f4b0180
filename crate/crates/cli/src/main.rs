use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use homesim::config::{load_config, ModeSelection, RunConfig};
use homesim::runner::run_scenario;

/// Run the home-monitoring edge pipeline simulation.
///
/// Exit status: 0 success, 1 config error, 2 data error, 3 internal fault.
#[derive(Debug, Parser)]
#[command(name = "homesim", version)]
struct Args {
    /// TOML run configuration. Omitted fields take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Lab-format dataset file.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
    /// baseline, filtered, managed or all.
    #[arg(long, value_name = "NAME")]
    mode: Option<ModeSelection>,
    /// Run length in ticks.
    #[arg(long, value_name = "TICKS")]
    duration: Option<u64>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write the full event trace for each mode.
    #[arg(long)]
    emit_trace: bool,
}

impl Args {
    fn apply(self, mut config: RunConfig) -> RunConfig {
        if let Some(dataset) = self.dataset {
            config.dataset = Some(dataset);
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(ticks) = self.duration {
            config.sim.duration_ticks = ticks;
        }
        if let Some(seed) = self.seed {
            config.sim.seed = seed;
        }
        if let Some(out) = self.out {
            config.output_dir = out;
        }
        config.emit_trace |= self.emit_trace;
        config
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => match load_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    let config = args.apply(config);

    match run_scenario(&config) {
        Ok(out) => {
            // A closed stdout (e.g. piped into `head`) is not a run failure.
            let mut stdout = std::io::stdout().lock();
            for run in &out.runs {
                let r = &run.report;
                let _ = writeln!(
                    stdout,
                    "{:<9} readings={} generated={}B forwarded={}B reduction={:.2}% compute={:.2}s bandwidth={}B alarms={}",
                    r.mode,
                    r.readings_generated,
                    r.bytes_generated,
                    r.bytes_forwarded,
                    r.traffic_reduction_pct,
                    r.compute_time_s,
                    r.total_bandwidth(),
                    r.alarm_count
                );
            }
            for path in &out.written {
                let _ = writeln!(stdout, "wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
