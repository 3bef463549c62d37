//! Small packet-error-rate sweep: mean speed difference for each mode as
//! the channel degrades.
//!
//! ```bash
//! cargo run --release --example per_sweep
//! ```

use platoon_mpc::experiment::{self, SweepSpec};
use platoon_mpc::mpc::Mode;
use platoon_mpc::sim::{LeaderProfile, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    let spec = SweepSpec {
        modes: Mode::ALL.to_vec(),
        lengths: vec![10],
        pers: vec![0.0, 0.3, 0.6, 0.9],
        seeds: vec![0, 1],
        template: ScenarioConfig {
            duration: 120.0,
            leader_profile: LeaderProfile::time_varying(),
            ..ScenarioConfig::default()
        },
    };
    let dir = tempfile::tempdir()?;
    let rows = experiment::run_sweep(&spec, dir.path(), None)?;
    let means = experiment::seed_means(&rows, |r| r.mean_speed_diff);
    println!("{:<12} {:>6} {:>18}", "mode", "per", "mean speed diff");
    for ((mode, _, per), v) in &means {
        println!("{mode:<12} {per:>6} {v:>16.4} m/s");
    }
    Ok(())
}
