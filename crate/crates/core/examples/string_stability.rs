//! Peak speed deviation along a 15-vehicle string during the leader's
//! deceleration, and the ratio between consecutive followers.
//!
//! ```bash
//! cargo run --release --example string_stability
//! ```

use platoon_mpc::metrics;
use platoon_mpc::mpc::Mode;
use platoon_mpc::sim::{self, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    for mode in Mode::ALL {
        let cfg = ScenarioConfig { mode, ..ScenarioConfig::default() };
        let trace = sim::run(&cfg)?;
        let event = cfg.leader_profile.events()[0];
        let (t0, t1) = metrics::event_window(&trace, &event);
        let peaks = metrics::peak_deviation(&trace, event.from, t0, t1);
        let ratios = metrics::ratios_from_peaks(&peaks);
        println!("== {mode}");
        for (i, p) in peaks.iter().enumerate() {
            let ratio = i.checked_sub(2).and_then(|k| ratios[k]).map_or("-".to_string(), |r| format!("{r:.3}"));
            println!("  vehicle {i:>2}: peak deviation {p:.3} m/s, ratio {ratio}");
        }
    }
    Ok(())
}
