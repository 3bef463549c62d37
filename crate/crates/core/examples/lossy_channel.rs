//! Packet erasure statistics for one V2V link and the constant-speed hold
//! estimate of a braking sender while its beacons are lost.
//!
//! ```bash
//! cargo run --release --example lossy_channel
//! ```

use platoon_mpc::comms::{update_estimate, Bsm, ChannelConfig, NeighborEstimate};

fn main() -> anyhow::Result<()> {
    for per in [0.0, 0.2, 0.4, 0.6, 0.8] {
        let ch = ChannelConfig::new(per, 1)?;
        let times: Vec<u64> = (0..100_000).filter(|&s| ch.delivered(s, 0, 1)).collect();
        let mean_gap = (times[times.len() - 1] - times[0]) as f64 * 0.1 / (times.len() - 1) as f64;
        let longest = times.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0) as f64 * 0.1;
        println!(
            "per {per:.1}: delivered {:.4}, mean inter-packet gap {mean_gap:.3} s, longest outage {longest:.1} s",
            times.len() as f64 / 1e5
        );
    }

    // Sender brakes at 1 m/s^2; only its first beacon arrives.
    let first = Bsm { sender: 0, t: 0.0, x: 0.0, y: 0.0, v: 20.0, a: -1.0, phi: 0.0 };
    let mut est = NeighborEstimate::fresh(first);
    for k in 1..=20 {
        est = update_estimate(&est, None, 0.1)?;
        if k % 5 == 0 {
            let t = k as f64 * 0.1;
            let truth = 20.0 * t - 0.5 * t * t;
            println!("age {:.1} s: estimated x {:.2} m, true x {truth:.2} m", est.age, est.est_x);
        }
    }
    Ok(())
}
