//! Erasure-channel penalty: closed form vs Monte Carlo, and a composed bound.
//!
//! cargo run --release --example bec_penalty

use channel_pac::bound::{compose_bound, mc_omega, omega_bec, BoundConfig};
use channel_pac::channel::{ChannelSpec, Metric};
use channel_pac::rng::Rng;

fn main() -> channel_pac::Result<()> {
    println!("{:>4} {:>6} {:>12} {:>12} {:>10}", "d", "p_o", "closed", "monte-carlo", "rel.dev");
    let mut rng = Rng::named(7, "channel");
    for d in [2, 16, 32] {
        for p in [0.1, 0.5, 0.8] {
            let closed = omega_bec(d, p)?;
            let mc = mc_omega(&ChannelSpec::bec(d, p)?, Metric::Frobenius, 200_000, &mut rng)?;
            println!(
                "{d:>4} {p:>6.2} {closed:>12.6} {:>12.6} {:>10.2e}",
                mc.estimate,
                (mc.estimate - closed).abs() / closed
            );
        }
    }

    // A hypothetical posterior: 2% training error, KL of 500 nats, K = 0.05.
    let cfg = BoundConfig::with_defaults(10_000, 0.05, ChannelSpec::bec(32, 0.1)?);
    let report = compose_bound(&cfg, 0.02, 500.0, 32)?;
    println!("\n{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
