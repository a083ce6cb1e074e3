//! Accuracy lost to the link: population risk with the channel at the split
//! minus the channel-free training risk, for several channels.
//!
//! cargo run --release --example edge_inference_gap

use channel_pac::channel::ChannelSpec;
use channel_pac::data::make_blobs;
use channel_pac::edge::{estimate_gap, EvalConfig};
use channel_pac::nn::NetworkSpec;
use channel_pac::rng::Rng;
use channel_pac::trainer::{train, TrainConfig, TrainMode};

fn main() -> channel_pac::Result<()> {
    let spec = NetworkSpec::mlp(&[8, 16, 8, 4], 3)?;
    let train_set = make_blobs(400, 8, 4, 1.0, 3)?;
    let test_set = make_blobs(400, 8, 4, 1.0, 4)?;
    let cfg = TrainConfig {
        mode: TrainMode::Erm,
        epochs: 30,
        batch_size: 20,
        ..TrainConfig::default()
    };
    let (model, _) = train(&spec, &train_set, &ChannelSpec::identity(8), &cfg)?;
    let eval = EvalConfig::default();
    let channels = [
        ChannelSpec::identity(8),
        ChannelSpec::bec(8, 0.1)?,
        ChannelSpec::bec(8, 0.5)?,
        ChannelSpec::bec(8, 0.8)?,
        ChannelSpec::rayleigh_zf_db(8, 20.0)?,
        ChannelSpec::rayleigh_zf_db(8, 5.0)?,
        ChannelSpec::rayleigh_zf_db(8, -5.0)?,
    ];
    println!("{:<22} {:>9} {:>9} {:>9} {:>9}", "channel", "pop.risk", "stderr", "emp.risk", "gap");
    for (i, ch) in channels.iter().enumerate() {
        let g = estimate_gap(&model, &spec, &train_set, &test_set, ch, &eval, &Rng::named(0, "channel").fork(i as u64))?;
        println!(
            "{:<22} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            ch.label(),
            g.population_risk.mean_01_loss,
            g.population_risk.stderr,
            g.empirical_risk,
            g.delta
        );
    }
    Ok(())
}
