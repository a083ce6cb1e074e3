//! ERM and channel-aware training on Gaussian blobs, with a checkpoint round
//! trip.
//!
//! cargo run --release --example train_blobs

use channel_pac::channel::ChannelSpec;
use channel_pac::checkpoint;
use channel_pac::data::make_blobs;
use channel_pac::nn::NetworkSpec;
use channel_pac::trainer::{train, KhatGrad, TrainConfig, TrainMode};

fn main() -> channel_pac::Result<()> {
    let spec = NetworkSpec::mlp(&[8, 16, 8, 4], 3)?;
    let data = make_blobs(400, 8, 4, 1.0, 3)?;
    let channel = ChannelSpec::bec(8, 0.3)?;
    for mode in [TrainMode::Erm, TrainMode::ChannelAware] {
        let cfg = TrainConfig {
            mode,
            eta1: 0.01,
            epochs: 15,
            batch_size: 20,
            sigma_init: 0.02,
            khat_grad: KhatGrad::StopGradient,
            ..TrainConfig::default()
        };
        let (model, stats) = train(&spec, &data, &channel, &cfg)?;
        println!("{mode:?}");
        for e in &stats.epochs {
            println!(
                "  epoch {:>2}  J {:.4}  risk {:.4}  KL {:>10.2}  K_hat {:.4}",
                e.epoch, e.objective, e.empirical_risk, e.kl, e.khat
            );
        }
        let dir = std::env::temp_dir().join("channel-pac-example.cpbw");
        checkpoint::save(&dir, &spec, &model)?;
        let (_, restored) = checkpoint::load(&dir)?;
        assert_eq!(restored, model);
        println!("  checkpoint round trip ok ({})", dir.display());
    }
    Ok(())
}
