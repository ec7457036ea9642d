//! Profiles mean post-ReLU activations of a freshly trained desk network.

use nwadapt::data::Split;
use nwadapt::stats::collect_profile;
use nwadapt::{adapt, desk};

fn main() -> nwadapt::Result<()> {
    let seed = 3;
    let data = desk::default_dataset(seed)?;
    let (train, val) = (data.with_split(Split::Train), data.with_split(Split::Val));
    let cfg = desk::adapt_config(seed);
    let start = adapt::step0(desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?, &train, &val, None, &cfg)?;

    let profile = collect_profile(&start.network, &train, cfg.stats_batch_size)?;
    println!("{} samples profiled", profile.n_samples);
    for layer in &profile.layers {
        let top: Vec<String> = layer.sort_perm.iter().take(5).map(|&c| format!("{c}:{:.3}", layer.normalized[c])).collect();
        let half = layer.cumsum.iter().position(|&c| c >= 0.5).map_or(0, |p| p + 1);
        println!(
            "{:>6} K={:<3} top channels [{}]  {half} filters hold half the activation",
            layer.name,
            layer.width(),
            top.join(", ")
        );
    }
    Ok(())
}
