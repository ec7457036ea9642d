//! Threshold index, priority and gating on a hand-written activation profile.

use nwadapt::prune::{decide, PruneConfig};
use nwadapt::stats::{ActivationProfile, LayerProfile};
use nwadapt::Rng;

fn main() -> nwadapt::Result<()> {
    let profile = ActivationProfile {
        n_samples: 1,
        layers: vec![
            LayerProfile::from_means("conv1", vec![0.4, 0.3, 0.2, 0.1])?,
            LayerProfile::from_means("conv2", vec![5.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])?,
            LayerProfile::from_means("fc1", vec![1.0; 6])?,
        ],
    };
    let cfg = PruneConfig::with_budget(0.15)?;
    let decision = decide(&profile, &cfg, &mut Rng::new(0), None)?;
    println!("keep threshold {}  mean priority {:.4}", decision.keep_threshold, decision.mean_priority);
    for l in &decision.layers {
        let mask: String = l.mask.iter().map(|&k| if k { '1' } else { '0' }).collect();
        println!(
            "{:>6} K={} h={} priority={:.4} gated={:<5} kept={} mask={mask}",
            l.name, l.width, l.h, l.priority, l.gated, l.kept
        );
    }
    println!("{}", serde_json::to_string_pretty(&decision).expect("decision serializes"));
    Ok(())
}
