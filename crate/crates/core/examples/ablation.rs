//! Least-activated vs random uniform pruning, then a random run matched
//! filter-for-filter to the adaptive schedule.

use nwadapt::adapt::{run_ablation, step0, AblationMode, AdaptConfig};
use nwadapt::data::Split;
use nwadapt::desk;

fn main() -> nwadapt::Result<()> {
    let seed = 4;
    let data = desk::default_dataset(seed)?;
    let (train, val) = (data.with_split(Split::Train), data.with_split(Split::Val));
    let cfg = AdaptConfig { iterations: 3, ..desk::adapt_config(seed) };
    let start = step0(desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?, &train, &val, None, &cfg)?;

    for mode in [AblationMode::UniformRandomVsLeast, AblationMode::CountMatched] {
        let result = run_ablation(&start, &train, &val, None, &cfg, mode)?;
        println!("{mode:?}");
        for s in &result.summary {
            println!("  {:?}: {} runs, mean final val {:.3}", s.strategy, s.runs, s.mean_val_accuracy);
        }
    }
    Ok(())
}
