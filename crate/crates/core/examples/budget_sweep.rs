//! Three prune budgets branching from one shared Step-0 network.

use nwadapt::adapt::{step0, sweep_budgets, AdaptConfig};
use nwadapt::data::Split;
use nwadapt::desk;

fn main() -> nwadapt::Result<()> {
    let seed = 2;
    let data = desk::default_dataset(seed)?;
    let (train, val) = (data.with_split(Split::Train), data.with_split(Split::Val));
    let cfg = AdaptConfig { iterations: 3, ..desk::adapt_config(seed) };
    let start = step0(desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?, &train, &val, None, &cfg)?;
    println!("step 0: val {:.3}, {} params", start.row.val_accuracy, start.row.params);

    let budgets = [0.02, 0.05, 0.10];
    for (budget, (report, _)) in budgets.iter().zip(sweep_budgets(&start, &train, &val, None, &cfg, &budgets)?) {
        let last = report.rows.last().unwrap();
        println!(
            "budget {budget:.2}: {} iterations, final val {:.3}, params {} ({:.1}% kept)",
            report.rows.len() - 1,
            last.val_accuracy,
            last.params,
            100.0 * last.params as f64 / start.row.params as f64
        );
    }
    Ok(())
}
