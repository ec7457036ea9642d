//! Full iterative adaptation on the desk preset: Step 0 fine-tuning, then
//! profile, prune and fine-tune rounds.

use nwadapt::adapt::run;
use nwadapt::data::Split;
use nwadapt::desk;

fn main() -> nwadapt::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let data = desk::default_dataset(seed)?;
    let (train, val, test) = (data.with_split(Split::Train), data.with_split(Split::Val), data.with_split(Split::Test));
    let cfg = desk::adapt_config(seed);
    let net = desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?;

    let (report, best) = run(net, &train, &val, Some(&test), &cfg)?;
    let first = &report.rows[0];
    println!("iter  val    test   params  flops     widths");
    for r in &report.rows {
        println!(
            "{:>4}  {:.3}  {:.3}  {:>6}  {:>8}  {:?}",
            r.iteration,
            r.val_accuracy,
            r.test_accuracy.unwrap_or(f64::NAN),
            r.params,
            r.flops,
            r.widths
        );
    }
    let b = report.best_row();
    println!(
        "best iteration {} keeps {:.1}% of parameters, stop reason {:?}",
        report.best_iteration,
        100.0 * b.params as f64 / first.params as f64,
        report.stop_reason
    );
    println!("best network has {} parameters", best.param_count());
    Ok(())
}
