//! Trains the tiny CNN on synthetic shapes and prints the epoch history.

use nwadapt::data::Split;
use nwadapt::train::{evaluate, fit};
use nwadapt::desk;

fn main() -> nwadapt::Result<()> {
    let seed = 5;
    let data = desk::default_dataset(seed)?;
    let (train, val, test) = (data.with_split(Split::Train), data.with_split(Split::Val), data.with_split(Split::Test));
    let cfg = desk::adapt_config(seed);
    let mut net = desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?;

    let result = fit(&mut net, &train, &val, &cfg.train, None)?;
    for e in &result.history {
        println!(
            "epoch {:>2}  lr {:.4}  train loss {:.4}  val loss {:.4}  val acc {:.3}",
            e.epoch, e.lr, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    net.set_params(result.best_params)?;
    let test_eval = evaluate(&net, &test, 64)?;
    println!("best epoch {}  val {:.3}  test {:.3}", result.best_epoch, result.best_val_accuracy, test_eval.accuracy);
    Ok(())
}
