//! Ten-crop class probabilities for a few test images.

use nwadapt::data::{ten_crop_offsets, ten_crop_predict, Split};
use nwadapt::train::fit;
use nwadapt::desk;

fn main() -> nwadapt::Result<()> {
    let seed = 9;
    let data = desk::default_dataset(seed)?;
    let (train, val, test) = (data.with_split(Split::Train), data.with_split(Split::Val), data.with_split(Split::Test));
    let cfg = desk::adapt_config(seed);
    let mut net = desk::network(desk::CLASSES, desk::IMAGE_HW, seed)?;
    let fitted = fit(&mut net, &train, &val, &cfg.train, None)?;
    net.set_params(fitted.best_params)?;

    let crop = desk::IMAGE_HW - desk::IMAGE_HW / 8;
    println!("crop offsets for {crop}px: {:?}", ten_crop_offsets(desk::IMAGE_HW, desk::IMAGE_HW, crop));
    let mut correct = 0;
    for i in 0..test.len() {
        let probs = ten_crop_predict(&net, &test.input(i), crop)?;
        let guess = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
        correct += usize::from(guess == test.label(i));
        if i % 20 == 0 {
            println!("sample {i:>2} label {} probs {probs:.3?}", test.label(i));
        }
    }
    println!("ten-crop test accuracy {:.3}", correct as f64 / test.len() as f64);
    Ok(())
}
