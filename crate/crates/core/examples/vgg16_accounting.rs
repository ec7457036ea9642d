//! Parameter and FLOP totals for VGG-16 at a few input sizes.

use nwadapt::layers::make_vgg16_spec;
use nwadapt::surgery::count_flops_for;
use nwadapt::LayerSpec;

fn main() -> nwadapt::Result<()> {
    let specs = make_vgg16_spec(1000, 224)?;
    let params: usize = specs.iter().map(LayerSpec::param_count).sum();
    println!("VGG-16, 1000 classes: {params} parameters");
    for spec in specs.iter().filter(|s| s.is_parameterized()) {
        println!("  {:>8} {:>11}", spec.name, spec.param_count());
    }
    let flops = count_flops_for(&specs, &[3, 224, 224])?;
    println!("forward FLOPs at 224x224: {flops} ({:.2} GFLOP)", flops as f64 / 1e9);
    for classes in [10, 101] {
        let small = make_vgg16_spec(classes, 224)?;
        let p: usize = small.iter().map(LayerSpec::param_count).sum();
        println!("{classes:>4} classes: {p} parameters");
    }
    Ok(())
}
