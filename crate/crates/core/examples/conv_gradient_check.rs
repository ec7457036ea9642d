//! Compares backprop gradients of a small conv net against central
//! differences in double precision.

use nwadapt::train::cross_entropy_loss;
use nwadapt::{LayerKind, LayerSpec, Mode, Network, Rng, Tensor};

fn loss(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    cross_entropy_loss(&net.predict(x).unwrap(), labels).unwrap().0
}

fn main() -> nwadapt::Result<()> {
    let mut rng = Rng::new(11);
    let specs = vec![
        LayerSpec::conv("conv1", 2, 3, 3, 2, 1),
        LayerSpec::new("relu1", LayerKind::Relu),
        LayerSpec::new("pool1", LayerKind::MaxPool2d { window: 2, stride: 2 }),
        LayerSpec::new("flatten", LayerKind::Flatten),
        LayerSpec::dense("fc", 12, 4),
    ];
    let mut net = Network::<f64>::new(specs, &[2, 8, 8], &mut rng)?;
    for i in net.param_layers() {
        let k = net.param(i).unwrap().bias.len();
        net.param_mut(i).unwrap().bias = Tensor::rand_normal(&[k], 0.0, 0.1, &mut rng)?;
    }
    net.set_mode(Mode::Train);
    let x = Tensor::rand_normal(&[3, 2, 8, 8], 0.0, 1.0, &mut rng)?;
    let labels = [0, 2, 3];

    let (logits, tape) = net.forward_train(&x, None)?;
    let (_, dlogits) = cross_entropy_loss(&logits, &labels)?;
    let grads = net.backward(&tape, &dlogits)?;

    let eps = 1e-5;
    for i in net.param_layers() {
        let analytic = &grads.layers[i].as_ref().unwrap().weight;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for e in 0..analytic.len() {
            let probe = |delta: f64| {
                let mut n = net.clone();
                n.param_mut(i).unwrap().weight.data_mut()[e] += delta;
                loss(&n, &x, &labels)
            };
            let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
            num += (analytic.data()[e] - fd).powi(2);
            den += analytic.data()[e].powi(2) + fd.powi(2);
        }
        let name = &net.specs()[i].name;
        println!("{name:>6}: relative gradient error {:.2e}", num.sqrt() / den.sqrt().max(1e-300));
    }
    Ok(())
}
