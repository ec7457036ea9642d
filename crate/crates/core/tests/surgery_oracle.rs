mod common;

use common::{decision_from_masks, masked_forward, masked_triple, max_abs_diff};
use nwadapt::surgery::{apply_masks, count_flops, count_params};
use nwadapt::Error;

#[test]
fn pruned_forward_equals_masked_forward() {
    for i in 0..120 {
        let (net, masks, x) = masked_triple(i);
        let (pruned, delta) = apply_masks(&net, &decision_from_masks(&masks)).unwrap();
        let diff = max_abs_diff(&pruned.predict(&x).unwrap(), &masked_forward(&net, &x, &masks));
        assert!(diff <= 1e-5, "triple {i}: max difference {diff:e}");
        assert_eq!(delta.params_after, count_params(&pruned));
        assert_eq!(delta.flops_after, count_flops(&pruned));
        for ((name, mask), change) in masks.iter().zip(&delta.layers) {
            assert_eq!(&change.name, name);
            assert_eq!(change.after, mask.iter().filter(|&&b| b).count());
        }
    }
}

#[test]
fn parameter_count_drops_by_removed_rows_and_columns() {
    let (net, _, _) = masked_triple(3);
    let width = net.specs()[net.layer_index("fc1").unwrap()].width().unwrap();
    let mut mask = vec![true; width];
    mask[0] = false;
    let next_out = net.specs()[net.layer_index("fc2").unwrap()].width().unwrap();
    let in_features = net.param(net.layer_index("fc1").unwrap()).unwrap().weight.shape()[1];
    let (pruned, _) = apply_masks(&net, &decision_from_masks(&[("fc1".into(), mask)])).unwrap();
    assert_eq!(count_params(&net) - count_params(&pruned), in_features + 1 + next_out);
}

#[test]
fn classifier_and_floor_are_protected() {
    let (net, _, _) = masked_triple(0);
    let bad = decision_from_masks(&[("out".into(), vec![true, true, false])]);
    assert!(matches!(apply_masks(&net, &bad), Err(Error::ShapeMismatch(_))));
    let width = net.specs()[0].width().unwrap();
    let empty = decision_from_masks(&[("c1".into(), vec![false; width])]);
    assert!(matches!(apply_masks(&net, &empty), Err(Error::FloorViolation { .. })));
}
