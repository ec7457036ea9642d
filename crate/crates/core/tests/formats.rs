use nwadapt::formats::{decode_network, decode_tensor, encode_network, encode_tensor, load_network, save_network};
use nwadapt::layers::make_tiny_cnn_spec;
use nwadapt::{Error, FormatError, Network, Rng, Tensor};
use proptest::prelude::*;
use serde_json::json;

fn model() -> Network {
    Network::new(make_tiny_cnn_spec(4, 16, &[3, 5]).unwrap(), &[3, 16, 16], &mut Rng::new(2)).unwrap()
}

#[test]
fn model_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let meta = json!({ "created_unix": 0, "note": "x" });
    let a = dir.path().join("a.nwad");
    let b = dir.path().join("b.nwad");
    save_network(&a, &model(), &meta).unwrap();
    let loaded = load_network(&a).unwrap();
    assert_eq!(loaded.network, model());
    assert_eq!(loaded.metadata, meta);
    save_network(&b, &loaded.network, &loaded.metadata).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn corrupt_model_files_are_classified() {
    let bytes = encode_network(&model(), &json!({}));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_network(&magic), Err(FormatError::BadMagic { .. })));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode_network(&version), Err(FormatError::UnsupportedVersion(9))));

    let mut header_len = bytes.clone();
    header_len[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(decode_network(&header_len), Err(FormatError::BadLength(_))));

    let mut short_len = bytes.clone();
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    short_len[8..12].copy_from_slice(&(len - 5).to_le_bytes());
    assert!(matches!(decode_network(&short_len), Err(FormatError::BadHeader(_))));

    assert!(matches!(decode_network(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_network(&extra), Err(FormatError::TrailingBytes(1))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.nwad");
    std::fs::write(&path, &magic).unwrap();
    let err = load_network(&path).unwrap_err();
    assert!(matches!(err, Error::Format { source: FormatError::BadMagic { .. }, .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn corrupt_tensor_records_are_classified() {
    let t = Tensor::from_vec(&[2, 3], vec![1.0f32, -2.0, 3.5, 0.0, 1e-3, 7.0]).unwrap();
    let mut bytes = Vec::new();
    encode_tensor(&t, &mut bytes);
    assert_eq!(bytes.len(), 4 + 4 + 4 + 2 * 4 + 6 * 4);
    let mut magic = bytes.clone();
    magic[3] = b'X';
    assert!(matches!(decode_tensor(&magic), Err(FormatError::BadMagic { .. })));
    let mut rank = bytes.clone();
    rank[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(decode_tensor(&rank), Err(FormatError::BadLength(_))));
    let mut extent = bytes.clone();
    extent[12..16].copy_from_slice(&1000u32.to_le_bytes());
    assert!(matches!(decode_tensor(&extent), Err(FormatError::Truncated { .. })));
    let mut zero = bytes.clone();
    zero[12..16].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_tensor(&zero), Err(FormatError::BadLength(_))));
}

proptest! {
    #[test]
    fn tensor_round_trip(shape in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
        let t = Tensor::<f32>::rand_normal(&shape, 0.0, 10.0, &mut Rng::new(seed)).unwrap();
        let mut a = Vec::new();
        encode_tensor(&t, &mut a);
        let back = decode_tensor(&a).unwrap();
        prop_assert_eq!(&back, &t);
        let mut b = Vec::new();
        encode_tensor(&back, &mut b);
        prop_assert_eq!(a, b);
    }
}
