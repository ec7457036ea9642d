//! Writes a tensor and a model file, reads them back and checks the bytes.

use nwadapt::formats::{decode_network, encode_network, load_network, read_tensor, save_network, write_tensor};
use nwadapt::{desk, Rng, Tensor};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();

    let t = Tensor::rand_normal(&[2, 3, 4], 0.0, 1.0, &mut Rng::new(1))?;
    let path = dir.join("weights.tnsr");
    write_tensor(&path, &t)?;
    assert_eq!(read_tensor(&path)?, t);
    println!("{}: {} bytes", path.display(), std::fs::metadata(&path)?.len());

    let net = desk::network(desk::CLASSES, desk::IMAGE_HW, 0)?;
    let meta = json!({"tool": "example", "created_unix": 0});
    let path = dir.join("tiny.nwad");
    save_network(&path, &net, &meta)?;
    let loaded = load_network(&path)?;
    let again = encode_network(&loaded.network, &loaded.metadata);
    println!("{}: {} bytes, round trip identical: {}", path.display(), again.len(), again == std::fs::read(&path)?);

    let mut corrupt = again.clone();
    corrupt.truncate(corrupt.len() - 3);
    println!("truncated file: {}", decode_network(&corrupt).unwrap_err());
    Ok(())
}
