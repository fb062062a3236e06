//! Writes a dataset and a parameter set to the binary container format,
//! reads them back and checks the round trip is bit-exact. Also shows the
//! error raised for a truncated file.
//!
//!     cargo run --release --example container_roundtrip

use splitsim::data::{gen_synth_images, read_container, read_container_bytes, write_container, write_container_bytes, Container};
use splitsim::nn::ModelSpec;
use splitsim::protocol::initial_params;

fn main() -> splitsim::Result<()> {
    let dir = std::env::temp_dir().join(format!("splitsim-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| splitsim::Error::io(&dir, e))?;

    let data = gen_synth_images(4, 1, 25, 0.5, 7)?;
    let path = dir.join("images.slsim");
    write_container(&path, &Container::Dataset(data.clone()))?;
    let size = std::fs::metadata(&path).map_err(|e| splitsim::Error::io(&path, e))?.len();
    match read_container(&path)? {
        Container::Dataset(back) => {
            assert_eq!(back, data);
            println!("dataset: {} samples of {:?}, {size} bytes, identical after reload", back.len(), back.sample_shape());
        }
        Container::Parameters(_) => unreachable!("wrote a dataset"),
    }

    let model = ModelSpec::image_conv(1, 28, 4)?;
    let params = initial_params(&model, 3)?;
    let bytes = write_container_bytes(&Container::Parameters(params.clone()));
    match read_container_bytes(&bytes)? {
        Container::Parameters(back) => {
            assert_eq!(back.digest(), params.digest());
            println!("parameters: {} values, digest {}", back.element_count(), &back.digest()[..16]);
        }
        Container::Dataset(_) => unreachable!("wrote parameters"),
    }

    let err = read_container_bytes(&bytes[..bytes.len() / 2]).unwrap_err();
    println!("truncated file: {err}");
    std::fs::remove_dir_all(&dir).map_err(|e| splitsim::Error::io(&dir, e))?;
    Ok(())
}
