use proptest::prelude::*;

use tactiverse_core::engine::{Architecture, Network, Tensor, UNetSpec};
use tactiverse_core::format::{
    decode_checkpoint, decode_tensor, encode_checkpoint, encode_tensor, load_checkpoint, load_tensor, save_checkpoint,
    save_tensor,
};
use tactiverse_core::{Error, FormatError};

fn tensor() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
            .prop_map(move |bits| Tensor::from_vec(&shape, bits).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn tensor_round_trip_is_bit_exact(t in tensor()) {
        let bytes = encode_tensor(&t).unwrap();
        prop_assert_eq!(bytes.len(), 6 + 4 * t.ndim() + 4 * t.len());
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(encode_tensor(&back).unwrap(), bytes);
    }
}

proptest! {
    #[test]
    fn every_truncation_is_an_error(t in tensor(), cut in 0usize..1000) {
        let bytes = encode_tensor(&t).unwrap();
        let cut = cut % bytes.len();
        let r = decode_tensor(&bytes[..cut]);
        prop_assert!(
            matches!(r, Err(FormatError::Truncated { .. }) | Err(FormatError::BadMagic { .. })),
            "{:?}",
            r
        );
    }
}

#[test]
fn big_tensor_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let shape = [8, 128, 64, 64];
    let n: usize = shape.iter().product();
    let t = Tensor::from_vec(&shape, (0..n).map(|i| i as f32 * 0.25).collect()).unwrap();
    let path = dir.path().join("big.tvt");
    save_tensor(&path, &t).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 6 + 4 * 4 + 4 * n);
    assert_eq!(load_tensor(&path).unwrap(), t);
}

#[test]
fn file_errors_carry_their_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.tvt");
    assert!(matches!(load_tensor(&missing), Err(Error::MissingInput(_))));
    let bad = dir.path().join("bad.tvt");
    std::fs::write(&bad, b"TVX1\x01\x01\x01\x00\x00\x00").unwrap();
    assert!(matches!(
        load_tensor(&bad),
        Err(Error::Format { source: FormatError::BadMagic { .. }, .. })
    ));
    std::fs::write(&bad, b"TVT1\x02\x01\x01\x00\x00\x00").unwrap();
    assert!(matches!(
        load_tensor(&bad),
        Err(Error::Format { source: FormatError::UnsupportedDtype(2), .. })
    ));
}

#[test]
fn network_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net: Network<f32> = Network::new(
        Architecture::Unet(UNetSpec {
            base_channels: 4,
            ..UNetSpec::default()
        }),
        3,
    )
    .unwrap();
    let path = dir.path().join("m.tvm");
    save_checkpoint(&path, &net.params).unwrap();
    let back = Network::from_params(load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back.arch, net.arch);
    assert_eq!(back.params.named_values(), net.params.named_values());
    let bytes = encode_checkpoint(&net.params).unwrap();
    assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
    let x = Tensor::full(&[1, 1, 64, 64], 0.3f32);
    assert_eq!(back.predict(&x).unwrap(), net.predict(&x).unwrap());
}
