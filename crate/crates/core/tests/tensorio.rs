use proptest::prelude::*;
use rfdm::tensor::Tensor;
use rfdm::tensorio::{decode_tensor, encode_tensor, read_tensor, write_tensor, Checkpoint, DatasetManifest};

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..=5).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(-1e6f32..1e6, n).prop_map(move |data| Tensor::new(dims.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn tensors_round_trip_bitwise(t in tensor_strategy()) {
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(&back.dims, &t.dims);
        prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn any_truncation_is_an_error(t in tensor_strategy(), cut in 0usize..1000) {
        let mut bytes = Vec::new();
        encode_tensor(&t, &mut bytes).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(decode_tensor(&bytes[..cut]).is_err());
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 3, 4], (0..24).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap();
    let p = dir.path().join("nested/x.vt");
    write_tensor(&p, &t).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), t);
    let err = read_tensor(dir.path().join("missing.vt")).unwrap_err();
    assert_eq!(rfdm::cli::exit_code(&err), rfdm::cli::EXIT_IO);
}

#[test]
fn checkpoints_round_trip() {
    let ckpt = {
        let trainer = rfdm::train::Trainer::new(
            &rfdm::denoiser::DenoiserConfig {
                hidden: 4,
                blocks: 1,
                embed_dim: 4,
                time_freqs: 2,
                ..Default::default()
            },
            &Default::default(),
            &Default::default(),
        )
        .unwrap();
        trainer.checkpoint("abc")
    };
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn manifests_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let m = rfdm::synthvid::build_dataset(
        &rfdm::synthvid::GeneratorConfig {
            height: 8,
            width: 8,
            frames: 3,
            ..Default::default()
        },
        4,
        &Default::default(),
        dir.path(),
        3,
    )
    .unwrap();
    let text = m.to_jsonl().unwrap();
    let back = DatasetManifest::parse_jsonl(&text, dir.path()).unwrap();
    assert_eq!(back, m);
    assert!(back.validate(|ids| rfdm::synthvid::PromptSpec::from_ids(ids).is_ok()).is_ok());
    assert!(DatasetManifest::parse_jsonl("{\"id\": 1}\n", dir.path()).is_err());
}
