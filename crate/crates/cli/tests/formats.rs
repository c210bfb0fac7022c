use std::path::Path;

use cifrenet::checkpoint;
use cifrenet::config::RunConfig;
use cifrenet::container::{self, Record, TensorData};
use cifrenet::pnm::{self, Image};
use cifrenet::Error;
use cifrenet_core::blocks::{build_cifrenet, NetworkCfg};
use proptest::prelude::*;

const GOLDEN: &[u8] = include_bytes!("fixtures/golden.cift");

#[test]
fn golden_fixture_decodes_to_known_values() {
    let recs = container::decode(GOLDEN).unwrap();
    let names: Vec<&str> = recs.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["alpha", "mask", "ids", "π.scale"]);
    assert_eq!(recs[0].shape, [2, 2]);
    assert_eq!(recs[0].data, TensorData::F32(vec![1.0, -2.5, 0.125, f32::MAX]));
    assert_eq!(recs[1].data, TensorData::U8(vec![0, 7, 255]));
    assert_eq!(recs[2].shape, [2, 1, 2]);
    assert_eq!(recs[2].data, TensorData::I32(vec![-1, 0, i32::MAX, i32::MIN]));
    assert!(recs[3].shape.is_empty());
    assert_eq!(recs[3].data, TensorData::F32(vec![0.1]));
    assert_eq!(container::encode(&recs).unwrap(), GOLDEN);
}

#[test]
fn every_truncation_of_golden_is_an_error() {
    for cut in 0..GOLDEN.len() {
        assert!(
            matches!(container::decode(&GOLDEN[..cut]), Err(Error::Format { .. })),
            "cut at {cut}"
        );
    }
}

#[test]
fn version_and_dtype_checked() {
    let mut bad = GOLDEN.to_vec();
    bad[4] = 2;
    assert!(matches!(container::decode(&bad), Err(Error::Format { offset: 4, .. })));
    let mut bad = GOLDEN.to_vec();
    // dtype byte of the first record: 12-byte header, 4-byte length, "alpha"
    bad[21] = 9;
    assert!(matches!(container::decode(&bad), Err(Error::Format { offset: 21, .. })));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.cift");
    let mut cfg = RunConfig::mini(4);
    cfg.init_seed = 12;
    let net = build_cifrenet::<f32>(&cfg.net, cfg.init_seed).unwrap();
    let mut perturbed = net.clone();
    for id in perturbed.params.ids().collect::<Vec<_>>() {
        for v in perturbed.params.get_mut(id).value.data_mut() {
            *v = v.mul_add(1.5, 0.01);
        }
    }
    let mean = [0.25, 0.5, 0.75];
    checkpoint::save(&path, &cfg, &mean, &perturbed).unwrap();
    let ck = checkpoint::load(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.mean, mean);
    assert_eq!(ck.net.params, perturbed.params);
    let again = dir.path().join("again.cift");
    checkpoint::save(&again, &ck.config, &ck.mean, &ck.net).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_rejects_mismatched_network() {
    let cfg = RunConfig::mini(4);
    let other = build_cifrenet::<f32>(&NetworkCfg::mini(4).ablated(), 0).unwrap();
    let recs = checkpoint::to_records(&cfg, &[0.0; 3], &other);
    assert!(checkpoint::from_records(&recs).is_err());
}

#[test]
fn label_map_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let labels: Vec<u8> = (0..35).map(|i| (i * 7 % 5) as u8).chain([255]).collect();
    pnm::write_pgm(&path, 4, 9, &labels).unwrap();
    assert_eq!(pnm::read_pgm(&path).unwrap(), (4, 9, labels));
}

#[test]
fn reading_rgb_as_labels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    pnm::write_image(&path, &Image::rgb(1, 1, vec![1, 2, 3]).unwrap()).unwrap();
    assert!(pnm::read_pgm(&path).is_err());
    assert!(pnm::read_ppm(Path::new("/nonexistent/x.ppm")).is_err());
}

fn record() -> impl Strategy<Value = Record> {
    let dims = prop::collection::vec(0usize..4, 0..4);
    (dims, 0u8..3).prop_flat_map(|(shape, dtype)| {
        let n: usize = shape.iter().product();
        let data = match dtype {
            0 => prop::collection::vec(any::<u32>().prop_map(f32::from_bits), n)
                .prop_map(TensorData::F32)
                .boxed(),
            1 => prop::collection::vec(any::<u8>(), n).prop_map(TensorData::U8).boxed(),
            _ => prop::collection::vec(any::<i32>(), n).prop_map(TensorData::I32).boxed(),
        };
        (Just(shape), data)
    })
    .prop_map(|(shape, data)| Record {
        name: String::new(),
        shape,
        data,
    })
}

fn bits(r: &[Record]) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    r.iter()
        .map(|r| {
            let words = match &r.data {
                TensorData::F32(v) => v.iter().map(|x| x.to_bits()).collect(),
                TensorData::U8(v) => v.iter().map(|&x| x as u32).collect(),
                TensorData::I32(v) => v.iter().map(|&x| x as u32).collect(),
            };
            (r.name.clone(), r.shape.clone(), words)
        })
        .collect()
}

proptest! {
    #[test]
    fn container_round_trip_is_bitwise(mut recs in prop::collection::vec(record(), 0..5)) {
        for (i, r) in recs.iter_mut().enumerate() {
            r.name = format!("layer{i}.w");
        }
        let bytes = container::encode(&recs).unwrap();
        let back = container::decode(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&recs));
        prop_assert_eq!(container::encode(&back).unwrap(), bytes);
    }

    #[test]
    fn pnm_round_trip(w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()) {
        let c = if rgb { 3 } else { 1 };
        let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
        let img = if rgb { Image::rgb(w, h, data) } else { Image::gray(w, h, data) }.unwrap();
        let back = pnm::decode(&pnm::encode(&img)).unwrap();
        prop_assert_eq!(&back, &img);
        if rgb {
            let t = pnm::rgb_to_tensor(&img);
            prop_assert_eq!(pnm::tensor_to_rgb(&t).unwrap(), img);
        }
    }
}
