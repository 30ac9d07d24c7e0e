use rwf::checkpoint::*;
use rwf::rwf_core::network::{ModelConfig, ModelState};
use rwf::rwf_core::train::OptimState;
use rwf::rwf_core::Tensor;
use rwf::RwfError;

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Straight-line reader written against the documented layout only.
fn minimal_read(bytes: &[u8]) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut pos = 0;
    let mut take = |n: usize| {
        let s = &bytes[pos..pos + n];
        pos += n;
        s
    };
    assert_eq!(take(4), b"RWFC");
    assert_eq!(u32::from_le_bytes(take(4).try_into().unwrap()), 1);
    let count = u32::from_le_bytes(take(4).try_into().unwrap());
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let key = String::from_utf8(take(len).to_vec()).unwrap();
        let dtype = take(1)[0];
        let rank = u32::from_le_bytes(take(4).try_into().unwrap()) as usize;
        let shape: Vec<usize> = (0..rank).map(|_| u64::from_le_bytes(take(8).try_into().unwrap()) as usize).collect();
        let n: usize = shape.iter().product();
        let data = match dtype {
            0 => take(4 * n).chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
            1 => take(8 * n).chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            t => panic!("dtype {t}"),
        };
        out.push((key, shape, data));
    }
    let crc = u32::from_le_bytes(take(4).try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&bytes[..bytes.len() - 4]));
    assert_eq!(pos, bytes.len());
    out
}

fn sample() -> Vec<(String, Tensor)> {
    vec![
        ("a".into(), Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, 1e-300, f64::MAX, -0.0]).unwrap()),
        ("scalar".into(), Tensor::scalar(0.1)),
        ("empty".into(), Tensor::new(&[0, 4], vec![]).unwrap()),
    ]
}

#[test]
fn container_roundtrip_is_bitwise() {
    let entries = sample();
    let bytes = encode(entries.iter().map(|(k, t)| (k.as_str(), t)), DType::F64);
    let back = decode(&bytes, "mem".as_ref()).unwrap();
    assert_eq!(back.len(), entries.len());
    for ((ka, ta), (kb, tb)) in entries.iter().zip(&back) {
        assert_eq!(ka, kb);
        assert!(bits_equal(ta, tb), "{ka}");
    }
}

#[test]
fn second_reader_agrees() {
    let entries = sample();
    for dtype in [DType::F32, DType::F64] {
        let bytes = encode(entries.iter().map(|(k, t)| (k.as_str(), t)), dtype);
        let ours = decode(&bytes, "mem".as_ref()).unwrap();
        let theirs = minimal_read(&bytes);
        for ((k, t), (k2, s2, d2)) in ours.iter().zip(&theirs) {
            assert_eq!(k, k2);
            assert_eq!(t.shape(), &s2[..]);
            assert_eq!(t.data(), &d2[..]);
        }
    }
}

#[test]
fn f32_storage_rounds_to_single_precision() {
    let t = Tensor::new(&[3], vec![0.1, 1.0 / 3.0, 2.0]).unwrap();
    let bytes = encode([("x", &t)], DType::F32);
    let back = decode(&bytes, "mem".as_ref()).unwrap();
    for (a, b) in t.data().iter().zip(back[0].1.data()) {
        assert_eq!(*b, *a as f32 as f64);
    }
}

fn format_offset(r: rwf::Result<Vec<(String, Tensor)>>) -> u64 {
    match r {
        Err(RwfError::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn corruption_is_reported_with_offsets() {
    let entries = sample();
    let good = encode(entries.iter().map(|(k, t)| (k.as_str(), t)), DType::F64);
    let p = std::path::Path::new("mem");

    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(decode(&bad, p)), 0);

    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(format_offset(decode(&bad, p)), 4);

    let mut bad = good.clone();
    bad[20] ^= 1;
    assert_eq!(format_offset(decode(&bad, p)), (good.len() - 4) as u64);

    assert!(matches!(decode(&good[..7], p), Err(RwfError::Format { .. })));
    assert!(matches!(decode(&good[..good.len() - 9], p), Err(RwfError::Format { .. })));
}

#[test]
fn model_and_optimizer_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rwfc");
    let state = ModelState::init(ModelConfig::desk(), 3).unwrap();
    let mut opt = OptimState::new(&state.params, 1e-4);
    opt.step = 7;
    for (_, t) in opt.m.iter_mut() {
        *t = t.map(|_| 0.125);
    }
    save_checkpoint(&state, Some(&opt), &path, DType::F64).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, state.config);
    for (k, t) in state.params.iter() {
        assert!(bits_equal(t, back.params.get(k).unwrap()), "{k}");
    }
    let o = load_optimizer(&path).unwrap();
    assert_eq!(o.step, 7);
    assert_eq!(o.weight_decay, 1e-4);
    assert!(o.m.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.125)));
    assert_eq!(o.v.len(), state.params.len());
}

#[test]
fn corrupted_checkpoint_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rwfc");
    let state = ModelState::init(ModelConfig::desk(), 0).unwrap();
    save_checkpoint(&state, None, &path, DType::F64).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x80;
    std::fs::write(&path, bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(matches!(err, RwfError::Format { .. }));
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("CRC"));
}

#[test]
fn missing_config_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.rwfc");
    write_container(&path, &sample(), DType::F64).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(RwfError::Format { .. })));
}
