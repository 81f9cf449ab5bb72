use lumos::autodiff::Tensor;
use lumos::codec::FormatError;
use lumos::data::{decode_tensor, encode_tensor, load_csv, load_tensor, DataError, Task};

#[test]
fn csv_rows_become_features_and_target() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    std::fs::write(&p, "a,b,y\n1,2,3\n4,5,6\n7,8.5,-9e-1\n").unwrap();
    let d = load_csv(&p, Task::Regression).unwrap();
    let lumos::data::Inputs::Dense(x) = &d.inputs else { panic!() };
    assert_eq!(x.shape(), &[3, 2]);
    assert_eq!(x.data(), &[1.0, 2.0, 4.0, 5.0, 7.0, 8.5]);
    assert_eq!(d.targets.data(), &[3.0, 6.0, -0.9]);

    std::fs::write(&p, "a,y\n1,x\n").unwrap();
    assert!(matches!(load_csv(&p, Task::Regression), Err(DataError::Malformed { .. })));
    std::fs::write(&p, "a,y\n1,2,3\n").unwrap();
    assert!(matches!(load_csv(&p, Task::Regression), Err(DataError::Malformed { .. })));
    assert!(matches!(load_csv(&dir.path().join("none.csv"), Task::Regression), Err(DataError::Io { .. })));
}

#[test]
fn binary_tensors_round_trip_bit_exactly() {
    let t = Tensor::new(vec![2, 3], vec![0.1, -0.0, f64::MAX, 1e-310, 3.0, -7.25]).unwrap();
    let bytes = encode_tensor(&t);
    assert_eq!(&bytes[..6], &[b'L', b'U', b'M', b'T', 0, 2]);
    let back = decode_tensor(&bytes).unwrap();
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let cut = &bytes[..bytes.len() - 12];
    assert!(decode_tensor(cut).is_err());
    let mut body = bytes[..bytes.len() - 4].to_vec();
    body.truncate(body.len() - 8);
    let crc = crc32(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(decode_tensor(&body), Err(FormatError::Truncated { .. })));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.lumt");
    lumos::data::save_tensor(&p, &t).unwrap();
    assert_eq!(load_tensor(&p).unwrap(), t);
}

fn crc32(b: &[u8]) -> u32 {
    // Bitwise reference CRC-32 (IEEE, reflected).
    let mut c = !0u32;
    for &byte in b {
        c ^= byte as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { (c >> 1) ^ 0xEDB8_8320 } else { c >> 1 };
        }
    }
    !c
}
