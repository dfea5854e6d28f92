use mmel_core::model::{content_hash, generate_weights, load_weights, save_weights, WeightFile};
use mmel_core::{EnhancerParams, Error, ModelConfig};

fn sample() -> WeightFile {
    let c = ModelConfig::default();
    WeightFile {
        weights: generate_weights(&c, 5).unwrap(),
        enhancer: Some(EnhancerParams::generate(&c, 5)),
    }
}

fn header_range(bytes: &[u8]) -> std::ops::Range<usize> {
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    14..14 + len
}

/// Replaces the first occurrence of `from` in the JSON header with `to`, which
/// must have the same length so the declared header length stays valid.
fn edit_header(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
    assert_eq!(from.len(), to.len());
    let r = header_range(bytes);
    let header = std::str::from_utf8(&bytes[r.clone()]).unwrap();
    let pos = header.find(from).expect("pattern in header");
    let mut out = bytes.to_vec();
    out[r.start + pos..r.start + pos + to.len()].copy_from_slice(to.as_bytes());
    out
}

#[test]
fn disk_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let f = sample();
    save_weights(&f, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, f);
    for (name, t) in f.weights.tensors() {
        assert_eq!(back.weights.get(name).unwrap().bits(), t.bits());
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(content_hash(&bytes).len(), 40);
}

#[test]
fn header_keys_are_sorted() {
    let bytes = sample().to_bytes().unwrap();
    let header = std::str::from_utf8(&bytes[header_range(&bytes)]).unwrap();
    let keys = ["\"blob_len\"", "\"config\"", "\"enhancer\"", "\"tensors\""];
    let pos: Vec<usize> = keys.iter().map(|k| header.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn corrupted_files_are_classified() {
    let good = sample().to_bytes().unwrap();

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        WeightFile::from_bytes(&magic),
        Err(Error::BadMagic)
    ));

    assert!(matches!(
        WeightFile::from_bytes(&good[..good.len() - 8]),
        Err(Error::Truncated(_))
    ));
    assert!(matches!(
        WeightFile::from_bytes(&good[..20]),
        Err(Error::Truncated(_))
    ));
    assert!(matches!(
        WeightFile::from_bytes(&good[..3]),
        Err(Error::Truncated(_))
    ));

    let mut garbled = good.clone();
    garbled[header_range(&good).start] = b'#';
    assert!(matches!(
        WeightFile::from_bytes(&garbled),
        Err(Error::Header(_))
    ));

    let shape = edit_header(&good, "[32]", "[33]");
    assert!(matches!(
        WeightFile::from_bytes(&shape),
        Err(Error::Directory(_))
    ));

    let renamed = edit_header(&good, "patch_embed", "patch_embex");
    assert!(matches!(
        WeightFile::from_bytes(&renamed),
        Err(Error::Directory(_))
    ));

    let mut trailing = good.clone();
    trailing.extend_from_slice(&[0; 8]);
    assert!(matches!(
        WeightFile::from_bytes(&trailing),
        Err(Error::Directory(_))
    ));

    let mut nan = good.clone();
    let blob = header_range(&good).end;
    nan[blob..blob + 8].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(
        WeightFile::from_bytes(&nan),
        Err(Error::Directory(_))
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_weights(dir.path().join("absent.bin")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn file_without_enhancer() {
    let f = WeightFile {
        enhancer: None,
        ..sample()
    };
    let back = WeightFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
    assert!(back.enhancer.is_none());
}
